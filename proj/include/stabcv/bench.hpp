#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stabcv/cv.hpp"
#include "stabcv/synth.hpp"

namespace stabcv {

enum class Mode { kcv, nested, heatmap, bound };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);

struct ExperimentConfig {
  Mode mode = Mode::kcv;
  LearnerKind learner = LearnerKind::sparse_ridge;
  /// CSV path, or "synth:n=40,p=80,tau_true=5,rho=0.3,nu=1,n_test=10000".
  std::string dataset;
  bool csv_header = true;
  std::string response_column = "0";
  std::size_t k = 5;
  std::size_t repeats = 10;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
  std::optional<std::vector<double>> lambda_grid;
  bool include_zero_lambda = false;
  std::map<std::string, std::vector<double>> grid_overrides;  // axis name -> values
  std::optional<double> bound_M;
  double delta = 0.05;
  CvKind heatmap_cv = CvKind::fivefold;
  std::size_t threads = 0;  // 0: hardware concurrency
  std::string output_dir = "out";

  void validate() const;
};

/// Parses `key = value` lines; '#' starts a comment. Unknown keys are config errors.
ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});
/// Applies one key/value pair using the config-file vocabulary.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Parses "synth:key=value,..." into a generator config; nullopt for file datasets.
std::optional<SynthConfig> parse_synth_spec(const std::string& dataset);

std::vector<double> parse_number_list(const std::string& text);

struct RunRow {
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  HyperParams theta_star;
  std::optional<double> lambda_star;
  double estimate = 0.0;  // kCV error, or nested estimate
  double test_mse = 0.0;
  std::optional<int> sparsity;  // nonzero coefficients of the retrained linear model
  std::optional<double> bound;
  std::size_t total_fits = 0;
  double wall_seconds = 0.0;
  std::vector<Index> test_indices;  // empty for synthetic data (separate test draw)
  SelectionReport report;
};

struct RunRecord {
  ExperimentConfig config;
  std::vector<RunRow> rows;
  double mean_estimate = 0.0;
  double mean_test_mse = 0.0;
  double mean_disappointment = 0.0;  // mean of (estimate - test) / test
  std::vector<Heatmap> heatmaps;     // heatmap mode only

  void recompute_aggregates();
};

/// Test indices for repeat seed `seed`: seeded shuffle, first ceil(fraction * n) held out.
std::vector<Index> split_test_indices(Index n, double test_fraction, std::uint64_t seed);

RunRecord run_experiment(const ExperimentConfig& cfg);

/// report.json, runs.csv and timings.csv (heatmap mode: heatmap CSV/SVG) in cfg.output_dir.
void write_outputs(const RunRecord& record);
std::string runs_csv(const RunRecord& record);
nlohmann::json record_to_json(const RunRecord& record);
/// Rebuilds rows and aggregates from a report.json document.
RunRecord record_from_json(const nlohmann::json& j);

struct ComparisonSummary {
  MetricSummary metrics;  // r_d = candidate / baseline mean test MSE per dataset
  std::vector<double> candidate_disappointment;  // mean (estimate - test) / test per dataset
  std::vector<double> baseline_disappointment;
  double agreement = 0.0;  // fraction of paired repeats selecting identical theta
};

/// Pairs records by position (one per dataset); repeats must share seeds.
ComparisonSummary summarize(std::span<const RunRecord> candidates, std::span<const RunRecord> baselines);

}  // namespace stabcv
