// stabcv: stability-regularized hyperparameter selection from the command line.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "stabcv/bench.hpp"
#include "stabcv/error.hpp"
#include "stabcv/report.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

int exit_code(const stabcv::Error& e) {
  switch (e.code()) {
    case stabcv::ErrorCode::invalid_argument:
      return kExitConfig;
    case stabcv::ErrorCode::data:
      return kExitData;
    case stabcv::ErrorCode::numerical:
      return kExitNumerical;
  }
  return 1;
}

void print_summary(const stabcv::RunRecord& record) {
  std::cout << "mode=" << stabcv::to_string(record.config.mode)
            << " learner=" << stabcv::to_string(record.config.learner) << " repeats=" << record.rows.size()
            << "\nmean estimate   " << record.mean_estimate << "\nmean test MSE   " << record.mean_test_mse
            << "\nmean (estimate - test)/test  " << record.mean_disappointment << '\n';
  for (const auto& row : record.rows) {
    if (row.bound) std::cout << "repeat " << row.repeat << " bound " << *row.bound << '\n';
    for (const auto& w : row.report.warnings) std::cerr << "warning: repeat " << row.repeat << ": " << w << '\n';
  }
  std::cout << "outputs written to " << record.config.output_dir << '\n';
}

stabcv::RunRecord load_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) stabcv::throw_data("cannot open report '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    stabcv::throw_data("report '" + path + "' is not valid JSON: " + e.what());
  }
  return stabcv::record_from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperparameter selection with stability-regularized nested cross-validation"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Repeated train/test experiment (kcv, nested, heatmap, bound)");
  std::string config_path;
  std::string mode, learner, lambda_grid, out, dataset, response;
  std::size_t k = 0, repeats = 0, threads = 0;
  std::uint64_t seed = 0;
  bool no_header = false;
  run->add_option("--config", config_path, "Key-value config file")->check(CLI::ExistingFile);
  run->add_option("--mode", mode, "kcv | nested | heatmap | bound");
  run->add_option("--learner", learner, "ridge | sparse_ridge | cart");
  run->add_option("--dataset", dataset, "CSV path or synth:n=..,p=..,tau_true=..,rho=..,nu=..");
  run->add_option("--response", response, "Response column name or zero-based index");
  run->add_flag("--no-header", no_header, "CSV has no header row");
  run->add_option("--k", k, "Number of folds");
  run->add_option("--repeats", repeats, "Train/test repeats");
  run->add_option("--seed", seed, "Base seed");
  run->add_option("--lambda-grid", lambda_grid, "Comma-separated stability weights");
  run->add_option("--threads", threads, "Worker threads (0: all cores)");
  run->add_option("--out", out, "Output directory");

  // heatmap
  auto* heat = app.add_subcommand("heatmap", "CV and test error over the (tau, gamma) grid on synthetic data");
  stabcv::SynthConfig synth;
  std::string cv_kind = "fivefold";
  std::string heat_out = "heatmap_out";
  std::uint64_t heat_seed = 0;
  heat->add_option("--n", synth.n, "Training rows")->required();
  heat->add_option("--p", synth.p, "Features")->required();
  heat->add_option("--tau-true", synth.tau_true, "True sparsity")->required();
  heat->add_option("--rho", synth.rho, "Feature correlation");
  heat->add_option("--nu", synth.nu, "Signal-to-noise parameter");
  heat->add_option("--n-test", synth.n_test, "Test rows");
  heat->add_option("--cv", cv_kind, "loocv | fivefold");
  heat->add_option("--seed", heat_seed, "Seed");
  heat->add_option("--out", heat_out, "Output directory");

  // bound
  auto* bound = app.add_subcommand("bound", "Generalization bound for every run of a prior report");
  std::string report_path;
  double bound_m = 0.0;
  double delta = 0.05;
  bound->add_option("report", report_path, "report.json from a previous run")->required()->check(CLI::ExistingFile);
  auto* m_opt = bound->add_option("--M", bound_m, "Loss bound M (default: empirical maximum loss)");
  bound->add_option("--delta", delta, "Failure probability in (0, 1)");

  // summarize
  auto* summ = app.add_subcommand("summarize", "Paired comparison of two report.json files");
  std::string candidate_path, baseline_path;
  summ->add_option("candidate", candidate_path, "Candidate report (e.g. nested)")->required()->check(CLI::ExistingFile);
  summ->add_option("baseline", baseline_path, "Baseline report (e.g. kcv)")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      stabcv::ExperimentConfig cfg;
      if (!config_path.empty()) cfg = stabcv::load_config(config_path);
      if (!mode.empty()) stabcv::set_config_value(cfg, "mode", mode);
      if (!learner.empty()) stabcv::set_config_value(cfg, "learner", learner);
      if (!dataset.empty()) cfg.dataset = dataset;
      if (!response.empty()) cfg.response_column = response;
      if (no_header) cfg.csv_header = false;
      if (run->count("--k") > 0) cfg.k = k;
      if (run->count("--repeats") > 0) cfg.repeats = repeats;
      if (run->count("--seed") > 0) cfg.seed = seed;
      if (run->count("--threads") > 0) cfg.threads = threads;
      if (!lambda_grid.empty()) stabcv::set_config_value(cfg, "lambda_grid", lambda_grid);
      if (!out.empty()) cfg.output_dir = out;
      const auto record = stabcv::run_experiment(cfg);
      stabcv::write_outputs(record);
      print_summary(record);
    } else if (*heat) {
      stabcv::ExperimentConfig cfg;
      cfg.mode = stabcv::Mode::heatmap;
      cfg.learner = stabcv::LearnerKind::sparse_ridge;
      std::ostringstream spec;
      spec << "synth:n=" << synth.n << ",p=" << synth.p << ",tau_true=" << synth.tau_true << ",rho=" << synth.rho
           << ",nu=" << synth.nu << ",n_test=" << synth.n_test;
      cfg.dataset = spec.str();
      cfg.heatmap_cv = stabcv::parse_cv_kind(cv_kind);
      cfg.repeats = 1;
      cfg.seed = heat_seed;
      cfg.output_dir = heat_out;
      const auto record = stabcv::run_experiment(cfg);
      stabcv::write_outputs(record);
      const auto& row = record.rows.front();
      std::cout << "CV-minimizing cell: " << stabcv::to_string(row.theta_star) << "\nCV estimate " << row.estimate
                << "\ntest error  " << row.test_mse << "\ngrid test minimum " << record.heatmaps.front().test_min()
                << "\noutputs written to " << heat_out << '\n';
    } else if (*bound) {
      const auto record = load_record(report_path);
      for (const auto& row : record.rows) {
        stabcv::BoundInputs in;
        in.cv_error = row.report.cv_error_at_star;
        in.mu_h = row.report.stability_at_star;
        in.k = row.report.k;
        in.delta = delta;
        in.M = *m_opt ? bound_m : row.report.empirical_M;
        if (!*m_opt) {
          std::cerr << "warning: repeat " << row.repeat << ": M defaulted to the largest observed loss ("
                    << in.M << "); the bound is heuristic\n";
        }
        std::cout << "repeat " << row.repeat << " theta " << stabcv::to_string(row.theta_star) << " cv "
                  << in.cv_error << " stability " << in.mu_h << " bound " << stabcv::generalization_bound(in) << '\n';
      }
    } else if (*summ) {
      const auto cand = load_record(candidate_path);
      const auto base = load_record(baseline_path);
      const auto s = stabcv::summarize(std::span(&cand, 1), std::span(&base, 1));
      std::cout << "MSE ratio (candidate/baseline) " << s.metrics.geometric_mean << "\ncandidate mean (estimate - test)/test "
                << s.candidate_disappointment.front() << "\nbaseline mean (estimate - test)/test "
                << s.baseline_disappointment.front() << "\nselection agreement " << s.agreement << '\n';
    }
  } catch (const stabcv::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return EXIT_SUCCESS;
}
