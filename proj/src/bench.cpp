#include "stabcv/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "stabcv/error.hpp"
#include "stabcv/report.hpp"
#include "stabcv/rng.hpp"

namespace stabcv {

using nlohmann::json;

namespace {

// Stream tags for seeds derived from a repeat seed.
constexpr std::uint64_t kSplitStream = 1;
constexpr std::uint64_t kFoldStream = 2;
constexpr std::uint64_t kSynthStream = 3;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(trim(text), &used);
  } catch (const std::exception&) {
    throw_invalid("'" + key + "' expects a number, got '" + text + "'");
  }
  if (used != trim(text).size()) throw_invalid("'" + key + "' expects a number, got '" + text + "'");
  return v;
}

std::uint64_t parse_count(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t.empty() || !std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw_invalid("'" + key + "' expects a non-negative integer, got '" + text + "'");
  }
  return std::stoull(t);
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw_invalid("'" + key + "' expects true or false, got '" + text + "'");
}

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kcv:
      return "kcv";
    case Mode::nested:
      return "nested";
    case Mode::heatmap:
      return "heatmap";
    case Mode::bound:
      return "bound";
  }
  return "unknown";
}

Mode parse_mode(const std::string& text) {
  if (text == "kcv") return Mode::kcv;
  if (text == "nested") return Mode::nested;
  if (text == "heatmap") return Mode::heatmap;
  if (text == "bound") return Mode::bound;
  throw_invalid("unknown mode '" + text + "' (expected kcv, nested, heatmap or bound)");
}

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  std::string item;
  std::istringstream ss(text);
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_double("list", item));
  }
  if (out.empty()) throw_invalid("empty number list '" + text + "'");
  return out;
}

void ExperimentConfig::validate() const {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw_invalid("test_fraction must lie in (0, 1)");
  if (repeats < 1) throw_invalid("repeats must be at least 1");
  if (k < 2) throw_invalid("k must be at least 2");
  if (dataset.empty()) throw_invalid("no dataset given");
  if (!(delta > 0.0 && delta < 1.0)) throw_invalid("delta must lie in (0, 1)");
  if (bound_M && !(*bound_M > 0.0)) throw_invalid("M must be positive");
  if (lambda_grid) {
    if (lambda_grid->empty()) throw_invalid("lambda_grid is empty");
    for (double l : *lambda_grid) {
      if (!(l >= 0.0)) throw_invalid("lambda_grid entries must be >= 0");
    }
  }
  if (mode == Mode::heatmap && !parse_synth_spec(dataset)) {
    throw_invalid("heatmap mode needs a synthetic dataset (synth:...)");
  }
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "mode") {
    cfg.mode = parse_mode(v);
  } else if (key == "learner") {
    cfg.learner = parse_learner(v);
  } else if (key == "dataset") {
    cfg.dataset = v;
  } else if (key == "header") {
    cfg.csv_header = parse_bool(key, v);
  } else if (key == "response") {
    cfg.response_column = v;
  } else if (key == "k") {
    cfg.k = parse_count(key, v);
  } else if (key == "repeats") {
    cfg.repeats = parse_count(key, v);
  } else if (key == "test_fraction") {
    cfg.test_fraction = parse_double(key, v);
  } else if (key == "seed") {
    cfg.seed = parse_count(key, v);
  } else if (key == "lambda_grid") {
    cfg.lambda_grid = parse_number_list(v);
  } else if (key == "include_zero_lambda") {
    cfg.include_zero_lambda = parse_bool(key, v);
  } else if (key.rfind("grid.", 0) == 0 && key.size() > 5) {
    cfg.grid_overrides[key.substr(5)] = parse_number_list(v);
  } else if (key == "M") {
    cfg.bound_M = parse_double(key, v);
  } else if (key == "delta") {
    cfg.delta = parse_double(key, v);
  } else if (key == "cv") {
    cfg.heatmap_cv = parse_cv_kind(v);
  } else if (key == "threads") {
    cfg.threads = parse_count(key, v);
  } else if (key == "out" || key == "output_dir") {
    cfg.output_dir = v;
  } else {
    throw_invalid("unknown config key '" + key + "'");
  }
}

ExperimentConfig parse_config(std::istream& in, ExperimentConfig base) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw_invalid("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(e.code(), "config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw_invalid("cannot open config file '" + path + "'");
  return parse_config(in, std::move(base));
}

std::optional<SynthConfig> parse_synth_spec(const std::string& dataset) {
  constexpr std::string_view prefix = "synth:";
  if (dataset.rfind(prefix, 0) != 0) return std::nullopt;
  SynthConfig cfg;
  std::istringstream ss(dataset.substr(prefix.size()));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw_invalid("synthetic spec item '" + item + "' lacks '='");
    const std::string key = trim(item.substr(0, eq));
    const std::string value = item.substr(eq + 1);
    if (key == "n") {
      cfg.n = static_cast<Index>(parse_count(key, value));
    } else if (key == "p") {
      cfg.p = static_cast<Index>(parse_count(key, value));
    } else if (key == "tau_true") {
      cfg.tau_true = static_cast<Index>(parse_count(key, value));
    } else if (key == "rho") {
      cfg.rho = parse_double(key, value);
    } else if (key == "nu") {
      cfg.nu = parse_double(key, value);
    } else if (key == "n_test") {
      cfg.n_test = static_cast<Index>(parse_count(key, value));
    } else {
      throw_invalid("unknown synthetic spec key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

std::vector<Index> split_test_indices(Index n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw_invalid("test_fraction must lie in (0, 1)");
  const auto held = static_cast<Index>(std::ceil(test_fraction * static_cast<double>(n) - 1e-9));
  if (held < 1 || held >= n - 1) throw_invalid("test split leaves too few rows");
  CounterRng rng(derive_seed(seed, kSplitStream));
  const auto order = shuffled_indices(static_cast<std::size_t>(n), rng);
  std::vector<Index> out;
  for (Index i = 0; i < held; ++i) out.push_back(static_cast<Index>(order[static_cast<std::size_t>(i)]));
  std::sort(out.begin(), out.end());
  return out;
}

void RunRecord::recompute_aggregates() {
  std::vector<double> est;
  std::vector<double> test;
  std::vector<double> gap;
  for (const auto& row : rows) {
    est.push_back(row.estimate);
    test.push_back(row.test_mse);
    gap.push_back((row.estimate - row.test_mse) / row.test_mse);
  }
  mean_estimate = mean(est);
  mean_test_mse = mean(test);
  mean_disappointment = mean(gap);
}

namespace {

struct PreparedData {
  Dataset train;
  Dataset test;
  std::vector<Index> test_indices;
};

PreparedData prepare(const ExperimentConfig& cfg, const std::optional<SynthConfig>& synth,
                     const std::optional<Dataset>& raw, std::uint64_t repeat_seed) {
  if (synth) {
    SynthConfig sc = *synth;
    sc.seed = derive_seed(repeat_seed, kSynthStream);
    auto inst = generate(sc);
    return {std::move(inst.train), std::move(inst.test), {}};
  }
  const auto test_idx = split_test_indices(raw->rows(), cfg.test_fraction, repeat_seed);
  std::vector<Index> train_idx;
  for (Index i = 0, t = 0; i < raw->rows(); ++i) {
    if (t < static_cast<Index>(test_idx.size()) && test_idx[static_cast<std::size_t>(t)] == i) {
      ++t;
    } else {
      train_idx.push_back(i);
    }
  }
  auto [train, others] = standardize(raw->subset(train_idx), {raw->subset(test_idx)});
  return {std::move(train), std::move(others.front()), test_idx};
}

HyperGrid build_grid(const ExperimentConfig& cfg, Index n, Index p) {
  HyperGrid grid = default_grid(cfg.learner, n, p);
  for (const auto& [axis, values] : cfg.grid_overrides) grid.set_axis(axis, values);
  return grid;
}

double mse(const FittedModel& model, const Dataset& test) {
  return (model.predict_all(test.features()) - test.response()).squaredNorm() /
         static_cast<double>(test.rows());
}

RunRow run_heatmap_repeat(const ExperimentConfig& cfg, const SynthConfig& synth, std::size_t r,
                          std::vector<Heatmap>* maps) {
  const std::uint64_t seed = cfg.seed + r;
  SynthConfig sc = synth;
  sc.seed = derive_seed(seed, kSynthStream);
  const auto inst = generate(sc);
  std::vector<double> gammas = log_uniform_grid(1e-3, 1e3, 20);
  std::vector<int> taus;
  if (const auto it = cfg.grid_overrides.find("gamma"); it != cfg.grid_overrides.end()) gammas = it->second;
  if (const auto it = cfg.grid_overrides.find("tau"); it != cfg.grid_overrides.end()) {
    for (double t : it->second) taus.push_back(static_cast<int>(std::lround(t)));
  } else {
    for (int t = 1; t <= sc.p; ++t) taus.push_back(t);
  }
  auto map = heatmap_experiment(inst, gammas, taus, cfg.heatmap_cv, derive_seed(seed, kFoldStream));
  const auto [tr, gc] = map.cv_argmin();
  RunRow row;
  row.repeat = r;
  row.seed = seed;
  row.theta_star = SparseRidgeParams{map.taus[static_cast<std::size_t>(tr)], map.gammas[static_cast<std::size_t>(gc)]};
  row.estimate = map.cv(tr, gc);
  row.test_mse = map.test(tr, gc);
  row.sparsity = map.taus[static_cast<std::size_t>(tr)];
  row.total_fits = map.taus.size() * map.gammas.size() *
                   (1 + (cfg.heatmap_cv == CvKind::loocv ? static_cast<std::size_t>(sc.n) : 5));
  row.report.learner = "sparse_ridge";
  row.report.k = cfg.heatmap_cv == CvKind::loocv ? static_cast<std::size_t>(sc.n) : 5;
  row.report.seed = seed;
  row.report.theta_star = row.theta_star;
  row.report.estimate = row.estimate;
  row.report.cv_error_at_star = row.estimate;
  row.report.total_fits = row.total_fits;
  if (maps != nullptr) *maps = {std::move(map)};
  return row;
}

RunRow run_selection_repeat(const ExperimentConfig& cfg, const std::optional<SynthConfig>& synth,
                            const std::optional<Dataset>& raw, std::size_t r) {
  const std::uint64_t seed = cfg.seed + r;
  auto data = prepare(cfg, synth, raw, seed);
  const auto learner = make_learner(cfg.learner);
  const auto grid = build_grid(cfg, data.train.rows(), data.train.cols());
  const auto loss = LossFn::squared_error(cfg.bound_M);
  const std::uint64_t fold_seed = derive_seed(seed, kFoldStream);

  RunRow row;
  row.repeat = r;
  row.seed = seed;
  row.test_indices = std::move(data.test_indices);
  if (cfg.mode == Mode::nested) {
    const auto lambdas = cfg.lambda_grid ? *cfg.lambda_grid : default_lambda_grid(cfg.include_zero_lambda);
    row.report = nested_select(data.train, cfg.k, *learner, grid, lambdas, loss, fold_seed);
  } else {
    row.report = kcv_select(data.train, cfg.k, *learner, grid, loss, fold_seed);
  }
  row.theta_star = row.report.theta_star;
  row.lambda_star = row.report.lambda_star;
  row.estimate = row.report.estimate;
  row.total_fits = row.report.total_fits;

  const auto model = retrain_final(data.train, *learner, row.theta_star,
                                   fold_training_size(data.train.rows(), cfg.k));
  row.test_mse = mse(model, data.test);
  if (model.is_linear()) {
    row.sparsity = static_cast<int>((model.linear().beta.array() != 0.0).count());
  }
  if (cfg.mode == Mode::bound) {
    BoundInputs in;
    in.cv_error = row.report.cv_error_at_star;
    in.M = cfg.bound_M.value_or(row.report.empirical_M);
    in.mu_h = row.report.stability_at_star;
    in.k = cfg.k;
    in.delta = cfg.delta;
    if (!cfg.bound_M) {
      row.report.warnings.push_back("M defaulted to the largest observed loss (empirical M = " +
                                    std::to_string(in.M) + "); the bound is heuristic");
    }
    row.bound = generalization_bound(in);
  }
  return row;
}

}  // namespace

RunRecord run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto synth = parse_synth_spec(cfg.dataset);
  std::optional<Dataset> raw;
  if (!synth) raw = load_csv(cfg.dataset, CsvOptions{cfg.csv_header, cfg.response_column});

  RunRecord record;
  record.config = cfg;
  record.rows.resize(cfg.repeats);
  std::vector<std::exception_ptr> errors(cfg.repeats);
  std::atomic<std::size_t> next{0};
  std::vector<Heatmap> first_maps;

  const auto worker = [&] {
    for (std::size_t r = next++; r < cfg.repeats; r = next++) {
      const auto start = std::chrono::steady_clock::now();
      try {
        if (cfg.mode == Mode::heatmap) {
          record.rows[r] = run_heatmap_repeat(cfg, *synth, r, r == 0 ? &first_maps : nullptr);
        } else {
          record.rows[r] = run_selection_repeat(cfg, synth, raw, r);
        }
      } catch (...) {
        errors[r] = std::current_exception();
      }
      record.rows[r].wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };
  std::size_t threads = cfg.threads != 0 ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, cfg.repeats);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  record.heatmaps = std::move(first_maps);
  record.recompute_aggregates();
  return record;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::string runs_csv(const RunRecord& record) {
  std::ostringstream os;
  os << "repeat,seed,theta,lambda_star,estimate,test_mse,sparsity,bound,total_fits\n";
  for (const auto& row : record.rows) {
    os << row.repeat << ',' << row.seed << ',' << to_string(row.theta_star) << ','
       << (row.lambda_star ? fmt(*row.lambda_star) : "") << ',' << fmt(row.estimate) << ','
       << fmt(row.test_mse) << ',' << (row.sparsity ? std::to_string(*row.sparsity) : "") << ','
       << (row.bound ? fmt(*row.bound) : "") << ',' << row.total_fits << '\n';
  }
  return os.str();
}

json record_to_json(const RunRecord& record) {
  const auto& cfg = record.config;
  json runs = json::array();
  for (const auto& row : record.rows) {
    runs.push_back({{"repeat", row.repeat},
                    {"seed", row.seed},
                    {"test_mse", row.test_mse},
                    {"estimate", row.estimate},
                    {"sparsity", row.sparsity ? json(*row.sparsity) : json(nullptr)},
                    {"bound", row.bound ? json(*row.bound) : json(nullptr)},
                    {"test_indices", row.test_indices},
                    {"selection", to_json(row.report)}});
  }
  return {{"schema", kReportSchema},
          {"mode", to_string(cfg.mode)},
          {"learner", to_string(cfg.learner)},
          {"dataset", cfg.dataset},
          {"k", cfg.k},
          {"seed", cfg.seed},
          {"repeats", cfg.repeats},
          {"test_fraction", cfg.test_fraction},
          {"lambda_grid", cfg.lambda_grid ? json(*cfg.lambda_grid) : json(nullptr)},
          {"runs", runs},
          {"aggregate",
           {{"mean_estimate", record.mean_estimate},
            {"mean_test_mse", record.mean_test_mse},
            {"mean_disappointment", record.mean_disappointment}}}};
}

RunRecord record_from_json(const json& j) {
  try {
    if (j.at("schema").get<std::string>() != kReportSchema) throw_data("unsupported report schema");
    RunRecord record;
    record.config.mode = parse_mode(j.at("mode").get<std::string>());
    record.config.learner = parse_learner(j.at("learner").get<std::string>());
    record.config.dataset = j.at("dataset").get<std::string>();
    record.config.k = j.at("k").get<std::size_t>();
    record.config.seed = j.at("seed").get<std::uint64_t>();
    record.config.repeats = j.at("repeats").get<std::size_t>();
    for (const auto& run : j.at("runs")) {
      RunRow row;
      row.repeat = run.at("repeat").get<std::size_t>();
      row.seed = run.at("seed").get<std::uint64_t>();
      row.test_mse = run.at("test_mse").get<double>();
      row.estimate = run.at("estimate").get<double>();
      if (!run.at("sparsity").is_null()) row.sparsity = run.at("sparsity").get<int>();
      if (!run.at("bound").is_null()) row.bound = run.at("bound").get<double>();
      row.test_indices = run.at("test_indices").get<std::vector<Index>>();
      row.report = selection_report_from_json(run.at("selection"));
      row.theta_star = row.report.theta_star;
      row.lambda_star = row.report.lambda_star;
      row.total_fits = row.report.total_fits;
      record.rows.push_back(std::move(row));
    }
    record.recompute_aggregates();
    return record;
  } catch (const json::exception& e) {
    throw_data(std::string("malformed report: ") + e.what());
  }
}

void write_outputs(const RunRecord& record) {
  const auto& dir = record.config.output_dir;
  write_file_atomic(dir + "/report.json", record_to_json(record).dump(2) + "\n");
  write_file_atomic(dir + "/runs.csv", runs_csv(record));
  std::ostringstream timings;
  timings << "repeat,wall_seconds\n";
  for (const auto& row : record.rows) timings << row.repeat << ',' << fmt(row.wall_seconds) << '\n';
  write_file_atomic(dir + "/timings.csv", timings.str());
  for (const auto& map : record.heatmaps) {
    const std::string kind = to_string(map.kind);
    write_file_atomic(dir + "/heatmap_cv_" + kind + ".csv", heatmap_csv(map, map.cv));
    write_file_atomic(dir + "/heatmap_test_" + kind + ".csv", heatmap_csv(map, map.test));
    write_file_atomic(dir + "/heatmap_cv_" + kind + ".svg", heatmap_svg(map, map.cv, "CV error (" + kind + ")"));
    write_file_atomic(dir + "/heatmap_test_" + kind + ".svg", heatmap_svg(map, map.test, "test error"));
  }
}

ComparisonSummary summarize(std::span<const RunRecord> candidates, std::span<const RunRecord> baselines) {
  if (candidates.size() != baselines.size() || candidates.empty()) {
    throw_invalid("summarize needs one candidate and one baseline record per dataset");
  }
  ComparisonSummary out;
  std::vector<std::pair<double, double>> pairs;
  std::size_t agree = 0;
  std::size_t total = 0;
  for (std::size_t d = 0; d < candidates.size(); ++d) {
    const auto& c = candidates[d];
    const auto& b = baselines[d];
    if (c.rows.size() != b.rows.size() || c.config.dataset != b.config.dataset) {
      throw_invalid("records for dataset " + std::to_string(d) + " are not paired");
    }
    std::vector<double> cgap;
    std::vector<double> bgap;
    std::vector<double> cmse;
    std::vector<double> bmse;
    for (std::size_t r = 0; r < c.rows.size(); ++r) {
      const auto& cr = c.rows[r];
      const auto& br = b.rows[r];
      if (cr.seed != br.seed || cr.test_indices != br.test_indices) {
        throw_invalid("repeat " + std::to_string(r) + " of dataset " + std::to_string(d) +
                      " uses different splits");
      }
      cmse.push_back(cr.test_mse);
      bmse.push_back(br.test_mse);
      const double cg = (cr.estimate - cr.test_mse) / cr.test_mse;
      cgap.push_back(cg);
      out.metrics.cv_test_gap.push_back(cg);
      bgap.push_back((br.estimate - br.test_mse) / br.test_mse);
      agree += cr.theta_star == br.theta_star ? 1 : 0;
      ++total;
    }
    pairs.emplace_back(mean(cmse), mean(bmse));
    out.candidate_disappointment.push_back(mean(cgap));
    out.baseline_disappointment.push_back(mean(bgap));
  }
  const auto ratios = geometric_mean_ratio(pairs);
  out.metrics.per_dataset_ratios = ratios.per_dataset_ratios;
  out.metrics.geometric_mean = ratios.geometric_mean;
  out.agreement = total == 0 ? 0.0 : static_cast<double>(agree) / static_cast<double>(total);
  return out;
}

}  // namespace stabcv
