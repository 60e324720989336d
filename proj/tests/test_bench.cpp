#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "stabcv/bench.hpp"
#include "stabcv/error.hpp"
#include "stabcv/rng.hpp"

using namespace stabcv;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string write_csv(const std::string& name) {
  const auto path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path);
  out << "y,a,b,c\n";
  CounterRng rng(1);
  for (int i = 0; i < 40; ++i) {
    const double a = rng.normal(), b = rng.normal(), c = rng.normal();
    out << 2 * a - b + 0.3 * rng.normal() << ',' << a << ',' << b << ',' << c << '\n';
  }
  return path;
}

ExperimentConfig small_config(Mode mode, const std::string& dataset) {
  ExperimentConfig cfg;
  cfg.mode = mode;
  cfg.learner = LearnerKind::sparse_ridge;
  cfg.dataset = dataset;
  cfg.response_column = "y";
  cfg.repeats = 3;
  cfg.k = 4;
  cfg.seed = 10;
  cfg.lambda_grid = std::vector<double>{0.01, 1.0, 100.0};
  cfg.grid_overrides["gamma"] = {0.01, 1.0, 100.0};
  cfg.threads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("config file parsing") {
  std::istringstream in(
      "# experiment\nmode = nested\nlearner = cart\nk = 3\nrepeats = 4   # few\n"
      "lambda_grid = 0, 1e-2, 10\ngrid.max_depth = 1,2,3\ndataset = synth:n=30,p=5\nM = 2.5\n");
  const auto cfg = parse_config(in);
  CHECK(cfg.mode == Mode::nested);
  CHECK(cfg.learner == LearnerKind::cart);
  CHECK(cfg.k == 3);
  CHECK(cfg.repeats == 4);
  CHECK(*cfg.lambda_grid == std::vector<double>{0.0, 0.01, 10.0});
  CHECK(cfg.grid_overrides.at("max_depth").size() == 3);
  CHECK(*cfg.bound_M == 2.5);
  CHECK(parse_synth_spec(cfg.dataset)->p == 5);

  std::istringstream bad("colour = red\n");
  try {
    parse_config(bad);
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::invalid_argument);
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
  std::istringstream bad_fraction("test_fraction = 1.5\ndataset = x.csv\n");
  CHECK_THROWS_AS(parse_config(bad_fraction).validate(), Error);
}

TEST_CASE("split derivation") {
  const auto a = split_test_indices(40, 0.1, 3);
  CHECK(a.size() == 4);
  CHECK(a == split_test_indices(40, 0.1, 3));
  CHECK(a != split_test_indices(40, 0.1, 4));
  CHECK(split_test_indices(41, 0.1, 3).size() == 5);
}

TEST_CASE("paired splits across modes and learners") {
  const auto path = write_csv("stabcv_paired.csv");
  const auto kcv = run_experiment(small_config(Mode::kcv, path));
  const auto nested = run_experiment(small_config(Mode::nested, path));
  auto cart_cfg = small_config(Mode::kcv, path);
  cart_cfg.learner = LearnerKind::cart;
  cart_cfg.grid_overrides.clear();
  const auto cart = run_experiment(cart_cfg);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(kcv.rows[r].test_indices == nested.rows[r].test_indices);
    CHECK(kcv.rows[r].test_indices == cart.rows[r].test_indices);
    CHECK(nested.rows[r].lambda_star.has_value());
  }
  const std::vector<RunRecord> cand{nested};
  const std::vector<RunRecord> base{kcv};
  const auto s = summarize(cand, base);
  CHECK(s.metrics.per_dataset_ratios.size() == 1);
  CHECK(s.agreement >= 0.0);

  const auto self = summarize(base, base);
  CHECK(self.metrics.geometric_mean == 1.0);
  CHECK(self.agreement == 1.0);

  auto other_seed = small_config(Mode::kcv, path);
  other_seed.seed = 11;
  const std::vector<RunRecord> unpaired{run_experiment(other_seed)};
  CHECK_THROWS_AS(summarize(unpaired, base), Error);
}

TEST_CASE("summary arithmetic") {
  auto make = [](std::string name, std::vector<double> est, std::vector<double> test) {
    RunRecord r;
    r.config.dataset = std::move(name);
    for (std::size_t i = 0; i < est.size(); ++i) {
      RunRow row;
      row.seed = i;
      row.estimate = est[i];
      row.test_mse = test[i];
      r.rows.push_back(row);
    }
    r.recompute_aggregates();
    return r;
  };
  const std::vector<RunRecord> cand{make("a", {1, 1}, {0.9, 0.9}), make("b", {1, 1}, {2.0, 2.0})};
  const std::vector<RunRecord> base{make("a", {1, 1}, {1.0, 1.0}), make("b", {1, 1}, {2.0, 2.0})};
  const auto s = summarize(cand, base);
  CHECK(s.metrics.geometric_mean == doctest::Approx(std::sqrt(0.9)));
  // Estimates below test error give a negative gap.
  CHECK(s.candidate_disappointment[1] == doctest::Approx(-0.5));
  const std::vector<RunRecord> one{make("a", {1, 1}, {1, 1})};
  CHECK_THROWS_AS(summarize(one, base), Error);
}

TEST_CASE("aggregates recompute from rows") {
  const auto rec = run_experiment(small_config(Mode::kcv, write_csv("stabcv_agg.csv")));
  double est = 0.0, test = 0.0;
  for (const auto& r : rec.rows) {
    est += r.estimate;
    test += r.test_mse;
  }
  CHECK(std::abs(rec.mean_estimate - est / 3.0) <= 1e-12);
  CHECK(std::abs(rec.mean_test_mse - test / 3.0) <= 1e-12);
}

TEST_CASE("bound mode and outputs are reproducible") {
  auto cfg = small_config(Mode::bound, "synth:n=30,p=6,tau_true=2,n_test=200");
  cfg.repeats = 1;
  cfg.bound_M = 4.0;
  cfg.delta = 0.5;
  const auto dir = std::filesystem::temp_directory_path() / "stabcv_bound_out";
  cfg.output_dir = (dir / "a").string();
  const auto rec = run_experiment(cfg);
  REQUIRE(rec.rows.front().bound.has_value());
  CHECK(*rec.rows.front().bound >= rec.rows.front().report.cv_error_at_star);
  write_outputs(rec);
  cfg.output_dir = (dir / "b").string();
  write_outputs(run_experiment(cfg));
  for (const char* f : {"report.json", "runs.csv"}) {
    CHECK(slurp((dir / "a" / f).string()) == slurp((dir / "b" / f).string()));
  }
  const auto back = record_from_json(nlohmann::json::parse(slurp((dir / "a" / "report.json").string())));
  CHECK(back.rows.front().theta_star == rec.rows.front().theta_star);
  CHECK(back.rows.front().report.stability_at_star == rec.rows.front().report.stability_at_star);
}

TEST_CASE("data errors surface as data errors") {
  auto cfg = small_config(Mode::kcv, "/nonexistent/file.csv");
  try {
    run_experiment(cfg);
    FAIL("expected data error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::data);
  }
  cfg.dataset = "synth:n=30,p=4,unknown=3";
  CHECK_THROWS_AS(run_experiment(cfg), Error);
  cfg.dataset = "synth:n=30,p=4";
  cfg.grid_overrides["depth"] = {1, 2};
  CHECK_THROWS_AS(run_experiment(cfg), Error);
}

TEST_CASE("heatmap mode writes csv files") {
  ExperimentConfig cfg;
  cfg.mode = Mode::heatmap;
  cfg.dataset = "synth:n=20,p=4,tau_true=2,n_test=100";
  cfg.repeats = 1;
  cfg.grid_overrides["gamma"] = {0.1, 10.0};
  cfg.output_dir = (std::filesystem::temp_directory_path() / "stabcv_heat").string();
  write_outputs(run_experiment(cfg));
  const auto csv = slurp(cfg.output_dir + "/heatmap_cv_fivefold.csv");
  CHECK(csv.rfind("tau,0.10000000000000001,10\n", 0) == 0);
  CHECK(std::filesystem::exists(cfg.output_dir + "/heatmap_test_fivefold.svg"));
}
