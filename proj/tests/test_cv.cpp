#include <cmath>
#include <set>

#include "doctest.h"
#include "stabcv/cv.hpp"
#include "stabcv/error.hpp"
#include "stabcv/report.hpp"
#include "stabcv/rng.hpp"

using namespace stabcv;

namespace {

FittedModel constant_model(double value, Index p, Index n) {
  RegressionTree tree;
  tree.nodes.push_back(TreeNode{-1, 0.0, -1, -1, value, 0, n});
  return FittedModel(std::move(tree), p, n);
}

// Predicts the training mean regardless of features.
class MeanLearner final : public Learner {
 public:
  std::string name() const override { return "mean"; }
  FittedModel fit(const Dataset& train, const HyperParams&) const override {
    return constant_model(train.rows() ? train.response().mean() : 0.0, train.cols(), train.rows());
  }
};

// Ignores its training data.
class ZeroLearner final : public Learner {
 public:
  std::string name() const override { return "zero"; }
  FittedModel fit(const Dataset& train, const HyperParams&) const override {
    return constant_model(0.0, train.cols(), train.rows());
  }
};

class FailingLearner final : public Learner {
 public:
  std::string name() const override { return "failing"; }
  FittedModel fit(const Dataset& train, const HyperParams&) const override {
    if (train.rows() < 4) throw_numerical("too few rows");
    return constant_model(0.0, train.cols(), train.rows());
  }
};

Dataset four_points() {
  Eigen::MatrixXd x(4, 1);
  x << 0, 1, 2, 3;
  Eigen::VectorXd y(4);
  y << 0, 0, 2, 2;
  return Dataset(x, y);
}

Dataset noisy_data(Index n, Index p, std::uint64_t seed) {
  CounterRng rng(seed);
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) x(i, j) = rng.normal();
    y(i) = x(i, 0) + rng.normal();
  }
  return Dataset(x, y);
}

HyperGrid small_ridge_grid() {
  return HyperGrid(LearnerKind::ridge, {{"gamma", {0.01, 0.1, 1.0, 10.0}}}, {2});
}

HyperGrid small_sparse_grid(int taus) {
  std::vector<double> t;
  for (int i = 1; i <= taus; ++i) t.push_back(i);
  return HyperGrid(LearnerKind::sparse_ridge, {{"tau", t}, {"gamma", {0.01, 0.3, 10.0}}}, {0, 1});
}

}  // namespace

TEST_CASE("mean learner worked example") {
  const auto data = four_points();
  const FoldPartition folds(2, {0, 0, 1, 1}, 0);
  const MeanLearner learner;
  const auto eval = cv_evaluate(data, folds, learner, RidgeParams{1.0}, LossFn::squared_error(), true);
  CHECK(eval.partial_errors == std::vector<double>{8.0, 8.0});
  CHECK(eval.cv_error == 4.0);
  CHECK(*eval.stability == 2.0);
  CHECK(eval.fit_count == 3);
  CHECK(regularized_score(eval, 0.0) == 4.0);
  CHECK(regularized_score(eval, 0.5) == 5.0);
  CHECK_THROWS_AS(regularized_score(eval, -1.0), Error);

  const auto plain = cv_evaluate(data, folds, learner, RidgeParams{1.0}, LossFn::squared_error(), false);
  CHECK(plain.fit_count == 2);
  CHECK_FALSE(plain.stability.has_value());
}

TEST_CASE("stability dominates for large lambda") {
  CVEvaluation a, b;
  a.cv_error = 3.0;
  a.stability = 0.0;
  b.cv_error = 1.0;
  b.stability = 0.01;
  CHECK(regularized_score(a, 1e4) < regularized_score(b, 1e4));
  CHECK(regularized_score(a, 0.0) > regularized_score(b, 0.0));
}

TEST_CASE("data-independent learner has zero stability") {
  const ZeroLearner learner;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto data = noisy_data(12, 2, s);
    const auto folds = make_folds(12, 3, s);
    CHECK(*cv_evaluate(data, folds, learner, RidgeParams{}, LossFn::squared_error(), true).stability == 0.0);
  }
}

TEST_CASE("cv identity holds exactly and stability is non-negative") {
  CounterRng rng(17);
  for (int t = 0; t < 40; ++t) {
    const Index n = 6 + static_cast<Index>(rng.uniform_index(30));
    const Index p = 1 + static_cast<Index>(rng.uniform_index(8));
    const auto data = noisy_data(n, p, rng.next_u64());
    const auto folds = make_folds(static_cast<std::size_t>(n), 2 + rng.uniform_index(4), rng.next_u64());
    const auto learner = make_learner(LearnerKind::cart);
    const auto eval = cv_evaluate(data, folds, *learner, CartParams{3, 2}, LossFn::squared_error(), true);
    double sum = 0.0;
    for (double h : eval.partial_errors) sum += h;
    CHECK(eval.cv_error == sum / static_cast<double>(n));
    CHECK(*eval.stability >= 0.0);
  }
}

TEST_CASE("fit failures carry the fold index") {
  const auto data = four_points();
  const FoldPartition folds(2, {0, 0, 1, 1}, 0);
  const FailingLearner learner;
  try {
    cv_evaluate(data, folds, learner, RidgeParams{}, LossFn::squared_error(), false);
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::numerical);
    CHECK(std::string(e.what()).find("folds {0}") != std::string::npos);
  }
}

TEST_CASE("coordinate descent stops at a coordinate-wise minimum") {
  const HyperGrid grid(LearnerKind::sparse_ridge, {{"tau", {1, 2}}, {"gamma", {1, 2}}}, {0, 0});
  const double table[2][2] = {{1, 3}, {2, 0}};
  const GridScore score = [&](std::span<const std::size_t> c) { return table[c[0]][c[1]]; };
  const std::vector<std::size_t> init{0, 0};
  const auto r = coordinate_descent(grid, init, score, 10);
  CHECK(r.coords == std::vector<std::size_t>{0, 0});
  CHECK(r.score == 1.0);
  CHECK(r.cycles == 1);
  CHECK(exhaustive_search(grid, score).score == 0.0);
}

TEST_CASE("coordinate descent on one axis is exhaustive") {
  const auto grid = small_ridge_grid();
  const std::vector<double> values{5.0, 2.0, 7.0, 2.0};
  const GridScore score = [&](std::span<const std::size_t> c) { return values[c[0]]; };
  const auto r = coordinate_descent(grid, grid.init(), score, 10);
  CHECK(r.coords[0] == 1);  // tie with index 3 goes to the smaller gamma
  CHECK(r.cycles == 1);
}

TEST_CASE("coordinate descent finds the separable global minimum within two cycles") {
  CounterRng rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> f(6), g(7);
    for (auto& v : f) v = rng.uniform();
    for (auto& v : g) v = rng.uniform();
    const HyperGrid grid(LearnerKind::sparse_ridge, {{"tau", {1, 2, 3, 4, 5, 6}}, {"gamma", {1, 2, 3, 4, 5, 6, 7}}},
                         {rng.uniform_index(6), rng.uniform_index(7)});
    const GridScore score = [&](std::span<const std::size_t> c) { return f[c[0]] + g[c[1]]; };
    const auto r = coordinate_descent(grid, grid.init(), score, 10);
    CHECK(r.cycles <= 2);
    CHECK(r.score == exhaustive_search(grid, score).score);
  }
}

TEST_CASE("coordinate descent treats non-finite scores as infinite") {
  const auto grid = small_ridge_grid();
  const GridScore score = [](std::span<const std::size_t> c) {
    return c[0] == 0 ? std::nan("") : static_cast<double>(10 - c[0]);
  };
  CHECK(coordinate_descent(grid, grid.init(), score).coords[0] == 3);
}

TEST_CASE("nested selection with lambda = {0} matches plain kCV") {
  const std::vector<double> zero{0.0};
  for (std::uint64_t s = 0; s < 8; ++s) {
    const auto data = noisy_data(24, 4, 40 + s);
    const auto learner = make_learner(LearnerKind::sparse_ridge);
    const auto grid = small_sparse_grid(3);
    const auto folds = make_folds(24, 4, s);
    const auto plain = coordinate_descent_select(data, folds, *learner, grid, 0.0, LossFn::squared_error(),
                                                 grid.init());
    const auto nested = nested_select(data, 4, *learner, grid, zero, LossFn::squared_error(), s);
    CHECK(nested.theta_star == plain.theta);
    CHECK(kcv_select(data, 4, *learner, grid, LossFn::squared_error(), s).theta_star == plain.theta);
    CHECK(nested.per_fold_outer_scores.size() == 4);
  }
}

TEST_CASE("fit count for the smallest nested run") {
  const auto data = noisy_data(10, 2, 1);
  const auto learner = make_learner(LearnerKind::ridge);
  const HyperGrid grid(LearnerKind::ridge, {{"gamma", {1.0}}}, {0});
  const std::vector<double> lambdas{0.5};
  SelectionOptions opts;
  opts.cache_models = false;
  const auto r = nested_select(data, 2, *learner, grid, lambdas, LossFn::squared_error(), 3, opts);
  CHECK(r.total_fits == 7);
  CHECK(fit_budget(1, 2, 1) == 7);
  opts.cache_models = true;
  CHECK(nested_select(data, 2, *learner, grid, lambdas, LossFn::squared_error(), 3, opts).total_fits == 4);
}

TEST_CASE("fit counts respect the ledger and caching removes the lambda factor") {
  const auto learner = make_learner(LearnerKind::sparse_ridge);
  const auto lambdas = default_lambda_grid(true);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto data = noisy_data(30, 5, 70 + s);
    const auto grid = small_sparse_grid(4);
    SelectionOptions off;
    off.cache_models = false;
    const auto uncached = nested_select(data, 5, *learner, grid, lambdas, LossFn::squared_error(), s, off);
    CHECK(uncached.total_fits <= fit_budget(lambdas.size(), 5, uncached.visited));

    SelectionOptions exhaustive;
    exhaustive.strategy = SearchStrategy::exhaustive;
    const auto cached = nested_select(data, 5, *learner, grid, lambdas, LossFn::squared_error(), s, exhaustive);
    CHECK(cached.total_fits <= fit_budget(1, 5, grid.size()));
    CHECK(cached.total_fits <= 6 * 5 * grid.size() + 6 * grid.size());
  }
}

TEST_CASE("zero-stability learner picks the first lambda") {
  const ZeroLearner learner;
  const auto data = noisy_data(20, 2, 9);
  const auto grid = small_ridge_grid();
  const std::vector<double> lambdas{0.001, 1.0, 100.0};
  const auto r = nested_select(data, 4, learner, grid, lambdas, LossFn::squared_error(), 2);
  CHECK(*r.lambda_star == 0.001);
  CHECK(r.stability_at_star == 0.0);
  CHECK(std::set<double>(r.lambda_scores.begin(), r.lambda_scores.end()).size() == 1);
}

TEST_CASE("nested selection argument checks") {
  const auto data = noisy_data(20, 2, 9);
  const auto learner = make_learner(LearnerKind::ridge);
  const std::vector<double> empty;
  const std::vector<double> negative{-1.0};
  CHECK_THROWS_AS(nested_select(data, 4, *learner, small_ridge_grid(), empty, LossFn::squared_error(), 0), Error);
  CHECK_THROWS_AS(nested_select(data, 4, *learner, small_ridge_grid(), negative, LossFn::squared_error(), 0), Error);
}

TEST_CASE("selection is invariant to a constant loss shift") {
  LossFn shifted = LossFn::squared_error();
  shifted.fn = [](double y, double yhat) { return (y - yhat) * (y - yhat) + 5.0; };
  const auto learner = make_learner(LearnerKind::sparse_ridge);
  const auto grid = small_sparse_grid(3);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto data = noisy_data(20, 4, 300 + s);
    const auto folds = make_folds(20, 4, s);
    const auto base = cv_evaluate(data, folds, *learner, SparseRidgeParams{2, 0.3}, LossFn::squared_error(), true);
    const auto moved = cv_evaluate(data, folds, *learner, SparseRidgeParams{2, 0.3}, shifted, true);
    CHECK(moved.cv_error == doctest::Approx(base.cv_error + 5.0).epsilon(1e-12));
    CHECK(*moved.stability == doctest::Approx(*base.stability).epsilon(1e-9));
    for (double lambda : {0.0, 0.5, 20.0}) {
      CHECK(coordinate_descent_select(data, folds, *learner, grid, lambda, LossFn::squared_error(), grid.init()).theta ==
            coordinate_descent_select(data, folds, *learner, grid, lambda, shifted, grid.init()).theta);
    }
  }
}

TEST_CASE("retraining rescales gamma only") {
  CHECK(std::get<SparseRidgeParams>(rescale_for_full_data(SparseRidgeParams{3, 10.0}, 100, 80)).gamma ==
        doctest::Approx(8.0));
  CHECK(std::get<SparseRidgeParams>(rescale_for_full_data(SparseRidgeParams{3, 10.0}, 100, 80)).tau == 3);
  CHECK(std::get<RidgeParams>(rescale_for_full_data(RidgeParams{4.0}, 50, 50)).gamma == 4.0);
  const HyperParams tree = CartParams{4, 7};
  CHECK(rescale_for_full_data(tree, 100, 80) == tree);
  CHECK(fold_training_size(100, 5) == 80);
  CHECK(fold_training_size(7, 3) == 4);

  const auto data = noisy_data(30, 3, 5);
  const auto learner = make_learner(LearnerKind::ridge);
  const auto m = retrain_final(data, *learner, RidgeParams{10.0}, 24);
  CHECK((m.linear().beta - fit_ridge(data, 8.0).linear().beta).norm() == 0.0);
}

TEST_CASE("generalization bound") {
  CHECK(generalization_bound({0.0, 1.0, 0.0, 5, 0.5}) == doctest::Approx(0.4472135954999579).epsilon(1e-12));
  CHECK(std::abs(generalization_bound({4.0, 1.0, 2.0, 2, 0.5}) - (4.0 + std::sqrt(12.5))) < 1e-12);
  CHECK(generalization_bound({4.0, 1.0, 2.0, 5, 0.5}) < generalization_bound({4.0, 1.0, 2.0, 2, 0.5}));
  CHECK_THROWS_AS(generalization_bound({0.0, 1.0, 0.0, 5, 1.0}), Error);
  CHECK_THROWS_AS(generalization_bound({0.0, 1.0, 0.0, 5, 0.0}), Error);
  CHECK_THROWS_AS(generalization_bound({0.0, 0.0, 0.0, 5, 0.5}), Error);

  CounterRng rng(12);
  for (int t = 0; t < 200; ++t) {
    BoundInputs b{rng.uniform(), 0.1 + rng.uniform(), rng.uniform(), 2 + rng.uniform_index(10), 0.01 + 0.9 * rng.uniform()};
    const double v = generalization_bound(b);
    CHECK(v >= b.cv_error);
    auto more_m = b;
    more_m.M *= 1.5;
    CHECK(generalization_bound(more_m) >= v);
    auto more_mu = b;
    more_mu.mu_h += 0.3;
    CHECK(generalization_bound(more_mu) >= v);
    auto more_delta = b;
    more_delta.delta = std::min(0.99, b.delta * 1.1);
    CHECK(generalization_bound(more_delta) <= v);
    auto more_k = b;
    more_k.k += 1;
    CHECK(generalization_bound(more_k) <= v);
  }
}

TEST_CASE("selection report json") {
  const auto data = noisy_data(20, 3, 4);
  const auto learner = make_learner(LearnerKind::sparse_ridge);
  const auto r = nested_select(data, 4, *learner, small_sparse_grid(2), default_lambda_grid(), LossFn::squared_error(), 8);
  const auto j = to_json(r);
  CHECK(j.at("schema") == "stabcv-report/1");
  for (const char* key : {"learner", "k", "seed", "lambda_grid", "lambda_star", "theta_star", "estimate",
                          "stability_at_star", "total_fits", "per_fold_outer_scores", "trace"}) {
    CHECK(j.contains(key));
  }
  const auto back = selection_report_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.theta_star == r.theta_star);
  CHECK(back.estimate == r.estimate);
  CHECK(*back.lambda_star == *r.lambda_star);
  CHECK(default_lambda_grid().size() == 10);
  CHECK(default_lambda_grid(true).front() == 0.0);
}
