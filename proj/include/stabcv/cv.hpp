#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stabcv/data.hpp"
#include "stabcv/learners.hpp"

namespace stabcv {

/// k-fold scores of one hyperparameter point.
struct CVEvaluation {
  HyperParams theta;
  std::vector<double> partial_errors;  // h_j: summed held-out loss of fold j
  double cv_error = 0.0;               // (1/n) sum_j h_j
  std::optional<double> stability;     // empirical hypothesis stability
  std::size_t fit_count = 0;
  double max_loss = 0.0;  // largest pointwise loss seen across the fitted models
};

/// Predictions (over all n rows) of models trained with some folds removed,
/// memoized per (excluded folds, theta). Insertions are idempotent and locked.
class ModelCache {
 public:
  using Predictions = std::shared_ptr<const Eigen::VectorXd>;

  ModelCache(const Dataset& data, const FoldPartition& folds, const Learner& learner, bool enabled);

  /// Trains on all rows outside `excluded` (sorted fold ids) unless cached.
  Predictions predictions(std::vector<std::size_t> excluded, const HyperParams& theta);

  std::size_t fits() const;
  bool enabled() const { return enabled_; }
  const Dataset& data() const { return data_; }
  const FoldPartition& folds() const { return folds_; }

 private:
  const Dataset& data_;
  const FoldPartition& folds_;
  const Learner& learner_;
  bool enabled_;
  mutable std::mutex mutex_;
  std::map<std::pair<std::vector<std::size_t>, HyperParams>, Predictions> store_;
  std::size_t fits_ = 0;
};

/// k-fold CV error, partial fold errors and (optionally) the empirical
/// hypothesis stability max_j (1/n) sum_i |l(y_i, f_{-j}(x_i)) - l(y_i, f(x_i))|.
CVEvaluation cv_evaluate(const Dataset& data, const FoldPartition& folds, const Learner& learner,
                         const HyperParams& theta, const LossFn& loss, bool with_stability);

/// Same, reusing models from `cache`.
CVEvaluation cv_evaluate(ModelCache& cache, const HyperParams& theta, const LossFn& loss,
                         bool with_stability);

/// cv_error + lambda * stability. lambda = 0 returns cv_error exactly.
double regularized_score(const CVEvaluation& eval, double lambda);

struct TraceEntry {
  std::size_t cycle = 0;
  std::size_t axis = 0;
  std::vector<std::size_t> coords;
  HyperParams theta;
  double score = 0.0;
};

struct SearchResult {
  std::vector<std::size_t> coords;
  HyperParams theta;
  double score = 0.0;
  std::size_t cycles = 0;
  std::vector<TraceEntry> trace;                   // moves taken at the end of each axis sweep
  std::vector<std::vector<std::size_t>> visited;   // distinct points scored, in first-visit order
};

using GridScore = std::function<double(std::span<const std::size_t>)>;

/// Alternating axis sweeps from `init`: each sweep scores every value of one
/// axis with the others fixed and moves to the best (ties: smaller
/// hyperparameters). Stops after a cycle without change (or after one cycle
/// on a single-axis grid), on revisiting an
/// end-of-cycle point, or after `max_cycles` cycles. Non-finite scores
/// count as +infinity.
SearchResult coordinate_descent(const HyperGrid& grid, std::span<const std::size_t> init,
                                const GridScore& score, std::size_t max_cycles = 10);

/// Scores every grid point; argmin with the same tie-breaking.
SearchResult exhaustive_search(const HyperGrid& grid, const GridScore& score);

enum class SearchStrategy { coordinate_descent, exhaustive };

struct SelectionOptions {
  SearchStrategy strategy = SearchStrategy::coordinate_descent;
  std::size_t max_cycles = 10;
  bool cache_models = true;
  std::optional<std::vector<std::size_t>> init;  // defaults to grid.init()
};

/// Coordinate descent on cv_error + lambda * stability over fixed folds.
SearchResult coordinate_descent_select(const Dataset& data, const FoldPartition& folds,
                                       const Learner& learner, const HyperGrid& grid, double lambda,
                                       const LossFn& loss, std::span<const std::size_t> init,
                                       std::size_t max_cycles = 10);

struct SelectionReport {
  std::string learner;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<double> lambda_grid;
  std::optional<double> lambda_star;
  HyperParams theta_star;
  double estimate = 0.0;          // nested estimate m_bar(lambda*) or plain kCV error
  double cv_error_at_star = 0.0;  // full-data kCV error of theta*
  double stability_at_star = 0.0;
  std::size_t total_fits = 0;
  std::size_t visited = 0;  // distinct theta scored anywhere in the run
  std::vector<double> per_fold_outer_scores;  // m_{lambda*, t}
  std::vector<double> lambda_scores;          // m_bar per lambda, grid order
  std::vector<HyperParams> outer_thetas;      // theta*_{lambda*, t}
  std::vector<TraceEntry> trace;              // final-stage search path
  double empirical_M = 0.0;
  bool nonfinite_scores = false;
  std::vector<std::string> warnings;
};

/// Plain k-fold selection (lambda = 0) with stability reported at theta*.
SelectionReport kcv_select(const Dataset& data, std::size_t k, const Learner& learner,
                           const HyperGrid& grid, const LossFn& loss, std::uint64_t seed,
                           const SelectionOptions& options = {});

/// Stability-regularized nested k-fold selection. The outer loop picks
/// lambda by the held-out error of each fold's inner selection; the final
/// stage reselects theta on the full data with lambda*.
SelectionReport nested_select(const Dataset& data, std::size_t k, const Learner& learner,
                              const HyperGrid& grid, std::span<const double> lambda_grid,
                              const LossFn& loss, std::uint64_t seed,
                              const SelectionOptions& options = {});

/// |Lambda| k^2 |Theta| + (k + 1) |Theta|.
std::size_t fit_budget(std::size_t lambdas, std::size_t k, std::size_t thetas);

/// 10 values log-uniform on [1e-4, 1e4], optionally preceded by 0.
std::vector<double> default_lambda_grid(bool include_zero = false);

/// Rescales gamma to n_train * gamma / n, then fits on all of `data`.
/// Trees pass through unchanged.
HyperParams rescale_for_full_data(const HyperParams& theta, Index n, Index n_train);
FittedModel retrain_final(const Dataset& data, const Learner& learner, const HyperParams& theta_star,
                          Index n_train);

/// Training-set size of a k-fold split of n rows (n minus the largest fold).
Index fold_training_size(Index n, std::size_t k);

struct BoundInputs {
  double cv_error = 0.0;
  double M = 1.0;
  double mu_h = 0.0;
  std::size_t k = 2;
  double delta = 0.05;
};

/// cv_error + sqrt((M^2 + 6 M k mu_h) / (2 k delta)); holds with
/// probability 1 - delta when folds are equal-sized.
double generalization_bound(const BoundInputs& b);

}  // namespace stabcv
