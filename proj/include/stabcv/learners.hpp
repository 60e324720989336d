#pragma once

#include <compare>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "stabcv/data.hpp"

namespace stabcv {

enum class LearnerKind { ridge, sparse_ridge, cart };

std::string to_string(LearnerKind kind);
/// Accepts "ridge", "sparse_ridge" and "cart"; throws on anything else.
LearnerKind parse_learner(const std::string& name);

struct RidgeParams {
  double gamma = 1.0;
  auto operator<=>(const RidgeParams&) const = default;
};

struct SparseRidgeParams {
  int tau = 1;
  double gamma = 1.0;
  auto operator<=>(const SparseRidgeParams&) const = default;
};

struct CartParams {
  int max_depth = 5;
  int min_samples_split = 2;
  auto operator<=>(const CartParams&) const = default;
};

/// One point of the hyperparameter grid. The variant ordering is the
/// tie-breaking order used by every argmin in the selection code.
using HyperParams = std::variant<RidgeParams, SparseRidgeParams, CartParams>;

std::string to_string(const HyperParams& theta);

struct LinearModel {
  Eigen::VectorXd beta;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  int depth = 0;
  Index samples = 0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  int depth() const;
  std::size_t leaf_count() const;
};

class FittedModel {
 public:
  FittedModel(LinearModel linear, Index n_train);
  FittedModel(RegressionTree tree, Index p, Index n_train);

  Index dimension() const { return dimension_; }
  Index n_train() const { return n_train_; }
  bool is_linear() const { return std::holds_alternative<LinearModel>(params_); }
  const LinearModel& linear() const { return std::get<LinearModel>(params_); }
  const RegressionTree& tree() const { return std::get<RegressionTree>(params_); }

  /// Throws on a feature-dimension mismatch.
  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  Eigen::VectorXd predict_all(const Eigen::MatrixXd& x) const;

 private:
  std::variant<LinearModel, RegressionTree> params_;
  Index dimension_;
  Index n_train_;
};

double predict(const FittedModel& model, std::span<const double> x);

/// A trainer mapping (training data, hyperparameters) to a model.
/// Implementations must be deterministic and safe to call concurrently.
class Learner {
 public:
  virtual ~Learner() = default;
  virtual std::string name() const = 0;
  virtual FittedModel fit(const Dataset& train, const HyperParams& theta) const = 0;
};

std::unique_ptr<Learner> make_learner(LearnerKind kind);

/// Minimizes (1/(2 gamma))||b||^2 + (1/2)||X b - y||^2. An empty training
/// set yields the zero vector, the limit of the regularized normal equations.
FittedModel fit_ridge(const Dataset& train, double gamma);

/// Relax-round-polish heuristic for the cardinality-constrained ridge problem:
/// full ridge fit, keep the tau columns with largest |b_j| * ||X_j||, refit on
/// that support, then one pass of improving swaps.
FittedModel fit_sparse_ridge(const Dataset& train, int tau, double gamma);

/// Ridge objective (1/(2 gamma))||b||^2 + (1/2)||X b - y||^2.
double ridge_objective(const Dataset& train, const Eigen::VectorXd& beta, double gamma);

/// CART regression tree with variance-reduction splits at midpoints between
/// consecutive distinct values.
FittedModel fit_cart(const Dataset& train, int max_depth, int min_samples_split);

struct GridAxis {
  std::string name;
  std::vector<double> values;  // strictly increasing
};

/// Cartesian grid of hyperparameters. Axes are listed in sweep order for
/// coordinate descent; `init` holds the starting index on each axis.
class HyperGrid {
 public:
  HyperGrid(LearnerKind learner, std::vector<GridAxis> axes, std::vector<std::size_t> init);

  LearnerKind learner() const { return learner_; }
  const std::vector<GridAxis>& axes() const { return axes_; }
  const std::vector<std::size_t>& init() const { return init_; }
  std::size_t size() const;
  std::vector<std::size_t> shape() const;

  HyperParams at(std::span<const std::size_t> coords) const;
  /// Replaces one axis' values; the init index is clamped into range.
  void set_axis(const std::string& name, std::vector<double> values);
  void set_init(std::vector<std::size_t> init);

 private:
  void validate() const;

  LearnerKind learner_;
  std::vector<GridAxis> axes_;
  std::vector<std::size_t> init_;
};

/// `count` points log-uniformly spaced on [lo, hi], endpoints included.
std::vector<double> log_uniform_grid(double lo, double hi, std::size_t count);

/// Largest tau >= 1 with tau * ln(tau) <= n, capped at p.
int max_sparsity(Index n, Index p);

/// ridge: 20 gammas on [1e-3, 1e3], started at the midpoint.
/// sparse_ridge: tau in 1..max_sparsity(n, p) swept first, then gamma.
/// cart: min_samples_split 2..10 swept first with depth fixed at 5, then depth 1..10.
HyperGrid default_grid(LearnerKind learner, Index n, Index p);

}  // namespace stabcv
