#include "stabcv/learners.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "stabcv/error.hpp"

namespace stabcv {

std::string to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::ridge:
      return "ridge";
    case LearnerKind::sparse_ridge:
      return "sparse_ridge";
    case LearnerKind::cart:
      return "cart";
  }
  return "unknown";
}

LearnerKind parse_learner(const std::string& name) {
  if (name == "ridge") return LearnerKind::ridge;
  if (name == "sparse_ridge") return LearnerKind::sparse_ridge;
  if (name == "cart") return LearnerKind::cart;
  throw_invalid("unknown learner '" + name + "'");
}

std::string to_string(const HyperParams& theta) {
  std::ostringstream os;
  os.precision(17);
  std::visit(
      [&os](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, RidgeParams>) {
          os << "gamma=" << t.gamma;
        } else if constexpr (std::is_same_v<T, SparseRidgeParams>) {
          os << "tau=" << t.tau << " gamma=" << t.gamma;
        } else {
          os << "max_depth=" << t.max_depth << " min_samples_split=" << t.min_samples_split;
        }
      },
      theta);
  return os.str();
}

int RegressionTree::depth() const {
  int d = 0;
  for (const auto& node : nodes) d = std::max(d, node.depth);
  return d;
}

std::size_t RegressionTree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& nd) { return nd.feature < 0; }));
}

FittedModel::FittedModel(LinearModel linear, Index n_train)
    : params_(std::move(linear)), n_train_(n_train) {
  dimension_ = std::get<LinearModel>(params_).beta.size();
}

FittedModel::FittedModel(RegressionTree tree, Index p, Index n_train)
    : params_(std::move(tree)), dimension_(p), n_train_(n_train) {
  if (std::get<RegressionTree>(params_).nodes.empty()) throw_invalid("tree without nodes");
}

double FittedModel::predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  if (x.size() != dimension_) {
    throw_invalid("feature dimension " + std::to_string(x.size()) + " does not match model dimension " +
                  std::to_string(dimension_));
  }
  if (const auto* lin = std::get_if<LinearModel>(&params_)) return x.dot(lin->beta);
  const auto& nodes = std::get<RegressionTree>(params_).nodes;
  std::size_t at = 0;
  while (nodes[at].feature >= 0) {
    const auto& nd = nodes[at];
    at = static_cast<std::size_t>(x(nd.feature) <= nd.threshold ? nd.left : nd.right);
  }
  return nodes[at].value;
}

Eigen::VectorXd FittedModel::predict_all(const Eigen::MatrixXd& x) const {
  if (x.cols() != dimension_) {
    throw_invalid("feature dimension " + std::to_string(x.cols()) + " does not match model dimension " +
                  std::to_string(dimension_));
  }
  if (const auto* lin = std::get_if<LinearModel>(&params_)) return x * lin->beta;
  Eigen::VectorXd out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) out(i) = predict(x.row(i));
  return out;
}

double predict(const FittedModel& model, std::span<const double> x) {
  const Eigen::Map<const Eigen::RowVectorXd> row(x.data(), static_cast<Index>(x.size()));
  return model.predict(row);
}

namespace {

void check_gamma(double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw_invalid("gamma must be positive and finite");
}

// Solves (G + I/gamma) b = rhs for a symmetric positive semidefinite G.
Eigen::VectorXd solve_regularized(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs,
                                  double gamma) {
  Eigen::MatrixXd a = gram;
  a.diagonal().array() += 1.0 / gamma;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw_numerical("ridge system is not positive definite");
  Eigen::VectorXd b = llt.solve(rhs);
  if (!b.allFinite()) throw_numerical("ridge solve produced non-finite coefficients");
  return b;
}

Eigen::VectorXd ridge_coefficients(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double gamma) {
  if (x.rows() == 0) return Eigen::VectorXd::Zero(x.cols());
  if (x.cols() <= x.rows()) {
    return solve_regularized(x.transpose() * x, x.transpose() * y, gamma);
  }
  // Fewer rows than columns: b = X^T (X X^T + I/gamma)^{-1} y.
  return x.transpose() * solve_regularized(x * x.transpose(), y, gamma);
}

// Gram-matrix view of one training set, shared by every support evaluation.
struct SupportSolver {
  Eigen::MatrixXd gram;
  Eigen::VectorXd xty;
  double yty;
  double gamma;

  // Optimal objective and coefficients restricted to `support`.
  double objective(std::span<const Index> support, Eigen::VectorXd* coef = nullptr) const {
    const auto s = static_cast<Index>(support.size());
    Eigen::MatrixXd a(s, s);
    Eigen::VectorXd b(s);
    for (Index r = 0; r < s; ++r) {
      b(r) = xty(support[static_cast<std::size_t>(r)]);
      for (Index c = 0; c < s; ++c) {
        a(r, c) = gram(support[static_cast<std::size_t>(r)], support[static_cast<std::size_t>(c)]);
      }
    }
    const Eigen::VectorXd beta = solve_regularized(a, b, gamma);
    if (coef != nullptr) *coef = beta;
    return 0.5 * yty - 0.5 * b.dot(beta);
  }

  // Objective of rest + {j} for any column j outside `rest`, by eliminating
  // the fixed block once: with L L^T = G_RR + I/gamma, W = L^{-1} G_R. and
  // z = L^{-1} b_R, adding j contributes (b_j - W_j.z)^2 / (G_jj + 1/gamma - |W_j|^2).
  std::function<double(Index)> swap_scorer(std::span<const Index> rest) const {
    const auto s = static_cast<Index>(rest.size());
    const Index p = gram.rows();
    Eigen::MatrixXd a(s, s);
    Eigen::VectorXd b(s);
    Eigen::MatrixXd cross(s, p);
    for (Index r = 0; r < s; ++r) {
      const Index row = rest[static_cast<std::size_t>(r)];
      b(r) = xty(row);
      cross.row(r) = gram.row(row);
      for (Index c = 0; c < s; ++c) a(r, c) = gram(row, rest[static_cast<std::size_t>(c)]);
    }
    a.diagonal().array() += 1.0 / gamma;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) throw_numerical("ridge system is not positive definite");
    auto w = std::make_shared<Eigen::MatrixXd>(llt.matrixL().solve(cross));
    auto z = std::make_shared<Eigen::VectorXd>(llt.matrixL().solve(b));
    const double base = z->squaredNorm();
    return [this, w, z, base](Index j) {
      const double d = gram(j, j) + 1.0 / gamma - w->col(j).squaredNorm();
      const double c = xty(j) - w->col(j).dot(*z);
      const double gain = d > 0.0 ? base + c * c / d : base;
      return 0.5 * yty - 0.5 * gain;
    };
  }
};

}  // namespace

FittedModel fit_ridge(const Dataset& train, double gamma) {
  check_gamma(gamma);
  return FittedModel(LinearModel{ridge_coefficients(train.features(), train.response(), gamma)},
                     train.rows());
}

double ridge_objective(const Dataset& train, const Eigen::VectorXd& beta, double gamma) {
  const Eigen::VectorXd r = train.features() * beta - train.response();
  return 0.5 * beta.squaredNorm() / gamma + 0.5 * r.squaredNorm();
}

FittedModel fit_sparse_ridge(const Dataset& train, int tau, double gamma) {
  check_gamma(gamma);
  const Index p = train.cols();
  if (tau < 1 || tau > p) {
    throw_invalid("sparsity tau=" + std::to_string(tau) + " outside [1, " + std::to_string(p) + "]");
  }
  const auto& x = train.features();
  const auto& y = train.response();
  if (train.rows() == 0) return FittedModel(LinearModel{Eigen::VectorXd::Zero(p)}, 0);

  const Eigen::VectorXd relaxed = ridge_coefficients(x, y, gamma);
  const SupportSolver solver{x.transpose() * x, x.transpose() * y, y.squaredNorm(), gamma};

  std::vector<Index> order(static_cast<std::size_t>(p));
  std::iota(order.begin(), order.end(), Index{0});
  std::vector<double> weight(static_cast<std::size_t>(p));
  for (Index j = 0; j < p; ++j) {
    weight[static_cast<std::size_t>(j)] = std::abs(relaxed(j)) * std::sqrt(solver.gram(j, j));
  }
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return weight[static_cast<std::size_t>(a)] > weight[static_cast<std::size_t>(b)];
  });
  std::vector<Index> support(order.begin(), order.begin() + tau);
  std::sort(support.begin(), support.end());

  if (tau < p) {
    std::vector<bool> in_support(static_cast<std::size_t>(p), false);
    for (Index j : support) in_support[static_cast<std::size_t>(j)] = true;
    Index swaps = 0;
    for (std::size_t slot = 0; slot < support.size() && swaps < p; ++slot) {
      std::vector<Index> rest;
      for (std::size_t r = 0; r < support.size(); ++r) {
        if (r != slot) rest.push_back(support[r]);
      }
      const auto swap_value = solver.swap_scorer(rest);
      double current = swap_value(support[slot]);
      for (Index cand = 0; cand < p && swaps < p; ++cand) {
        if (in_support[static_cast<std::size_t>(cand)]) continue;
        const double value = swap_value(cand);
        if (value < current - 1e-12 * std::abs(current)) {
          in_support[static_cast<std::size_t>(support[slot])] = false;
          in_support[static_cast<std::size_t>(cand)] = true;
          support[slot] = cand;
          current = value;
          ++swaps;
        }
      }
    }
    std::sort(support.begin(), support.end());
  }

  Eigen::VectorXd coef;
  solver.objective(support, &coef);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  for (std::size_t r = 0; r < support.size(); ++r) beta(support[r]) = coef(static_cast<Index>(r));
  return FittedModel(LinearModel{std::move(beta)}, train.rows());
}

namespace {

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double sse = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Dataset& data, int max_depth, int min_samples_split)
      : x_(data.features()), y_(data.response()), max_depth_(max_depth), min_split_(min_samples_split) {}

  RegressionTree build() {
    std::vector<Index> all(static_cast<std::size_t>(y_.size()));
    std::iota(all.begin(), all.end(), Index{0});
    grow(all, 0);
    return std::move(tree_);
  }

 private:
  int grow(const std::vector<Index>& rows, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back(TreeNode{});
    double sum = 0.0;
    double lo = y_(rows.front());
    double hi = lo;
    for (Index i : rows) {
      sum += y_(i);
      lo = std::min(lo, y_(i));
      hi = std::max(hi, y_(i));
    }
    const auto count = static_cast<double>(rows.size());
    {
      auto& node = tree_.nodes[static_cast<std::size_t>(id)];
      node.value = sum / count;
      node.depth = depth;
      node.samples = static_cast<Index>(rows.size());
    }
    if (depth >= max_depth_ || static_cast<int>(rows.size()) < min_split_ || lo == hi) return id;

    double sq = 0.0;
    for (Index i : rows) sq += y_(i) * y_(i);
    const double parent_sse = sq - sum * sum / count;
    const SplitChoice split = best_split(rows);
    if (split.feature < 0 || !(split.sse < parent_sse)) return id;

    std::vector<Index> left;
    std::vector<Index> right;
    for (Index i : rows) (x_(i, split.feature) <= split.threshold ? left : right).push_back(i);
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  SplitChoice best_split(const std::vector<Index>& rows) const {
    SplitChoice best;
    bool found = false;
    std::vector<Index> sorted = rows;
    const std::size_t m = rows.size();
    double total = 0.0;
    double total_sq = 0.0;
    for (Index i : rows) {
      total += y_(i);
      total_sq += y_(i) * y_(i);
    }
    for (Index f = 0; f < x_.cols(); ++f) {
      std::stable_sort(sorted.begin(), sorted.end(), [&](Index a, Index b) { return x_(a, f) < x_(b, f); });
      double left_sum = 0.0;
      double left_sq = 0.0;
      for (std::size_t c = 0; c + 1 < m; ++c) {
        const double yi = y_(sorted[c]);
        left_sum += yi;
        left_sq += yi * yi;
        const double xa = x_(sorted[c], f);
        const double xb = x_(sorted[c + 1], f);
        if (!(xa < xb)) continue;
        const auto nl = static_cast<double>(c + 1);
        const auto nr = static_cast<double>(m - c - 1);
        const double right_sum = total - left_sum;
        const double sse = (left_sq - left_sum * left_sum / nl) +
                           ((total_sq - left_sq) - right_sum * right_sum / nr);
        // Strict improvement keeps the lowest feature index and threshold on ties.
        if (!found || sse < best.sse) {
          found = true;
          best = SplitChoice{static_cast<int>(f), 0.5 * (xa + xb), sse};
        }
      }
    }
    return best;
  }

  const Eigen::MatrixXd& x_;
  const Eigen::VectorXd& y_;
  int max_depth_;
  int min_split_;
  RegressionTree tree_;
};

}  // namespace

FittedModel fit_cart(const Dataset& train, int max_depth, int min_samples_split) {
  if (max_depth < 1) throw_invalid("max_depth must be at least 1");
  if (min_samples_split < 2) throw_invalid("min_samples_split must be at least 2");
  if (train.rows() == 0) throw_invalid("cannot fit a tree on an empty training set");
  TreeBuilder builder(train, max_depth, min_samples_split);
  return FittedModel(builder.build(), train.cols(), train.rows());
}

namespace {

class RidgeLearner final : public Learner {
 public:
  std::string name() const override { return "ridge"; }
  FittedModel fit(const Dataset& train, const HyperParams& theta) const override {
    return fit_ridge(train, std::get<RidgeParams>(theta).gamma);
  }
};

class SparseRidgeLearner final : public Learner {
 public:
  std::string name() const override { return "sparse_ridge"; }
  FittedModel fit(const Dataset& train, const HyperParams& theta) const override {
    const auto& t = std::get<SparseRidgeParams>(theta);
    return fit_sparse_ridge(train, t.tau, t.gamma);
  }
};

class CartLearner final : public Learner {
 public:
  std::string name() const override { return "cart"; }
  FittedModel fit(const Dataset& train, const HyperParams& theta) const override {
    const auto& t = std::get<CartParams>(theta);
    return fit_cart(train, t.max_depth, t.min_samples_split);
  }
};

}  // namespace

std::unique_ptr<Learner> make_learner(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::ridge:
      return std::make_unique<RidgeLearner>();
    case LearnerKind::sparse_ridge:
      return std::make_unique<SparseRidgeLearner>();
    case LearnerKind::cart:
      return std::make_unique<CartLearner>();
  }
  throw_invalid("unknown learner kind");
}

HyperGrid::HyperGrid(LearnerKind learner, std::vector<GridAxis> axes, std::vector<std::size_t> init)
    : learner_(learner), axes_(std::move(axes)), init_(std::move(init)) {
  validate();
}

void HyperGrid::validate() const {
  if (axes_.empty()) throw_invalid("hyperparameter grid has no axes");
  if (init_.size() != axes_.size()) throw_invalid("grid init does not match the number of axes");
  for (std::size_t a = 0; a < axes_.size(); ++a) {
    const auto& v = axes_[a].values;
    if (v.empty()) throw_invalid("grid axis '" + axes_[a].name + "' is empty");
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (!(v[i - 1] < v[i])) throw_invalid("grid axis '" + axes_[a].name + "' is not strictly increasing");
    }
    if (init_[a] >= v.size()) throw_invalid("grid init out of range on axis '" + axes_[a].name + "'");
  }
  const auto need = [&](std::initializer_list<const char*> names) {
    if (names.size() != axes_.size()) throw_invalid("grid axes do not match learner " + to_string(learner_));
    for (const char* nm : names) {
      if (std::none_of(axes_.begin(), axes_.end(), [&](const GridAxis& ax) { return ax.name == nm; })) {
        throw_invalid(std::string("grid for ") + to_string(learner_) + " lacks axis '" + nm + "'");
      }
    }
  };
  switch (learner_) {
    case LearnerKind::ridge:
      need({"gamma"});
      break;
    case LearnerKind::sparse_ridge:
      need({"tau", "gamma"});
      break;
    case LearnerKind::cart:
      need({"max_depth", "min_samples_split"});
      break;
  }
}

std::size_t HyperGrid::size() const {
  std::size_t s = 1;
  for (const auto& ax : axes_) s *= ax.values.size();
  return s;
}

std::vector<std::size_t> HyperGrid::shape() const {
  std::vector<std::size_t> s;
  for (const auto& ax : axes_) s.push_back(ax.values.size());
  return s;
}

HyperParams HyperGrid::at(std::span<const std::size_t> coords) const {
  if (coords.size() != axes_.size()) throw_invalid("grid coordinate has wrong arity");
  const auto value = [&](const char* nm) {
    for (std::size_t a = 0; a < axes_.size(); ++a) {
      if (axes_[a].name == nm) return axes_[a].values.at(coords[a]);
    }
    throw_invalid(std::string("grid axis '") + nm + "' missing");
  };
  switch (learner_) {
    case LearnerKind::ridge:
      return RidgeParams{value("gamma")};
    case LearnerKind::sparse_ridge:
      return SparseRidgeParams{static_cast<int>(std::lround(value("tau"))), value("gamma")};
    case LearnerKind::cart:
      return CartParams{static_cast<int>(std::lround(value("max_depth"))),
                        static_cast<int>(std::lround(value("min_samples_split")))};
  }
  throw_invalid("unknown learner kind");
}

void HyperGrid::set_axis(const std::string& name, std::vector<double> values) {
  for (std::size_t a = 0; a < axes_.size(); ++a) {
    if (axes_[a].name == name) {
      axes_[a].values = std::move(values);
      if (!axes_[a].values.empty()) init_[a] = std::min(init_[a], axes_[a].values.size() - 1);
      validate();
      return;
    }
  }
  throw_invalid("learner " + to_string(learner_) + " has no grid axis '" + name + "'");
}

void HyperGrid::set_init(std::vector<std::size_t> init) {
  init_ = std::move(init);
  validate();
}

std::vector<double> log_uniform_grid(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0) || !(hi > lo) || count < 2) throw_invalid("log-uniform grid needs 0 < lo < hi, count >= 2");
  std::vector<double> out(count);
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

int max_sparsity(Index n, Index p) {
  if (n < 1 || p < 1) throw_invalid("max_sparsity needs n, p >= 1");
  int tau = 1;
  while (tau < p) {
    const double next = tau + 1.0;
    if (next * std::log(next) > static_cast<double>(n)) break;
    ++tau;
  }
  return tau;
}

HyperGrid default_grid(LearnerKind learner, Index n, Index p) {
  if (n < 1 || p < 1) throw_invalid("default_grid needs n, p >= 1");
  const auto gammas = log_uniform_grid(1e-3, 1e3, 20);
  const std::size_t mid = gammas.size() / 2;
  switch (learner) {
    case LearnerKind::ridge:
      return HyperGrid(learner, {{"gamma", gammas}}, {mid});
    case LearnerKind::sparse_ridge: {
      std::vector<double> taus;
      for (int t = 1; t <= max_sparsity(n, p); ++t) taus.push_back(t);
      return HyperGrid(learner, {{"tau", taus}, {"gamma", gammas}}, {0, mid});
    }
    case LearnerKind::cart: {
      std::vector<double> depth;
      std::vector<double> split;
      for (int d = 1; d <= 10; ++d) depth.push_back(d);
      for (int s = 2; s <= 10; ++s) split.push_back(s);
      return HyperGrid(learner, {{"min_samples_split", split}, {"max_depth", depth}}, {0, 4});
    }
  }
  throw_invalid("unknown learner kind");
}

}  // namespace stabcv
