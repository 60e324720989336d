#include "stabcv/cv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "stabcv/error.hpp"

namespace stabcv {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double finite_or_inf(double v) { return std::isfinite(v) ? v : kInf; }

std::string fold_list(const std::vector<std::size_t>& folds) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < folds.size(); ++i) os << (i ? "," : "") << folds[i];
  os << '}';
  return os.str();
}

}  // namespace

ModelCache::ModelCache(const Dataset& data, const FoldPartition& folds, const Learner& learner,
                       bool enabled)
    : data_(data), folds_(folds), learner_(learner), enabled_(enabled) {
  if (folds.n() != static_cast<std::size_t>(data.rows())) {
    throw_invalid("fold partition covers " + std::to_string(folds.n()) + " rows but data has " +
                  std::to_string(data.rows()));
  }
}

ModelCache::Predictions ModelCache::predictions(std::vector<std::size_t> excluded,
                                                const HyperParams& theta) {
  std::sort(excluded.begin(), excluded.end());
  auto key = std::make_pair(excluded, theta);
  if (enabled_) {
    std::lock_guard lock(mutex_);
    if (const auto it = store_.find(key); it != store_.end()) return it->second;
  }
  const auto rows = folds_.complement(excluded);
  Predictions out;
  try {
    const FittedModel model = learner_.fit(data_.subset(rows), theta);
    out = std::make_shared<const Eigen::VectorXd>(model.predict_all(data_.features()));
  } catch (const Error& e) {
    throw Error(e.code(), "fit failed for " + to_string(theta) + " with folds " + fold_list(excluded) +
                              " held out: " + e.what());
  }
  std::lock_guard lock(mutex_);
  ++fits_;
  if (enabled_) store_.emplace(std::move(key), out);
  return out;
}

std::size_t ModelCache::fits() const {
  std::lock_guard lock(mutex_);
  return fits_;
}

CVEvaluation cv_evaluate(ModelCache& cache, const HyperParams& theta, const LossFn& loss,
                         bool with_stability) {
  const auto& data = cache.data();
  const auto& folds = cache.folds();
  const auto& y = data.response();
  const auto n = static_cast<std::size_t>(data.rows());
  const std::size_t k = folds.k();

  CVEvaluation out;
  out.theta = theta;
  out.partial_errors.assign(k, 0.0);
  std::vector<ModelCache::Predictions> fold_preds(k);
  for (std::size_t j = 0; j < k; ++j) {
    fold_preds[j] = cache.predictions({j}, theta);
    ++out.fit_count;
    double h = 0.0;
    for (Index i : folds.fold(j)) {
      const double l = loss(y(i), (*fold_preds[j])(i));
      out.max_loss = std::max(out.max_loss, l);
      h += l;
    }
    out.partial_errors[j] = h;
  }
  double total = 0.0;
  for (double h : out.partial_errors) total += h;
  out.cv_error = total / static_cast<double>(n);

  if (with_stability) {
    const auto full = cache.predictions({}, theta);
    ++out.fit_count;
    std::vector<double> full_loss(n);
    for (std::size_t i = 0; i < n; ++i) {
      full_loss[i] = loss(y(static_cast<Index>(i)), (*full)(static_cast<Index>(i)));
      out.max_loss = std::max(out.max_loss, full_loss[i]);
    }
    double mu = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double l = loss(y(static_cast<Index>(i)), (*fold_preds[j])(static_cast<Index>(i)));
        out.max_loss = std::max(out.max_loss, l);
        acc += std::abs(l - full_loss[i]);
      }
      const double avg = acc / static_cast<double>(n);
      mu = std::isnan(avg) ? kInf : std::max(mu, avg);
    }
    out.stability = mu;
  }
  return out;
}

CVEvaluation cv_evaluate(const Dataset& data, const FoldPartition& folds, const Learner& learner,
                         const HyperParams& theta, const LossFn& loss, bool with_stability) {
  ModelCache cache(data, folds, learner, false);
  return cv_evaluate(cache, theta, loss, with_stability);
}

double regularized_score(const CVEvaluation& eval, double lambda) {
  if (!(lambda >= 0.0)) throw_invalid("stability weight lambda must be non-negative");
  if (lambda == 0.0) return eval.cv_error;
  if (!eval.stability) throw_invalid("regularized score needs an evaluation with stability");
  return eval.cv_error + lambda * *eval.stability;
}

namespace {

// Memoized, infinity-normalized scoring of grid points in first-visit order.
class ScoreMemo {
 public:
  explicit ScoreMemo(const GridScore& score) : score_(score) {}

  double operator()(const std::vector<std::size_t>& c) {
    if (const auto it = memo_.find(c); it != memo_.end()) return it->second;
    const double s = finite_or_inf(score_(c));
    memo_.emplace(c, s);
    visited_.push_back(c);
    return s;
  }

  std::vector<std::vector<std::size_t>> take_visited() { return std::move(visited_); }

 private:
  const GridScore& score_;
  std::map<std::vector<std::size_t>, double> memo_;
  std::vector<std::vector<std::size_t>> visited_;
};

bool better(const HyperGrid& grid, double s, const std::vector<std::size_t>& c, double best_s,
            const std::vector<std::size_t>& best) {
  if (s != best_s) return s < best_s;
  return grid.at(c) < grid.at(best);
}

}  // namespace

SearchResult coordinate_descent(const HyperGrid& grid, std::span<const std::size_t> init,
                                const GridScore& score, std::size_t max_cycles) {
  if (init.size() != grid.axes().size()) throw_invalid("initial point has wrong arity");
  const auto shape = grid.shape();
  for (std::size_t a = 0; a < shape.size(); ++a) {
    if (init[a] >= shape[a]) throw_invalid("initial point lies outside the grid");
  }
  if (max_cycles < 1) throw_invalid("coordinate descent needs at least one cycle");

  ScoreMemo memo(score);
  SearchResult out;
  std::vector<std::size_t> coords(init.begin(), init.end());
  double current = memo(coords);
  std::set<std::vector<std::size_t>> cycle_ends{coords};

  for (std::size_t cycle = 1; cycle <= max_cycles; ++cycle) {
    bool changed = false;
    for (std::size_t axis = 0; axis < shape.size(); ++axis) {
      std::vector<std::size_t> best = coords;
      double best_s = current;
      for (std::size_t v = 0; v < shape[axis]; ++v) {
        std::vector<std::size_t> c = coords;
        c[axis] = v;
        const double s = memo(c);
        if (better(grid, s, c, best_s, best)) {
          best = std::move(c);
          best_s = s;
        }
      }
      if (best != coords) {
        changed = true;
        coords = std::move(best);
        current = best_s;
      }
      out.trace.push_back(TraceEntry{cycle, axis, coords, grid.at(coords), current});
    }
    out.cycles = cycle;
    if (!changed || shape.size() == 1 || !cycle_ends.insert(coords).second) break;
  }
  out.coords = coords;
  out.theta = grid.at(coords);
  out.score = current;
  out.visited = memo.take_visited();
  return out;
}

SearchResult exhaustive_search(const HyperGrid& grid, const GridScore& score) {
  ScoreMemo memo(score);
  const auto shape = grid.shape();
  std::vector<std::size_t> c(shape.size(), 0);
  std::vector<std::size_t> best;
  double best_s = kInf;
  while (true) {
    const double s = memo(c);
    if (best.empty() || better(grid, s, c, best_s, best)) {
      best = c;
      best_s = s;
    }
    bool done = true;
    for (std::size_t a = shape.size(); a-- > 0;) {
      if (++c[a] < shape[a]) {
        done = false;
        break;
      }
      c[a] = 0;
    }
    if (done) break;
  }
  SearchResult out;
  out.coords = best;
  out.theta = grid.at(best);
  out.score = best_s;
  out.cycles = 1;
  out.trace.push_back(TraceEntry{1, 0, best, out.theta, best_s});
  out.visited = memo.take_visited();
  return out;
}

namespace {

SearchResult run_search(const HyperGrid& grid, const SelectionOptions& options, const GridScore& score) {
  if (options.strategy == SearchStrategy::exhaustive) return exhaustive_search(grid, score);
  const auto& init = options.init ? *options.init : grid.init();
  return coordinate_descent(grid, init, score, options.max_cycles);
}

void check_fold_balance(const FoldPartition& folds, std::vector<std::string>& warnings) {
  if (folds.n() % folds.k() != 0) {
    warnings.push_back("n=" + std::to_string(folds.n()) + " is not divisible by k=" +
                       std::to_string(folds.k()) +
                       "; the generalization bound assumes equal fold sizes");
  }
}

}  // namespace

SearchResult coordinate_descent_select(const Dataset& data, const FoldPartition& folds,
                                       const Learner& learner, const HyperGrid& grid, double lambda,
                                       const LossFn& loss, std::span<const std::size_t> init,
                                       std::size_t max_cycles) {
  if (!(lambda >= 0.0)) throw_invalid("stability weight lambda must be non-negative");
  ModelCache cache(data, folds, learner, true);
  const GridScore score = [&](std::span<const std::size_t> c) {
    return regularized_score(cv_evaluate(cache, grid.at(c), loss, lambda != 0.0), lambda);
  };
  return coordinate_descent(grid, init, score, max_cycles);
}

SelectionReport kcv_select(const Dataset& data, std::size_t k, const Learner& learner,
                           const HyperGrid& grid, const LossFn& loss, std::uint64_t seed,
                           const SelectionOptions& options) {
  const auto folds = make_folds(static_cast<std::size_t>(data.rows()), k, seed);
  ModelCache cache(data, folds, learner, options.cache_models);
  SelectionReport report;
  report.learner = learner.name();
  report.k = k;
  report.seed = seed;
  check_fold_balance(folds, report.warnings);

  double max_loss = 0.0;
  const GridScore score = [&](std::span<const std::size_t> c) {
    const auto eval = cv_evaluate(cache, grid.at(c), loss, false);
    max_loss = std::max(max_loss, eval.max_loss);
    return eval.cv_error;
  };
  auto result = run_search(grid, options, score);
  const auto at_star = cv_evaluate(cache, result.theta, loss, true);

  report.theta_star = result.theta;
  report.estimate = at_star.cv_error;
  report.cv_error_at_star = at_star.cv_error;
  report.stability_at_star = at_star.stability.value_or(0.0);
  report.total_fits = cache.fits();
  report.visited = result.visited.size();
  report.trace = std::move(result.trace);
  report.empirical_M = std::max(max_loss, at_star.max_loss);
  report.nonfinite_scores = !std::isfinite(result.score);
  return report;
}

SelectionReport nested_select(const Dataset& data, std::size_t k, const Learner& learner,
                              const HyperGrid& grid, std::span<const double> lambda_grid,
                              const LossFn& loss, std::uint64_t seed, const SelectionOptions& options) {
  if (lambda_grid.empty()) throw_invalid("stability-weight grid is empty");
  for (double l : lambda_grid) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw_invalid("stability weights must be finite and >= 0");
  }
  const auto folds = make_folds(static_cast<std::size_t>(data.rows()), k, seed);
  ModelCache cache(data, folds, learner, options.cache_models);
  const auto& y = data.response();

  SelectionReport report;
  report.learner = learner.name();
  report.k = k;
  report.seed = seed;
  report.lambda_grid.assign(lambda_grid.begin(), lambda_grid.end());
  check_fold_balance(folds, report.warnings);

  double max_loss = 0.0;
  bool nonfinite = false;
  const auto tracked = [&](double yi, double pred) {
    const double l = loss(yi, pred);
    if (std::isfinite(l)) max_loss = std::max(max_loss, l);
    return l;
  };
  std::set<HyperParams> all_visited;

  // Outer loop: for each lambda, each fold's inner selection is scored on that fold.
  std::vector<std::vector<double>> outer_scores(lambda_grid.size());
  std::vector<std::vector<HyperParams>> outer_thetas(lambda_grid.size());
  for (std::size_t li = 0; li < lambda_grid.size(); ++li) {
    const double lambda = lambda_grid[li];
    for (std::size_t t = 0; t < k; ++t) {
      const auto rest = folds.complement(std::vector<std::size_t>{t});
      std::map<HyperParams, ModelCache::Predictions> base_models;
      const GridScore inner = [&](std::span<const std::size_t> c) {
        const HyperParams theta = grid.at(c);
        const auto base = cache.predictions({t}, theta);
        base_models.insert_or_assign(theta, base);
        double s_sum = 0.0;
        double mu = 0.0;
        for (std::size_t t2 = 0; t2 < k; ++t2) {
          if (t2 == t) continue;
          const auto pair = cache.predictions({t, t2}, theta);
          double s = 0.0;
          for (Index i : folds.fold(t2)) s += tracked(y(i), (*pair)(i));
          s_sum += s / static_cast<double>(folds.fold_size(t2));
          double diff = 0.0;
          for (Index i : rest) diff += std::abs(tracked(y(i), (*pair)(i)) - tracked(y(i), (*base)(i)));
          const double avg = diff / static_cast<double>(rest.size());
          mu = std::isnan(avg) ? kInf : std::max(mu, avg);
        }
        const double s_tilde = s_sum / static_cast<double>(k - 1);
        return lambda == 0.0 ? s_tilde : s_tilde + lambda * mu;
      };
      auto result = run_search(grid, options, inner);
      nonfinite = nonfinite || !std::isfinite(result.score);
      for (const auto& c : result.visited) all_visited.insert(grid.at(c));

      const auto& base = base_models.at(result.theta);
      double m = 0.0;
      for (Index i : folds.fold(t)) m += tracked(y(i), (*base)(i));
      outer_scores[li].push_back(finite_or_inf(m / static_cast<double>(folds.fold_size(t))));
      outer_thetas[li].push_back(result.theta);
    }
    double total = 0.0;
    for (double m : outer_scores[li]) total += m;
    report.lambda_scores.push_back(finite_or_inf(total / static_cast<double>(k)));
  }

  std::size_t star = 0;
  for (std::size_t li = 1; li < lambda_grid.size(); ++li) {
    const double a = report.lambda_scores[li];
    const double b = report.lambda_scores[star];
    if (a < b || (a == b && lambda_grid[li] < lambda_grid[star])) star = li;
  }
  const double lambda_star = lambda_grid[star];

  // Final stage: reselect theta on all folds with lambda* and full-data stability.
  std::map<HyperParams, CVEvaluation> final_evals;
  const GridScore final_score = [&](std::span<const std::size_t> c) {
    const HyperParams theta = grid.at(c);
    const auto eval = cv_evaluate(cache, theta, loss, true);
    max_loss = std::max(max_loss, eval.max_loss);
    final_evals.insert_or_assign(theta, eval);
    return regularized_score(eval, lambda_star);
  };
  auto result = run_search(grid, options, final_score);
  nonfinite = nonfinite || !std::isfinite(result.score);
  for (const auto& c : result.visited) all_visited.insert(grid.at(c));
  const auto& at_star = final_evals.at(result.theta);

  report.lambda_star = lambda_star;
  report.theta_star = result.theta;
  report.estimate = report.lambda_scores[star];
  report.cv_error_at_star = at_star.cv_error;
  report.stability_at_star = at_star.stability.value_or(0.0);
  report.total_fits = cache.fits();
  report.visited = all_visited.size();
  report.per_fold_outer_scores = outer_scores[star];
  report.outer_thetas = outer_thetas[star];
  report.trace = std::move(result.trace);
  report.empirical_M = std::max(max_loss, at_star.max_loss);
  report.nonfinite_scores = nonfinite;
  return report;
}

std::size_t fit_budget(std::size_t lambdas, std::size_t k, std::size_t thetas) {
  return lambdas * k * k * thetas + (k + 1) * thetas;
}

std::vector<double> default_lambda_grid(bool include_zero) {
  auto grid = log_uniform_grid(1e-4, 1e4, 10);
  if (include_zero) grid.insert(grid.begin(), 0.0);
  return grid;
}

HyperParams rescale_for_full_data(const HyperParams& theta, Index n, Index n_train) {
  if (n < 1 || n_train < 1 || n_train > n) throw_invalid("retraining needs 1 <= n_train <= n");
  const double factor = static_cast<double>(n_train) / static_cast<double>(n);
  return std::visit(
      [factor](auto t) -> HyperParams {
        using T = decltype(t);
        if constexpr (std::is_same_v<T, RidgeParams> || std::is_same_v<T, SparseRidgeParams>) {
          t.gamma *= factor;
        }
        return t;
      },
      theta);
}

FittedModel retrain_final(const Dataset& data, const Learner& learner, const HyperParams& theta_star,
                          Index n_train) {
  return learner.fit(data, rescale_for_full_data(theta_star, data.rows(), n_train));
}

Index fold_training_size(Index n, std::size_t k) {
  if (k < 2 || static_cast<Index>(k) > n) throw_invalid("invalid fold count");
  const auto kk = static_cast<Index>(k);
  return n - (n + kk - 1) / kk;
}

double generalization_bound(const BoundInputs& b) {
  if (!(b.delta > 0.0 && b.delta < 1.0)) throw_invalid("delta must lie in (0, 1)");
  if (!(b.M > 0.0) || !std::isfinite(b.M)) throw_invalid("loss bound M must be positive and finite");
  if (!(b.mu_h >= 0.0) || !std::isfinite(b.mu_h)) throw_invalid("stability must be finite and >= 0");
  if (!std::isfinite(b.cv_error)) throw_invalid("cv_error must be finite");
  if (b.k < 2) throw_invalid("bound needs k >= 2");
  const auto k = static_cast<double>(b.k);
  return b.cv_error + std::sqrt((b.M * b.M + 6.0 * b.M * k * b.mu_h) / (2.0 * k * b.delta));
}

}  // namespace stabcv
