#include "stabcv/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "stabcv/cv.hpp"
#include "stabcv/error.hpp"
#include "stabcv/learners.hpp"
#include "stabcv/rng.hpp"

namespace stabcv {

void SynthConfig::validate() const {
  if (n < 2) throw_invalid("synthetic n must be at least 2");
  if (p < 1) throw_invalid("synthetic p must be at least 1");
  if (tau_true < 1 || tau_true > p) throw_invalid("tau_true must lie in [1, p]");
  if (!(rho >= 0.0 && rho < 1.0)) throw_invalid("rho must lie in [0, 1)");
  if (!(nu > 0.0) || !std::isfinite(nu)) throw_invalid("nu must be positive");
  if (n_test < 1) throw_invalid("n_test must be at least 1");
}

std::vector<Index> draw_support(Index p, Index tau, CounterRng& rng) {
  std::vector<Index> pool(static_cast<std::size_t>(p));
  for (Index j = 0; j < p; ++j) pool[static_cast<std::size_t>(j)] = j;
  for (Index i = 0; i < tau; ++i) {
    const auto pick = i + static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(p - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick)]);
  }
  std::vector<Index> support(pool.begin(), pool.begin() + tau);
  std::sort(support.begin(), support.end());
  return support;
}

namespace {

Eigen::MatrixXd gaussian_rows(Index rows, const Eigen::MatrixXd& lower, CounterRng& rng) {
  const Index p = lower.rows();
  Eigen::MatrixXd z(rows, p);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < p; ++j) z(i, j) = rng.normal();
  }
  // Each row is L z with L L^T = Sigma.
  return z * lower.transpose();
}

}  // namespace

SynthInstance generate(const SynthConfig& cfg) {
  cfg.validate();
  const Index p = cfg.p;
  Eigen::MatrixXd sigma(p, p);
  for (Index i = 0; i < p; ++i) {
    for (Index j = 0; j < p; ++j) sigma(i, j) = std::pow(cfg.rho, static_cast<double>(std::abs(i - j)));
  }
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw_numerical("covariance factorization failed");
  const Eigen::MatrixXd lower = llt.matrixL();

  CounterRng rng(cfg.seed);
  SynthInstance out;
  out.raw_train_features = gaussian_rows(cfg.n, lower, rng);
  out.support = draw_support(p, cfg.tau_true, rng);
  out.beta_true = Eigen::VectorXd::Zero(p);
  for (Index j : out.support) out.beta_true(j) = rng.coin() ? 1.0 : -1.0;

  const Eigen::VectorXd signal = out.raw_train_features * out.beta_true;
  Eigen::VectorXd noise(cfg.n);
  for (Index i = 0; i < cfg.n; ++i) noise(i) = rng.normal();
  const double noise_norm = noise.norm();
  if (!(noise_norm > 0.0) || !(signal.norm() > 0.0)) throw_numerical("degenerate signal or noise draw");
  out.noise_scale = signal.norm() / (std::sqrt(cfg.nu) * noise_norm);
  out.raw_train_noise = noise * out.noise_scale;
  const Eigen::VectorXd y = signal + out.raw_train_noise;

  // Test rows come from the same process, with the train noise level.
  const Eigen::MatrixXd test_x = gaussian_rows(cfg.n_test, lower, rng);
  Eigen::VectorXd test_y = test_x * out.beta_true;
  for (Index i = 0; i < cfg.n_test; ++i) test_y(i) += out.noise_scale * rng.normal();

  auto [train, others] = standardize(Dataset(out.raw_train_features, y), {Dataset(test_x, test_y)});
  out.train = std::move(train);
  out.test = std::move(others.front());
  return out;
}

std::string to_string(CvKind kind) { return kind == CvKind::loocv ? "loocv" : "fivefold"; }

CvKind parse_cv_kind(const std::string& text) {
  if (text == "loocv") return CvKind::loocv;
  if (text == "fivefold") return CvKind::fivefold;
  throw_invalid("unknown cv kind '" + text + "' (expected loocv or fivefold)");
}

std::pair<Index, Index> Heatmap::cv_argmin() const {
  std::pair<Index, Index> best{-1, -1};
  double best_v = std::numeric_limits<double>::infinity();
  for (Index r = 0; r < cv.rows(); ++r) {
    for (Index c = 0; c < cv.cols(); ++c) {
      const double v = cv(r, c);
      if (std::isfinite(v) && (best.first < 0 || v < best_v)) {
        best = {r, c};
        best_v = v;
      }
    }
  }
  if (best.first < 0) throw_numerical("heatmap has no finite CV cell");
  return best;
}

double Heatmap::test_min() const {
  double best = std::numeric_limits<double>::infinity();
  for (Index r = 0; r < test.rows(); ++r) {
    for (Index c = 0; c < test.cols(); ++c) {
      if (std::isfinite(test(r, c))) best = std::min(best, test(r, c));
    }
  }
  return best;
}

Heatmap heatmap_experiment(const SynthInstance& instance, std::span<const double> gammas,
                           std::span<const int> taus, CvKind kind, std::uint64_t fold_seed) {
  if (gammas.empty() || taus.empty()) throw_invalid("heatmap grids must be nonempty");
  const auto& train = instance.train;
  const auto n = static_cast<std::size_t>(train.rows());
  const std::size_t k = kind == CvKind::loocv ? n : 5;
  const auto folds = make_folds(n, k, fold_seed);
  const auto learner = make_learner(LearnerKind::sparse_ridge);
  const auto loss = LossFn::squared_error();

  Heatmap map;
  map.taus.assign(taus.begin(), taus.end());
  map.gammas.assign(gammas.begin(), gammas.end());
  map.kind = kind;
  const auto rows = static_cast<Index>(taus.size());
  const auto cols = static_cast<Index>(gammas.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  map.cv = Eigen::MatrixXd::Constant(rows, cols, nan);
  map.test = Eigen::MatrixXd::Constant(rows, cols, nan);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      const HyperParams theta = SparseRidgeParams{map.taus[static_cast<std::size_t>(r)],
                                                  map.gammas[static_cast<std::size_t>(c)]};
      try {
        map.cv(r, c) = cv_evaluate(train, folds, *learner, theta, loss, false).cv_error;
        const auto model = learner->fit(train, theta);
        map.test(r, c) = (model.predict_all(instance.test.features()) - instance.test.response())
                             .squaredNorm() /
                         static_cast<double>(instance.test.rows());
      } catch (const Error&) {
        map.cv(r, c) = nan;
        map.test(r, c) = nan;
        ++map.failed_cells;
      }
    }
  }
  return map;
}

std::string heatmap_csv(const Heatmap& map, const Eigen::MatrixXd& values) {
  std::ostringstream os;
  os << std::setprecision(17) << "tau";
  for (double g : map.gammas) os << ',' << g;
  os << '\n';
  for (Index r = 0; r < values.rows(); ++r) {
    os << map.taus[static_cast<std::size_t>(r)];
    for (Index c = 0; c < values.cols(); ++c) {
      os << ',';
      if (std::isfinite(values(r, c))) os << values(r, c);
    }
    os << '\n';
  }
  return os.str();
}

namespace {

// Blue -> white -> red ramp on t in [0, 1].
std::string ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  int r, g, b;
  if (t < 0.5) {
    const double s = t / 0.5;
    r = static_cast<int>(std::lround(33 + s * (247 - 33)));
    g = static_cast<int>(std::lround(102 + s * (247 - 102)));
    b = static_cast<int>(std::lround(172 + s * (247 - 172)));
  } else {
    const double s = (t - 0.5) / 0.5;
    r = static_cast<int>(std::lround(247 + s * (178 - 247)));
    g = static_cast<int>(std::lround(247 + s * (24 - 247)));
    b = static_cast<int>(std::lround(247 + s * (43 - 247)));
  }
  std::ostringstream os;
  os << "rgb(" << r << ',' << g << ',' << b << ')';
  return os.str();
}

}  // namespace

std::string heatmap_svg(const Heatmap& map, const Eigen::MatrixXd& values, const std::string& title) {
  constexpr int cell = 24;
  constexpr int left = 60;
  constexpr int top = 40;
  const auto rows = static_cast<int>(values.rows());
  const auto cols = static_cast<int>(values.cols());
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index c = 0; c < values.cols(); ++c) {
      const double v = values(r, c);
      if (std::isfinite(v) && v > 0.0) {
        lo = std::min(lo, std::log10(v));
        hi = std::max(hi, std::log10(v));
      }
    }
  }
  const double span = hi > lo ? hi - lo : 1.0;
  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + cols * cell + 20 << "\" height=\""
     << top + rows * cell + 50 << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  os << "<text x=\"" << left << "\" y=\"20\" font-size=\"13\">" << title << "</text>\n";
  for (int r = 0; r < rows; ++r) {
    os << "<text x=\"" << left - 6 << "\" y=\"" << top + r * cell + cell / 2 + 4
       << "\" text-anchor=\"end\">" << map.taus[static_cast<std::size_t>(r)] << "</text>\n";
    for (int c = 0; c < cols; ++c) {
      const double v = values(r, c);
      const std::string fill =
          std::isfinite(v) && v > 0.0 ? ramp((std::log10(v) - lo) / span) : std::string("rgb(160,160,160)");
      os << "<rect x=\"" << left + c * cell << "\" y=\"" << top + r * cell << "\" width=\"" << cell
         << "\" height=\"" << cell << "\" fill=\"" << fill << "\"><title>tau="
         << map.taus[static_cast<std::size_t>(r)] << " gamma=" << map.gammas[static_cast<std::size_t>(c)]
         << " value=" << v << "</title></rect>\n";
    }
  }
  for (int c = 0; c < cols; c += std::max(1, cols / 5)) {
    os << "<text x=\"" << left + c * cell + cell / 2 << "\" y=\"" << top + rows * cell + 14
       << "\" text-anchor=\"middle\">" << map.gammas[static_cast<std::size_t>(c)] << "</text>\n";
  }
  os << "<text x=\"" << left << "\" y=\"" << top + rows * cell + 34 << "\">rows: tau, columns: gamma, color: log10 value in ["
     << lo << ", " << hi << "]</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace stabcv
