#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stabcv/data.hpp"
#include "stabcv/rng.hpp"

namespace stabcv {

struct SynthConfig {
  Index n = 50;
  Index p = 10;
  Index tau_true = 5;
  double rho = 0.3;  // Sigma_ij = rho^|i-j|
  double nu = 1.0;   // ||X beta||_2 / ||eps||_2 = sqrt(nu)
  Index n_test = 10000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthInstance {
  Dataset train;  // standardized
  Dataset test;   // standardized with the train coefficients
  Eigen::VectorXd beta_true;
  std::vector<Index> support;  // ascending
  Eigen::MatrixXd raw_train_features;
  Eigen::VectorXd raw_train_noise;
  double noise_scale = 1.0;  // noise standard deviation after rescaling
};

/// Correlated Gaussian design, tau_true-sparse +-1 signal, noise rescaled
/// to the exact signal-to-noise ratio; deterministic in cfg.seed.
SynthInstance generate(const SynthConfig& cfg);

/// tau indices drawn uniformly without replacement from 0..p-1, ascending.
std::vector<Index> draw_support(Index p, Index tau, CounterRng& rng);

enum class CvKind { loocv, fivefold };

std::string to_string(CvKind kind);
CvKind parse_cv_kind(const std::string& text);

/// CV and test errors of sparse ridge over a (tau, gamma) grid. Rows follow
/// `taus`, columns follow `gammas`. Failed cells hold NaN.
struct Heatmap {
  std::vector<int> taus;
  std::vector<double> gammas;
  CvKind kind = CvKind::fivefold;
  Eigen::MatrixXd cv;
  Eigen::MatrixXd test;
  std::size_t failed_cells = 0;

  /// Cell minimizing the CV error (ties: smaller tau, then smaller gamma).
  std::pair<Index, Index> cv_argmin() const;
  double test_min() const;
};

Heatmap heatmap_experiment(const SynthInstance& instance, std::span<const double> gammas,
                           std::span<const int> taus, CvKind kind, std::uint64_t fold_seed);

/// Rows are tau values, columns gamma values; header row of gammas, first column of taus.
std::string heatmap_csv(const Heatmap& map, const Eigen::MatrixXd& values);
/// Log10-scaled diverging color ramp; NaN cells drawn grey.
std::string heatmap_svg(const Heatmap& map, const Eigen::MatrixXd& values, const std::string& title);

}  // namespace stabcv
