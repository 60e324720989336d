#include <cmath>

#include "doctest.h"
#include "stabcv/error.hpp"
#include "stabcv/synth.hpp"

using namespace stabcv;

namespace {

double corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd ca = a.array() - a.mean();
  const Eigen::ArrayXd cb = b.array() - b.mean();
  return (ca * cb).sum() / std::sqrt(ca.square().sum() * cb.square().sum());
}

}  // namespace

TEST_CASE("exact signal-to-noise ratio") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    SynthConfig cfg{20 + static_cast<Index>(s), 7, 3, 0.3, 0.5 + 0.25 * static_cast<double>(s), 10, s};
    const auto inst = generate(cfg);
    const double ratio = (inst.raw_train_features * inst.beta_true).norm() / inst.raw_train_noise.norm();
    CHECK(std::abs(ratio / std::sqrt(cfg.nu) - 1.0) < 1e-12);
  }
}

TEST_CASE("ground truth support and signs") {
  const auto inst = generate(SynthConfig{30, 12, 4, 0.3, 1.0, 5, 9});
  CHECK(inst.support.size() == 4);
  for (Index j = 0; j < 12; ++j) {
    const bool in = std::find(inst.support.begin(), inst.support.end(), j) != inst.support.end();
    CHECK((in ? std::abs(inst.beta_true(j)) == 1.0 : inst.beta_true(j) == 0.0));
  }
}

TEST_CASE("identity covariance gives uncorrelated columns") {
  const auto inst = generate(SynthConfig{2000, 3, 1, 0.0, 1.0, 1, 4});
  const auto& x = inst.raw_train_features;
  CHECK(std::abs(corr(x.col(0), x.col(1))) < 0.1);
  CHECK(std::abs(corr(x.col(1), x.col(2))) < 0.1);
}

TEST_CASE("Toeplitz correlation at lag two") {
  const auto inst = generate(SynthConfig{5000, 3, 1, 0.3, 1.0, 1, 21});
  const auto& x = inst.raw_train_features;
  CHECK(std::abs(corr(x.col(0), x.col(2)) - 0.09) < 0.05);
  CHECK(std::abs(corr(x.col(0), x.col(1)) - 0.3) < 0.05);
}

TEST_CASE("generation is seed-deterministic and standardized") {
  const SynthConfig cfg{40, 8, 3, 0.3, 1.0, 100, 77};
  const auto a = generate(cfg);
  const auto b = generate(cfg);
  CHECK(a.train.features() == b.train.features());
  CHECK(a.test.response() == b.test.response());
  for (Index j = 0; j < 8; ++j) {
    const auto col = a.train.features().col(j);
    CHECK(std::abs(col.mean()) < 1e-9);
    CHECK(std::abs(std::sqrt((col.array() - col.mean()).square().sum() / 39.0) - 1.0) < 1e-9);
  }
  CHECK(std::abs(a.train.response().mean()) < 1e-9);
  auto other = cfg;
  other.seed = 78;
  CHECK(generate(other).train.features() != a.train.features());
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(generate(SynthConfig{10, 5, 6, 0.3, 1.0, 10, 0}), Error);
  CHECK_THROWS_AS(generate(SynthConfig{10, 5, 2, 1.0, 1.0, 10, 0}), Error);
  CHECK_THROWS_AS(generate(SynthConfig{10, 5, 2, 0.3, 0.0, 10, 0}), Error);
}

TEST_CASE("degenerate heatmap grids") {
  const auto inst = generate(SynthConfig{20, 4, 2, 0.3, 1.0, 200, 3});
  const std::vector<double> gammas{1.0};
  const std::vector<int> taus{2};
  const auto map = heatmap_experiment(inst, gammas, taus, CvKind::fivefold, 1);
  CHECK(map.cv.rows() == 1);
  CHECK(map.cv.cols() == 1);
  CHECK(std::isfinite(map.cv(0, 0)));
  CHECK(std::isfinite(map.test(0, 0)));

  const std::vector<int> too_many{2, 9};
  const auto partial = heatmap_experiment(inst, gammas, too_many, CvKind::loocv, 1);
  CHECK(partial.failed_cells == 1);
  CHECK(std::isnan(partial.cv(1, 0)));
  CHECK(partial.cv_argmin() == std::pair<Index, Index>{0, 0});

  const auto csv = heatmap_csv(map, map.cv);
  CHECK(csv.rfind("tau,1\n2,", 0) == 0);
  CHECK(heatmap_svg(map, map.test, "t").find("<svg") == 0);
}
