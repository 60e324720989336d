#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace stabcv {

using Index = Eigen::Index;

/// Per-column (mean, scale) pairs for features plus the response pair.
struct Standardization {
  Eigen::VectorXd feature_mean;
  Eigen::VectorXd feature_scale;
  double response_mean = 0.0;
  double response_scale = 1.0;

  Eigen::MatrixXd inverse_features(const Eigen::MatrixXd& z) const;
  Eigen::VectorXd inverse_response(const Eigen::VectorXd& z) const;
};

/// Feature matrix (n x p) and response (n). Immutable once built.
class Dataset {
 public:
  Dataset() = default;
  /// Validates shape and finiteness; throws a data error otherwise.
  Dataset(Eigen::MatrixXd features, Eigen::VectorXd response,
          std::optional<Standardization> standardization = std::nullopt);

  Index rows() const { return features_.rows(); }
  Index cols() const { return features_.cols(); }
  const Eigen::MatrixXd& features() const { return features_; }
  const Eigen::VectorXd& response() const { return response_; }
  const std::optional<Standardization>& standardization() const { return standardization_; }

  /// Rows selected by `idx`, in the given order. Standardization is carried over.
  Dataset subset(std::span<const Index> idx) const;

 private:
  Eigen::MatrixXd features_;
  Eigen::VectorXd response_;
  std::optional<Standardization> standardization_;
};

/// Assignment of n samples to k disjoint, balanced folds.
class FoldPartition {
 public:
  FoldPartition(std::size_t k, std::vector<std::size_t> assignment, std::uint64_t seed);

  std::size_t k() const { return k_; }
  std::size_t n() const { return assignment_.size(); }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::size_t>& assignment() const { return assignment_; }
  /// Sample indices of fold j, ascending.
  const std::vector<Index>& fold(std::size_t j) const { return members_[j]; }
  std::size_t fold_size(std::size_t j) const { return members_[j].size(); }
  /// Indices not in any of `excluded`, ascending.
  std::vector<Index> complement(std::span<const std::size_t> excluded) const;

 private:
  std::size_t k_;
  std::vector<std::size_t> assignment_;
  std::uint64_t seed_;
  std::vector<std::vector<Index>> members_;
};

enum class LossKind { squared_error };

/// Pointwise loss l(y, yhat) >= 0, with an optional user-supplied bound M.
struct LossFn {
  std::string name = "squared_error";
  std::function<double(double, double)> fn = [](double y, double yhat) {
    const double r = y - yhat;
    return r * r;
  };
  std::optional<double> bound_M;

  static LossFn squared_error(std::optional<double> bound = std::nullopt) {
    LossFn l;
    l.bound_M = bound;
    return l;
  }

  double operator()(double y, double yhat) const { return fn(y, yhat); }
};

struct MetricSummary {
  std::vector<double> per_dataset_ratios;
  double geometric_mean = 1.0;
  std::vector<double> cv_test_gap;
};

/// Partitions 0..n-1 into k folds after a seeded shuffle; the first n mod k
/// folds receive one extra sample.
FoldPartition make_folds(std::size_t n, std::size_t k, std::uint64_t seed);

/// Centers and scales features and response by the statistics of `train`
/// (sample sd, n-1 denominator; constant columns get scale 1) and applies
/// the same coefficients to every dataset in `others`.
std::pair<Dataset, std::vector<Dataset>> standardize(const Dataset& train,
                                                     const std::vector<Dataset>& others);

/// Applies recorded coefficients to a raw dataset.
Dataset apply_standardization(const Dataset& raw, const Standardization& coef);

/// r_d = candidate / baseline per pair, aggregated by geometric mean.
MetricSummary geometric_mean_ratio(std::span<const std::pair<double, double>> pairs);

double mean(std::span<const double> v);
double median(std::vector<double> v);

struct CsvOptions {
  bool header = true;
  /// Column name (requires header) or zero-based index, as text.
  std::string response_column = "0";
};

/// Comma-separated numeric table; every non-response column becomes a feature.
Dataset load_csv(const std::string& path, const CsvOptions& options);
Dataset parse_csv(std::istream& in, const CsvOptions& options);

}  // namespace stabcv
