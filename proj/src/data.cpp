#include "stabcv/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "stabcv/error.hpp"
#include "stabcv/rng.hpp"

namespace stabcv {

Eigen::MatrixXd Standardization::inverse_features(const Eigen::MatrixXd& z) const {
  Eigen::MatrixXd x = z;
  for (Index j = 0; j < x.cols(); ++j) {
    x.col(j) = x.col(j).array() * feature_scale(j) + feature_mean(j);
  }
  return x;
}

Eigen::VectorXd Standardization::inverse_response(const Eigen::VectorXd& z) const {
  return (z.array() * response_scale + response_mean).matrix();
}

Dataset::Dataset(Eigen::MatrixXd features, Eigen::VectorXd response,
                 std::optional<Standardization> standardization)
    : features_(std::move(features)),
      response_(std::move(response)),
      standardization_(std::move(standardization)) {
  if (features_.rows() != response_.size()) {
    throw_data("feature rows (" + std::to_string(features_.rows()) +
               ") do not match response length (" + std::to_string(response_.size()) + ")");
  }
  if (features_.cols() < 1) throw_data("dataset needs at least one feature column");
  if (!features_.allFinite() || !response_.allFinite()) throw_data("dataset contains non-finite values");
}

Dataset Dataset::subset(std::span<const Index> idx) const {
  Eigen::MatrixXd x(static_cast<Index>(idx.size()), cols());
  Eigen::VectorXd y(static_cast<Index>(idx.size()));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    x.row(static_cast<Index>(r)) = features_.row(idx[r]);
    y(static_cast<Index>(r)) = response_(idx[r]);
  }
  return Dataset(std::move(x), std::move(y), standardization_);
}

FoldPartition::FoldPartition(std::size_t k, std::vector<std::size_t> assignment, std::uint64_t seed)
    : k_(k), assignment_(std::move(assignment)), seed_(seed), members_(k) {
  for (std::size_t i = 0; i < assignment_.size(); ++i) {
    if (assignment_[i] >= k_) throw_invalid("fold index out of range");
    members_[assignment_[i]].push_back(static_cast<Index>(i));
  }
}

std::vector<Index> FoldPartition::complement(std::span<const std::size_t> excluded) const {
  std::vector<Index> out;
  out.reserve(n());
  for (std::size_t i = 0; i < assignment_.size(); ++i) {
    if (std::find(excluded.begin(), excluded.end(), assignment_[i]) == excluded.end()) {
      out.push_back(static_cast<Index>(i));
    }
  }
  return out;
}

FoldPartition make_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2 || k > n) {
    throw_invalid("invalid fold count k=" + std::to_string(k) + " for n=" + std::to_string(n));
  }
  CounterRng rng(seed);
  const auto order = shuffled_indices(n, rng);
  const std::size_t base = n / k;
  const std::size_t extra = n % k;
  std::vector<std::size_t> assignment(n);
  std::size_t pos = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t size = base + (j < extra ? 1 : 0);
    for (std::size_t c = 0; c < size; ++c) assignment[order[pos++]] = j;
  }
  return FoldPartition(k, std::move(assignment), seed);
}

namespace {

std::pair<double, double> mean_and_scale(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.mean();
  const double ss = (v.array() - m).square().sum();
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  // Constant column: keep it at zero after centering.
  if (!(sd > 0.0) || sd <= 1e-12 * std::max(1.0, std::abs(m))) return {m, 1.0};
  return {m, sd};
}

}  // namespace

Dataset apply_standardization(const Dataset& raw, const Standardization& coef) {
  if (coef.feature_mean.size() != raw.cols()) throw_data("standardization width mismatch");
  Eigen::MatrixXd x = raw.features();
  for (Index j = 0; j < x.cols(); ++j) {
    x.col(j) = (x.col(j).array() - coef.feature_mean(j)) / coef.feature_scale(j);
  }
  Eigen::VectorXd y = ((raw.response().array() - coef.response_mean) / coef.response_scale).matrix();
  return Dataset(std::move(x), std::move(y), coef);
}

std::pair<Dataset, std::vector<Dataset>> standardize(const Dataset& train,
                                                     const std::vector<Dataset>& others) {
  if (train.rows() < 2) throw_data("standardization needs at least two training rows");
  Standardization coef;
  coef.feature_mean.resize(train.cols());
  coef.feature_scale.resize(train.cols());
  for (Index j = 0; j < train.cols(); ++j) {
    const auto [m, s] = mean_and_scale(train.features().col(j));
    coef.feature_mean(j) = m;
    coef.feature_scale(j) = s;
  }
  std::tie(coef.response_mean, coef.response_scale) = mean_and_scale(train.response());

  std::vector<Dataset> transformed;
  transformed.reserve(others.size());
  for (const auto& d : others) transformed.push_back(apply_standardization(d, coef));
  return {apply_standardization(train, coef), std::move(transformed)};
}

MetricSummary geometric_mean_ratio(std::span<const std::pair<double, double>> pairs) {
  if (pairs.empty()) throw_invalid("geometric mean of an empty ratio list");
  MetricSummary out;
  double log_sum = 0.0;
  for (const auto& [candidate, baseline] : pairs) {
    if (!(candidate > 0.0) || !(baseline > 0.0) || !std::isfinite(candidate) ||
        !std::isfinite(baseline)) {
      throw_invalid("MSE values must be strictly positive and finite for ratio aggregation");
    }
    const double r = candidate / baseline;
    out.per_dataset_ratios.push_back(r);
    log_sum += std::log(r);
  }
  out.geometric_mean = std::exp(log_sum / static_cast<double>(pairs.size()));
  return out;
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
  if (v.empty()) throw_invalid("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_number(const std::string& text, double& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(t, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == t.size() && std::isfinite(out);
}

}  // namespace

Dataset parse_csv(std::istream& in, const CsvOptions& options) {
  std::string line;
  std::vector<std::string> header;
  std::size_t line_no = 0;
  if (options.header) {
    if (!std::getline(in, line)) throw_data("CSV is empty");
    ++line_no;
    for (auto& h : split_line(line)) header.push_back(trim(h));
  }

  std::vector<std::vector<double>> rows;
  std::size_t width = header.size();
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (width == 0) width = cells.size();
    if (cells.size() != width) {
      throw_data("row " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                 " cells, found " + std::to_string(cells.size()));
    }
    std::vector<double> values(width);
    for (std::size_t c = 0; c < width; ++c) {
      if (!parse_number(cells[c], values[c])) {
        throw_data("row " + std::to_string(line_no) + ": non-numeric cell in column " +
                   std::to_string(c) + " ('" + trim(cells[c]) + "')");
      }
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw_data("CSV has no data rows");
  if (width < 2) throw_data("CSV needs a response column and at least one feature column");

  std::size_t response = width;
  if (const auto it = std::find(header.begin(), header.end(), options.response_column);
      it != header.end()) {
    response = static_cast<std::size_t>(it - header.begin());
  } else {
    double idx = 0.0;
    if (parse_number(options.response_column, idx) && idx >= 0 && idx == std::floor(idx)) {
      response = static_cast<std::size_t>(idx);
    }
  }
  if (response >= width) throw_data("response column '" + options.response_column + "' not found");

  const auto n = static_cast<Index>(rows.size());
  Eigen::MatrixXd x(n, static_cast<Index>(width - 1));
  Eigen::VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    Index col = 0;
    for (std::size_t c = 0; c < width; ++c) {
      if (c == response) {
        y(i) = rows[static_cast<std::size_t>(i)][c];
      } else {
        x(i, col++) = rows[static_cast<std::size_t>(i)][c];
      }
    }
  }
  return Dataset(std::move(x), std::move(y));
}

Dataset load_csv(const std::string& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open dataset '" + path + "'");
  return parse_csv(in, options);
}

}  // namespace stabcv
