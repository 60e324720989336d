#include "stabcv/report.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "stabcv/error.hpp"

namespace stabcv {

using nlohmann::json;

json to_json(const HyperParams& theta) {
  return std::visit(
      [](const auto& t) -> json {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, RidgeParams>) {
          return {{"learner", "ridge"}, {"gamma", t.gamma}};
        } else if constexpr (std::is_same_v<T, SparseRidgeParams>) {
          return {{"learner", "sparse_ridge"}, {"tau", t.tau}, {"gamma", t.gamma}};
        } else {
          return {{"learner", "cart"}, {"max_depth", t.max_depth}, {"min_samples_split", t.min_samples_split}};
        }
      },
      theta);
}

HyperParams hyperparams_from_json(const json& j) {
  try {
    switch (parse_learner(j.at("learner").get<std::string>())) {
      case LearnerKind::ridge:
        return RidgeParams{j.at("gamma").get<double>()};
      case LearnerKind::sparse_ridge:
        return SparseRidgeParams{j.at("tau").get<int>(), j.at("gamma").get<double>()};
      case LearnerKind::cart:
        return CartParams{j.at("max_depth").get<int>(), j.at("min_samples_split").get<int>()};
    }
  } catch (const json::exception& e) {
    throw_data(std::string("malformed hyperparameters in report: ") + e.what());
  }
  throw_data("malformed hyperparameters in report");
}

json to_json(const SelectionReport& r) {
  json trace = json::array();
  for (const auto& e : r.trace) {
    trace.push_back({{"cycle", e.cycle}, {"axis", e.axis}, {"coords", e.coords},
                     {"theta", to_json(e.theta)}, {"score", e.score}});
  }
  json out = {
      {"schema", kReportSchema},
      {"learner", r.learner},
      {"k", r.k},
      {"seed", r.seed},
      {"lambda_grid", r.lambda_grid},
      {"lambda_star", r.lambda_star ? json(*r.lambda_star) : json(nullptr)},
      {"theta_star", to_json(r.theta_star)},
      {"estimate", r.estimate},
      {"cv_error_at_star", r.cv_error_at_star},
      {"stability_at_star", r.stability_at_star},
      {"total_fits", r.total_fits},
      {"visited", r.visited},
      {"per_fold_outer_scores", r.per_fold_outer_scores},
      {"lambda_scores", r.lambda_scores},
      {"empirical_M", r.empirical_M},
      {"nonfinite_scores", r.nonfinite_scores},
      {"warnings", r.warnings},
      {"trace", trace},
  };
  return out;
}

SelectionReport selection_report_from_json(const json& j) {
  try {
    if (j.at("schema").get<std::string>() != kReportSchema) {
      throw_data("unsupported report schema '" + j.at("schema").get<std::string>() + "'");
    }
    SelectionReport r;
    r.learner = j.at("learner").get<std::string>();
    r.k = j.at("k").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
    if (!j.at("lambda_star").is_null()) r.lambda_star = j.at("lambda_star").get<double>();
    r.theta_star = hyperparams_from_json(j.at("theta_star"));
    r.estimate = j.at("estimate").get<double>();
    r.cv_error_at_star = j.at("cv_error_at_star").get<double>();
    r.stability_at_star = j.at("stability_at_star").get<double>();
    r.total_fits = j.at("total_fits").get<std::size_t>();
    r.per_fold_outer_scores = j.at("per_fold_outer_scores").get<std::vector<double>>();
    r.empirical_M = j.value("empirical_M", 0.0);
    r.warnings = j.value("warnings", std::vector<std::string>{});
    return r;
  } catch (const json::exception& e) {
    throw_data(std::string("malformed selection report: ") + e.what());
  }
}

void write_file_atomic(const std::string& path, const std::string& text) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::filesystem::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw_data("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw_data("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace stabcv
