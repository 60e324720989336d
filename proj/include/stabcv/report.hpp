#pragma once

#include <string>

#include "json.hpp"

#include "stabcv/cv.hpp"

namespace stabcv {

inline constexpr const char* kReportSchema = "stabcv-report/1";

nlohmann::json to_json(const HyperParams& theta);
HyperParams hyperparams_from_json(const nlohmann::json& j);

/// Fields: schema, learner, k, seed, lambda_grid, lambda_star, theta_star,
/// estimate, stability_at_star, total_fits, per_fold_outer_scores, trace,
/// plus cv_error_at_star, empirical_M and warnings for the bound command.
nlohmann::json to_json(const SelectionReport& report);
SelectionReport selection_report_from_json(const nlohmann::json& j);

/// Writes `text` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& text);

}  // namespace stabcv
