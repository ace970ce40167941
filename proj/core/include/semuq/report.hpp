#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "semuq/evaluation.hpp"

namespace semuq {

// Evaluation of one method on one (dataset, model) pair.
struct EvaluationRow {
  std::string method;
  std::string dataset;
  std::string model;
  double auroc = 0.0;
  double fpr_at_j = 0.0;
  double tpr_at_j = 0.0;
  std::size_t n = 0;
  std::vector<RocPoint> roc;
};

// Computes auroc, the ROC curve and the Youden operating point.
EvaluationRow evaluate_method(std::string method, std::string dataset, std::string model,
                              std::span<const LabeledScore> scores);

void to_json(nlohmann::json& j, const EvaluationRow& row);
void from_json(const nlohmann::json& j, EvaluationRow& row);

// report.csv contents; rows ordered by (method, dataset, model).
std::string render_report_csv(std::vector<EvaluationRow> rows);

// Self-contained SVG: axes, chance diagonal, one polyline per row.
std::string render_roc_svg(const std::string& method, std::span<const EvaluationRow> rows);

// Writes report.csv and one roc_<method>.svg per distinct method.
void emit_report(std::span<const EvaluationRow> rows, const std::filesystem::path& out_dir);

}  // namespace semuq
