#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace semuq {

struct LabeledScore {
  std::string record_id;
  double uncertainty;
  bool correct;
};

// "Positive" means a correct answer; a threshold predicts positive when
// uncertainty <= threshold. The endpoints use -inf / +inf thresholds.
struct RocPoint {
  double threshold;
  double fpr;
  double tpr;

  double youden_j() const { return tpr - fpr; }
};

// Rouge-L F-measure on normalized whitespace tokens. beta = 1 gives F1.
double rouge_l(std::string_view candidate, std::string_view reference, double beta = 1.0);

// Strictly greater than the threshold against the best-matching reference.
bool label_correct(std::string_view candidate, std::span<const std::string> references,
                   double threshold = 0.3);

// Probability that an incorrect answer gets higher uncertainty than a correct
// one, ties counted half. Throws InvalidArgument when only one class is
// present.
double auroc(std::span<const LabeledScore> scores);

std::vector<RocPoint> roc_curve(std::span<const LabeledScore> scores);

// Trapezoidal area under (fpr, tpr).
double trapezoid_area(std::span<const RocPoint> curve);

// Maximizes tpr - fpr; ties go to lower fpr, then lower threshold.
RocPoint youden_point(std::span<const RocPoint> curve);

}  // namespace semuq
