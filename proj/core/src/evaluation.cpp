#include "semuq/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "semuq/error.hpp"
#include "semuq/geometry.hpp"

namespace semuq {

namespace {

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void check_scores(std::span<const LabeledScore> scores, std::size_t& n_correct,
                  std::size_t& n_incorrect) {
  n_correct = 0;
  n_incorrect = 0;
  for (const auto& s : scores) {
    if (!std::isfinite(s.uncertainty)) {
      throw InvalidArgument(fmt::format("non-finite uncertainty for record '{}'", s.record_id));
    }
    (s.correct ? n_correct : n_incorrect)++;
  }
  if (n_correct == 0 || n_incorrect == 0) {
    throw InvalidArgument(fmt::format(
        "degenerate labels: {} correct, {} incorrect; AUROC needs both classes", n_correct,
        n_incorrect));
  }
}

}  // namespace

double rouge_l(std::string_view candidate, std::string_view reference, double beta) {
  const auto cand = normalize_tokens(candidate);
  const auto ref = normalize_tokens(reference);
  if (cand.empty() || ref.empty()) return 0.0;
  const std::size_t lcs = lcs_length(cand, ref);
  if (lcs == 0) return 0.0;
  // With P = L/|c| and R = L/|r|, (1+b^2)PR/(R+b^2 P) = (1+b^2)L/(|c|+b^2|r|).
  const double b2 = beta * beta;
  return (1.0 + b2) * static_cast<double>(lcs) /
         (static_cast<double>(cand.size()) + b2 * static_cast<double>(ref.size()));
}

bool label_correct(std::string_view candidate, std::span<const std::string> references,
                   double threshold) {
  if (references.empty()) throw InvalidArgument("label_correct needs at least one reference");
  double best = 0.0;
  for (const auto& r : references) best = std::max(best, rouge_l(candidate, r));
  return best > threshold;
}

double auroc(std::span<const LabeledScore> scores) {
  std::size_t n_correct = 0, n_incorrect = 0;
  check_scores(scores, n_correct, n_incorrect);

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a].uncertainty < scores[b].uncertainty;
  });

  // Sum of average ranks (1-based) of the incorrect answers.
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::size_t incorrect_in_group = 0;
    while (j < order.size() && scores[order[j]].uncertainty == scores[order[i]].uncertainty) {
      if (!scores[order[j]].correct) ++incorrect_in_group;
      ++j;
    }
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += avg_rank * static_cast<double>(incorrect_in_group);
    i = j;
  }
  const double ni = static_cast<double>(n_incorrect);
  const double nc = static_cast<double>(n_correct);
  const double u = rank_sum - ni * (ni + 1.0) / 2.0;
  return u / (ni * nc);
}

std::vector<RocPoint> roc_curve(std::span<const LabeledScore> scores) {
  std::size_t n_correct = 0, n_incorrect = 0;
  check_scores(scores, n_correct, n_incorrect);

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a].uncertainty < scores[b].uncertainty;
  });

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<RocPoint> curve;
  curve.push_back({-inf, 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double tau = scores[order[i]].uncertainty;
    while (i < order.size() && scores[order[i]].uncertainty == tau) {
      (scores[order[i]].correct ? tp : fp)++;
      ++i;
    }
    curve.push_back({tau, static_cast<double>(fp) / static_cast<double>(n_incorrect),
                     static_cast<double>(tp) / static_cast<double>(n_correct)});
  }
  curve.push_back({inf, 1.0, 1.0});
  return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * 0.5 * (curve[i].tpr + curve[i - 1].tpr);
  }
  return area;
}

RocPoint youden_point(std::span<const RocPoint> curve) {
  if (curve.empty()) throw InvalidArgument("youden_point on an empty curve");
  RocPoint best = curve.front();
  for (const auto& p : curve.subspan(1)) {
    const double j = p.youden_j(), bj = best.youden_j();
    if (j > bj || (j == bj && (p.fpr < best.fpr || (p.fpr == best.fpr && p.threshold < best.threshold)))) {
      best = p;
    }
  }
  return best;
}

}  // namespace semuq
