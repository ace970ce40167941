#include "semuq/entropy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "semuq/error.hpp"

namespace semuq {

std::string_view to_string(EntailmentLabel label) {
  switch (label) {
    case EntailmentLabel::kEntailment: return "entailment";
    case EntailmentLabel::kNeutral: return "neutral";
    case EntailmentLabel::kContradiction: return "contradiction";
  }
  return "?";
}

std::optional<EntailmentLabel> parse_entailment_label(std::string_view s) {
  std::string lower;
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) {
      lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (lower == "entailment") return EntailmentLabel::kEntailment;
  if (lower == "neutral") return EntailmentLabel::kNeutral;
  if (lower == "contradiction") return EntailmentLabel::kContradiction;
  return std::nullopt;
}

std::string_view to_string(UncertaintyMethod m) {
  switch (m) {
    case UncertaintyMethod::kSeu: return "seu";
    case UncertaintyMethod::kSe: return "se";
    case UncertaintyMethod::kPe: return "pe";
    case UncertaintyMethod::kLnpe: return "lnpe";
    case UncertaintyMethod::kAseu: return "aseu";
  }
  return "?";
}

std::optional<UncertaintyMethod> parse_method(std::string_view s) {
  for (auto m : {UncertaintyMethod::kSeu, UncertaintyMethod::kSe, UncertaintyMethod::kPe,
                 UncertaintyMethod::kLnpe, UncertaintyMethod::kAseu}) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

void SemanticClustering::validate(std::size_t n) const {
  std::vector<bool> seen(n, false);
  std::size_t count = 0;
  for (const auto& c : clusters) {
    if (c.empty()) throw InvalidArgument("clustering contains an empty cluster");
    for (std::size_t idx : c) {
      if (idx >= n) {
        throw InvalidArgument(fmt::format("cluster index {} out of range for {} responses", idx, n));
      }
      if (seen[idx]) throw InvalidArgument(fmt::format("response {} is in two clusters", idx));
      seen[idx] = true;
      ++count;
    }
  }
  if (count != n) {
    throw InvalidArgument(fmt::format("clustering covers {} of {} responses", count, n));
  }
}

namespace {

EntailmentLabel judge_checked(EntailmentOracle& oracle, std::string_view premise,
                              std::string_view hypothesis, std::string_view question) {
  try {
    return oracle.judge(premise, hypothesis, question);
  } catch (const std::exception& e) {
    throw OracleError(fmt::format("entailment oracle failed on premise \"{}\" / hypothesis \"{}\": {}",
                                  premise, hypothesis, e.what()));
  }
}

}  // namespace

bool bidirectional_equivalent(std::string_view a, std::string_view b, std::string_view question,
                              EntailmentOracle& oracle) {
  if (judge_checked(oracle, a, b, question) != EntailmentLabel::kEntailment) return false;
  return judge_checked(oracle, b, a, question) == EntailmentLabel::kEntailment;
}

SemanticClustering cluster(std::span<const std::string> responses, std::string_view question,
                           EntailmentOracle& oracle) {
  if (responses.empty()) throw InvalidArgument("cannot cluster an empty response list");
  SemanticClustering out;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    bool placed = false;
    for (auto& c : out.clusters) {
      if (bidirectional_equivalent(responses[c.front()], responses[i], question, oracle)) {
        c.push_back(i);
        placed = true;
        break;
      }
    }
    if (!placed) out.clusters.push_back({i});
  }
  return out;
}

ClusterDistribution cluster_distribution(const SemanticClustering& clustering,
                                         std::span<const Response> responses,
                                         ClusterWeighting weighting) {
  clustering.validate(responses.size());
  ClusterDistribution dist;
  dist.probs.reserve(clustering.size());

  if (weighting.mode == ClusterMode::kDiscrete) {
    const double n = static_cast<double>(responses.size());
    for (const auto& c : clustering.clusters) dist.probs.push_back(static_cast<double>(c.size()) / n);
    return dist;
  }

  std::vector<double> logw(responses.size());
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const auto& r = responses[i];
    double lw = r.joint_logprob();
    if (weighting.length_normalized) {
      if (r.token_logprobs.empty()) {
        throw InvalidArgument(fmt::format("response {} has no tokens", i));
      }
      lw /= static_cast<double>(r.token_logprobs.size());
    }
    if (!std::isfinite(lw)) {
      throw InvalidArgument(fmt::format("response {} has a non-finite log-likelihood", i));
    }
    logw[i] = lw;
  }
  const double max_lw = *std::max_element(logw.begin(), logw.end());
  std::vector<double> w(logw.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    w[i] = std::exp(logw[i] - max_lw);
    total += w[i];
  }
  for (const auto& c : clustering.clusters) {
    double mass = 0.0;
    for (std::size_t idx : c) mass += w[idx];
    dist.probs.push_back(mass / total);
  }
  return dist;
}

double semantic_entropy(const ClusterDistribution& dist) {
  double h = 0.0;
  for (double p : dist.probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

namespace {

template <class PerSequence>
double mean_over_sequences(const GenerationSet& set, PerSequence&& f) {
  if (set.responses.empty()) {
    throw InvalidArgument(fmt::format("generation set '{}' is empty", set.record_id));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < set.responses.size(); ++i) {
    const auto& r = set.responses[i];
    if (r.token_logprobs.empty()) {
      throw InvalidArgument(
          fmt::format("record '{}' response {} has no token log-probabilities", set.record_id, i));
    }
    sum += f(r);
  }
  return sum / static_cast<double>(set.responses.size());
}

}  // namespace

double predictive_entropy(const GenerationSet& set) {
  return mean_over_sequences(set, [](const Response& r) { return -r.joint_logprob(); });
}

double lnpe(const GenerationSet& set) {
  return mean_over_sequences(set, [](const Response& r) {
    return -r.joint_logprob() / static_cast<double>(r.token_logprobs.size());
  });
}

}  // namespace semuq
