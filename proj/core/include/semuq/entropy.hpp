#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semuq/dataset.hpp"
#include "semuq/error.hpp"

namespace semuq {

enum class EntailmentLabel { kEntailment, kNeutral, kContradiction };

std::string_view to_string(EntailmentLabel label);
// Case-insensitive; nullopt for anything outside the three labels.
std::optional<EntailmentLabel> parse_entailment_label(std::string_view s);

// Anything that labels an ordered (premise, hypothesis) pair: an NLI model
// behind HTTP, a cache in front of one, or a scripted mock.
class EntailmentOracle {
 public:
  virtual ~EntailmentOracle() = default;
  virtual EntailmentLabel judge(std::string_view premise, std::string_view hypothesis,
                                std::string_view question) = 0;
};

// Equivalence classes over response indices, in creation order.
struct SemanticClustering {
  std::vector<std::vector<std::size_t>> clusters;

  std::size_t size() const { return clusters.size(); }
  // Throws InvalidArgument unless clusters partition {0..n-1}.
  void validate(std::size_t n) const;

  bool operator==(const SemanticClustering&) const = default;
};

struct ClusterDistribution {
  std::vector<double> probs;
};

enum class UncertaintyMethod { kSeu, kSe, kPe, kLnpe, kAseu };

std::string_view to_string(UncertaintyMethod m);
std::optional<UncertaintyMethod> parse_method(std::string_view s);

struct UncertaintyScore {
  UncertaintyMethod method;
  double value;
  std::string record_id;
};

// Raised when the oracle throws; carries both texts.
class OracleError : public Error {
 public:
  using Error::Error;
};

bool bidirectional_equivalent(std::string_view a, std::string_view b, std::string_view question,
                              EntailmentOracle& oracle);

// Greedy single pass: each response joins the first cluster whose first
// member is bidirectionally equivalent to it, else opens a new cluster.
SemanticClustering cluster(std::span<const std::string> responses, std::string_view question,
                           EntailmentOracle& oracle);

enum class ClusterMode {
  kLikelihood,  // weights from sequence likelihoods, renormalized over samples
  kDiscrete,    // weights = cluster sizes
};

struct ClusterWeighting {
  ClusterMode mode = ClusterMode::kLikelihood;
  // Use per-token mean log-probability instead of the joint in likelihood mode.
  bool length_normalized = false;
};

ClusterDistribution cluster_distribution(const SemanticClustering& clustering,
                                         std::span<const Response> responses,
                                         ClusterWeighting weighting = {});

// -sum p log p in nats, with 0 log 0 = 0.
double semantic_entropy(const ClusterDistribution& dist);

// Mean negative joint log-probability over the sampled sequences.
double predictive_entropy(const GenerationSet& set);
// Mean per-token negative log-probability over the sampled sequences.
double lnpe(const GenerationSet& set);

}  // namespace semuq
