#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "semuq/clients.hpp"

namespace semuq {

struct ScriptedAnswer {
  std::string text;
  double weight = 1.0;
};

// prompt (or record id) -> candidate answers.
using MockScript = std::map<std::string, std::vector<ScriptedAnswer>, std::less<>>;

struct MockLlmOptions {
  std::uint64_t seed = 0;
  // Probability that a sampled answer gets a filler prefix.
  double paraphrase_rate = 0.0;
  // Prompts containing any of these substrings fail with TransportError.
  std::vector<std::string> fail_on;
  // Used when neither the prompt nor the record id is scripted.
  std::vector<ScriptedAnswer> fallback{{"I don't know", 1.0}};
};

// Seeded fake chat model. Answer i is drawn with probability proportional to
// weight_i^(1/temperature); log-probabilities follow from that probability
// plus a small seeded per-token jitter. Output depends only on (seed, record
// id, prompt, sampling), never on call order.
class MockLlm final : public GenerationClient {
 public:
  MockLlm(MockScript script, MockLlmOptions options = {});
  GenerationSet generate(std::string_view record_id, std::string_view prompt,
                         const SamplingConfig& sampling) override;
  long calls() const { return calls_.load(); }

 private:
  MockScript script_;
  MockLlmOptions options_;
  std::atomic<long> calls_{0};
};

// Hashed bag-of-tokens projection onto the unit sphere.
class MockEmbedder final : public EmbeddingClient {
 public:
  explicit MockEmbedder(std::size_t dim = 256, std::uint64_t seed = 0);
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;
  long calls() const { return calls_.load(); }
  long texts_embedded() const { return texts_.load(); }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  std::atomic<long> calls_{0};
  std::atomic<long> texts_{0};
};

// Scripted pair rules with a fallback policy. Texts are compared after
// normalize_tokens().
class MockEntailer final : public EntailmentOracle {
 public:
  enum class Policy {
    kAlways,       // everything entails everything
    kNever,        // nothing entails anything (neutral)
    kExact,        // entailment iff the normalized texts are equal
    kTokenSubset,  // entailment iff every hypothesis token occurs in the premise
  };

  explicit MockEntailer(Policy policy = Policy::kExact);
  // Ordered-pair override, checked before the policy.
  void add_rule(std::string premise, std::string hypothesis, EntailmentLabel label);

  EntailmentLabel judge(std::string_view premise, std::string_view hypothesis,
                        std::string_view question) override;
  long calls() const { return calls_.load(); }

 private:
  Policy policy_;
  std::map<std::pair<std::string, std::string>, EntailmentLabel> rules_;
  std::atomic<long> calls_{0};
};

// Builds a MockLlm script over a dataset: per record, a seeded regime picks
// between confidently right, paraphrased right, confused, scattered wrong and
// confidently wrong answer pools. Keys are the rendered prompts.
MockScript build_mock_world(std::span<const QaRecord> records, std::string_view prompt_template,
                            std::uint64_t seed);

}  // namespace semuq
