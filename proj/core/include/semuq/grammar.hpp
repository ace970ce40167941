#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "semuq/aseu.hpp"

namespace semuq::aseu {

// Unit-norm hashed bag-of-tokens projection of a token-id sequence into R^D.
// Tokens in `ignored` (function words) contribute nothing.
class ReferenceEmbedder {
 public:
  ReferenceEmbedder(int dim, std::uint64_t seed, std::set<int> ignored = {});
  VectorXd embed(std::span<const int> tokens) const;
  int dim() const { return dim_; }

 private:
  int dim_;
  std::uint64_t seed_;
  std::set<int> ignored_;
};

struct GrammarConfig {
  int n_unambiguous = 8;  // type A: one continuation per prompt
  int n_ambiguous = 8;    // type B: two continuations per prompt
  int carrier_len = 2;    // shared function tokens opening every answer
  int copies = 2;         // times each (prompt, continuation) pair appears
  std::uint64_t seed = 0;
};

struct GrammarPrompt {
  std::string id;  // "A03", "B01", ...
  bool ambiguous = false;
  std::vector<int> tokens;
  std::vector<std::vector<int>> continuations;  // answer tokens, EOS excluded
};

// Sequences are  <question> ? <carrier...> <content> EOS.  Type-B prompts
// split their copies evenly between two content tokens, so the answer's
// meaning is undetermined until the last answer token.
class SyntheticGrammar {
 public:
  static constexpr int kEos = 0;
  static constexpr int kQuestionMark = 1;

  explicit SyntheticGrammar(GrammarConfig cfg);

  int vocab_size() const { return vocab_size_; }
  const std::vector<GrammarPrompt>& prompts() const { return prompts_; }
  std::set<int> function_tokens() const;

  // Training examples with response embeddings from `embedder`.
  std::vector<TrainingExample> corpus(const ReferenceEmbedder& embedder) const;

  std::string token_name(int token) const;

 private:
  GrammarConfig cfg_;
  int vocab_size_ = 0;
  int first_carrier_ = 0;
  int first_question_ = 0;
  int first_content_ = 0;
  std::vector<GrammarPrompt> prompts_;
};

}  // namespace semuq::aseu
