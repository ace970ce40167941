#include "semuq/grammar.hpp"

#include <random>

#include <fmt/format.h>

#include "semuq/geometry.hpp"

namespace semuq::aseu {

ReferenceEmbedder::ReferenceEmbedder(int dim, std::uint64_t seed, std::set<int> ignored)
    : dim_(dim), seed_(seed), ignored_(std::move(ignored)) {
  if (dim_ < 1) throw InvalidArgument("reference embedding dimension must be >= 1");
}

VectorXd ReferenceEmbedder::embed(std::span<const int> tokens) const {
  std::vector<std::string> words;
  for (int t : tokens) {
    if (!ignored_.count(t)) words.push_back(fmt::format("tok{}", t));
  }
  const EmbeddingVector e = hashed_bag_embedding(words, static_cast<std::size_t>(dim_), seed_);
  return Eigen::Map<const VectorXd>(e.values().data(), static_cast<Eigen::Index>(e.dim()));
}

SyntheticGrammar::SyntheticGrammar(GrammarConfig cfg) : cfg_(cfg) {
  if (cfg_.n_unambiguous < 0 || cfg_.n_ambiguous < 0 || cfg_.n_unambiguous + cfg_.n_ambiguous < 1) {
    throw InvalidArgument("grammar needs at least one prompt");
  }
  if (cfg_.carrier_len < 0 || cfg_.copies < 1) throw InvalidArgument("invalid grammar settings");
  const int n_prompts = cfg_.n_unambiguous + cfg_.n_ambiguous;
  const int n_content = cfg_.n_unambiguous + 2 * cfg_.n_ambiguous;
  first_carrier_ = 2;
  first_question_ = first_carrier_ + cfg_.carrier_len;
  first_content_ = first_question_ + n_prompts;
  vocab_size_ = first_content_ + n_content;

  // Seeded assignment of content tokens to prompts.
  std::vector<int> content(static_cast<std::size_t>(n_content));
  for (int i = 0; i < n_content; ++i) content[static_cast<std::size_t>(i)] = first_content_ + i;
  std::mt19937_64 gen(cfg_.seed ^ 0xa0761d6478bd642fULL);
  for (std::size_t i = content.size(); i > 1; --i) std::swap(content[i - 1], content[gen() % i]);

  std::vector<int> carrier;
  for (int c = 0; c < cfg_.carrier_len; ++c) carrier.push_back(first_carrier_ + c);
  auto answer = [&](int content_token) {
    std::vector<int> a = carrier;
    a.push_back(content_token);
    return a;
  };

  std::size_t next_content = 0;
  for (int i = 0; i < n_prompts; ++i) {
    GrammarPrompt p;
    p.ambiguous = i >= cfg_.n_unambiguous;
    const int local = p.ambiguous ? i - cfg_.n_unambiguous : i;
    p.id = fmt::format("{}{:02d}", p.ambiguous ? 'B' : 'A', local);
    p.tokens = {first_question_ + i, kQuestionMark};
    p.continuations.push_back(answer(content[next_content++]));
    if (p.ambiguous) p.continuations.push_back(answer(content[next_content++]));
    prompts_.push_back(std::move(p));
  }
}

std::set<int> SyntheticGrammar::function_tokens() const {
  std::set<int> out{kEos, kQuestionMark};
  for (int c = 0; c < cfg_.carrier_len; ++c) out.insert(first_carrier_ + c);
  return out;
}

std::vector<TrainingExample> SyntheticGrammar::corpus(const ReferenceEmbedder& embedder) const {
  std::vector<TrainingExample> out;
  for (const auto& p : prompts_) {
    // Each prompt contributes the same number of sequences; type B splits
    // them between its continuations.
    const int per_prompt = cfg_.copies * 2;
    for (int k = 0; k < per_prompt; ++k) {
      const auto& cont = p.continuations[static_cast<std::size_t>(k) % p.continuations.size()];
      TrainingExample ex;
      ex.tokens = p.tokens;
      ex.tokens.insert(ex.tokens.end(), cont.begin(), cont.end());
      ex.tokens.push_back(kEos);
      ex.prompt_len = static_cast<int>(p.tokens.size());
      ex.target = embedder.embed(cont);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

std::string SyntheticGrammar::token_name(int token) const {
  if (token == kEos) return "<eos>";
  if (token == kQuestionMark) return "?";
  if (token < first_question_) return fmt::format("c{}", token - first_carrier_);
  if (token < first_content_) return fmt::format("q{}", token - first_question_);
  if (token < vocab_size_) return fmt::format("w{}", token - first_content_);
  return fmt::format("<{}>", token);
}

}  // namespace semuq::aseu
