#include "semuq/mock_clients.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "semuq/error.hpp"

namespace semuq {

namespace {

// mt19937_64 output is fully specified by the standard; the distributions
// are not, so uniforms are derived by hand to keep mock output portable.
double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

std::vector<std::string> whitespace_split(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

constexpr std::string_view kFillers[] = {"It is", "I think", "The answer is", "Probably"};

}  // namespace

MockLlm::MockLlm(MockScript script, MockLlmOptions options)
    : script_(std::move(script)), options_(std::move(options)) {}

GenerationSet MockLlm::generate(std::string_view record_id, std::string_view prompt,
                                const SamplingConfig& sampling) {
  ++calls_;
  sampling.validate();
  for (const auto& marker : options_.fail_on) {
    if (prompt.find(marker) != std::string_view::npos) {
      throw TransportError(fmt::format("mock endpoint failure for record '{}'", record_id), 1);
    }
  }
  const std::vector<ScriptedAnswer>* answers = &options_.fallback;
  if (auto it = script_.find(prompt); it != script_.end()) {
    answers = &it->second;
  } else if (auto it2 = script_.find(record_id); it2 != script_.end()) {
    answers = &it2->second;
  }
  if (answers->empty()) throw InvalidArgument("mock script entry has no answers");

  std::vector<double> probs;
  for (const auto& a : *answers) probs.push_back(std::pow(std::max(a.weight, 0.0), 1.0 / sampling.temperature));
  const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (!(total > 0.0)) throw InvalidArgument("mock script weights sum to zero");
  for (auto& p : probs) p /= total;

  std::uint64_t h = fnv1a64(record_id, options_.seed ^ 0x9e3779b97f4a7c15ULL);
  h = fnv1a64(prompt, h);
  h = fnv1a64(fmt::format("{}|{}", sampling.model_id, sampling.temperature), h);
  std::mt19937_64 gen(h);

  GenerationSet set;
  set.record_id = std::string(record_id);
  set.sampling = sampling;
  for (int s = 0; s < sampling.m; ++s) {
    const double u = uniform01(gen);
    std::size_t pick = 0;
    double acc = probs[0];
    while (u >= acc && pick + 1 < probs.size()) acc += probs[++pick];

    Response r;
    r.text = (*answers)[pick].text;
    bool paraphrased = false;
    if (options_.paraphrase_rate > 0.0 && uniform01(gen) < options_.paraphrase_rate) {
      const auto filler = kFillers[gen() % std::size(kFillers)];
      r.text = fmt::format("{} {}", filler, r.text);
      paraphrased = true;
    }
    r.tokens = whitespace_split(r.text);
    if (r.tokens.empty()) r.tokens.push_back("");
    const double per_token = std::log(std::max(probs[pick], 1e-300)) / static_cast<double>(r.tokens.size());
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      double lp = per_token - 0.05 * uniform01(gen) - (paraphrased ? 0.1 : 0.0);
      r.token_logprobs.push_back(std::min(lp, 0.0));
    }
    set.responses.push_back(std::move(r));
  }
  return set;
}

MockEmbedder::MockEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim_ == 0) throw InvalidArgument("mock embedder dimension must be >= 1");
}

std::vector<EmbeddingVector> MockEmbedder::embed(std::span<const std::string> texts) {
  if (texts.empty()) throw InvalidArgument("embed() needs at least one text");
  ++calls_;
  texts_ += static_cast<long>(texts.size());
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    const auto tokens = normalize_tokens(t);
    out.push_back(hashed_bag_embedding(tokens, dim_, seed_));
  }
  return out;
}

MockEntailer::MockEntailer(Policy policy) : policy_(policy) {}

void MockEntailer::add_rule(std::string premise, std::string hypothesis, EntailmentLabel label) {
  rules_[{std::move(premise), std::move(hypothesis)}] = label;
}

EntailmentLabel MockEntailer::judge(std::string_view premise, std::string_view hypothesis,
                                    std::string_view) {
  ++calls_;
  if (auto it = rules_.find({std::string(premise), std::string(hypothesis)}); it != rules_.end()) {
    return it->second;
  }
  switch (policy_) {
    case Policy::kAlways: return EntailmentLabel::kEntailment;
    case Policy::kNever: return EntailmentLabel::kNeutral;
    case Policy::kExact:
      return normalize_tokens(premise) == normalize_tokens(hypothesis) ? EntailmentLabel::kEntailment
                                                                       : EntailmentLabel::kNeutral;
    case Policy::kTokenSubset: {
      const auto p = normalize_tokens(premise);
      const std::set<std::string> have(p.begin(), p.end());
      for (const auto& t : normalize_tokens(hypothesis)) {
        if (!have.count(t)) return EntailmentLabel::kNeutral;
      }
      return EntailmentLabel::kEntailment;
    }
  }
  return EntailmentLabel::kNeutral;
}

namespace {

std::string nonsense_phrase(std::mt19937_64& gen) {
  static constexpr std::string_view kSyllables[] = {"ka", "lo", "mi", "zen", "tor", "vel", "ra",
                                                    "sun", "de", "pho", "gri", "an", "bel", "cor"};
  const int words = 1 + static_cast<int>(gen() % 2);
  std::string out;
  for (int w = 0; w < words; ++w) {
    if (!out.empty()) out.push_back(' ');
    const int syl = 2 + static_cast<int>(gen() % 2);
    for (int s = 0; s < syl; ++s) out += kSyllables[gen() % std::size(kSyllables)];
  }
  return out;
}

}  // namespace

MockScript build_mock_world(std::span<const QaRecord> records, std::string_view prompt_template,
                            std::uint64_t seed) {
  MockScript script;
  for (const auto& rec : records) {
    std::mt19937_64 gen(fnv1a64(rec.id, seed ^ 0x5851f42d4c957f2dULL));
    const std::string& ref = rec.references.front();
    std::vector<ScriptedAnswer> pool;
    switch (gen() % 10) {
      case 0: case 1: case 2:  // confidently right
        pool = {{ref, 8.0}, {nonsense_phrase(gen), 0.5}};
        break;
      case 3: case 4:  // right, with paraphrases
        pool = {{ref, 4.0}, {"It is " + ref, 3.0}, {ref + " I believe", 2.0}};
        break;
      case 5: case 6:  // confused
        pool = {{ref, 2.0}, {nonsense_phrase(gen), 2.0}, {nonsense_phrase(gen), 2.0},
                {nonsense_phrase(gen), 1.0}};
        break;
      case 7: case 8:  // scattered and wrong
        pool = {{nonsense_phrase(gen), 1.0}, {nonsense_phrase(gen), 1.0},
                {nonsense_phrase(gen), 1.0}, {nonsense_phrase(gen), 1.0}};
        break;
      default:  // confidently wrong
        pool = {{nonsense_phrase(gen), 8.0}, {nonsense_phrase(gen), 1.0}};
        break;
    }
    script[render_prompt(prompt_template, rec)] = std::move(pool);
  }
  return script;
}

}  // namespace semuq
