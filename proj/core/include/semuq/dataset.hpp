#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace semuq {

// One question with optional context and the gold answers it is graded
// against.
struct QaRecord {
  std::string id;
  std::string question;
  std::optional<std::string> context;
  std::vector<std::string> references;

  bool operator==(const QaRecord&) const = default;
};

struct SamplingConfig {
  int m = 5;
  double temperature = 0.5;
  std::string prompt_template;
  std::string model_id;
  int max_tokens = 64;

  // Throws InvalidArgument when any field is out of range or the template
  // lacks a {question} placeholder.
  void validate() const;

  bool operator==(const SamplingConfig&) const = default;
};

// One sampled answer. Log-probabilities are natural-log, per token.
struct Response {
  std::string text;
  std::vector<std::string> tokens;
  std::vector<double> token_logprobs;

  double joint_logprob() const;
  void validate() const;

  bool operator==(const Response&) const = default;
};

struct GenerationSet {
  std::string record_id;
  std::vector<Response> responses;
  SamplingConfig sampling;

  void validate() const;

  bool operator==(const GenerationSet&) const = default;
};

void to_json(nlohmann::json& j, const SamplingConfig& s);
void from_json(const nlohmann::json& j, SamplingConfig& s);
void to_json(nlohmann::json& j, const Response& r);
void from_json(const nlohmann::json& j, Response& r);
void to_json(nlohmann::json& j, const GenerationSet& g);
void from_json(const nlohmann::json& j, GenerationSet& g);

// Reads a line-delimited dataset: one {"id","question","context"?,"answers"}
// object per line. Blank lines are skipped. Errors carry the 1-based line.
std::vector<QaRecord> load_dataset(const std::filesystem::path& path);
std::vector<QaRecord> parse_dataset(std::string_view text);

namespace prompts {
inline constexpr std::string_view kBrief =
    "Answer the following question as briefly as possible.\n"
    "Question: {question}\nAnswer:";
inline constexpr std::string_view kFewWords =
    "Answer the following question briefly using a few words.\n"
    "Question: {question}\nAnswer:";
inline constexpr std::string_view kShortReply =
    "Give a short reply to the following question.\n"
    "Question: {question}\nAnswer:";
inline constexpr std::string_view kBriefWithContext =
    "Answer the following question as briefly as possible.\n"
    "Context: {context}\nQuestion: {question}\nAnswer:";

// "brief" (Llama/Phi), "few-words" (Mistral), "short-reply" (fine-tuned
// Llama), "brief-context". Returns nullopt for unknown names.
std::optional<std::string> preset(std::string_view name);
}  // namespace prompts

// Substitutes {question} and {context}. A missing context renders as an
// empty string.
std::string render_prompt(std::string_view tmpl, const QaRecord& record);

}  // namespace semuq
