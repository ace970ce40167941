#include "semuq/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>

#include "semuq/error.hpp"

namespace semuq {

using nlohmann::json;

void SamplingConfig::validate() const {
  if (m < 2) throw InvalidArgument(fmt::format("sampling.m must be >= 2, got {}", m));
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw InvalidArgument(fmt::format("sampling.temperature must be > 0, got {}", temperature));
  }
  if (max_tokens < 1) {
    throw InvalidArgument(fmt::format("sampling.max_tokens must be >= 1, got {}", max_tokens));
  }
  if (prompt_template.find("{question}") == std::string::npos) {
    throw InvalidArgument("sampling.prompt_template has no {question} placeholder");
  }
}

double Response::joint_logprob() const {
  double sum = 0.0;
  for (double lp : token_logprobs) sum += lp;
  return sum;
}

void Response::validate() const {
  if (tokens.size() != token_logprobs.size()) {
    throw InvalidArgument(fmt::format("response has {} tokens but {} log-probabilities",
                                      tokens.size(), token_logprobs.size()));
  }
  for (double lp : token_logprobs) {
    if (!std::isfinite(lp) || lp > 0.0) {
      throw InvalidArgument(fmt::format("invalid token log-probability {}", lp));
    }
  }
}

void GenerationSet::validate() const {
  if (responses.empty()) {
    throw InvalidArgument(fmt::format("generation set for '{}' is empty", record_id));
  }
  for (const auto& r : responses) r.validate();
}

void to_json(json& j, const SamplingConfig& s) {
  j = json{{"m", s.m},
           {"temperature", s.temperature},
           {"prompt_template", s.prompt_template},
           {"model_id", s.model_id},
           {"max_tokens", s.max_tokens}};
}

void from_json(const json& j, SamplingConfig& s) {
  j.at("m").get_to(s.m);
  j.at("temperature").get_to(s.temperature);
  j.at("prompt_template").get_to(s.prompt_template);
  j.at("model_id").get_to(s.model_id);
  j.at("max_tokens").get_to(s.max_tokens);
}

void to_json(json& j, const Response& r) {
  j = json{{"text", r.text}, {"tokens", r.tokens}, {"token_logprobs", r.token_logprobs}};
}

void from_json(const json& j, Response& r) {
  j.at("text").get_to(r.text);
  j.at("tokens").get_to(r.tokens);
  j.at("token_logprobs").get_to(r.token_logprobs);
}

void to_json(json& j, const GenerationSet& g) {
  j = json{{"record_id", g.record_id}, {"responses", g.responses}, {"sampling", g.sampling}};
}

void from_json(const json& j, GenerationSet& g) {
  j.at("record_id").get_to(g.record_id);
  j.at("responses").get_to(g.responses);
  j.at("sampling").get_to(g.sampling);
}

namespace {

QaRecord parse_record(std::string_view line, std::size_t lineno) {
  auto fail = [&](const std::string& why) {
    return DataError(fmt::format("dataset line {}: {}", lineno, why));
  };
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw fail(fmt::format("invalid JSON ({})", e.what()));
  }
  if (!j.is_object()) throw fail("expected a JSON object");

  auto require_string = [&](const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw fail(fmt::format("missing \"{}\"", key));
    if (!it->is_string()) throw fail(fmt::format("\"{}\" must be a string", key));
    return it->get<std::string>();
  };

  QaRecord rec;
  rec.id = require_string("id");
  rec.question = require_string("question");
  if (rec.id.empty()) throw fail("empty \"id\"");
  if (rec.question.empty()) throw fail("empty \"question\"");

  if (auto it = j.find("context"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw fail("\"context\" must be a string");
    rec.context = it->get<std::string>();
  }

  auto answers = j.find("answers");
  if (answers == j.end()) throw fail("missing \"answers\"");
  if (!answers->is_array()) throw fail("\"answers\" must be an array");
  for (const auto& a : *answers) {
    if (!a.is_string() || a.get_ref<const std::string&>().empty()) {
      throw fail("every answer must be a non-empty string");
    }
    rec.references.push_back(a.get<std::string>());
  }
  if (rec.references.empty()) throw fail("\"answers\" is empty");
  return rec;
}

}  // namespace

std::vector<QaRecord> parse_dataset(std::string_view text) {
  std::vector<QaRecord> out;
  std::unordered_set<std::string> seen;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) {
      QaRecord rec = parse_record(line, lineno);
      if (!seen.insert(rec.id).second) {
        throw DataError(fmt::format("dataset line {}: duplicate id '{}'", lineno, rec.id));
      }
      out.push_back(std::move(rec));
    }
    if (end == text.size()) break;
    pos = end + 1;
  }
  return out;
}

std::vector<QaRecord> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open dataset '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

namespace prompts {

std::optional<std::string> preset(std::string_view name) {
  if (name == "brief") return std::string(kBrief);
  if (name == "few-words") return std::string(kFewWords);
  if (name == "short-reply") return std::string(kShortReply);
  if (name == "brief-context") return std::string(kBriefWithContext);
  return std::nullopt;
}

}  // namespace prompts

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

}  // namespace

std::string render_prompt(std::string_view tmpl, const QaRecord& record) {
  std::string out(tmpl);
  // Context first so a question containing "{context}" is left untouched.
  replace_all(out, "{context}", record.context.value_or(""));
  replace_all(out, "{question}", record.question);
  return out;
}

}  // namespace semuq
