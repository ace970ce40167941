#include "semuq/clients.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "semuq/error.hpp"

namespace semuq {

using nlohmann::json;

void EndpointConfig::validate() const {
  if (base_url.empty()) throw ConfigError("endpoint base_url is empty");
  if (!(timeout_s > 0.0)) throw ConfigError(fmt::format("endpoint timeout must be > 0, got {}", timeout_s));
  if (max_retries < 0) throw ConfigError("endpoint max_retries must be >= 0");
  if (max_concurrency < 1) throw ConfigError("endpoint max_concurrency must be >= 1");
  if (backoff_base_s < 0.0 || backoff_factor < 1.0) throw ConfigError("invalid backoff settings");
}

std::optional<std::string> EndpointConfig::api_key_from_env() {
  if (const char* v = std::getenv(kApiKeyEnv); v != nullptr && *v != '\0') return std::string(v);
  return std::nullopt;
}

ConcurrencyLimiter::ConcurrencyLimiter(int limit) : available_(limit) {
  if (limit < 1) throw ConfigError("concurrency limit must be >= 1");
}

void ConcurrencyLimiter::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return available_ > 0; });
  --available_;
}

void ConcurrencyLimiter::release() {
  {
    std::lock_guard lock(mu_);
    ++available_;
  }
  cv_.notify_one();
}

JsonEndpoint::JsonEndpoint(EndpointConfig cfg, std::shared_ptr<HttpTransport> transport,
                           Sleeper sleeper)
    : cfg_(std::move(cfg)),
      transport_(std::move(transport)),
      sleeper_(std::move(sleeper)),
      limiter_(cfg_.max_concurrency) {
  cfg_.validate();
  if (!sleeper_) {
    sleeper_ = [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); };
  }
}

namespace {

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

std::string redacted(const Headers& headers) {
  std::string out;
  for (const auto& [k, v] : headers) {
    if (!out.empty()) out += ", ";
    out += k == "Authorization" ? k + ": <redacted>" : k + ": " + v;
  }
  return out;
}

}  // namespace

json JsonEndpoint::post(const std::string& path, const json& body) {
  Headers headers{{"Accept", "application/json"}};
  if (cfg_.api_key) headers.emplace_back("Authorization", "Bearer " + *cfg_.api_key);
  const std::string payload = body.dump();

  std::string last_error;
  const int max_attempts = cfg_.max_retries + 1;
  for (int attempt = 1;; ++attempt) {
    std::optional<HttpResponse> resp;
    try {
      ConcurrencyLimiter::Permit permit(limiter_);
      spdlog::debug("POST {}{} [{}] {}", cfg_.base_url, path, redacted(headers), payload);
      resp = transport_->post(path, payload, headers);
      spdlog::debug("<- {} {}", resp->status, resp->body);
    } catch (const TransportError& e) {
      last_error = e.what();
    }
    if (resp) {
      if (resp->status >= 200 && resp->status < 300) {
        try {
          return json::parse(resp->body);
        } catch (const json::parse_error& e) {
          throw ProtocolError(fmt::format("{}{}: response is not JSON ({})", cfg_.base_url, path, e.what()));
        }
      }
      if (!retryable_status(resp->status)) {
        throw ProtocolError(fmt::format("{}{}: HTTP {}: {}", cfg_.base_url, path, resp->status, resp->body));
      }
      last_error = fmt::format("HTTP {}", resp->status);
    }
    if (attempt >= max_attempts) {
      throw TransportError(fmt::format("{}{}: giving up after {} attempt(s): {}", cfg_.base_url,
                                       path, attempt, last_error),
                           attempt);
    }
    const double delay = cfg_.backoff_base_s * std::pow(cfg_.backoff_factor, attempt - 1);
    spdlog::debug("retrying {}{} in {:.2f}s ({})", cfg_.base_url, path, delay, last_error);
    sleeper_(std::chrono::duration<double>(delay));
  }
}

// ---------------------------------------------------------------------------
// Generation

HttpGenerationClient::HttpGenerationClient(std::shared_ptr<JsonEndpoint> endpoint)
    : endpoint_(std::move(endpoint)) {}

json HttpGenerationClient::build_request(std::string_view prompt, const SamplingConfig& sampling) {
  return json{{"model", sampling.model_id},
              {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
              {"n", sampling.m},
              {"temperature", sampling.temperature},
              {"max_tokens", sampling.max_tokens},
              {"logprobs", true}};
}

GenerationSet HttpGenerationClient::parse_response(const json& body, std::string_view record_id,
                                                   const SamplingConfig& sampling) {
  auto choices_it = body.find("choices");
  if (choices_it == body.end() || !choices_it->is_array()) {
    throw ProtocolError("chat completion response has no \"choices\" array");
  }
  std::vector<json> choices(choices_it->begin(), choices_it->end());
  if (choices.size() != static_cast<std::size_t>(sampling.m)) {
    throw ProtocolError(fmt::format("expected {} samples for record '{}', received {}", sampling.m,
                                    record_id, choices.size()));
  }
  std::stable_sort(choices.begin(), choices.end(), [](const json& a, const json& b) {
    return a.value("index", 0) < b.value("index", 0);
  });

  GenerationSet set;
  set.record_id = std::string(record_id);
  set.sampling = sampling;
  for (const auto& choice : choices) {
    Response r;
    const auto& msg = choice.at("message");
    r.text = msg.contains("content") && msg["content"].is_string() ? msg["content"].get<std::string>() : "";
    auto lp = choice.find("logprobs");
    if (lp == choice.end() || !lp->is_object() || !lp->contains("content") ||
        !(*lp)["content"].is_array()) {
      throw ProtocolError(
          fmt::format("logprobs unsupported: endpoint returned no per-token log-probabilities for "
                      "model '{}'",
                      sampling.model_id));
    }
    for (const auto& tok : (*lp)["content"]) {
      const double v = tok.at("logprob").get<double>();
      if (!std::isfinite(v)) {
        throw ProtocolError(fmt::format("non-finite token log-probability for record '{}'", record_id));
      }
      r.tokens.push_back(tok.at("token").get<std::string>());
      // Servers occasionally report +1e-7 for certain tokens.
      r.token_logprobs.push_back(std::min(v, 0.0));
    }
    set.responses.push_back(std::move(r));
  }
  set.validate();
  return set;
}

GenerationSet HttpGenerationClient::generate(std::string_view record_id, std::string_view prompt,
                                             const SamplingConfig& sampling) {
  sampling.validate();
  const json body = endpoint_->post("/v1/chat/completions", build_request(prompt, sampling));
  return parse_response(body, record_id, sampling);
}

// ---------------------------------------------------------------------------
// Embeddings

HttpEmbeddingClient::HttpEmbeddingClient(std::shared_ptr<JsonEndpoint> endpoint)
    : endpoint_(std::move(endpoint)) {}

namespace {

void check_same_dim(std::span<const EmbeddingVector> v) {
  for (const auto& e : v) {
    if (e.dim() != v.front().dim()) {
      throw ProtocolError(fmt::format("embedding dimension disagreement: {} vs {}", e.dim(),
                                      v.front().dim()));
    }
  }
}

}  // namespace

std::vector<EmbeddingVector> HttpEmbeddingClient::embed(std::span<const std::string> texts) {
  if (texts.empty()) throw InvalidArgument("embed() needs at least one text");
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (std::size_t start = 0; start < texts.size(); start += kMaxBatch) {
    const auto batch = texts.subspan(start, std::min(kMaxBatch, texts.size() - start));
    json req{{"model", endpoint_->config().model},
             {"input", std::vector<std::string>(batch.begin(), batch.end())}};
    const json body = endpoint_->post("/v1/embeddings", req);
    auto data_it = body.find("data");
    if (data_it == body.end() || !data_it->is_array() || data_it->size() != batch.size()) {
      throw ProtocolError(fmt::format("embedding response: expected {} vectors", batch.size()));
    }
    std::vector<json> data(data_it->begin(), data_it->end());
    std::stable_sort(data.begin(), data.end(), [](const json& a, const json& b) {
      return a.value("index", 0) < b.value("index", 0);
    });
    for (const auto& d : data) {
      out.emplace_back(d.at("embedding").get<std::vector<double>>());
    }
  }
  check_same_dim(out);
  return out;
}

// ---------------------------------------------------------------------------
// Entailment

HttpEntailmentClient::HttpEntailmentClient(std::shared_ptr<JsonEndpoint> endpoint)
    : endpoint_(std::move(endpoint)) {}

std::string HttpEntailmentClient::with_question(std::string_view answer, std::string_view question) {
  if (question.empty()) return std::string(answer);
  return fmt::format("Question: {} Answer: {}", question, answer);
}

EntailmentLabel HttpEntailmentClient::judge(std::string_view premise, std::string_view hypothesis,
                                            std::string_view question) {
  const json body = endpoint_->post(
      "/nli", json{{"premise", with_question(premise, question)},
                   {"hypothesis", with_question(hypothesis, question)}});
  auto it = body.find("label");
  if (it == body.end() || !it->is_string()) {
    throw ProtocolError(fmt::format("entailment response has no \"label\": {}", body.dump()));
  }
  const auto label = parse_entailment_label(it->get<std::string>());
  if (!label) {
    throw ProtocolError(fmt::format("unknown entailment label \"{}\" (expected entailment, "
                                    "neutral or contradiction)",
                                    it->get<std::string>()));
  }
  return *label;
}

// ---------------------------------------------------------------------------
// Caching decorators

CachedGenerationClient::CachedGenerationClient(std::shared_ptr<GenerationClient> inner,
                                               std::filesystem::path cache_dir)
    : inner_(std::move(inner)), cache_dir_(std::move(cache_dir)) {}

GenerationSet CachedGenerationClient::generate(std::string_view record_id, std::string_view prompt,
                                               const SamplingConfig& sampling) {
  const std::string key = cache_key(record_id, sampling, prompt);
  if (auto hit = load_generations(key, cache_dir_)) return *std::move(hit);
  GenerationSet set = inner_->generate(record_id, prompt, sampling);
  if (set.responses.size() != static_cast<std::size_t>(sampling.m)) {
    throw ProtocolError(fmt::format("expected {} samples for record '{}', received {}", sampling.m,
                                    record_id, set.responses.size()));
  }
  set.validate();
  store_generations(set, key, cache_dir_);
  return set;
}

CachedEmbeddingClient::CachedEmbeddingClient(std::shared_ptr<EmbeddingClient> inner,
                                             std::filesystem::path cache_dir,
                                             std::string key_namespace)
    : inner_(std::move(inner)), cache_(std::move(cache_dir)), namespace_(std::move(key_namespace)) {}

std::vector<EmbeddingVector> CachedEmbeddingClient::embed(std::span<const std::string> texts) {
  if (texts.empty()) throw InvalidArgument("embed() needs at least one text");
  std::vector<std::optional<EmbeddingVector>> found(texts.size());
  std::vector<std::string> keys(texts.size());
  std::map<std::string, std::size_t> miss_index;  // text -> slot in `misses`
  std::vector<std::string> misses;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    keys[i] = sha256_hex(namespace_ + '\0' + texts[i]);
    if (auto doc = cache_.get(keys[i])) {
      try {
        found[i].emplace(doc->at("embedding").get<std::vector<double>>());
        continue;
      } catch (const std::exception& e) {
        spdlog::warn("ignoring corrupt embedding cache entry {}: {}", keys[i], e.what());
      }
    }
    if (miss_index.emplace(texts[i], misses.size()).second) misses.push_back(texts[i]);
  }
  if (!misses.empty()) {
    auto fresh = inner_->embed(misses);
    if (fresh.size() != misses.size()) {
      throw ProtocolError(fmt::format("embedding client returned {} vectors for {} texts",
                                      fresh.size(), misses.size()));
    }
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (found[i]) continue;
      const auto& v = fresh[miss_index.at(texts[i])];
      found[i] = v;
      cache_.put(keys[i], json{{"embedding", std::vector<double>(v.values().begin(), v.values().end())}});
    }
  }
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (auto& f : found) out.push_back(*std::move(f));
  check_same_dim(out);
  return out;
}

CachedEntailmentOracle::CachedEntailmentOracle(std::shared_ptr<EntailmentOracle> inner,
                                               std::filesystem::path cache_dir,
                                               std::string key_namespace)
    : inner_(std::move(inner)), cache_(std::move(cache_dir)), namespace_(std::move(key_namespace)) {}

EntailmentLabel CachedEntailmentOracle::judge(std::string_view premise, std::string_view hypothesis,
                                              std::string_view question) {
  const std::string key = sha256_hex(json::array({namespace_, premise, hypothesis, question}).dump());
  {
    std::lock_guard lock(mu_);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
  }
  std::optional<EntailmentLabel> label;
  if (auto doc = cache_.get(key); doc && doc->contains("label") && (*doc)["label"].is_string()) {
    label = parse_entailment_label((*doc)["label"].get<std::string>());
  }
  if (!label) {
    label = inner_->judge(premise, hypothesis, question);
    cache_.put(key, json{{"label", to_string(*label)}});
  }
  std::lock_guard lock(mu_);
  // First writer wins so every caller in this session sees one answer.
  return memo_.emplace(key, *label).first->second;
}

}  // namespace semuq
