#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "semuq/cache.hpp"
#include "semuq/dataset.hpp"
#include "semuq/entropy.hpp"
#include "semuq/geometry.hpp"

namespace semuq {

inline constexpr const char* kApiKeyEnv = "SEMUQ_API_KEY";

struct EndpointConfig {
  std::string base_url;
  std::optional<std::string> api_key;
  double timeout_s = 60.0;
  int max_retries = 3;
  int max_concurrency = 4;
  // Delay before retry k (1-based) is backoff_base_s * backoff_factor^(k-1).
  double backoff_base_s = 1.0;
  double backoff_factor = 2.0;
  // Model name sent to embedding endpoints.
  std::string model;

  void validate() const;
  // api_key from SEMUQ_API_KEY when set.
  static std::optional<std::string> api_key_from_env();
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

// One HTTP round trip. Connection-level failures throw TransportError.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const std::string& path, const std::string& body,
                            const Headers& headers) = 0;
};

std::unique_ptr<HttpTransport> make_http_transport(const EndpointConfig& cfg);

// Counting semaphore with an RAII permit.
class ConcurrencyLimiter {
 public:
  explicit ConcurrencyLimiter(int limit);

  class Permit {
   public:
    explicit Permit(ConcurrencyLimiter& l) : l_(&l) { l_->acquire(); }
    ~Permit() { l_->release(); }
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;

   private:
    ConcurrencyLimiter* l_;
  };

  void acquire();
  void release();

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int available_;
};

// POSTs JSON with retries, exponential backoff, bounded in-flight requests
// and debug logging with the API key redacted.
class JsonEndpoint {
 public:
  using Sleeper = std::function<void(std::chrono::duration<double>)>;

  JsonEndpoint(EndpointConfig cfg, std::shared_ptr<HttpTransport> transport,
               Sleeper sleeper = {});

  nlohmann::json post(const std::string& path, const nlohmann::json& body);
  const EndpointConfig& config() const { return cfg_; }

 private:
  EndpointConfig cfg_;
  std::shared_ptr<HttpTransport> transport_;
  Sleeper sleeper_;
  ConcurrencyLimiter limiter_;
};

class GenerationClient {
 public:
  virtual ~GenerationClient() = default;
  virtual GenerationSet generate(std::string_view record_id, std::string_view prompt,
                                 const SamplingConfig& sampling) = 0;
};

class EmbeddingClient {
 public:
  virtual ~EmbeddingClient() = default;
  // Same order as the input; all vectors share one dimension.
  virtual std::vector<EmbeddingVector> embed(std::span<const std::string> texts) = 0;
};

// POST <base>/v1/chat/completions with n samples and logprobs.
class HttpGenerationClient final : public GenerationClient {
 public:
  explicit HttpGenerationClient(std::shared_ptr<JsonEndpoint> endpoint);
  GenerationSet generate(std::string_view record_id, std::string_view prompt,
                         const SamplingConfig& sampling) override;

  static nlohmann::json build_request(std::string_view prompt, const SamplingConfig& sampling);
  static GenerationSet parse_response(const nlohmann::json& body, std::string_view record_id,
                                      const SamplingConfig& sampling);

 private:
  std::shared_ptr<JsonEndpoint> endpoint_;
};

// POST <base>/v1/embeddings in batches of at most kMaxBatch texts.
class HttpEmbeddingClient final : public EmbeddingClient {
 public:
  static constexpr std::size_t kMaxBatch = 64;

  explicit HttpEmbeddingClient(std::shared_ptr<JsonEndpoint> endpoint);
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;

 private:
  std::shared_ptr<JsonEndpoint> endpoint_;
};

// POST <base>/nli {premise, hypothesis} -> {label}. A non-empty question is
// prepended to both texts as "Question: ... Answer: ...".
class HttpEntailmentClient final : public EntailmentOracle {
 public:
  explicit HttpEntailmentClient(std::shared_ptr<JsonEndpoint> endpoint);
  EntailmentLabel judge(std::string_view premise, std::string_view hypothesis,
                        std::string_view question) override;

  static std::string with_question(std::string_view answer, std::string_view question);

 private:
  std::shared_ptr<JsonEndpoint> endpoint_;
};

// Disk cache keyed by cache_key(); a hit never reaches the inner client.
class CachedGenerationClient final : public GenerationClient {
 public:
  CachedGenerationClient(std::shared_ptr<GenerationClient> inner, std::filesystem::path cache_dir);
  GenerationSet generate(std::string_view record_id, std::string_view prompt,
                         const SamplingConfig& sampling) override;

 private:
  std::shared_ptr<GenerationClient> inner_;
  std::filesystem::path cache_dir_;
};

// Disk cache keyed by the digest of (namespace, text). Misses are sent to
// the inner client as one call.
class CachedEmbeddingClient final : public EmbeddingClient {
 public:
  CachedEmbeddingClient(std::shared_ptr<EmbeddingClient> inner, std::filesystem::path cache_dir,
                        std::string key_namespace);
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;

 private:
  std::shared_ptr<EmbeddingClient> inner_;
  JsonFileCache cache_;
  std::string namespace_;
};

// Disk-backed plus in-memory memo, so judgments are stable within a session
// even if the backend is not.
class CachedEntailmentOracle final : public EntailmentOracle {
 public:
  CachedEntailmentOracle(std::shared_ptr<EntailmentOracle> inner, std::filesystem::path cache_dir,
                         std::string key_namespace);
  EntailmentLabel judge(std::string_view premise, std::string_view hypothesis,
                        std::string_view question) override;

 private:
  std::shared_ptr<EntailmentOracle> inner_;
  JsonFileCache cache_;
  std::string namespace_;
  std::mutex mu_;
  std::unordered_map<std::string, EntailmentLabel> memo_;
};

}  // namespace semuq
