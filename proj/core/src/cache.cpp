#include "semuq/cache.hpp"

#include <openssl/evp.h>

#include <array>
#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "semuq/error.hpp"

namespace semuq {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string cache_key(std::string_view record_id, const SamplingConfig& sampling,
                      std::string_view prompt) {
  // nlohmann::json objects keep keys sorted and dump doubles in shortest
  // round-trip form, which makes the serialization canonical.
  json canonical{{"record_id", record_id},
                 {"model_id", sampling.model_id},
                 {"prompt", prompt},
                 {"temperature", sampling.temperature},
                 {"m", sampling.m},
                 {"max_tokens", sampling.max_tokens}};
  return sha256_hex(canonical.dump());
}

JsonFileCache::JsonFileCache(fs::path dir) : dir_(std::move(dir)) {}

fs::path JsonFileCache::path_for(std::string_view key) const {
  return dir_ / (std::string(key) + ".json");
}

bool JsonFileCache::contains(std::string_view key) const {
  std::error_code ec;
  return fs::exists(path_for(key), ec);
}

std::optional<json> JsonFileCache::get(std::string_view key) const {
  const fs::path p = path_for(key);
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    spdlog::warn("corrupt cache file {}: {}", p.string(), e.what());
    return std::nullopt;
  }
}

void JsonFileCache::put(std::string_view key, const json& value) const {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) {
    throw Error(fmt::format("cannot create cache directory '{}': {}", dir_.string(), ec.message()));
  }
  static std::atomic<unsigned long> counter{0};
  const fs::path final_path = path_for(key);
  const fs::path tmp = dir_ / fmt::format(".{}.{}.{}.tmp", key,
                                          std::hash<std::thread::id>{}(std::this_thread::get_id()),
                                          counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write cache file '{}'", tmp.string()));
    out << value.dump();
    out.flush();
    if (!out) throw Error(fmt::format("short write to cache file '{}'", tmp.string()));
  }
  fs::rename(tmp, final_path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error(fmt::format("cannot publish cache file '{}': {}", final_path.string(), ec.message()));
  }
}

void store_generations(const GenerationSet& set, std::string_view key, const fs::path& cache_dir) {
  JsonFileCache(cache_dir).put(key, json(set));
}

std::optional<GenerationSet> load_generations(std::string_view key, const fs::path& cache_dir) {
  JsonFileCache cache(cache_dir);
  auto doc = cache.get(key);
  if (!doc) return std::nullopt;
  try {
    GenerationSet set = doc->get<GenerationSet>();
    set.validate();
    return set;
  } catch (const std::exception& e) {
    spdlog::warn("corrupt generation cache entry {}: {}", cache.path_for(key).string(), e.what());
    return std::nullopt;
  }
}

}  // namespace semuq
