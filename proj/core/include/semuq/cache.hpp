#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "semuq/dataset.hpp"

namespace semuq {

// Lowercase hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view data);

// 64-hex digest of the canonical JSON serialization of the record id and
// every sampling field that changes what the model would return.
std::string cache_key(std::string_view record_id, const SamplingConfig& sampling,
                      std::string_view prompt);

// Directory of <key>.json documents. Writes go to a temp file in the same
// directory and are renamed into place, so readers never see partial files
// and concurrent writers resolve to last-writer-wins.
class JsonFileCache {
 public:
  explicit JsonFileCache(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path_for(std::string_view key) const;

  // nullopt when the file is absent or unparsable; corrupt files are logged.
  std::optional<nlohmann::json> get(std::string_view key) const;
  void put(std::string_view key, const nlohmann::json& value) const;
  bool contains(std::string_view key) const;

 private:
  std::filesystem::path dir_;
};

void store_generations(const GenerationSet& set, std::string_view key,
                       const std::filesystem::path& cache_dir);
std::optional<GenerationSet> load_generations(
    std::string_view key, const std::filesystem::path& cache_dir);

}  // namespace semuq
