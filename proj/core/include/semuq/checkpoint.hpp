#pragma once

#include <filesystem>
#include <optional>

#include "semuq/toy_lm.hpp"

namespace semuq::aseu {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ToyLmConfig config;
  ModelParams params;
};

// JSON container: {"format", "version", "config", "tensors": {name: {shape,
// data}}}. Doubles are written in shortest round-trip form.
void save_checkpoint(const std::filesystem::path& path, const ToyLmConfig& cfg,
                     const ModelParams& params);

// Validates every tensor's shape against the stored config, and the stored
// config's dimensions against `expected` when given.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ToyLmConfig>& expected = std::nullopt);

}  // namespace semuq::aseu
