#include "semuq/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "semuq/cache.hpp"
#include "semuq/error.hpp"

namespace semuq::aseu {

using nlohmann::json;

namespace {
constexpr const char* kFormat = "semuq-aseu-checkpoint";
}

void save_checkpoint(const std::filesystem::path& path, const ToyLmConfig& cfg,
                     const ModelParams& params) {
  json tensors = json::object();
  params.for_each([&](const std::string& name, ParamGroup g, Eigen::Map<const MatrixXd> m) {
    // Row-major data so the file reads naturally.
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    tensors[name] = json{{"group", to_string(g)}, {"shape", {m.rows(), m.cols()}}, {"data", data}};
  });
  const json doc{{"format", kFormat}, {"version", kCheckpointVersion}, {"config", cfg},
                 {"tensors", tensors}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write checkpoint '{}'", path.string()));
  out << doc.dump() << '\n';
  if (!out) throw Error(fmt::format("short write to checkpoint '{}'", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ToyLmConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open checkpoint '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  json doc;
  try {
    doc = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw DataError(fmt::format("checkpoint '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  if (doc.value("format", "") != kFormat) {
    throw DataError(fmt::format("'{}' is not a semuq ASEU checkpoint", path.string()));
  }
  if (doc.value("version", 0) != kCheckpointVersion) {
    throw DataError(fmt::format("unsupported checkpoint version {}", doc.value("version", 0)));
  }
  Checkpoint ck;
  try {
    ck.config = doc.at("config").get<ToyLmConfig>();
  } catch (const json::exception& e) {
    throw DataError(fmt::format("checkpoint config: {}", e.what()));
  }
  ck.config.validate();
  if (expected) {
    const auto& x = *expected;
    if (x.vocab_size != ck.config.vocab_size || x.hidden_dim != ck.config.hidden_dim ||
        x.latent_dim != ck.config.latent_dim || x.layers != ck.config.layers) {
      throw ConfigError(fmt::format(
          "checkpoint shape mismatch: checkpoint has vocab {} hidden {} latent {} layers {}, "
          "config expects vocab {} hidden {} latent {} layers {}",
          ck.config.vocab_size, ck.config.hidden_dim, ck.config.latent_dim, ck.config.layers,
          x.vocab_size, x.hidden_dim, x.latent_dim, x.layers));
    }
  }

  ck.params = ModelParams::zeros(ck.config);
  const json& tensors = doc.at("tensors");
  std::size_t seen = 0;
  ck.params.for_each([&](const std::string& name, ParamGroup, Eigen::Map<MatrixXd> m) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError(fmt::format("checkpoint is missing tensor '{}'", name));
    const auto shape = it->at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols()) {
      throw DataError(fmt::format("tensor '{}' has shape [{}] but the config implies [{}, {}]",
                                  name, fmt::join(shape, ", "), m.rows(), m.cols()));
    }
    const auto data = it->at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != m.size()) {
      throw DataError(fmt::format("tensor '{}' has {} values, expected {}", name, data.size(), m.size()));
    }
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = data[k++];
    ++seen;
  });
  if (seen != tensors.size()) {
    throw DataError(fmt::format("checkpoint has {} tensors, the config defines {}", tensors.size(), seen));
  }
  return ck;
}

}  // namespace semuq::aseu
