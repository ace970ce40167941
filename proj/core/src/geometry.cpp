#include "semuq/geometry.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "semuq/error.hpp"

namespace semuq {

EmbeddingVector::EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw InvalidArgument("embedding must have dimension >= 1");
  double sq = 0.0;
  for (double v : values_) {
    if (!std::isfinite(v)) throw InvalidArgument("embedding has a non-finite entry");
    sq += v * v;
  }
  norm_ = std::sqrt(sq);
  if (!(norm_ > 0.0)) throw InvalidArgument("embedding has zero norm");
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    throw InvalidArgument(fmt::format("embedding dimension mismatch: {} vs {}", a.dim(), b.dim()));
  }
  double dot = 0.0;
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) dot += av[i] * bv[i];
  return std::clamp(dot / (a.norm() * b.norm()), -1.0, 1.0);
}

double mean_pairwise_similarity(std::span<const EmbeddingVector> embeddings) {
  const std::size_t m = embeddings.size();
  if (m < 2) {
    throw InvalidArgument(fmt::format("need at least 2 embeddings, got {}", m));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) sum += cosine(embeddings[i], embeddings[j]);
  }
  const double pairs = 0.5 * static_cast<double>(m) * static_cast<double>(m - 1);
  return std::clamp(sum / pairs, -1.0, 1.0);
}

double seu(std::span<const EmbeddingVector> embeddings) {
  return 1.0 - mean_pairwise_similarity(embeddings);
}

std::vector<std::string> normalize_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (char c : data) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

EmbeddingVector hashed_bag_embedding(std::span<const std::string> tokens, std::size_t dim,
                                     std::uint64_t seed) {
  if (dim == 0) throw InvalidArgument("embedding dimension must be >= 1");
  std::vector<double> acc(dim, 0.0);
  auto add_token = [&](std::string_view tok) {
    std::mt19937_64 gen(fnv1a64(tok, 0xcbf29ce484222325ULL ^ seed));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& a : acc) a += normal(gen);
  };
  if (tokens.empty()) {
    add_token("\x01<empty>");
  } else {
    for (const auto& t : tokens) add_token(t);
  }
  double sq = 0.0;
  for (double a : acc) sq += a * a;
  if (sq == 0.0) acc[0] = 1.0, sq = 1.0;
  const double inv = 1.0 / std::sqrt(sq);
  for (auto& a : acc) a *= inv;
  return EmbeddingVector(std::move(acc));
}

}  // namespace semuq
