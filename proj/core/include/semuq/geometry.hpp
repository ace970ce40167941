#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace semuq {

// A finite, non-zero real vector. Construction validates both properties so
// every downstream cosine is well defined.
class EmbeddingVector {
 public:
  explicit EmbeddingVector(std::vector<double> values);

  std::size_t dim() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double norm() const { return norm_; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool operator==(const EmbeddingVector& o) const { return values_ == o.values_; }

 private:
  std::vector<double> values_;
  double norm_;
};

// Clamped to [-1, 1]. Throws InvalidArgument on dimension mismatch.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

// Mean of cos(e_i, e_j) over all unordered pairs i < j.
double mean_pairwise_similarity(std::span<const EmbeddingVector> embeddings);

// Semantic embedding uncertainty: 1 - mean pairwise cosine. Range [0, 2].
double seu(std::span<const EmbeddingVector> embeddings);

// Lowercases, drops ASCII punctuation, splits on whitespace.
std::vector<std::string> normalize_tokens(std::string_view text);

// Deterministic bag-of-tokens embedding: every token hashes (with the seed)
// to a fixed standard-normal direction in R^dim; the directions are summed
// and normalized. An empty bag maps to the direction of a reserved token.
EmbeddingVector hashed_bag_embedding(std::span<const std::string> tokens, std::size_t dim,
                                     std::uint64_t seed);

// Stable 64-bit FNV-1a, independent of std::hash.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace semuq
