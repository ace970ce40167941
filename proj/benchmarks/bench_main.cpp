#include <benchmark/benchmark.h>

#include <random>

#include "semuq/aseu.hpp"
#include "semuq/entropy.hpp"
#include "semuq/evaluation.hpp"
#include "semuq/geometry.hpp"
#include "semuq/mock_clients.hpp"

namespace {

using namespace semuq;

std::vector<EmbeddingVector> random_embeddings(std::size_t m, std::size_t d) {
  std::mt19937_64 g(1);
  std::normal_distribution<double> n;
  std::vector<EmbeddingVector> out;
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> v(d);
    for (auto& x : v) x = n(g);
    out.emplace_back(std::move(v));
  }
  return out;
}

void BM_Seu(benchmark::State& state) {
  const auto e = random_embeddings(static_cast<std::size_t>(state.range(0)), 768);
  for (auto _ : state) benchmark::DoNotOptimize(seu(e));
}
BENCHMARK(BM_Seu)->Arg(5)->Arg(10)->Arg(20);

void BM_Auroc(benchmark::State& state) {
  std::mt19937_64 g(2);
  std::vector<LabeledScore> s;
  for (int i = 0; i < state.range(0); ++i) {
    s.push_back({std::to_string(i), std::uniform_real_distribution<double>()(g), (g() & 1) != 0});
  }
  for (auto _ : state) benchmark::DoNotOptimize(auroc(s));
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(10000);

void BM_RougeL(benchmark::State& state) {
  const std::string a = "the quick brown fox jumps over the lazy dog near the river bank today";
  const std::string b = "a quick brown dog jumps over the lazy fox by the river bank";
  for (auto _ : state) benchmark::DoNotOptimize(rouge_l(a, b));
}
BENCHMARK(BM_RougeL);

void BM_Cluster(benchmark::State& state) {
  std::vector<std::string> texts;
  for (int i = 0; i < state.range(0); ++i) texts.push_back("answer number " + std::to_string(i % 4));
  MockEntailer oracle(MockEntailer::Policy::kTokenSubset);
  for (auto _ : state) benchmark::DoNotOptimize(cluster(texts, "q", oracle));
}
BENCHMARK(BM_Cluster)->Arg(5)->Arg(10)->Arg(20);

void BM_AseuObjective(benchmark::State& state) {
  aseu::ToyLmConfig cfg;
  cfg.vocab_size = 40;
  cfg.hidden_dim = static_cast<int>(state.range(0));
  cfg.latent_dim = 8;
  const auto p = aseu::ModelParams::init(cfg);
  auto grad = aseu::ModelParams::zeros(cfg);
  aseu::TrainingExample ex{{5, 1, 2, 3, 20, 0}, 2, aseu::VectorXd::Ones(8).normalized()};
  std::mt19937_64 rng(3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(aseu::objective(ex, p, cfg, {}, rng, &grad));
  }
}
BENCHMARK(BM_AseuObjective)->Arg(16)->Arg(64);

void BM_AseuScore(benchmark::State& state) {
  aseu::ToyLmConfig cfg;
  cfg.vocab_size = 40;
  const auto p = aseu::ModelParams::init(cfg);
  const std::vector<int> prompt{5, 1};
  aseu::ScoringConfig sc;
  sc.max_new_tokens = 8;
  for (auto _ : state) {
    try {
      benchmark::DoNotOptimize(aseu::score_sequence(prompt, p, cfg, sc));
    } catch (const InvalidArgument&) {
      // immediate EOS on an untrained model
    }
  }
}
BENCHMARK(BM_AseuScore);

}  // namespace

BENCHMARK_MAIN();
