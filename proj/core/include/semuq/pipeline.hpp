#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semuq/aseu.hpp"
#include "semuq/clients.hpp"
#include "semuq/entropy.hpp"
#include "semuq/grammar.hpp"
#include "semuq/report.hpp"

namespace semuq {

enum class CorrectnessMode { kFirst, kAny, kMajority };

std::string_view to_string(CorrectnessMode m);
std::optional<CorrectnessMode> parse_correctness_mode(std::string_view s);

struct AseuRunConfig {
  aseu::ToyLmConfig model;  // vocab_size is taken from the grammar
  aseu::GrammarConfig grammar;
  aseu::TrainOptions train;
  aseu::ScoringConfig scoring;
  std::filesystem::path checkpoint;  // defaults to <out>/aseu_checkpoint.json
};

struct RunConfig {
  std::filesystem::path dataset;
  std::string dataset_name;  // defaults to the dataset file stem
  std::filesystem::path cache_dir = "cache";
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 0;
  bool mock = false;

  EndpointConfig generation;
  EndpointConfig embedding;
  EndpointConfig entailment;

  SamplingConfig sampling;
  std::vector<UncertaintyMethod> methods{UncertaintyMethod::kLnpe, UncertaintyMethod::kPe,
                                         UncertaintyMethod::kSe, UncertaintyMethod::kSeu};
  double rouge_threshold = 0.3;
  CorrectnessMode correctness = CorrectnessMode::kFirst;
  ClusterWeighting se_weighting;

  AseuRunConfig aseu;

  bool wants(UncertaintyMethod m) const;
  std::string effective_dataset_name() const;
  std::filesystem::path checkpoint_path() const;
  int workers() const { return std::max(1, generation.max_concurrency); }
};

enum class Stage { kGenerate, kScore, kEvaluate, kReport, kAseuTrain, kAseuScore };

// Throws ConfigError when the stage's prerequisites are missing. Endpoint
// checks can be skipped when the caller supplies its own clients.
void validate(const RunConfig& cfg, Stage stage, bool check_endpoints = true);

struct Clients {
  std::shared_ptr<GenerationClient> generation;
  std::shared_ptr<EmbeddingClient> embedding;
  std::shared_ptr<EntailmentOracle> entailment;
};

// HTTP clients (or seeded mocks under cfg.mock), each behind its disk cache
// in cfg.cache_dir. Clients whose endpoint is not configured stay null.
Clients make_clients(const RunConfig& cfg, std::span<const QaRecord> records);

// Runs fn(i) for i in [0, n) on at most `workers` threads. The first
// exception is rethrown after all workers finish.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

struct ScoreRow {
  std::string record_id;
  std::string method;
  double value;
};

std::string render_scores_csv(std::vector<ScoreRow> rows);
std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path);

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitPartialFailure = 1;
inline constexpr int kExitInvalidConfig = 2;

// Populates the generation cache; writes <out>/failures.csv on partial failure.
int cmd_generate(const RunConfig& cfg, Clients& clients);
// Writes <out>/scores.csv from cached generations.
int cmd_score(const RunConfig& cfg, Clients& clients);
// Labels correctness, writes labels.csv, evaluation.json, report.csv, ROC SVGs.
int cmd_evaluate(const RunConfig& cfg);
// Re-renders report.csv and SVGs from <out>/evaluation.json.
int cmd_report(const RunConfig& cfg);
// Trains on the synthetic grammar; writes the checkpoint and loss_trace.csv.
int cmd_aseu_train(const RunConfig& cfg);
// Scores every grammar prompt into scores.csv (other methods' rows are kept)
// and writes per-step similarities to aseu_trace.csv.
int cmd_aseu_score(const RunConfig& cfg);

// Grammar, embedder and model config shared by aseu-train / aseu-score.
struct AseuSetup {
  aseu::SyntheticGrammar grammar;
  aseu::ReferenceEmbedder embedder;
  aseu::ToyLmConfig model;
};
AseuSetup make_aseu_setup(const RunConfig& cfg);

}  // namespace semuq
