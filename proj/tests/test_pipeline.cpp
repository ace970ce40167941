#include <fmt/format.h>
#include <gtest/gtest.h>

#include <atomic>
#include <numeric>
#include <random>

#include "semuq/cache.hpp"
#include "semuq/checkpoint.hpp"
#include "semuq/error.hpp"
#include "semuq/mock_clients.hpp"
#include "semuq/pipeline.hpp"
#include "support.hpp"

namespace semuq {
namespace {

namespace fs = std::filesystem;

std::string jsonl(const std::vector<std::tuple<std::string, std::string, std::string>>& rows) {
  std::string s;
  for (const auto& [id, q, a] : rows) {
    s += nlohmann::json{{"id", id}, {"question", q}, {"answers", {a}}}.dump() + "\n";
  }
  return s;
}

struct Fixture {
  test::TempDir dir;
  RunConfig cfg;

  explicit Fixture(const std::string& data) {
    test::write_text(dir / "data.jsonl", data);
    cfg.dataset = dir / "data.jsonl";
    cfg.cache_dir = dir / "cache";
    cfg.out_dir = dir / "out";
    cfg.sampling.prompt_template = "{question}";
    cfg.sampling.model_id = "mock";
    cfg.generation.max_concurrency = 3;
  }

  std::vector<QaRecord> records() const { return load_dataset(cfg.dataset); }
};

const std::string kThree = jsonl({{"q1", "Capital of France?", "Paris"},
                                  {"q2", "Capital of Italy?", "Rome"},
                                  {"q3", "Capital of Spain?", "Madrid"}});

MockScript capitals() {
  return {{"Capital of France?", {{"Paris", 1.0}}},
          {"Capital of Italy?", {{"Rome", 1.0}, {"Milan", 1.0}}},
          {"Capital of Spain?", {{"Madrid", 2.0}, {"Seville", 1.0}, {"Barcelona", 1.0}}}};
}

Clients mock_clients(const Fixture& f, std::shared_ptr<MockLlm> llm,
                     MockEntailer::Policy policy = MockEntailer::Policy::kExact) {
  Clients c;
  c.generation = std::make_shared<CachedGenerationClient>(llm, f.cfg.cache_dir);
  c.embedding = std::make_shared<MockEmbedder>(32, 1);
  c.entailment = std::make_shared<MockEntailer>(policy);
  return c;
}

std::map<std::pair<std::string, std::string>, double> scores_by_key(const fs::path& p) {
  std::map<std::pair<std::string, std::string>, double> out;
  for (const auto& r : read_scores_csv(p)) out[{r.record_id, r.method}] = r.value;
  return out;
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(500);
  parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(ParallelFor, RethrowsWorkerErrors) {
  EXPECT_THROW(parallel_for(100, 3,
                            [](std::size_t i) {
                              if (i == 42) throw DataError("bad record");
                            }),
               DataError);
}

TEST(ScoresCsv, RoundTripWithQuotingAndSortedRows) {
  test::TempDir dir;
  std::vector<ScoreRow> rows{{"b", "seu", 0.5}, {"a,\"x\"", "pe", 1.0 / 3.0}, {"a,\"x\"", "lnpe", 2.0}};
  const auto text = render_scores_csv(rows);
  EXPECT_EQ(text.substr(0, text.find('\n')), "record_id,method,value");
  test::write_text(dir / "s.csv", text);
  const auto back = read_scores_csv(dir / "s.csv");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].record_id, "a,\"x\"");
  EXPECT_EQ(back[0].method, "lnpe");
  EXPECT_EQ(back[1].value, 1.0 / 3.0);  // shortest round-trip formatting
  EXPECT_EQ(back[2].record_id, "b");
}

TEST(Generate, PopulatesCacheAndIsIdempotent) {
  Fixture f(kThree);
  auto llm = std::make_shared<MockLlm>(capitals());
  auto clients = mock_clients(f, llm);
  EXPECT_EQ(cmd_generate(f.cfg, clients), kExitOk);
  EXPECT_EQ(test::count_json_files(f.cfg.cache_dir), 3u);
  EXPECT_EQ(llm->calls(), 3);
  EXPECT_FALSE(fs::exists(f.cfg.out_dir / "failures.csv"));

  EXPECT_EQ(cmd_generate(f.cfg, clients), kExitOk);
  EXPECT_EQ(llm->calls(), 3);
}

TEST(Generate, PartialFailureWritesFailuresCsv) {
  Fixture f(kThree);
  auto llm = std::make_shared<MockLlm>(capitals(), MockLlmOptions{.fail_on = {"Italy"}});
  auto clients = mock_clients(f, llm);
  EXPECT_EQ(cmd_generate(f.cfg, clients), kExitPartialFailure);
  EXPECT_EQ(test::count_json_files(f.cfg.cache_dir), 2u);
  const auto failures = test::read_text(f.cfg.out_dir / "failures.csv");
  EXPECT_EQ(std::count(failures.begin(), failures.end(), '\n'), 2);  // header + 1 row
  EXPECT_EQ(failures.rfind("record_id,reason\nq2,", 0), 0u) << failures;
}

TEST(Generate, RequiresAnEndpointOrMock) {
  Fixture f(kThree);
  Clients none;
  EXPECT_THROW(cmd_generate(f.cfg, none), ConfigError);
}

TEST(Score, IdenticalResponsesGiveZero) {
  Fixture f(jsonl({{"q1", "Capital of France?", "Paris"}}));
  auto clients = mock_clients(f, std::make_shared<MockLlm>(capitals()), MockEntailer::Policy::kAlways);
  ASSERT_EQ(cmd_generate(f.cfg, clients), kExitOk);
  f.cfg.methods = {UncertaintyMethod::kSeu, UncertaintyMethod::kSe};
  ASSERT_EQ(cmd_score(f.cfg, clients), kExitOk);
  const auto s = scores_by_key(f.cfg.out_dir / "scores.csv");
  EXPECT_NEAR((s.at({"q1", "seu"})), 0.0, 1e-12);
  EXPECT_EQ((s.at({"q1", "se"})), 0.0);
}

TEST(Score, AlwaysEntailmentGivesZeroSe) {
  Fixture f(kThree);
  auto clients = mock_clients(f, std::make_shared<MockLlm>(capitals()), MockEntailer::Policy::kAlways);
  ASSERT_EQ(cmd_generate(f.cfg, clients), kExitOk);
  f.cfg.methods = {UncertaintyMethod::kSe};
  ASSERT_EQ(cmd_score(f.cfg, clients), kExitOk);
  for (const auto& r : read_scores_csv(f.cfg.out_dir / "scores.csv")) EXPECT_EQ(r.value, 0.0);
}

TEST(Score, SingleTokenResponsesHaveEqualPeAndLnpe) {
  Fixture f(kThree);
  auto clients = mock_clients(f, std::make_shared<MockLlm>(capitals()));
  ASSERT_EQ(cmd_generate(f.cfg, clients), kExitOk);
  f.cfg.methods = {UncertaintyMethod::kPe, UncertaintyMethod::kLnpe};
  ASSERT_EQ(cmd_score(f.cfg, clients), kExitOk);
  const auto s = scores_by_key(f.cfg.out_dir / "scores.csv");
  for (const char* id : {"q1", "q2", "q3"}) {
    EXPECT_DOUBLE_EQ((s.at({id, "pe"})), (s.at({id, "lnpe"}))) << id;
  }
}

TEST(Score, RowsSortedAndRerunIdentical) {
  Fixture f(kThree);
  auto clients = mock_clients(f, std::make_shared<MockLlm>(capitals()));
  ASSERT_EQ(cmd_generate(f.cfg, clients), kExitOk);
  ASSERT_EQ(cmd_score(f.cfg, clients), kExitOk);
  const auto first = test::read_text(f.cfg.out_dir / "scores.csv");
  const auto rows = read_scores_csv(f.cfg.out_dir / "scores.csv");
  ASSERT_EQ(rows.size(), 12u);
  EXPECT_EQ(rows[0].record_id, "q1");
  EXPECT_EQ(rows[0].method, "lnpe");
  EXPECT_EQ(rows[3].method, "seu");
  ASSERT_EQ(cmd_score(f.cfg, clients), kExitOk);
  EXPECT_EQ(test::read_text(f.cfg.out_dir / "scores.csv"), first);
}

TEST(Score, MissingCacheEntryNamesTheRecord) {
  Fixture f(kThree);
  auto clients = mock_clients(f, std::make_shared<MockLlm>(capitals(), MockLlmOptions{.fail_on = {"Spain"}}));
  cmd_generate(f.cfg, clients);
  try {
    cmd_score(f.cfg, clients);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'q3'"), std::string::npos) << e.what();
  }
}

TEST(Score, RejectsAseuAndMissingPrerequisites) {
  Fixture f(kThree);
  f.cfg.methods = {UncertaintyMethod::kAseu};
  EXPECT_THROW(validate(f.cfg, Stage::kScore), ConfigError);
  f.cfg.methods = {UncertaintyMethod::kSe};
  EXPECT_THROW(validate(f.cfg, Stage::kScore), ConfigError);  // no entailment endpoint
  f.cfg.entailment.base_url = "http://localhost:9";
  EXPECT_NO_THROW(validate(f.cfg, Stage::kScore));
  f.cfg.mock = true;
  f.cfg.methods = {UncertaintyMethod::kSeu};
  EXPECT_NO_THROW(validate(f.cfg, Stage::kScore));
}

// Writes one cached generation set per record (first response = `answers[i]`)
// and a scores.csv with the given uncertainties.
void seed_outputs(Fixture& f, const std::vector<std::string>& ids, const std::vector<bool>& correct,
                  const std::vector<double>& uncertainty) {
  std::string data;
  std::vector<ScoreRow> rows;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    data += nlohmann::json{{"id", ids[i]}, {"question", "Q" + ids[i]}, {"answers", {"gold"}}}.dump() + "\n";
    rows.push_back({ids[i], "seu", uncertainty[i]});
    rows.push_back({ids[i], "pe", -uncertainty[i]});
  }
  test::write_text(f.cfg.dataset, data);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    QaRecord rec{ids[i], "Q" + ids[i], std::nullopt, {"gold"}};
    GenerationSet g;
    g.record_id = ids[i];
    g.sampling = f.cfg.sampling;
    g.sampling.m = 2;
    g.responses = {{correct[i] ? "gold" : "lead", {"x"}, {-1.0}}, {"gold", {"x"}, {-1.0}}};
    store_generations(g, cache_key(ids[i], f.cfg.sampling, render_prompt(f.cfg.sampling.prompt_template, rec)),
                      f.cfg.cache_dir);
  }
  fs::create_directories(f.cfg.out_dir);
  test::write_text(f.cfg.out_dir / "scores.csv", render_scores_csv(rows));
}

TEST(Evaluate, PerfectRankingAndYoudenColumns) {
  Fixture f("");
  f.cfg.sampling.m = 2;
  seed_outputs(f, {"a", "b", "c", "d"}, {true, true, false, false}, {0.1, 0.2, 0.8, 0.9});
  ASSERT_EQ(cmd_evaluate(f.cfg), kExitOk);
  const auto report = test::read_text(f.cfg.out_dir / "report.csv");
  EXPECT_EQ(report,
            "method,dataset,model,auroc,fpr_at_j,tpr_at_j,n\n"
            "pe,data,mock,0.0000,0.0000,0.0000,4\n"
            "seu,data,mock,1.0000,0.0000,1.0000,4\n");
  EXPECT_TRUE(fs::exists(f.cfg.out_dir / "roc_seu.svg"));
  EXPECT_TRUE(fs::exists(f.cfg.out_dir / "roc_pe.svg"));
  const auto labels = test::read_text(f.cfg.out_dir / "labels.csv");
  EXPECT_NE(labels.find("a,1,1.0000"), std::string::npos) << labels;
  EXPECT_NE(labels.find("c,0,0.0000"), std::string::npos) << labels;
}

TEST(Evaluate, ShuffledLabelsMatchBruteForceAndSitNearHalf) {
  Fixture f("");
  f.cfg.sampling.m = 2;
  std::mt19937_64 rng(5);
  std::vector<std::string> ids;
  std::vector<bool> correct;
  std::vector<double> u;
  for (int i = 0; i < 400; ++i) {
    ids.push_back(fmt::format("r{:03d}", i));
    correct.push_back(i % 2 == 0);
    u.push_back(std::uniform_real_distribution<double>(0, 1)(rng));
  }
  std::shuffle(correct.begin(), correct.end(), rng);
  seed_outputs(f, ids, correct, u);
  ASSERT_EQ(cmd_evaluate(f.cfg), kExitOk);

  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (correct[i] || !correct[j]) continue;
      wins += u[i] > u[j] ? 1.0 : u[i] == u[j] ? 0.5 : 0.0;
      pairs += 1;
    }
  }
  const auto rows = nlohmann::json::parse(test::read_text(f.cfg.out_dir / "evaluation.json"));
  double seu_auroc = -1;
  for (const auto& r : rows) {
    if (r["method"] == "seu") seu_auroc = r["auroc"];
  }
  EXPECT_NEAR(seu_auroc, wins / pairs, 1e-12);
  EXPECT_NEAR(seu_auroc, 0.5, 0.08);
}

TEST(Evaluate, DegenerateLabelsAreAnError) {
  Fixture f("");
  f.cfg.sampling.m = 2;
  seed_outputs(f, {"a", "b"}, {true, true}, {0.1, 0.2});
  EXPECT_THROW(cmd_evaluate(f.cfg), InvalidArgument);
}

TEST(Evaluate, CorrectnessModes) {
  Fixture f("");
  f.cfg.sampling.m = 2;
  // First response wrong, second right: only "any" counts these correct.
  seed_outputs(f, {"a", "b", "c"}, {false, false, true}, {0.3, 0.2, 0.1});
  f.cfg.correctness = CorrectnessMode::kAny;
  EXPECT_THROW(cmd_evaluate(f.cfg), InvalidArgument);  // all correct
  f.cfg.correctness = CorrectnessMode::kFirst;
  EXPECT_EQ(cmd_evaluate(f.cfg), kExitOk);
  f.cfg.correctness = CorrectnessMode::kMajority;  // 1 of 2 is not a majority
  EXPECT_EQ(cmd_evaluate(f.cfg), kExitOk);
  EXPECT_NE(test::read_text(f.cfg.out_dir / "labels.csv").find("a,0"), std::string::npos);
}

TEST(Report, ReRendersFromEvaluationJson) {
  Fixture f("");
  f.cfg.sampling.m = 2;
  seed_outputs(f, {"a", "b", "c", "d"}, {true, false, true, false}, {0.1, 0.2, 0.3, 0.4});
  ASSERT_EQ(cmd_evaluate(f.cfg), kExitOk);
  const auto report = test::read_text(f.cfg.out_dir / "report.csv");
  const auto svg = test::read_text(f.cfg.out_dir / "roc_seu.svg");
  fs::remove(f.cfg.out_dir / "report.csv");
  fs::remove(f.cfg.out_dir / "roc_seu.svg");
  ASSERT_EQ(cmd_report(f.cfg), kExitOk);
  EXPECT_EQ(test::read_text(f.cfg.out_dir / "report.csv"), report);
  EXPECT_EQ(test::read_text(f.cfg.out_dir / "roc_seu.svg"), svg);
}

RunConfig small_aseu(const test::TempDir& dir, int epochs) {
  RunConfig cfg;
  cfg.out_dir = dir / "out";
  cfg.seed = 4;
  cfg.aseu.grammar.n_unambiguous = 4;
  cfg.aseu.grammar.n_ambiguous = 4;
  cfg.aseu.model.hidden_dim = 12;
  cfg.aseu.model.latent_dim = 6;
  cfg.aseu.model.sigma_e2 = 0.05;
  cfg.aseu.train.epochs = epochs;
  cfg.aseu.train.train_on_prefixes = true;
  return cfg;
}

TEST(AseuStages, TrainWritesTraceAndCheckpoint) {
  test::TempDir dir;
  const auto cfg = small_aseu(dir, 60);
  ASSERT_EQ(cmd_aseu_train(cfg), kExitOk);
  const auto trace = test::read_text(cfg.out_dir / "loss_trace.csv");
  EXPECT_EQ(trace.substr(0, trace.find('\n')), "epoch,elbo,kl,recon,next_token_nll");
  std::istringstream in(trace);
  std::string line, first, last;
  std::getline(in, line);
  std::getline(in, first);
  while (std::getline(in, line)) last = line;
  auto total = [](const std::string& row) {
    std::vector<double> v;
    std::stringstream ss(row);
    for (std::string cell; std::getline(ss, cell, ',');) v.push_back(std::stod(cell));
    return v.at(1) + v.at(4);
  };
  EXPECT_LT(total(last), total(first));
  EXPECT_TRUE(fs::exists(cfg.checkpoint_path()));
}

TEST(AseuStages, ScoringIsDeterministicAndKeepsOtherRows) {
  test::TempDir dir;
  auto cfg = small_aseu(dir, 30);
  ASSERT_EQ(cmd_aseu_train(cfg), kExitOk);
  fs::create_directories(cfg.out_dir);
  test::write_text(cfg.out_dir / "scores.csv", render_scores_csv({{"q1", "seu", 0.25}}));
  ASSERT_EQ(cmd_aseu_score(cfg), kExitOk);
  const auto first = test::read_text(cfg.out_dir / "scores.csv");
  ASSERT_EQ(cmd_aseu_score(cfg), kExitOk);
  EXPECT_EQ(test::read_text(cfg.out_dir / "scores.csv"), first);
  const auto rows = read_scores_csv(cfg.out_dir / "scores.csv");
  EXPECT_EQ(rows.size(), 9u);
  EXPECT_EQ(std::count_if(rows.begin(), rows.end(), [](const ScoreRow& r) { return r.method == "aseu"; }), 8);
  EXPECT_TRUE(fs::exists(cfg.out_dir / "aseu_trace.csv"));
}

TEST(AseuStages, CheckpointShapeMismatch) {
  test::TempDir dir;
  auto cfg = small_aseu(dir, 2);
  ASSERT_EQ(cmd_aseu_train(cfg), kExitOk);
  cfg.aseu.model.hidden_dim = 10;
  EXPECT_THROW(cmd_aseu_score(cfg), ConfigError);
  cfg = small_aseu(dir, 2);
  cfg.aseu.grammar.n_ambiguous = 5;  // vocabulary grows
  EXPECT_THROW(cmd_aseu_score(cfg), ConfigError);
}

TEST(AseuStages, TrainingLowersUncertaintyOnUnambiguousPrompts) {
  test::TempDir dir;
  const auto cfg = small_aseu(dir, 150);
  ASSERT_EQ(cmd_aseu_train(cfg), kExitOk);
  const auto setup = make_aseu_setup(cfg);
  const auto trained = aseu::load_checkpoint(cfg.checkpoint_path(), setup.model);
  auto fresh = aseu::ModelParams::init(setup.model);
  fresh.out_b[setup.model.eos_token] = -50.0;  // untrained models may stop at once

  double trained_sum = 0, fresh_sum = 0;
  int n = 0;
  for (const auto& p : setup.grammar.prompts()) {
    if (p.ambiguous) continue;
    aseu::ScoringConfig s;
    s.seed = 11;
    s.max_new_tokens = static_cast<int>(p.continuations[0].size());
    trained_sum += aseu::score_sequence(p.tokens, trained.params, setup.model, s).raw;
    fresh_sum += aseu::score_sequence(p.tokens, fresh, setup.model, s).raw;
    ++n;
  }
  EXPECT_LT(trained_sum / n, fresh_sum / n);
}

}  // namespace
}  // namespace semuq
