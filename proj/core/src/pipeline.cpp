#include "semuq/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "semuq/cache.hpp"
#include "semuq/checkpoint.hpp"
#include "semuq/error.hpp"
#include "semuq/evaluation.hpp"
#include "semuq/geometry.hpp"
#include "semuq/mock_clients.hpp"

namespace semuq {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(CorrectnessMode m) {
  switch (m) {
    case CorrectnessMode::kFirst: return "first";
    case CorrectnessMode::kAny: return "any";
    case CorrectnessMode::kMajority: return "majority";
  }
  return "?";
}

std::optional<CorrectnessMode> parse_correctness_mode(std::string_view s) {
  if (s == "first") return CorrectnessMode::kFirst;
  if (s == "any") return CorrectnessMode::kAny;
  if (s == "majority") return CorrectnessMode::kMajority;
  return std::nullopt;
}

bool RunConfig::wants(UncertaintyMethod m) const {
  return std::find(methods.begin(), methods.end(), m) != methods.end();
}

std::string RunConfig::effective_dataset_name() const {
  return dataset_name.empty() ? dataset.stem().string() : dataset_name;
}

fs::path RunConfig::checkpoint_path() const {
  return aseu.checkpoint.empty() ? out_dir / "aseu_checkpoint.json" : aseu.checkpoint;
}

namespace {

void require_dataset(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("no dataset given");
  if (!fs::exists(cfg.dataset)) {
    throw ConfigError(fmt::format("dataset '{}' does not exist", cfg.dataset.string()));
  }
}

void require_sampling(const RunConfig& cfg) {
  try {
    cfg.sampling.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

void require_endpoint(const EndpointConfig& ep, std::string_view what) {
  if (ep.base_url.empty()) {
    throw ConfigError(fmt::format("{} endpoint required (or use --mock)", what));
  }
  ep.validate();
}

void require_aseu(const RunConfig& cfg) {
  const auto& g = cfg.aseu.grammar;
  if (g.n_unambiguous < 1 || g.n_ambiguous < 1 || g.carrier_len < 0 || g.copies < 1) {
    throw ConfigError("grammar sizes must be positive");
  }
  auto m = cfg.aseu.model;
  m.vocab_size = std::max(m.vocab_size, 2);
  try {
    m.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (cfg.aseu.train.epochs < 0 || cfg.aseu.train.batch_size < 1 ||
      cfg.aseu.train.mc_samples < 1) {
    throw ConfigError("aseu training options out of range");
  }
  if (cfg.aseu.scoring.k_samples < 2 || cfg.aseu.scoring.max_new_tokens < 1) {
    throw ConfigError("aseu scoring needs k >= 2 and max_new_tokens >= 1");
  }
}

}  // namespace

void validate(const RunConfig& cfg, Stage stage, bool check_endpoints) {
  const bool endpoints = check_endpoints && !cfg.mock;
  switch (stage) {
    case Stage::kGenerate:
      require_dataset(cfg);
      require_sampling(cfg);
      if (endpoints) require_endpoint(cfg.generation, "generation");
      break;
    case Stage::kScore:
      require_dataset(cfg);
      require_sampling(cfg);
      if (cfg.methods.empty()) throw ConfigError("no methods requested");
      if (cfg.wants(UncertaintyMethod::kAseu)) {
        throw ConfigError("aseu is scored by the aseu-score subcommand");
      }
      if (endpoints && cfg.wants(UncertaintyMethod::kSeu)) {
        require_endpoint(cfg.embedding, "seu needs an embedding");
      }
      if (endpoints && cfg.wants(UncertaintyMethod::kSe)) {
        require_endpoint(cfg.entailment, "se needs an entailment");
      }
      break;
    case Stage::kEvaluate:
      require_dataset(cfg);
      require_sampling(cfg);
      if (!(cfg.rouge_threshold >= 0.0 && cfg.rouge_threshold <= 1.0)) {
        throw ConfigError(fmt::format("rouge threshold must be in [0, 1], got {}",
                                      cfg.rouge_threshold));
      }
      break;
    case Stage::kReport:
      break;
    case Stage::kAseuTrain:
    case Stage::kAseuScore:
      require_aseu(cfg);
      break;
  }
}

Clients make_clients(const RunConfig& cfg, std::span<const QaRecord> records) {
  Clients c;
  std::shared_ptr<GenerationClient> gen;
  std::shared_ptr<EmbeddingClient> emb;
  std::shared_ptr<EntailmentOracle> nli;
  std::string emb_ns = "mock-embedder";
  std::string nli_ns = "mock-entailer";
  if (cfg.mock) {
    MockLlmOptions opts;
    opts.seed = cfg.seed;
    gen = std::make_shared<MockLlm>(
        build_mock_world(records, cfg.sampling.prompt_template, cfg.seed), opts);
    emb = std::make_shared<MockEmbedder>(256, cfg.seed);
    nli = std::make_shared<MockEntailer>(MockEntailer::Policy::kTokenSubset);
    emb_ns += std::to_string(cfg.seed);
  } else {
    if (!cfg.generation.base_url.empty()) {
      gen = std::make_shared<HttpGenerationClient>(std::make_shared<JsonEndpoint>(
          cfg.generation, std::shared_ptr<HttpTransport>(make_http_transport(cfg.generation))));
    }
    if (!cfg.embedding.base_url.empty()) {
      emb = std::make_shared<HttpEmbeddingClient>(std::make_shared<JsonEndpoint>(
          cfg.embedding, std::shared_ptr<HttpTransport>(make_http_transport(cfg.embedding))));
      emb_ns = cfg.embedding.base_url + "|" + cfg.embedding.model;
    }
    if (!cfg.entailment.base_url.empty()) {
      nli = std::make_shared<HttpEntailmentClient>(std::make_shared<JsonEndpoint>(
          cfg.entailment, std::shared_ptr<HttpTransport>(make_http_transport(cfg.entailment))));
      nli_ns = cfg.entailment.base_url;
    }
  }
  if (gen) c.generation = std::make_shared<CachedGenerationClient>(gen, cfg.cache_dir);
  if (emb) {
    c.embedding = std::make_shared<CachedEmbeddingClient>(emb, cfg.cache_dir / "embeddings", emb_ns);
  }
  if (nli) {
    c.entailment = std::make_shared<CachedEntailmentOracle>(nli, cfg.cache_dir / "entailment", nli_ns);
  }
  return c;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto count = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (count <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr first;
  std::mutex mu;
  {
    std::vector<std::jthread> pool;
    pool.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n && !stop; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!first) first = std::current_exception();
            stop = true;
          }
        }
      });
    }
  }
  if (first) std::rethrow_exception(first);
}

namespace {

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

void write_file(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << contents;
  if (!out) throw Error(fmt::format("write to '{}' failed", path.string()));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Failure {
  std::string record_id;
  std::string reason;
};

void write_failures(const fs::path& out_dir, std::vector<Failure> failures) {
  const auto path = out_dir / "failures.csv";
  if (failures.empty()) {
    std::error_code ec;
    fs::remove(path, ec);
    return;
  }
  std::sort(failures.begin(), failures.end(),
            [](const Failure& a, const Failure& b) { return a.record_id < b.record_id; });
  std::string s = "record_id,reason\n";
  for (const auto& f : failures) s += csv_field(f.record_id) + "," + csv_field(f.reason) + "\n";
  write_file(path, s);
}

GenerationSet cached_set(const RunConfig& cfg, const QaRecord& rec) {
  const auto prompt = render_prompt(cfg.sampling.prompt_template, rec);
  auto set = load_generations(cache_key(rec.id, cfg.sampling, prompt), cfg.cache_dir);
  if (!set) {
    throw DataError(fmt::format("no cached generations for record '{}'; run generate first",
                                rec.id));
  }
  return *std::move(set);
}

std::string model_name(const RunConfig& cfg) {
  return cfg.sampling.model_id.empty() ? std::string("unknown") : cfg.sampling.model_id;
}

}  // namespace

std::string render_scores_csv(std::vector<ScoreRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const ScoreRow& a, const ScoreRow& b) {
    return std::tie(a.record_id, a.method) < std::tie(b.record_id, b.method);
  });
  std::string s = "record_id,method,value\n";
  for (const auto& r : rows) {
    s += fmt::format("{},{},{}\n", csv_field(r.record_id), r.method, r.value);
  }
  return s;
}

std::vector<ScoreRow> read_scores_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<ScoreRow> rows;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != "record_id,method,value") {
        throw DataError(fmt::format("{}: unexpected header '{}'", path.string(), line));
      }
      continue;
    }
    auto f = split_csv_line(line);
    if (f.size() != 3) {
      throw DataError(fmt::format("{}:{}: expected 3 fields, got {}", path.string(), lineno,
                                  f.size()));
    }
    try {
      rows.push_back({f[0], f[1], std::stod(f[2])});
    } catch (const std::logic_error&) {
      throw DataError(fmt::format("{}:{}: bad value '{}'", path.string(), lineno, f[2]));
    }
  }
  return rows;
}

int cmd_generate(const RunConfig& cfg, Clients& clients) {
  validate(cfg, Stage::kGenerate, false);
  if (!clients.generation) throw ConfigError("no generation client");
  const auto records = load_dataset(cfg.dataset);
  std::mutex mu;
  std::vector<Failure> failures;
  std::atomic<std::size_t> done{0};
  parallel_for(records.size(), cfg.workers(), [&](std::size_t i) {
    const auto& rec = records[i];
    try {
      clients.generation->generate(rec.id, render_prompt(cfg.sampling.prompt_template, rec),
                                   cfg.sampling);
    } catch (const std::exception& e) {
      spdlog::warn("record '{}' failed: {}", rec.id, e.what());
      std::lock_guard lock(mu);
      failures.push_back({rec.id, e.what()});
    }
    const auto n = ++done;
    if (n % 50 == 0 || n == records.size()) {
      spdlog::info("generate: {}/{} records", n, records.size());
    }
  });
  write_failures(cfg.out_dir, failures);
  if (!failures.empty()) {
    spdlog::error("{} of {} records failed; see {}", failures.size(), records.size(),
                  (cfg.out_dir / "failures.csv").string());
    return kExitPartialFailure;
  }
  return kExitOk;
}

int cmd_score(const RunConfig& cfg, Clients& clients) {
  validate(cfg, Stage::kScore, false);
  if (cfg.wants(UncertaintyMethod::kSeu) && !clients.embedding) {
    throw ConfigError("seu needs an embedding client");
  }
  if (cfg.wants(UncertaintyMethod::kSe) && !clients.entailment) {
    throw ConfigError("se needs an entailment client");
  }
  const auto records = load_dataset(cfg.dataset);
  // Fail fast, naming the first record without generations.
  std::vector<GenerationSet> sets;
  sets.reserve(records.size());
  for (const auto& rec : records) sets.push_back(cached_set(cfg, rec));

  std::vector<std::vector<ScoreRow>> per_record(records.size());
  std::atomic<std::size_t> done{0};
  parallel_for(records.size(), cfg.workers(), [&](std::size_t i) {
    const auto& rec = records[i];
    const auto& set = sets[i];
    std::vector<std::string> texts;
    for (const auto& r : set.responses) texts.push_back(r.text);
    auto& out = per_record[i];
    for (auto m : cfg.methods) {
      double v = 0.0;
      switch (m) {
        case UncertaintyMethod::kSeu:
          v = seu(clients.embedding->embed(texts));
          break;
        case UncertaintyMethod::kSe: {
          const auto cl = cluster(texts, rec.question, *clients.entailment);
          v = semantic_entropy(cluster_distribution(cl, set.responses, cfg.se_weighting));
          break;
        }
        case UncertaintyMethod::kPe: v = predictive_entropy(set); break;
        case UncertaintyMethod::kLnpe: v = lnpe(set); break;
        case UncertaintyMethod::kAseu: break;  // rejected by validate()
      }
      out.push_back({rec.id, std::string(to_string(m)), v});
    }
    const auto n = ++done;
    if (n % 50 == 0 || n == records.size()) spdlog::info("score: {}/{} records", n, records.size());
  });

  std::vector<ScoreRow> rows;
  for (auto& r : per_record) rows.insert(rows.end(), r.begin(), r.end());
  write_file(cfg.out_dir / "scores.csv", render_scores_csv(std::move(rows)));
  return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg) {
  validate(cfg, Stage::kEvaluate);
  const auto records = load_dataset(cfg.dataset);
  const auto scores = read_scores_csv(cfg.out_dir / "scores.csv");

  std::map<std::string, bool, std::less<>> correct;
  std::string labels = "record_id,correct,rouge_l\n";
  for (const auto& rec : records) {
    const auto set = cached_set(cfg, rec);
    auto best_rouge = [&](const std::string& text) {
      double best = 0.0;
      for (const auto& ref : rec.references) best = std::max(best, rouge_l(text, ref));
      return best;
    };
    std::size_t n_correct = 0;
    for (const auto& r : set.responses) {
      n_correct += label_correct(r.text, rec.references, cfg.rouge_threshold) ? 1 : 0;
    }
    bool ok = false;
    switch (cfg.correctness) {
      case CorrectnessMode::kFirst:
        ok = label_correct(set.responses.front().text, rec.references, cfg.rouge_threshold);
        break;
      case CorrectnessMode::kAny: ok = n_correct > 0; break;
      case CorrectnessMode::kMajority: ok = 2 * n_correct > set.responses.size(); break;
    }
    correct[rec.id] = ok;
    labels += fmt::format("{},{},{:.4f}\n", csv_field(rec.id), ok ? 1 : 0,
                          best_rouge(set.responses.front().text));
  }
  write_file(cfg.out_dir / "labels.csv", labels);

  std::map<std::string, std::vector<LabeledScore>> by_method;
  std::size_t unknown = 0;
  for (const auto& s : scores) {
    auto it = correct.find(s.record_id);
    if (it == correct.end()) {
      ++unknown;
      continue;
    }
    by_method[s.method].push_back({s.record_id, s.value, it->second});
  }
  if (unknown > 0) spdlog::warn("{} score rows name records outside the dataset; ignored", unknown);
  if (by_method.empty()) throw DataError("scores.csv has no rows for this dataset");

  std::vector<EvaluationRow> rows;
  for (const auto& [method, ls] : by_method) {
    rows.push_back(evaluate_method(method, cfg.effective_dataset_name(), model_name(cfg), ls));
  }
  write_file(cfg.out_dir / "evaluation.json", json(rows).dump(2) + "\n");
  emit_report(rows, cfg.out_dir);
  return kExitOk;
}

int cmd_report(const RunConfig& cfg) {
  const auto path = cfg.out_dir / "evaluation.json";
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
  const auto rows = j.get<std::vector<EvaluationRow>>();
  emit_report(rows, cfg.out_dir);
  return kExitOk;
}

AseuSetup make_aseu_setup(const RunConfig& cfg) {
  auto gcfg = cfg.aseu.grammar;
  gcfg.seed = cfg.seed;
  aseu::SyntheticGrammar grammar(gcfg);
  auto model = cfg.aseu.model;
  model.vocab_size = grammar.vocab_size();
  model.seed = cfg.seed;
  aseu::ReferenceEmbedder embedder(model.latent_dim, cfg.seed ^ 0x9e3779b97f4a7c15ULL,
                                   grammar.function_tokens());
  return {std::move(grammar), std::move(embedder), model};
}

int cmd_aseu_train(const RunConfig& cfg) {
  validate(cfg, Stage::kAseuTrain);
  const auto setup = make_aseu_setup(cfg);
  const auto corpus = setup.grammar.corpus(setup.embedder);
  spdlog::info("aseu-train: {} sequences, vocab {}, {} parameters", corpus.size(),
               setup.model.vocab_size, aseu::ModelParams::init(setup.model).parameter_count());
  const auto result = aseu::train(corpus, setup.model, cfg.aseu.train);

  std::string trace = "epoch,elbo,kl,recon,next_token_nll\n";
  for (const auto& e : result.trace) {
    trace += fmt::format("{},{},{},{},{}\n", e.epoch, e.elbo, e.kl, e.recon, e.next_token_nll);
  }
  write_file(cfg.out_dir / "loss_trace.csv", trace);
  const auto ckpt = cfg.checkpoint_path();
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  aseu::save_checkpoint(ckpt, setup.model, result.params);
  spdlog::info("aseu-train: wrote {}", ckpt.string());
  return kExitOk;
}

int cmd_aseu_score(const RunConfig& cfg) {
  validate(cfg, Stage::kAseuScore);
  const auto setup = make_aseu_setup(cfg);
  const auto ckpt = aseu::load_checkpoint(cfg.checkpoint_path(), setup.model);

  const auto& prompts = setup.grammar.prompts();
  std::vector<std::optional<aseu::AseuScore>> results(prompts.size());
  std::vector<std::optional<std::string>> errors(prompts.size());
  parallel_for(prompts.size(), cfg.workers(), [&](std::size_t i) {
    auto scfg = cfg.aseu.scoring;
    scfg.seed = cfg.seed + i;
    try {
      results[i] = aseu::score_sequence(prompts[i].tokens, ckpt.params, ckpt.config, scfg);
    } catch (const InvalidArgument& e) {
      errors[i] = e.what();
    }
  });

  // Keep rows from other methods; replace previous aseu rows.
  const auto path = cfg.out_dir / "scores.csv";
  std::vector<ScoreRow> rows;
  if (fs::exists(path)) {
    for (auto& r : read_scores_csv(path)) {
      if (r.method != "aseu") rows.push_back(std::move(r));
    }
  }
  std::string trace = "record_id,step,similarity\n";
  std::vector<Failure> failures;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (!results[i]) {
      failures.push_back({prompts[i].id, *errors[i]});
      continue;
    }
    rows.push_back({prompts[i].id, "aseu", results[i]->value});
    const auto& sims = results[i]->step_similarity;
    for (std::size_t t = 0; t < sims.size(); ++t) {
      trace += fmt::format("{},{},{}\n", prompts[i].id, t + 1, sims[t]);
    }
  }
  write_file(path, render_scores_csv(std::move(rows)));
  write_file(cfg.out_dir / "aseu_trace.csv", trace);
  write_failures(cfg.out_dir, failures);
  return failures.empty() ? kExitOk : kExitPartialFailure;
}

}  // namespace semuq
