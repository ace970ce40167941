#include "cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <iostream>
#include <map>

#include "semuq/dataset.hpp"
#include "semuq/error.hpp"
#include "semuq/pipeline.hpp"

namespace semuq::cli {

namespace {

struct Flags {
  std::string prompt = "brief";
  std::string prompt_template;
  std::vector<std::string> methods{"lnpe", "pe", "se", "seu"};
  std::string correctness = "first";
  std::string se_mode = "likelihood";
  std::string length_norm = "divide_by_length";
  double time_budget_s = 0.0;
  bool freeze_backbone = false;
  std::string log_level = "info";
  bool verbose = false;
};

void add_endpoint(CLI::App& app, const std::string& name, EndpointConfig& ep) {
  app.add_option("--" + name + "-url", ep.base_url, "Base URL of the " + name + " endpoint");
}

// Shared transport settings apply to every endpoint.
struct Transport {
  double timeout_s = 60.0;
  int max_retries = 3;
  int max_concurrency = 4;
  double backoff_base_s = 1.0;
  double backoff_factor = 2.0;
};

RunConfig finish(RunConfig cfg, const Flags& f, const Transport& t, const std::string& embed_model) {
  if (!f.prompt_template.empty()) {
    cfg.sampling.prompt_template = f.prompt_template;
  } else if (auto p = prompts::preset(f.prompt)) {
    cfg.sampling.prompt_template = *p;
  } else {
    throw ConfigError(fmt::format("unknown prompt preset '{}'", f.prompt));
  }
  if (cfg.mock && cfg.sampling.model_id.empty()) cfg.sampling.model_id = "mock-llm";

  cfg.methods.clear();
  for (const auto& m : f.methods) {
    auto parsed = parse_method(m);
    if (!parsed) throw ConfigError(fmt::format("unknown method '{}'", m));
    if (!cfg.wants(*parsed)) cfg.methods.push_back(*parsed);
  }
  auto c = parse_correctness_mode(f.correctness);
  if (!c) throw ConfigError(fmt::format("unknown correctness mode '{}'", f.correctness));
  cfg.correctness = *c;
  if (f.se_mode == "likelihood") {
    cfg.se_weighting.mode = ClusterMode::kLikelihood;
  } else if (f.se_mode == "discrete") {
    cfg.se_weighting.mode = ClusterMode::kDiscrete;
  } else {
    throw ConfigError(fmt::format("unknown se mode '{}'", f.se_mode));
  }
  auto ln = aseu::parse_length_norm(f.length_norm);
  if (!ln) throw ConfigError(fmt::format("unknown length normalization '{}'", f.length_norm));
  cfg.aseu.scoring.length_norm = *ln;
  cfg.aseu.train.train_backbone = !f.freeze_backbone;
  cfg.aseu.train.time_budget = std::chrono::duration<double>(f.time_budget_s);

  const auto key = EndpointConfig::api_key_from_env();
  for (EndpointConfig* ep : {&cfg.generation, &cfg.embedding, &cfg.entailment}) {
    ep->timeout_s = t.timeout_s;
    ep->max_retries = t.max_retries;
    ep->max_concurrency = t.max_concurrency;
    ep->backoff_base_s = t.backoff_base_s;
    ep->backoff_factor = t.backoff_factor;
    ep->api_key = key;
  }
  cfg.embedding.model = embed_model;
  if (!(t.max_concurrency >= 1)) throw ConfigError("max-concurrency must be >= 1");
  return cfg;
}

void setup_logging(const Flags& f) {
  auto logger = spdlog::get("semuq");
  if (!logger) logger = spdlog::stderr_color_mt("semuq");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  auto level = spdlog::level::from_str(f.log_level);
  if (f.verbose) level = spdlog::level::debug;
  spdlog::set_level(level);
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Semantic uncertainty scoring for question answering"};
  app.name("semuq");
  app.set_config("--config", "", "Read options from a TOML/INI file; flags override it");
  app.require_subcommand(1);
  app.fallthrough();

  RunConfig cfg;
  Flags f;
  Transport t;
  std::string embed_model;

  app.add_option("--dataset", cfg.dataset, "Line-delimited JSON QA dataset");
  app.add_option("--dataset-name", cfg.dataset_name, "Name used in reports (default: file stem)");
  app.add_option("--cache", cfg.cache_dir, "Cache directory")->capture_default_str();
  app.add_option("--out", cfg.out_dir, "Output directory")->capture_default_str();
  app.add_option("--seed", cfg.seed, "Seed for mocks, grammar and ASEU")->capture_default_str();
  app.add_flag("--mock", cfg.mock, "Use seeded mock clients instead of HTTP endpoints");
  app.add_option("--log-level", f.log_level, "trace, debug, info, warn, error")
      ->capture_default_str();
  app.add_flag("-v,--verbose", f.verbose, "Debug logging");

  app.add_option("--model", cfg.sampling.model_id, "Generation model name");
  app.add_option("--prompt", f.prompt, "Prompt preset: brief, few-words, short-reply, brief-context")
      ->capture_default_str();
  app.add_option("--prompt-template", f.prompt_template, "Custom template with {question}");
  app.add_option("-m,--samples", cfg.sampling.m, "Responses per question")->capture_default_str();
  app.add_option("--temperature", cfg.sampling.temperature)->capture_default_str();
  app.add_option("--max-tokens", cfg.sampling.max_tokens)->capture_default_str();

  app.add_option("--methods", f.methods, "Subset of seu, se, pe, lnpe")->delimiter(',');
  app.add_option("--rouge-threshold", cfg.rouge_threshold, "Correct iff Rouge-L is above this")
      ->capture_default_str();
  app.add_option("--correctness", f.correctness, "first, any or majority")->capture_default_str();
  app.add_option("--se-mode", f.se_mode, "likelihood or discrete")->capture_default_str();
  app.add_flag("--se-length-normalized", cfg.se_weighting.length_normalized,
               "Per-token log-probabilities for SE cluster weights");

  add_endpoint(app, "generation", cfg.generation);
  add_endpoint(app, "embedding", cfg.embedding);
  add_endpoint(app, "entailment", cfg.entailment);
  app.add_option("--embedding-model", embed_model, "Model name sent to the embedding endpoint");
  app.add_option("--timeout", t.timeout_s, "Per-request timeout (s)")->capture_default_str();
  app.add_option("--max-retries", t.max_retries)->capture_default_str();
  app.add_option("--max-concurrency", t.max_concurrency, "In-flight requests and worker count")
      ->capture_default_str();
  app.add_option("--backoff-base", t.backoff_base_s)->capture_default_str();
  app.add_option("--backoff-factor", t.backoff_factor)->capture_default_str();

  auto& a = cfg.aseu;
  app.add_option("--aseu-hidden", a.model.hidden_dim)->capture_default_str();
  app.add_option("--aseu-latent", a.model.latent_dim)->capture_default_str();
  app.add_option("--aseu-layers", a.model.layers)->capture_default_str();
  app.add_option("--aseu-sigma-e2", a.model.sigma_e2)->capture_default_str();
  app.add_option("--aseu-lr", a.model.learning_rate)->capture_default_str();
  app.add_option("--aseu-epochs", a.train.epochs)->capture_default_str();
  app.add_option("--aseu-batch", a.train.batch_size)->capture_default_str();
  app.add_option("--aseu-mc", a.train.mc_samples, "Monte Carlo samples per ELBO")
      ->capture_default_str();
  app.add_option("--aseu-nll-weight", a.train.nll_weight)->capture_default_str();
  app.add_flag("--aseu-prefixes", a.train.train_on_prefixes, "Add an ELBO term on a random prefix");
  app.add_flag("--aseu-freeze-backbone", f.freeze_backbone, "Keep the language model fixed");
  app.add_option("--aseu-time-budget", f.time_budget_s, "Training wall-time cap in seconds");
  app.add_option("--aseu-k", a.scoring.k_samples, "Latent samples per step")->capture_default_str();
  app.add_option("--aseu-length-norm", f.length_norm, "none, divide_by_length, divide_by_log_length")
      ->capture_default_str();
  app.add_option("--aseu-max-new-tokens", a.scoring.max_new_tokens)->capture_default_str();
  app.add_option("--aseu-checkpoint", a.checkpoint, "Default: <out>/aseu_checkpoint.json");
  app.add_option("--grammar-unambiguous", a.grammar.n_unambiguous)->capture_default_str();
  app.add_option("--grammar-ambiguous", a.grammar.n_ambiguous)->capture_default_str();
  app.add_option("--grammar-carrier", a.grammar.carrier_len)->capture_default_str();
  app.add_option("--grammar-copies", a.grammar.copies)->capture_default_str();

  const std::map<std::string, std::string> commands{
      {"generate", "Sample M responses per record into the cache"},
      {"score", "Compute uncertainty scores into scores.csv"},
      {"evaluate", "Label correctness, compute AUROC and the ROC report"},
      {"report", "Re-render report.csv and ROC SVGs from evaluation.json"},
      {"aseu-train", "Train the toy ASEU model on the synthetic grammar"},
      {"aseu-score", "Score grammar prompts with a trained ASEU checkpoint"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalidConfig;
  }

  setup_logging(f);
  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    cfg = finish(std::move(cfg), f, t, embed_model);
    if (cmd == "generate" || cmd == "score") {
      if (cmd == "generate") validate(cfg, Stage::kGenerate);
      else validate(cfg, Stage::kScore);
      const auto records = load_dataset(cfg.dataset);
      auto clients = make_clients(cfg, records);
      return cmd == "generate" ? cmd_generate(cfg, clients) : cmd_score(cfg, clients);
    }
    if (cmd == "evaluate") return cmd_evaluate(cfg);
    if (cmd == "report") return cmd_report(cfg);
    if (cmd == "aseu-train") return cmd_aseu_train(cfg);
    return cmd_aseu_score(cfg);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitInvalidConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", cmd, e.what());
    return kExitPartialFailure;
  }
}

}  // namespace semuq::cli
