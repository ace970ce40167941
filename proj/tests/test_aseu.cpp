#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gradcheck.hpp"
#include "semuq/aseu.hpp"
#include "semuq/checkpoint.hpp"
#include "semuq/error.hpp"
#include "semuq/grammar.hpp"
#include "support.hpp"

namespace semuq::aseu {
namespace {

constexpr double kLn2Pi = 1.8378770664093453;

ToyLmConfig tiny(int D = 2, int H = 4, int V = 6, int layers = 1) {
  ToyLmConfig c;
  c.vocab_size = V;
  c.hidden_dim = H;
  c.latent_dim = D;
  c.layers = layers;
  c.sigma_e2 = 1.0;
  c.seed = 3;
  return c;
}

LatentPosterior q_of(std::vector<double> mu, std::vector<double> lv) {
  return {Eigen::Map<VectorXd>(mu.data(), mu.size()), Eigen::Map<VectorXd>(lv.data(), lv.size())};
}

// --- Gaussian pieces -------------------------------------------------------

TEST(GaussianKl, ClosedFormCases) {
  EXPECT_EQ(gaussian_kl(q_of({0, 0}, {0, 0})), 0.0);
  EXPECT_DOUBLE_EQ(gaussian_kl(q_of({1, 0}, {0, 0})), 0.5);
  // 1/2 (4 - 1 - ln 4)
  EXPECT_NEAR(gaussian_kl(q_of({0}, {std::log(4.0)})), 0.5 * (4 - 1 - std::log(4.0)), 1e-15);
  EXPECT_NEAR(gaussian_kl(q_of({0}, {std::log(4.0)})), 0.8069, 5e-5);
}

TEST(GaussianKl, NonNegative) {
  std::mt19937_64 g(1);
  for (int t = 0; t < 200; ++t) {
    const auto q = q_of({standard_normal(g), standard_normal(g)}, {standard_normal(g), 2 * standard_normal(g)});
    EXPECT_GE(gaussian_kl(q), 0.0);
  }
}

TEST(GaussianEntropy, MatchesClosedForm) {
  const auto q = q_of({5, -1}, {0.5, -2});
  EXPECT_NEAR(gaussian_entropy(q), 0.5 * 2 * (1 + std::log(2 * std::numbers::pi)) + 0.5 * (0.5 - 2), 1e-12);
}

TEST(ReconLoglik, ConstantAndResidualTerms) {
  const auto cfg = tiny();
  auto p = ModelParams::zeros(cfg);
  VectorXd e(2);
  e << 0.3, -0.7;
  p.dec_b2 = e;  // decoder is constant e
  const VectorXd z = VectorXd::Zero(2);
  EXPECT_NEAR(recon_loglik(e, z, p, 1.0), -kLn2Pi, 1e-12);
  VectorXd off = e;
  off[0] += 1.0;
  off[1] -= 1.0;  // squared residual 2
  EXPECT_NEAR(recon_loglik(off, z, p, 1.0), -1.0 - kLn2Pi, 1e-12);
  EXPECT_NEAR(recon_loglik(e, z, p, 2.0) - recon_loglik(e, z, p, 1.0), -std::log(2.0), 1e-12);
}

TEST(Posterior, LogVarIsClamped) {
  const auto cfg = tiny();
  auto p = ModelParams::zeros(cfg);
  p.lv_b.setConstant(-1e6);
  const auto q = posterior(p, VectorXd::Zero(cfg.hidden_dim));
  EXPECT_EQ(q.log_var.minCoeff(), kLogVarMin);
  p.lv_b.setConstant(1e6);
  EXPECT_EQ(posterior(p, VectorXd::Zero(cfg.hidden_dim)).log_var.maxCoeff(), kLogVarMax);
}

TEST(StandardNormal, MomentsAndReproducibility) {
  std::mt19937_64 a(7), b(7);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = standard_normal(a);
    EXPECT_EQ(x, standard_normal(b));
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

// --- ELBO ------------------------------------------------------------------

TEST(ElboLoss, PriorPosteriorAndExactDecoder) {
  const auto cfg = tiny();
  auto p = ModelParams::zeros(cfg);  // psi outputs mu = 0, log_var = 0
  VectorXd e(2);
  e << 1.0, 2.0;
  p.dec_b2 = e;
  const std::vector<int> seq{1, 2, 0};
  std::mt19937_64 rng(1);
  // KL = 0 and recon = -ln(2 pi) for every z, so the loss is ln(2 pi).
  EXPECT_NEAR(elbo_loss(seq, e, p, cfg, 5, rng), kLn2Pi, 1e-12);
}

TEST(ElboLoss, DeterministicGivenSeed) {
  const auto cfg = tiny(3, 5, 7);
  const auto p = test::perturbed_params(cfg, 2);
  const VectorXd e = VectorXd::Ones(3).normalized();
  const std::vector<int> seq{1, 4, 2, 0};
  std::mt19937_64 a(9), b(9);
  EXPECT_EQ(elbo_loss(seq, e, p, cfg, 3, a), elbo_loss(seq, e, p, cfg, 3, b));
}

TEST(ElboLoss, MonteCarloVarianceShrinks) {
  const auto cfg = tiny(3, 5, 7);
  const auto p = test::perturbed_params(cfg, 4);
  const VectorXd e = VectorXd::Ones(3).normalized();
  const std::vector<int> seq{1, 4, 2, 0};
  auto variance = [&](int mc) {
    double s = 0, s2 = 0;
    const int n = 400;
    for (int i = 0; i < n; ++i) {
      std::mt19937_64 rng(1000 + i);
      const double x = elbo_loss(seq, e, p, cfg, mc, rng);
      s += x;
      s2 += x * x;
    }
    return s2 / n - (s / n) * (s / n);
  };
  const double v1 = variance(1), v16 = variance(16);
  EXPECT_GT(v1, 0.0);
  EXPECT_NEAR(v16 / v1, 1.0 / 16.0, 0.03);
}

TEST(Objective, MatchesElboLossWithoutExtraTerms) {
  const auto cfg = tiny(3, 5, 7);
  const auto p = test::perturbed_params(cfg, 5);
  TrainingExample ex{{1, 4, 2, 0}, 2, VectorXd::Ones(3).normalized()};
  ObjectiveOptions o;
  o.mc_samples = 2;
  o.nll_weight = 0.0;
  std::mt19937_64 a(3), b(3);
  const auto terms = objective(ex, p, cfg, o, a, nullptr);
  EXPECT_NEAR(terms.loss, elbo_loss(ex.tokens, ex.target, p, cfg, 2, b), 1e-12);
  EXPECT_NEAR(terms.elbo_loss(), terms.loss, 1e-12);
}

TEST(Objective, RejectsBadInputs) {
  const auto cfg = tiny();
  const auto p = ModelParams::init(cfg);
  std::mt19937_64 rng(1);
  TrainingExample wrong_dim{{1, 0}, 1, VectorXd::Ones(5)};
  EXPECT_THROW(objective(wrong_dim, p, cfg, {}, rng, nullptr), InvalidArgument);
  TrainingExample empty{{}, 1, VectorXd::Ones(2)};
  EXPECT_THROW(objective(empty, p, cfg, {}, rng, nullptr), InvalidArgument);
}

class GradientCheck : public ::testing::TestWithParam<int> {};

TEST_P(GradientCheck, ElboMatchesFiniteDifferences) {
  const int draw = GetParam();
  auto cfg = tiny(4, 8, 7, 1 + draw % 2);
  cfg.sigma_e2 = 0.5;
  cfg.seed = 100 + draw;
  auto p = test::perturbed_params(cfg, draw);
  std::mt19937_64 tg(draw);
  VectorXd target(4);
  for (int i = 0; i < 4; ++i) target[i] = standard_normal(tg);
  TrainingExample ex{{1, 3, 2, 5, 0}, 2, target.normalized()};
  ObjectiveOptions o;
  o.mc_samples = 2;
  o.nll_weight = 0.0;
  auto grad = ModelParams::zeros(cfg);
  std::mt19937_64 rng(draw + 50);
  objective(ex, p, cfg, o, rng, &grad);
  const auto r = test::finite_difference_check(p, grad, [&](const ModelParams& q) {
    std::mt19937_64 same(draw + 50);
    return elbo_loss(ex.tokens, ex.target, q, cfg, 2, same);
  });
  EXPECT_GT(r.checked, 100u);
  EXPECT_LT(r.max_rel[0], 1e-4) << "theta";
  EXPECT_LT(r.max_rel[1], 1e-4) << "psi";
  EXPECT_LT(r.max_rel[2], 1e-4) << "omega";
}

TEST_P(GradientCheck, FullObjectiveWithPrefixAndNll) {
  const int draw = GetParam();
  auto cfg = tiny(3, 6, 7, 2);
  cfg.seed = 200 + draw;
  auto p = test::perturbed_params(cfg, draw + 7);
  TrainingExample ex{{1, 3, 2, 5, 4, 0}, 2, VectorXd::Ones(3).normalized()};
  ObjectiveOptions o;
  o.mc_samples = 3;
  o.nll_weight = 0.7;
  o.prefix_len = 3;
  auto grad = ModelParams::zeros(cfg);
  std::mt19937_64 rng(draw);
  objective(ex, p, cfg, o, rng, &grad);
  const auto r = test::finite_difference_check(p, grad, [&](const ModelParams& q) {
    std::mt19937_64 same(draw);
    return objective(ex, q, cfg, o, same, nullptr).loss;
  });
  EXPECT_LT(r.worst(), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Draws, GradientCheck, ::testing::Range(0, 4));

// --- Training --------------------------------------------------------------

TEST(Train, SingleExampleLossDecreases) {
  auto cfg = tiny(2, 8, 6);
  cfg.learning_rate = 0.02;
  std::vector<TrainingExample> corpus{{{1, 3, 4, 0}, 2, VectorXd::Ones(2).normalized()}};
  TrainOptions o;
  o.epochs = 200;
  const auto r = train(corpus, cfg, o);
  ASSERT_EQ(r.trace.size(), 201u);
  EXPECT_EQ(r.trace.front().epoch, 0);
  EXPECT_LT(r.trace.back().elbo + r.trace.back().next_token_nll,
            r.trace.front().elbo + r.trace.front().next_token_nll);
  EXPECT_LT(r.trace.back().next_token_nll, r.trace.front().next_token_nll);
}

TEST(Train, ZeroLearningRateKeepsTraceConstant) {
  auto cfg = tiny(2, 6, 6);
  cfg.learning_rate = 0.0;
  std::vector<TrainingExample> corpus{{{1, 3, 4, 0}, 2, VectorXd::Ones(2).normalized()},
                                      {{2, 3, 5, 0}, 2, VectorXd::Ones(2).normalized()}};
  TrainOptions o;
  o.epochs = 5;
  const auto r = train(corpus, cfg, o);
  for (const auto& e : r.trace) {
    EXPECT_EQ(e.elbo, r.trace.front().elbo);
    EXPECT_EQ(e.next_token_nll, r.trace.front().next_token_nll);
  }
}

TEST(Train, FrozenBackboneOnlyMovesHeads) {
  auto cfg = tiny(2, 6, 6);
  std::vector<TrainingExample> corpus{{{1, 3, 4, 0}, 2, VectorXd::Ones(2).normalized()}};
  TrainOptions o;
  o.epochs = 10;
  o.train_backbone = false;
  const auto init = ModelParams::init(cfg);
  const auto r = train(corpus, cfg, o, init);
  EXPECT_EQ(r.params.embedding, init.embedding);
  EXPECT_EQ(r.params.out_w, init.out_w);
  EXPECT_EQ(r.params.layers[0].u_h, init.layers[0].u_h);
  EXPECT_NE(r.params.mu_w, init.mu_w);
  EXPECT_NE(r.params.dec_w2, init.dec_w2);
}

TEST(Train, DeterministicGivenSeed) {
  auto cfg = tiny(2, 6, 6);
  std::vector<TrainingExample> corpus{{{1, 3, 4, 0}, 2, VectorXd::Ones(2).normalized()},
                                      {{2, 3, 5, 0}, 2, -VectorXd::Ones(2).normalized()}};
  TrainOptions o;
  o.epochs = 20;
  o.train_on_prefixes = true;
  const auto a = train(corpus, cfg, o);
  const auto b = train(corpus, cfg, o);
  EXPECT_EQ(a.params.mu_w, b.params.mu_w);
  EXPECT_EQ(a.trace.back().elbo, b.trace.back().elbo);
}

TEST(Train, DivergenceIsReported) {
  auto cfg = tiny(2, 6, 6);
  cfg.learning_rate = 1e300;
  std::vector<TrainingExample> corpus{{{1, 3, 4, 0}, 2, VectorXd::Ones(2).normalized()}};
  TrainOptions o;
  o.epochs = 50;
  EXPECT_THROW(train(corpus, cfg, o), TrainingDiverged);
}

// --- Scoring ---------------------------------------------------------------

TEST(StepSimilarity, WorkedExamples) {
  std::vector<VectorXd> same(4, VectorXd::Ones(3));
  EXPECT_DOUBLE_EQ(step_similarity(same), 1.0);
  VectorXd a(2), b(2), c(2);
  a << 1, 0;
  b << 0, 1;
  c << 1 / std::sqrt(2.0), 1 / std::sqrt(2.0);
  EXPECT_DOUBLE_EQ(step_similarity(std::vector<VectorXd>{a, b}), 0.0);
  EXPECT_NEAR(step_similarity(std::vector<VectorXd>{a, b, c}), 0.4714, 5e-5);
  EXPECT_NEAR(step_similarity(std::vector<VectorXd>{7 * a, 0.1 * b, 3 * c}), 0.4714, 5e-5);
}

TEST(Median, OddAndEven) {
  EXPECT_DOUBLE_EQ(median({0.9, 0.2, 0.5}), 0.5);
  EXPECT_DOUBLE_EQ(median({0.8, 0.4}), 0.6);
  EXPECT_THROW(median({}), InvalidArgument);
}

TEST(AseuFromTrace, WorkedExamples) {
  const std::vector<double> t{0.2, 0.5, 0.9};
  EXPECT_DOUBLE_EQ(aseu_from_trace(t, LengthNorm::kNone), 0.5);
  EXPECT_NEAR(aseu_from_trace(t, LengthNorm::kDivideByLength), 0.5 / 3, 1e-15);
  EXPECT_NEAR(aseu_from_trace(t, LengthNorm::kDivideByLength), 0.1667, 5e-5);
  EXPECT_NEAR(aseu_from_trace(t, LengthNorm::kDivideByLogLength), 0.5 / std::log(4.0), 1e-15);
  const std::vector<double> even{0.4, 0.8};
  EXPECT_NEAR(aseu_from_trace(even, LengthNorm::kNone), 0.4, 1e-15);
  EXPECT_THROW(aseu_from_trace(std::vector<double>{}, LengthNorm::kNone), InvalidArgument);
}

TEST(LengthNorm, NamesRoundTrip) {
  for (auto n : {LengthNorm::kNone, LengthNorm::kDivideByLength, LengthNorm::kDivideByLogLength}) {
    EXPECT_EQ(parse_length_norm(to_string(n)), n);
  }
  EXPECT_FALSE(parse_length_norm("sqrt").has_value());
}

// All-zero backbone with a fixed output bias: greedy decoding always picks
// `token`, so only max_new_tokens stops it.
ModelParams constant_predictor(const ToyLmConfig& cfg, int token) {
  auto p = ModelParams::zeros(cfg);
  p.out_b.setConstant(-1.0);
  p.out_b[token] = 1.0;
  return p;
}

TEST(ScoreSequence, CollapsedPosteriorGivesZero) {
  const auto cfg = tiny(3, 4, 6);
  auto p = constant_predictor(cfg, 2);
  p.mu_b.setConstant(5.0);
  p.lv_b.setConstant(-1e9);  // clamped to the minimum
  ScoringConfig s;
  s.max_new_tokens = 4;
  for (auto n : {LengthNorm::kNone, LengthNorm::kDivideByLength, LengthNorm::kDivideByLogLength}) {
    s.length_norm = n;
    const auto r = score_sequence(std::vector<int>{1}, p, cfg, s);
    ASSERT_EQ(r.generated.size(), 4u);
    for (double st : r.step_similarity) EXPECT_NEAR(st, 1.0, 1e-4);
    EXPECT_NEAR(r.raw, 0.0, 1e-4);
    EXPECT_NEAR(r.value, 0.0, 1e-4);
  }
}

TEST(ScoreSequence, ImmediateEosIsRejected) {
  const auto cfg = tiny(3, 4, 6);
  const auto p = constant_predictor(cfg, cfg.eos_token);
  EXPECT_THROW(score_sequence(std::vector<int>{1}, p, cfg, {}), InvalidArgument);
  EXPECT_THROW(score_sequence(std::vector<int>{}, constant_predictor(cfg, 2), cfg, {}), InvalidArgument);
}

TEST(ScoreSequence, DeterministicAndInRange) {
  const auto cfg = tiny(4, 8, 9);
  for (int draw = 0; draw < 20; ++draw) {
    auto p = test::perturbed_params(cfg, draw);
    p.out_b[cfg.eos_token] = -50.0;  // never stop early
    ScoringConfig s;
    s.seed = draw;
    s.max_new_tokens = 6;
    const auto a = score_sequence(std::vector<int>{1, 2}, p, cfg, s);
    const auto b = score_sequence(std::vector<int>{1, 2}, p, cfg, s);
    EXPECT_EQ(a.step_similarity, b.step_similarity);
    EXPECT_EQ(a.generated, b.generated);
    EXPECT_GE(a.raw, 0.0);
    EXPECT_LE(a.raw, 2.0);
    EXPECT_EQ(a.step_similarity.size(), 6u);
  }
}

TEST(ScoreSequence, ScalingTheLatentLeavesSimilarityUnchanged) {
  // Scaling mu and the standard deviation together scales every sample.
  const auto cfg = tiny(4, 8, 9);
  auto p = test::perturbed_params(cfg, 3);
  p.out_b[cfg.eos_token] = -50.0;
  ScoringConfig s;
  s.max_new_tokens = 5;
  const auto base = score_sequence(std::vector<int>{1}, p, cfg, s);
  auto scaled = p;
  const double k = 3.0;
  scaled.mu_w *= k;
  scaled.mu_b *= k;
  scaled.lv_b.array() += 2 * std::log(k);
  const auto r = score_sequence(std::vector<int>{1}, scaled, cfg, s);
  ASSERT_EQ(r.step_similarity.size(), base.step_similarity.size());
  for (std::size_t i = 0; i < r.step_similarity.size(); ++i) {
    EXPECT_NEAR(r.step_similarity[i], base.step_similarity[i], 1e-9);
  }
}

// --- Grammar and checkpoints -------------------------------------------------

TEST(Grammar, LayoutAndCorpus) {
  GrammarConfig g;
  g.n_unambiguous = 3;
  g.n_ambiguous = 2;
  g.carrier_len = 2;
  g.copies = 2;
  SyntheticGrammar grammar(g);
  // EOS, ?, 2 carriers, 5 questions, 3 + 4 content tokens
  EXPECT_EQ(grammar.vocab_size(), 2 + 2 + 5 + 7);
  ASSERT_EQ(grammar.prompts().size(), 5u);
  EXPECT_EQ(grammar.prompts()[0].id, "A00");
  EXPECT_EQ(grammar.prompts()[4].id, "B01");
  EXPECT_EQ(grammar.function_tokens(), (std::set<int>{0, 1, 2, 3}));

  ReferenceEmbedder emb(4, 1, grammar.function_tokens());
  const auto corpus = grammar.corpus(emb);
  EXPECT_EQ(corpus.size(), 5u * 4u);
  for (const auto& p : grammar.prompts()) {
    EXPECT_EQ(p.continuations.size(), p.ambiguous ? 2u : 1u);
  }
  const auto& b = grammar.prompts()[3];
  const VectorXd e0 = emb.embed(b.continuations[0]), e1 = emb.embed(b.continuations[1]);
  EXPECT_LT(e0.dot(e1), 0.999);
  EXPECT_NEAR(e0.norm(), 1.0, 1e-12);
  for (const auto& ex : corpus) {
    EXPECT_EQ(ex.tokens.back(), SyntheticGrammar::kEos);
    EXPECT_EQ(ex.prompt_len, 2);
  }
}

TEST(Grammar, FunctionTokensDoNotChangeTheEmbedding) {
  ReferenceEmbedder emb(8, 5, {0, 1, 2});
  EXPECT_EQ(emb.embed(std::vector<int>{2, 7}), emb.embed(std::vector<int>{7}));
  EXPECT_NE(emb.embed(std::vector<int>{7}), emb.embed(std::vector<int>{8}));
}

TEST(Checkpoint, RoundTripIsExact) {
  test::TempDir dir;
  auto cfg = tiny(3, 5, 8, 2);
  const auto p = test::perturbed_params(cfg, 9);
  save_checkpoint(dir / "c.json", cfg, p);
  const auto back = load_checkpoint(dir / "c.json", cfg);
  EXPECT_EQ(back.config, cfg);
  std::vector<MatrixXd> a, b;
  p.for_each([&](const std::string&, ParamGroup, auto m) { a.emplace_back(m); });
  back.params.for_each([&](const std::string&, ParamGroup, auto m) { b.emplace_back(m); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Checkpoint, ShapeMismatchIsAConfigError) {
  test::TempDir dir;
  const auto cfg = tiny(3, 5, 8);
  save_checkpoint(dir / "c.json", cfg, ModelParams::init(cfg));
  auto other = cfg;
  other.hidden_dim = 6;
  EXPECT_THROW(load_checkpoint(dir / "c.json", other), ConfigError);
}

TEST(Checkpoint, CorruptFilesAreDataErrors) {
  test::TempDir dir;
  test::write_text(dir / "bad.json", "{\"format\": \"something else\"}");
  EXPECT_THROW(load_checkpoint(dir / "bad.json"), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.json"), DataError);

  const auto cfg = tiny(3, 5, 8);
  save_checkpoint(dir / "c.json", cfg, ModelParams::init(cfg));
  auto j = nlohmann::json::parse(test::read_text(dir / "c.json"));
  j["tensors"]["mu_w"]["data"].erase(0);
  test::write_text(dir / "c.json", j.dump());
  EXPECT_THROW(load_checkpoint(dir / "c.json"), DataError);
}

}  // namespace
}  // namespace semuq::aseu
