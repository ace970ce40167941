#include "semuq/aseu.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "semuq/geometry.hpp"

namespace semuq::aseu {

namespace {

VectorXd tanh_v(const VectorXd& v) { return v.array().tanh().matrix(); }

// KL - mean recon for one hidden state. With grad set, accumulates omega and
// psi gradients and adds dL/dh to *d_hidden.
double elbo_head(const ModelParams& p, const VectorXd& hidden, const VectorXd& e, double sigma_e2,
                 int mc_samples, std::mt19937_64& rng, ModelParams* grad, VectorXd* d_hidden,
                 double& kl_out, double& recon_out) {
  const Eigen::Index D = p.mu_b.size();
  if (e.size() != D) {
    throw InvalidArgument(fmt::format("target embedding has dimension {}, latent is {}", e.size(), D));
  }
  if (mc_samples < 1) throw InvalidArgument("mc_samples must be >= 1");

  const VectorXd a = tanh_v(p.enc_w * hidden + p.enc_b);
  const VectorXd mu = p.mu_w * a + p.mu_b;
  const VectorXd lv_raw = p.lv_w * a + p.lv_b;
  const VectorXd lv = lv_raw.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
  const VectorXd sd = (0.5 * lv.array()).exp().matrix();

  const double kl = 0.5 * (lv.array().exp() + mu.array().square() - 1.0 - lv.array()).sum();
  VectorXd g_mu, g_lv;
  if (grad) {
    g_mu = mu;
    g_lv = 0.5 * (lv.array().exp() - 1.0).matrix();
  }

  const double log_norm = 0.5 * static_cast<double>(D) * std::log(2.0 * std::numbers::pi * sigma_e2);
  const double inv_s = 1.0 / static_cast<double>(mc_samples);
  double recon_sum = 0.0;
  VectorXd eps(D);
  for (int s = 0; s < mc_samples; ++s) {
    for (Eigen::Index d = 0; d < D; ++d) eps[d] = standard_normal(rng);
    const VectorXd z = mu + sd.cwiseProduct(eps);
    const VectorXd u = tanh_v(p.dec_w1 * z + p.dec_b1);
    const VectorXd y = p.dec_w2 * u + p.dec_b2;
    recon_sum += -(e - y).squaredNorm() / (2.0 * sigma_e2) - log_norm;
    if (grad) {
      const VectorXd g_y = (y - e) * (inv_s / sigma_e2);
      grad->dec_w2.noalias() += g_y * u.transpose();
      grad->dec_b2 += g_y;
      const VectorXd g_pre = (p.dec_w2.transpose() * g_y).cwiseProduct((1.0 - u.array().square()).matrix());
      grad->dec_w1.noalias() += g_pre * z.transpose();
      grad->dec_b1 += g_pre;
      const VectorXd g_z = p.dec_w1.transpose() * g_pre;
      g_mu += g_z;
      g_lv += 0.5 * g_z.cwiseProduct(eps).cwiseProduct(sd);
    }
  }
  const double recon = recon_sum * inv_s;

  if (grad) {
    // The clamp passes gradient only strictly inside its range.
    for (Eigen::Index d = 0; d < D; ++d) {
      if (!(lv_raw[d] > kLogVarMin && lv_raw[d] < kLogVarMax)) g_lv[d] = 0.0;
    }
    grad->mu_w.noalias() += g_mu * a.transpose();
    grad->mu_b += g_mu;
    grad->lv_w.noalias() += g_lv * a.transpose();
    grad->lv_b += g_lv;
    const VectorXd g_a = p.mu_w.transpose() * g_mu + p.lv_w.transpose() * g_lv;
    const VectorXd g_pre = g_a.cwiseProduct((1.0 - a.array().square()).matrix());
    grad->enc_w.noalias() += g_pre * hidden.transpose();
    grad->enc_b += g_pre;
    *d_hidden += p.enc_w.transpose() * g_pre;
  }
  kl_out = kl;
  recon_out = recon;
  return kl - recon;
}

}  // namespace

double standard_normal(std::mt19937_64& rng) {
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;          // [0, 1)
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

LatentPosterior posterior(const ModelParams& p, const VectorXd& hidden) {
  const VectorXd a = tanh_v(p.enc_w * hidden + p.enc_b);
  LatentPosterior q;
  q.mu = p.mu_w * a + p.mu_b;
  q.log_var = (p.lv_w * a + p.lv_b).cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
  return q;
}

VectorXd decode(const ModelParams& p, const VectorXd& z) {
  return p.dec_w2 * tanh_v(p.dec_w1 * z + p.dec_b1) + p.dec_b2;
}

double gaussian_kl(const LatentPosterior& q) {
  if (q.mu.size() != q.log_var.size()) throw InvalidArgument("posterior mu/log_var size mismatch");
  return 0.5 * (q.log_var.array().exp() + q.mu.array().square() - 1.0 - q.log_var.array()).sum();
}

double gaussian_entropy(const LatentPosterior& q) {
  const double D = static_cast<double>(q.log_var.size());
  return 0.5 * (D * (1.0 + std::log(2.0 * std::numbers::pi)) + q.log_var.sum());
}

double recon_loglik(const VectorXd& e, const VectorXd& z, const ModelParams& p, double sigma_e2) {
  const VectorXd y = decode(p, z);
  if (y.size() != e.size()) {
    throw InvalidArgument(fmt::format("decoder output {} vs embedding {}", y.size(), e.size()));
  }
  const double D = static_cast<double>(e.size());
  return -(e - y).squaredNorm() / (2.0 * sigma_e2) - 0.5 * D * std::log(2.0 * std::numbers::pi * sigma_e2);
}

LossTerms objective(const TrainingExample& ex, const ModelParams& p, const ToyLmConfig& cfg,
                    const ObjectiveOptions& opts, std::mt19937_64& rng, ModelParams* grad) {
  const std::size_t T = ex.tokens.size();
  if (T == 0) throw InvalidArgument("training sequence is empty");
  const ForwardTrace tr = forward(p, ex.tokens);
  const Eigen::Index H = p.embedding.cols();
  std::vector<VectorXd> d_top;
  if (grad) d_top.assign(T, VectorXd::Zero(H));

  LossTerms out;
  out.loss = elbo_head(p, tr.top(T - 1), ex.target, cfg.sigma_e2, opts.mc_samples, rng, grad,
                       grad ? &d_top[T - 1] : nullptr, out.kl, out.recon);
  if (opts.prefix_len) {
    const int len = *opts.prefix_len;
    if (len < 1 || static_cast<std::size_t>(len) > T) {
      throw InvalidArgument(fmt::format("prefix length {} outside [1, {}]", len, T));
    }
    double kl = 0.0, recon = 0.0;
    out.loss += elbo_head(p, tr.top(static_cast<std::size_t>(len) - 1), ex.target, cfg.sigma_e2,
                          opts.mc_samples, rng, grad,
                          grad ? &d_top[static_cast<std::size_t>(len) - 1] : nullptr, kl, recon);
  }

  if (T > 1) {
    const double inv = 1.0 / static_cast<double>(T - 1);
    double nll = 0.0;
    for (std::size_t t = 0; t + 1 < T; ++t) {
      const VectorXd logits = next_token_logits(p, tr.top(t));
      const double mx = logits.maxCoeff();
      const VectorXd ex_l = (logits.array() - mx).exp().matrix();
      const double z = ex_l.sum();
      const int target = ex.tokens[t + 1];
      nll += (std::log(z) + mx - logits[target]) * inv;
      if (grad && opts.nll_weight != 0.0) {
        VectorXd g = ex_l / z;
        g[target] -= 1.0;
        g *= opts.nll_weight * inv;
        grad->out_w.noalias() += g * tr.top(t).transpose();
        grad->out_b += g;
        d_top[t].noalias() += p.out_w.transpose() * g;
      }
    }
    out.nll = nll;
    out.loss += opts.nll_weight * nll;
  }

  if (grad) backward(p, tr, std::move(d_top), *grad);
  return out;
}

double elbo_loss(std::span<const int> sequence, const VectorXd& e_target, const ModelParams& p,
                 const ToyLmConfig& cfg, int mc_samples, std::mt19937_64& rng) {
  if (sequence.empty()) throw InvalidArgument("elbo_loss on an empty sequence");
  const ForwardTrace tr = forward(p, sequence);
  double kl = 0.0, recon = 0.0;
  return elbo_head(p, tr.top(sequence.size() - 1), e_target, cfg.sigma_e2, mc_samples, rng, nullptr,
                   nullptr, kl, recon);
}

EpochStats evaluate_corpus(std::span<const TrainingExample> corpus, const ModelParams& p,
                           const ToyLmConfig& cfg, int mc_samples, std::uint64_t noise_seed) {
  std::mt19937_64 rng(noise_seed);
  EpochStats s;
  ObjectiveOptions opts;
  opts.mc_samples = mc_samples;
  for (const auto& ex : corpus) {
    const LossTerms t = objective(ex, p, cfg, opts, rng, nullptr);
    s.kl += t.kl;
    s.recon += t.recon;
    s.next_token_nll += t.nll;
  }
  const double n = static_cast<double>(corpus.size());
  s.kl /= n;
  s.recon /= n;
  s.next_token_nll /= n;
  s.elbo = s.kl - s.recon;
  return s;
}

namespace {

struct AdamState {
  ModelParams m, v;
  int t = 0;
};

std::vector<Eigen::Map<MatrixXd>> tensors(ModelParams& p) {
  std::vector<Eigen::Map<MatrixXd>> out;
  p.for_each([&](const std::string&, ParamGroup, Eigen::Map<MatrixXd> m) { out.push_back(m); });
  return out;
}

void adam_step(ModelParams& params, ModelParams& grad, AdamState& st, double lr, bool train_backbone) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++st.t;
  const double c1 = 1.0 - std::pow(kBeta1, st.t);
  const double c2 = 1.0 - std::pow(kBeta2, st.t);
  std::vector<ParamGroup> groups;
  params.for_each([&](const std::string&, ParamGroup g, Eigen::Map<MatrixXd>) { groups.push_back(g); });
  auto P = tensors(params), G = tensors(grad), M = tensors(st.m), V = tensors(st.v);
  for (std::size_t i = 0; i < P.size(); ++i) {
    if (!train_backbone && groups[i] == ParamGroup::kBackbone) continue;
    M[i] = kBeta1 * M[i] + (1.0 - kBeta1) * G[i];
    V[i] = kBeta2 * V[i] + (1.0 - kBeta2) * G[i].cwiseProduct(G[i]);
    P[i].array() -= lr * (M[i].array() / c1) / ((V[i].array() / c2).sqrt() + kEps);
  }
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

}  // namespace

TrainResult train(std::span<const TrainingExample> corpus, const ToyLmConfig& cfg,
                  const TrainOptions& opts) {
  return train(corpus, cfg, opts, ModelParams::init(cfg));
}

TrainResult train(std::span<const TrainingExample> corpus, const ToyLmConfig& cfg,
                  const TrainOptions& opts, ModelParams init) {
  cfg.validate();
  if (corpus.empty()) throw InvalidArgument("training corpus is empty");
  if (opts.batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  const auto started = std::chrono::steady_clock::now();
  // Fixed noise for the per-epoch evaluation, so the trace reflects
  // parameter changes only.
  const std::uint64_t eval_seed = cfg.seed ^ 0x632be59bd9b4e019ULL;

  TrainResult res{std::move(init), {}};
  AdamState adam{ModelParams::zeros(cfg), ModelParams::zeros(cfg)};
  std::mt19937_64 rng(cfg.seed);

  res.trace.push_back(evaluate_corpus(corpus, res.params, cfg, opts.mc_samples, eval_seed));
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  ObjectiveOptions obj;
  obj.mc_samples = opts.mc_samples;
  obj.nll_weight = opts.nll_weight;
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
      ModelParams grad = ModelParams::zeros(cfg);
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = corpus[order[k]];
        obj.prefix_len.reset();
        const int lo = std::max(1, ex.prompt_len);
        const int hi = static_cast<int>(ex.tokens.size()) - 1;
        if (opts.train_on_prefixes && hi >= lo) {
          obj.prefix_len = lo + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(hi - lo + 1)));
        }
        objective(ex, res.params, cfg, obj, rng, &grad);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      grad.for_each([&](const std::string&, ParamGroup, Eigen::Map<MatrixXd> m) { m *= scale; });
      adam_step(res.params, grad, adam, cfg.learning_rate, opts.train_backbone);
    }
    EpochStats stats = evaluate_corpus(corpus, res.params, cfg, opts.mc_samples, eval_seed);
    stats.epoch = epoch;
    if (!std::isfinite(stats.elbo) || !std::isfinite(stats.next_token_nll) || !res.params.all_finite()) {
      throw TrainingDiverged(fmt::format("training diverged at epoch {}", epoch), epoch);
    }
    res.trace.push_back(stats);
    if (opts.time_budget.count() > 0.0 &&
        std::chrono::steady_clock::now() - started > opts.time_budget) {
      break;
    }
  }
  return res;
}

std::string_view to_string(LengthNorm n) {
  switch (n) {
    case LengthNorm::kNone: return "none";
    case LengthNorm::kDivideByLength: return "divide_by_length";
    case LengthNorm::kDivideByLogLength: return "divide_by_log_length";
  }
  return "?";
}

std::optional<LengthNorm> parse_length_norm(std::string_view s) {
  for (auto n : {LengthNorm::kNone, LengthNorm::kDivideByLength, LengthNorm::kDivideByLogLength}) {
    if (to_string(n) == s) return n;
  }
  return std::nullopt;
}

double step_similarity(std::span<const VectorXd> samples) {
  std::vector<EmbeddingVector> v;
  v.reserve(samples.size());
  for (const auto& s : samples) v.emplace_back(std::vector<double>(s.data(), s.data() + s.size()));
  return mean_pairwise_similarity(v);
}

double median(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("median of an empty list");
  const std::size_t n = values.size();
  std::sort(values.begin(), values.end());
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double aseu_from_trace(std::span<const double> trace, LengthNorm norm) {
  if (trace.empty()) throw InvalidArgument("zero-length generation: no steps to score");
  const double raw = 1.0 - median(std::vector<double>(trace.begin(), trace.end()));
  const double T = static_cast<double>(trace.size());
  switch (norm) {
    case LengthNorm::kNone: return raw;
    case LengthNorm::kDivideByLength: return raw / T;
    case LengthNorm::kDivideByLogLength: return raw / std::log1p(T);
  }
  return raw;
}

AseuScore score_sequence(std::span<const int> prompt, const ModelParams& p, const ToyLmConfig& cfg,
                         const ScoringConfig& scfg) {
  if (prompt.empty()) throw InvalidArgument("score_sequence needs a non-empty prompt");
  if (scfg.k_samples < 2) throw InvalidArgument("k_samples must be >= 2");
  GruState state = initial_state(cfg);
  for (int tok : prompt) state = step(p, state, tok);

  std::mt19937_64 rng(scfg.seed);
  const Eigen::Index D = p.mu_b.size();
  std::vector<VectorXd> samples(static_cast<std::size_t>(scfg.k_samples), VectorXd(D));
  AseuScore out;
  double entropy_sum = 0.0;
  while (static_cast<int>(out.generated.size()) < scfg.max_new_tokens) {
    const VectorXd& top = state.h.back();
    Eigen::Index next = 0;
    next_token_logits(p, top).maxCoeff(&next);
    if (static_cast<int>(next) == cfg.eos_token) break;

    const LatentPosterior q = posterior(p, top);
    const VectorXd sd = (0.5 * q.log_var.array()).exp().matrix();
    for (auto& z : samples) {
      for (Eigen::Index d = 0; d < D; ++d) z[d] = q.mu[d] + sd[d] * standard_normal(rng);
    }
    out.step_similarity.push_back(step_similarity(samples));
    entropy_sum += gaussian_entropy(q);

    out.generated.push_back(static_cast<int>(next));
    state = step(p, state, static_cast<int>(next));
  }
  if (out.generated.empty()) {
    throw InvalidArgument("zero-length generation: the model emitted end-of-sequence first");
  }
  out.raw = 1.0 - median(out.step_similarity);
  out.value = aseu_from_trace(out.step_similarity, scfg.length_norm);
  out.mean_q_entropy = entropy_sum / static_cast<double>(out.generated.size());
  return out;
}

}  // namespace semuq::aseu
