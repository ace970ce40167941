#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "semuq/error.hpp"
#include "semuq/toy_lm.hpp"

namespace semuq::aseu {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

// Diagonal Gaussian q(z) = N(mu, diag(exp(log_var))).
struct LatentPosterior {
  VectorXd mu;
  VectorXd log_var;
};

// Variational head applied to a top-layer hidden state. log_var is clamped
// to [kLogVarMin, kLogVarMax].
LatentPosterior posterior(const ModelParams& p, const VectorXd& hidden);

// NN_omega(z).
VectorXd decode(const ModelParams& p, const VectorXd& z);

// KL(q || N(0, I)) in closed form.
double gaussian_kl(const LatentPosterior& q);

// Differential entropy of q in nats.
double gaussian_entropy(const LatentPosterior& q);

// log N(e; NN_omega(z), sigma_e2 I).
double recon_loglik(const VectorXd& e, const VectorXd& z, const ModelParams& p, double sigma_e2);

// One training sequence with the reference embedding of its response.
struct TrainingExample {
  std::vector<int> tokens;
  int prompt_len = 1;
  VectorXd target;
};

struct LossTerms {
  double loss = 0.0;  // what gradients are taken of
  double kl = 0.0;
  double recon = 0.0;  // mean reconstruction log-likelihood over MC samples
  double nll = 0.0;    // mean next-token negative log-likelihood

  double elbo_loss() const { return kl - recon; }
};

struct ObjectiveOptions {
  int mc_samples = 1;
  double nll_weight = 1.0;
  // Extra ELBO term conditioned on the state after this many tokens.
  std::optional<int> prefix_len;
};

// Loss (and, when grad != nullptr, its gradient accumulated into *grad) for
// one example: KL(q||p) - E_q[log p(e|z)] at the final token, plus the same at
// prefix_len when set, plus nll_weight * next-token NLL. Noise comes from rng.
LossTerms objective(const TrainingExample& ex, const ModelParams& p, const ToyLmConfig& cfg,
                    const ObjectiveOptions& opts, std::mt19937_64& rng, ModelParams* grad);

// Negative ELBO at the final token only (no next-token term).
double elbo_loss(std::span<const int> sequence, const VectorXd& e_target, const ModelParams& p,
                 const ToyLmConfig& cfg, int mc_samples, std::mt19937_64& rng);

// Standard normal draw built from raw mt19937_64 output (Box-Muller), so
// noise sequences are identical across standard libraries.
double standard_normal(std::mt19937_64& rng);

struct TrainOptions {
  int epochs = 100;
  int batch_size = 8;
  int mc_samples = 1;
  double nll_weight = 1.0;
  bool train_backbone = true;     // false keeps theta fixed
  bool train_on_prefixes = false; // add an ELBO term on a uniformly drawn prefix
  // Stop early once this much wall time has passed (0 = no budget).
  std::chrono::duration<double> time_budget{0.0};
};

struct EpochStats {
  int epoch = 0;  // 0 is the untrained model
  double elbo = 0.0;  // negative ELBO
  double kl = 0.0;
  double recon = 0.0;
  double next_token_nll = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> trace;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

// Mean loss terms over the corpus with a fixed noise seed.
EpochStats evaluate_corpus(std::span<const TrainingExample> corpus, const ModelParams& p,
                           const ToyLmConfig& cfg, int mc_samples, std::uint64_t noise_seed);

// Adam on the summed objective. Deterministic given cfg.seed.
TrainResult train(std::span<const TrainingExample> corpus, const ToyLmConfig& cfg,
                  const TrainOptions& opts);
TrainResult train(std::span<const TrainingExample> corpus, const ToyLmConfig& cfg,
                  const TrainOptions& opts, ModelParams init);

enum class LengthNorm { kNone, kDivideByLength, kDivideByLogLength };

std::string_view to_string(LengthNorm n);
std::optional<LengthNorm> parse_length_norm(std::string_view s);

struct ScoringConfig {
  int k_samples = 10;
  LengthNorm length_norm = LengthNorm::kDivideByLength;
  std::uint64_t seed = 0;
  int max_new_tokens = 32;
};

struct AseuScore {
  double value = 0.0;  // after length normalization
  double raw = 0.0;    // 1 - median(step similarities)
  std::vector<double> step_similarity;
  std::vector<int> generated;  // greedy response, EOS excluded
  double mean_q_entropy = 0.0; // entropy-of-q baseline, averaged over steps
};

// Mean pairwise cosine of K latent samples.
double step_similarity(std::span<const VectorXd> samples);

// Median, with the mean of the two middle values for even counts.
double median(std::vector<double> values);

// 1 - median(trace), then length-normalized by T = trace.size().
double aseu_from_trace(std::span<const double> trace, LengthNorm norm);

// Greedy decoding from the prompt; before each emitted token, draws K
// latents from q conditioned on prompt + tokens so far.
AseuScore score_sequence(std::span<const int> prompt, const ModelParams& p, const ToyLmConfig& cfg,
                         const ScoringConfig& scfg);

}  // namespace semuq::aseu
