#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace semuq::aseu {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ToyLmConfig {
  int vocab_size = 32;
  int hidden_dim = 16;
  int latent_dim = 8;  // D, shared by the latent and the reference embedding
  int layers = 1;      // stacked GRU layers
  double sigma_e2 = 0.1;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
  int eos_token = 0;

  void validate() const;
  bool operator==(const ToyLmConfig&) const = default;
};

void to_json(nlohmann::json& j, const ToyLmConfig& c);
void from_json(const nlohmann::json& j, ToyLmConfig& c);

// Which objective term a tensor belongs to.
enum class ParamGroup {
  kBackbone,     // theta: token embedding, recurrent stack, next-token head
  kVariational,  // psi: hidden state -> (mu, log_var)
  kDecoder,      // omega: z -> predicted embedding
};

std::string_view to_string(ParamGroup g);

struct GruLayer {
  MatrixXd w_z, u_z, w_r, u_r, w_h, u_h;  // H x H
  VectorXd b_z, b_r, b_h;
};

struct ModelParams {
  // theta
  MatrixXd embedding;  // V x H, row per token
  std::vector<GruLayer> layers;
  MatrixXd out_w;  // V x H
  VectorXd out_b;
  // psi: a = tanh(enc_w h + enc_b); mu = mu_w a + mu_b; log_var = lv_w a + lv_b
  MatrixXd enc_w;  // H x H
  VectorXd enc_b;
  MatrixXd mu_w;  // D x H
  VectorXd mu_b;
  MatrixXd lv_w;  // D x H
  VectorXd lv_b;
  // omega: NN(z) = dec_w2 tanh(dec_w1 z + dec_b1) + dec_b2
  MatrixXd dec_w1;  // H x D
  VectorXd dec_b1;
  MatrixXd dec_w2;  // D x H
  VectorXd dec_b2;

  // Scaled-Gaussian initialization from cfg.seed.
  static ModelParams init(const ToyLmConfig& cfg);
  // Same shapes, all zeros.
  static ModelParams zeros(const ToyLmConfig& cfg);

  // f(name, group, Eigen::Map<MatrixXd>) for every tensor, in a fixed order.
  template <class F>
  void for_each(F&& f);
  template <class F>
  void for_each(F&& f) const;

  std::size_t parameter_count() const;
  bool all_finite() const;
};

// Recurrent state: one hidden vector per layer.
struct GruState {
  std::vector<VectorXd> h;
};

GruState initial_state(const ToyLmConfig& cfg);
// Consumes one token; returns the new state.
GruState step(const ModelParams& p, const GruState& s, int token);
// Next-token logits from the top layer's hidden state.
VectorXd next_token_logits(const ModelParams& p, const VectorXd& top);

// Forward pass over a token sequence with everything the reverse pass needs.
struct ForwardTrace {
  struct Cell {
    VectorXd x, h_prev, z, r, hc, h;
  };
  std::vector<int> tokens;
  std::vector<std::vector<Cell>> cells;  // [layer][t]
  const VectorXd& top(std::size_t t) const { return cells.back()[t].h; }
};

ForwardTrace forward(const ModelParams& p, std::span<const int> tokens);

// Accumulates parameter gradients into grad given dL/d(top hidden) at every
// position (d_top[t], size H each).
void backward(const ModelParams& p, const ForwardTrace& trace, std::vector<VectorXd> d_top,
              ModelParams& grad);

// ---------------------------------------------------------------------------

template <class F>
void ModelParams::for_each(F&& f) {
  auto visit = [&](const std::string& name, ParamGroup g, auto& t) {
    f(name, g, Eigen::Map<MatrixXd>(t.data(), t.rows(), t.cols()));
  };
  visit("embedding", ParamGroup::kBackbone, embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string pre = "gru" + std::to_string(l) + ".";
    auto& L = layers[l];
    visit(pre + "w_z", ParamGroup::kBackbone, L.w_z);
    visit(pre + "u_z", ParamGroup::kBackbone, L.u_z);
    visit(pre + "b_z", ParamGroup::kBackbone, L.b_z);
    visit(pre + "w_r", ParamGroup::kBackbone, L.w_r);
    visit(pre + "u_r", ParamGroup::kBackbone, L.u_r);
    visit(pre + "b_r", ParamGroup::kBackbone, L.b_r);
    visit(pre + "w_h", ParamGroup::kBackbone, L.w_h);
    visit(pre + "u_h", ParamGroup::kBackbone, L.u_h);
    visit(pre + "b_h", ParamGroup::kBackbone, L.b_h);
  }
  visit("out_w", ParamGroup::kBackbone, out_w);
  visit("out_b", ParamGroup::kBackbone, out_b);
  visit("enc_w", ParamGroup::kVariational, enc_w);
  visit("enc_b", ParamGroup::kVariational, enc_b);
  visit("mu_w", ParamGroup::kVariational, mu_w);
  visit("mu_b", ParamGroup::kVariational, mu_b);
  visit("lv_w", ParamGroup::kVariational, lv_w);
  visit("lv_b", ParamGroup::kVariational, lv_b);
  visit("dec_w1", ParamGroup::kDecoder, dec_w1);
  visit("dec_b1", ParamGroup::kDecoder, dec_b1);
  visit("dec_w2", ParamGroup::kDecoder, dec_w2);
  visit("dec_b2", ParamGroup::kDecoder, dec_b2);
}

template <class F>
void ModelParams::for_each(F&& f) const {
  const_cast<ModelParams*>(this)->for_each(
      [&](const std::string& name, ParamGroup g, Eigen::Map<MatrixXd> m) {
        f(name, g, Eigen::Map<const MatrixXd>(m.data(), m.rows(), m.cols()));
      });
}

}  // namespace semuq::aseu
