#include "semuq/toy_lm.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "semuq/error.hpp"

namespace semuq::aseu {

using nlohmann::json;

void ToyLmConfig::validate() const {
  if (vocab_size < 1 || hidden_dim < 1 || latent_dim < 1 || layers < 1) {
    throw ConfigError(fmt::format("toy LM dims must be >= 1 (vocab {}, hidden {}, latent {}, layers {})",
                                  vocab_size, hidden_dim, latent_dim, layers));
  }
  if (!(sigma_e2 > 0.0)) throw ConfigError(fmt::format("sigma_e2 must be > 0, got {}", sigma_e2));
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (eos_token < 0 || eos_token >= vocab_size) throw ConfigError("eos_token outside vocabulary");
}

void to_json(json& j, const ToyLmConfig& c) {
  j = json{{"vocab_size", c.vocab_size}, {"hidden_dim", c.hidden_dim},
           {"latent_dim", c.latent_dim}, {"layers", c.layers},
           {"sigma_e2", c.sigma_e2},     {"learning_rate", c.learning_rate},
           {"seed", c.seed},             {"eos_token", c.eos_token}};
}

void from_json(const json& j, ToyLmConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("latent_dim").get_to(c.latent_dim);
  j.at("layers").get_to(c.layers);
  j.at("sigma_e2").get_to(c.sigma_e2);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("seed").get_to(c.seed);
  j.at("eos_token").get_to(c.eos_token);
}

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::kBackbone: return "theta";
    case ParamGroup::kVariational: return "psi";
    case ParamGroup::kDecoder: return "omega";
  }
  return "?";
}

ModelParams ModelParams::zeros(const ToyLmConfig& cfg) {
  cfg.validate();
  const int V = cfg.vocab_size, H = cfg.hidden_dim, D = cfg.latent_dim;
  ModelParams p;
  p.embedding = MatrixXd::Zero(V, H);
  p.layers.resize(cfg.layers);
  for (auto& L : p.layers) {
    for (MatrixXd* m : {&L.w_z, &L.u_z, &L.w_r, &L.u_r, &L.w_h, &L.u_h}) *m = MatrixXd::Zero(H, H);
    for (VectorXd* b : {&L.b_z, &L.b_r, &L.b_h}) *b = VectorXd::Zero(H);
  }
  p.out_w = MatrixXd::Zero(V, H);
  p.out_b = VectorXd::Zero(V);
  p.enc_w = MatrixXd::Zero(H, H);
  p.enc_b = VectorXd::Zero(H);
  p.mu_w = MatrixXd::Zero(D, H);
  p.mu_b = VectorXd::Zero(D);
  p.lv_w = MatrixXd::Zero(D, H);
  p.lv_b = VectorXd::Zero(D);
  p.dec_w1 = MatrixXd::Zero(H, D);
  p.dec_b1 = VectorXd::Zero(H);
  p.dec_w2 = MatrixXd::Zero(D, H);
  p.dec_b2 = VectorXd::Zero(D);
  return p;
}

ModelParams ModelParams::init(const ToyLmConfig& cfg) {
  ModelParams p = zeros(cfg);
  std::mt19937_64 gen(cfg.seed ^ 0x243f6a8885a308d3ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  p.for_each([&](const std::string& name, ParamGroup, Eigen::Map<MatrixXd> m) {
    if (m.cols() == 1 && name != "embedding") return;  // biases start at zero
    // Embedding rows are looked up, not multiplied: unit scale.
    const double scale = name == "embedding" ? 1.0 : 1.0 / std::sqrt(static_cast<double>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal(gen);
  });
  return p;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, ParamGroup, Eigen::Map<const MatrixXd> m) {
    n += static_cast<std::size_t>(m.size());
  });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, ParamGroup, Eigen::Map<const MatrixXd> m) {
    ok = ok && m.allFinite();
  });
  return ok;
}

namespace {

VectorXd sigmoid(const VectorXd& v) { return (1.0 + (-v.array()).exp()).inverse().matrix(); }

void check_token(const ModelParams& p, int token) {
  if (token < 0 || token >= p.embedding.rows()) {
    throw InvalidArgument(fmt::format("token {} outside vocabulary of {}", token, p.embedding.rows()));
  }
}

// One GRU cell; fills the trace entry.
void gru_cell(const GruLayer& L, const VectorXd& x, const VectorXd& h_prev, ForwardTrace::Cell& c) {
  c.x = x;
  c.h_prev = h_prev;
  c.z = sigmoid(L.w_z * x + L.u_z * h_prev + L.b_z);
  c.r = sigmoid(L.w_r * x + L.u_r * h_prev + L.b_r);
  c.hc = (L.w_h * x + L.u_h * c.r.cwiseProduct(h_prev) + L.b_h).array().tanh().matrix();
  c.h = (1.0 - c.z.array()).matrix().cwiseProduct(h_prev) + c.z.cwiseProduct(c.hc);
}

}  // namespace

GruState initial_state(const ToyLmConfig& cfg) {
  GruState s;
  s.h.assign(static_cast<std::size_t>(cfg.layers), VectorXd::Zero(cfg.hidden_dim));
  return s;
}

GruState step(const ModelParams& p, const GruState& s, int token) {
  check_token(p, token);
  GruState out;
  out.h.reserve(p.layers.size());
  VectorXd x = p.embedding.row(token).transpose();
  ForwardTrace::Cell c;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    gru_cell(p.layers[l], x, s.h[l], c);
    out.h.push_back(c.h);
    x = c.h;
  }
  return out;
}

VectorXd next_token_logits(const ModelParams& p, const VectorXd& top) {
  return p.out_w * top + p.out_b;
}

ForwardTrace forward(const ModelParams& p, std::span<const int> tokens) {
  ForwardTrace tr;
  tr.tokens.assign(tokens.begin(), tokens.end());
  const std::size_t T = tokens.size();
  const Eigen::Index H = p.embedding.cols();
  tr.cells.assign(p.layers.size(), std::vector<ForwardTrace::Cell>(T));
  for (std::size_t t = 0; t < T; ++t) {
    check_token(p, tokens[t]);
    VectorXd x = p.embedding.row(tokens[t]).transpose();
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      const VectorXd h_prev = t == 0 ? VectorXd::Zero(H) : tr.cells[l][t - 1].h;
      gru_cell(p.layers[l], x, h_prev, tr.cells[l][t]);
      x = tr.cells[l][t].h;
    }
  }
  return tr;
}

void backward(const ModelParams& p, const ForwardTrace& tr, std::vector<VectorXd> d_top,
              ModelParams& grad) {
  const std::size_t T = tr.tokens.size();
  const Eigen::Index H = p.embedding.cols();
  std::vector<VectorXd>& d_out = d_top;  // dL/dh for the current layer, per t
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const GruLayer& L = p.layers[li];
    GruLayer& G = grad.layers[li];
    std::vector<VectorXd> d_in(T);  // dL/dx, handed to the layer below
    VectorXd dh_next = VectorXd::Zero(H);
    for (std::size_t t = T; t-- > 0;) {
      const auto& c = tr.cells[li][t];
      const VectorXd dh = d_out[t] + dh_next;

      // h = (1 - z) * h_prev + z * hc
      const VectorXd dz = dh.cwiseProduct(c.hc - c.h_prev);
      const VectorXd dhc = dh.cwiseProduct(c.z);
      VectorXd dh_prev = dh.cwiseProduct((1.0 - c.z.array()).matrix());

      // hc = tanh(w_h x + u_h (r * h_prev) + b_h)
      const VectorXd dpre_h = dhc.cwiseProduct((1.0 - c.hc.array().square()).matrix());
      const VectorXd rh = c.r.cwiseProduct(c.h_prev);
      G.w_h.noalias() += dpre_h * c.x.transpose();
      G.u_h.noalias() += dpre_h * rh.transpose();
      G.b_h += dpre_h;
      const VectorXd drh = L.u_h.transpose() * dpre_h;
      const VectorXd dr = drh.cwiseProduct(c.h_prev);
      dh_prev += drh.cwiseProduct(c.r);
      VectorXd dx = L.w_h.transpose() * dpre_h;

      // z = sigmoid(w_z x + u_z h_prev + b_z)
      const VectorXd dpre_z = dz.cwiseProduct(c.z.cwiseProduct((1.0 - c.z.array()).matrix()));
      G.w_z.noalias() += dpre_z * c.x.transpose();
      G.u_z.noalias() += dpre_z * c.h_prev.transpose();
      G.b_z += dpre_z;
      dx.noalias() += L.w_z.transpose() * dpre_z;
      dh_prev.noalias() += L.u_z.transpose() * dpre_z;

      // r = sigmoid(w_r x + u_r h_prev + b_r)
      const VectorXd dpre_r = dr.cwiseProduct(c.r.cwiseProduct((1.0 - c.r.array()).matrix()));
      G.w_r.noalias() += dpre_r * c.x.transpose();
      G.u_r.noalias() += dpre_r * c.h_prev.transpose();
      G.b_r += dpre_r;
      dx.noalias() += L.w_r.transpose() * dpre_r;
      dh_prev.noalias() += L.u_r.transpose() * dpre_r;

      dh_next = std::move(dh_prev);
      d_in[t] = std::move(dx);
    }
    d_out = std::move(d_in);
  }
  for (std::size_t t = 0; t < T; ++t) grad.embedding.row(tr.tokens[t]) += d_out[t].transpose();
}

}  // namespace semuq::aseu
