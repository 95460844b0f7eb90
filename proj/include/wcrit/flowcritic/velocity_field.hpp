#pragma once

// Scalar velocity field v(t, z | s, a, tau), optionally conditioned on a
// shortcut step size d.
//
// Layers: [0] one-hot (s, a) -> E, [1] cosine(tau) -> E, [2] Fourier(t) ->
// time features, [3] Fourier(d) -> step features (shortcut only), then the
// trunk. The first trunk layer is applied block-wise,
//   pre = (W_h h + b) + W_z HL(z) + (W_t P_t [+ W_d P_d]),
// always in that order, so integration can reuse the (s, a, tau) block across
// Euler steps and the time block across a batch.

#include <cstddef>
#include <span>
#include <vector>

#include "wcrit/approx/embeddings.hpp"
#include "wcrit/approx/mlp.hpp"
#include "wcrit/approx/quantile_net.hpp"
#include "wcrit/error.hpp"

namespace wcrit {

struct VelocityNetConfig {
  std::size_t n_states = 1;
  std::size_t n_actions = 1;
  EmbeddingConfig emb;
  std::size_t embed_dim = 512;
  std::vector<std::size_t> hidden{512, 512, 512, 512};
  bool shortcut = false;

  void validate() const {
    emb.validate();
    if (n_states == 0 || n_actions == 0) throw ConfigError("velocity net needs at least one state and action");
    if (embed_dim == 0) throw ConfigError("embedding width must be >= 1");
    if (hidden.empty()) throw ConfigError("velocity net needs at least one hidden layer");
    for (auto w : hidden)
      if (w == 0) throw ConfigError("hidden widths must be >= 1");
  }
};

struct FieldInputs {
  std::vector<std::size_t> s;
  std::vector<std::size_t> a;
  std::vector<double> tau;
  std::vector<double> z;
  std::vector<double> t;
  std::vector<double> d;  // shortcut only

  std::size_t size() const { return s.size(); }

  void reserve(std::size_t n) {
    s.reserve(n);
    a.reserve(n);
    tau.reserve(n);
    z.reserve(n);
    t.reserve(n);
    d.reserve(n);
  }

  void push(std::size_t s_, std::size_t a_, double tau_, double z_, double t_, double d_ = 0.0) {
    s.push_back(s_);
    a.push_back(a_);
    tau.push_back(tau_);
    z.push_back(z_);
    t.push_back(t_);
    d.push_back(d_);
  }
};

class VelocityNet {
 public:
  static constexpr std::size_t kSa = 0;
  static constexpr std::size_t kTau = 1;
  static constexpr std::size_t kTime = 2;
  static constexpr std::size_t kStep = 3;

  explicit VelocityNet(VelocityNetConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    freqs_ = fourier_frequencies(cfg_.emb.fourier_freqs);
  }

  const VelocityNetConfig& config() const { return cfg_; }
  bool shortcut() const { return cfg_.shortcut; }
  std::size_t trunk_begin() const { return cfg_.shortcut ? 4 : 3; }
  std::size_t time_width() const { return cfg_.emb.fourier_dim; }
  std::size_t step_width() const { return cfg_.shortcut ? cfg_.emb.step_embed_dim : 0; }
  std::size_t trunk_input_width() const {
    return cfg_.embed_dim + cfg_.emb.hlgauss_bins + time_width() + step_width();
  }

  NetParams init(Rng& rng) const {
    NetParams p;
    p.layers.push_back(make_dense(cfg_.n_states + cfg_.n_actions, cfg_.embed_dim, rng));
    p.layers.push_back(make_dense(cfg_.emb.cosine_basis, cfg_.embed_dim, rng));
    p.layers.push_back(make_dense(cfg_.emb.fourier_dim, time_width(), rng));
    if (cfg_.shortcut) p.layers.push_back(make_dense(cfg_.emb.fourier_dim, step_width(), rng));
    std::size_t in = trunk_input_width();
    for (auto w : cfg_.hidden) {
      p.layers.push_back(make_dense(in, w, rng));
      in = w;
    }
    p.layers.push_back(make_dense(in, 1, rng));
    return p;
  }

  void check_params(const NetParams& p) const {
    const std::size_t expect = trunk_begin() + cfg_.hidden.size() + 1;
    if (p.layers.size() != expect || p.layers[trunk_begin()].in() != trunk_input_width())
      throw UsageError("velocity net parameters do not match the configured layout");
  }

  /// HL-Gauss features of z, one column per sample.
  Matrix hl_features(std::span<const double> z) const { return hl_gauss_embed_batch(z, cfg_.emb); }

  /// Raw Fourier features; consecutive equal inputs share the computation.
  Matrix fourier_features(std::span<const double> x) const {
    Matrix out(static_cast<Eigen::Index>(cfg_.emb.fourier_dim), static_cast<Eigen::Index>(x.size()));
    for (std::size_t j = 0; j < x.size(); ++j) {
      const auto c = static_cast<Eigen::Index>(j);
      if (j > 0 && x[j] == x[j - 1]) {
        out.col(c) = out.col(c - 1);
      } else {
        fourier_embed_into(x[j], freqs_, std::span<double>(out.col(c).data(), cfg_.emb.fourier_dim));
      }
    }
    return out;
  }

  struct Forward {
    Vector output;
    SaTauCache embed;
    Matrix h;                 // sa x tau product
    Matrix hl;
    Matrix four_t, pre_t, p_t;
    Matrix four_d, pre_d, p_d;
    Matrix pre1;              // first trunk pre-activation
    MlpCache rest;
    const NetParams* owner = nullptr;
    std::uint64_t version = 0;
  };

  Forward forward(const NetParams& p, const FieldInputs& in) const { return run(p, in, true); }

  Vector evaluate(const NetParams& p, const FieldInputs& in) const { return run(p, in, false).output; }

  /// Parameter gradients given dLoss/dOutput per sample.
  NetParams backward(const NetParams& p, const Forward& f, const Vector& out_grad) const {
    if (f.owner != &p || f.version != p.version) throw UsageError("backward: stale velocity-net forward");
    if (out_grad.size() != f.output.size()) throw UsageError("backward: gradient length mismatch");
    NetParams g = p.zeros_like();
    const std::size_t tb = trunk_begin();
    Matrix g1 = backward_layers(p, f.rest, out_grad.transpose(), g);
    g1 = g1.cwiseProduct(detail::activation_slope(p.activation, f.pre1));
    const auto& W1 = p.layers[tb].weight;
    auto& G1 = g.layers[tb].weight;
    const auto E = static_cast<Eigen::Index>(cfg_.embed_dim);
    const auto B = static_cast<Eigen::Index>(cfg_.emb.hlgauss_bins);
    const auto T = static_cast<Eigen::Index>(time_width());
    const auto D = static_cast<Eigen::Index>(step_width());
    G1.middleCols(0, E).noalias() += g1 * f.h.transpose();
    G1.middleCols(E, B).noalias() += g1 * f.hl.transpose();
    G1.middleCols(E + B, T).noalias() += g1 * f.p_t.transpose();
    if (cfg_.shortcut) G1.middleCols(E + B + T, D).noalias() += g1 * f.p_d.transpose();
    g.layers[tb].bias += g1.rowwise().sum();

    const Matrix gh = W1.middleCols(0, E).transpose() * g1;
    sa_tau_backward(p, kSa, kTau, cfg_.n_states, f.embed, gh, g);
    auto proj_backward = [&](std::size_t layer, Eigen::Index col0, Eigen::Index width, const Matrix& pre, const Matrix& four) {
      Matrix gp = W1.middleCols(col0, width).transpose() * g1;
      gp = gp.cwiseProduct(detail::activation_slope(p.activation, pre));
      g.layers[layer].weight.noalias() += gp * four.transpose();
      g.layers[layer].bias += gp.rowwise().sum();
    };
    proj_backward(kTime, E + B, T, f.pre_t, f.four_t);
    if (cfg_.shortcut) proj_backward(kStep, E + B + T, D, f.pre_d, f.four_d);
    return g;
  }

  // --- integration path -------------------------------------------------

  /// (W_h h + b) for a fixed set of (s, a, tau), reused across Euler steps.
  Matrix context(const NetParams& p, std::span<const std::size_t> s, std::span<const std::size_t> a,
                 std::span<const double> tau) const {
    check_params(p);
    const Matrix h = sa_tau_forward(p, kSa, kTau, cfg_.n_states, s, a, tau, nullptr);
    const auto& l1 = p.layers[trunk_begin()];
    Matrix base = l1.weight.middleCols(0, static_cast<Eigen::Index>(cfg_.embed_dim)) * h;
    base.colwise() += l1.bias;
    return base;
  }

  /// W_t P_t (+ W_d P_d) for a scalar (t, d) shared by a whole batch.
  Vector time_term(const NetParams& p, double t, double d = 0.0) const {
    std::vector<double> tv{t}, dv{d};
    Matrix term = time_block(p, tv, dv, nullptr);
    return term.col(0);
  }

  /// Velocity at positions z given a prepared context and time term.
  Vector velocity(const NetParams& p, const Matrix& ctx, std::span<const double> z, const Vector& tterm) const {
    if (static_cast<std::size_t>(ctx.cols()) != z.size()) throw UsageError("velocity: context/position size mismatch");
    const std::size_t tb = trunk_begin();
    const auto& l1 = p.layers[tb];
    const Matrix hl = hl_features(z);
    Matrix pre1 = ctx;
    pre1.noalias() += l1.weight.middleCols(static_cast<Eigen::Index>(cfg_.embed_dim), hl.rows()) * hl;
    pre1.colwise() += tterm;
    Matrix h1;
    detail::activate(p.activation, pre1, h1);
    return forward_layers(p, tb + 1, p.layers.size() - tb - 1, h1, nullptr).row(0).transpose();
  }

 private:
  /// Per-column W_t P_t (+ W_d P_d); fills projection caches when asked.
  Matrix time_block(const NetParams& p, std::span<const double> t, std::span<const double> d, Forward* f) const {
    const std::size_t tb = trunk_begin();
    const auto& W1 = p.layers[tb].weight;
    const auto E = static_cast<Eigen::Index>(cfg_.embed_dim);
    const auto B = static_cast<Eigen::Index>(cfg_.emb.hlgauss_bins);
    const auto T = static_cast<Eigen::Index>(time_width());
    auto project = [&](std::size_t layer, std::span<const double> x, Matrix& four, Matrix& pre, Matrix& out) {
      four = fourier_features(x);
      pre = p.layers[layer].weight * four;
      pre.colwise() += p.layers[layer].bias;
      detail::activate(p.activation, pre, out);
    };
    Matrix four_t, pre_t, p_t;
    project(kTime, t, four_t, pre_t, p_t);
    Matrix term = W1.middleCols(E + B, T) * p_t;
    Matrix four_d, pre_d, p_d;
    if (cfg_.shortcut) {
      project(kStep, d, four_d, pre_d, p_d);
      term.noalias() += W1.middleCols(E + B + T, static_cast<Eigen::Index>(step_width())) * p_d;
    }
    if (f) {
      f->four_t = std::move(four_t);
      f->pre_t = std::move(pre_t);
      f->p_t = std::move(p_t);
      f->four_d = std::move(four_d);
      f->pre_d = std::move(pre_d);
      f->p_d = std::move(p_d);
    }
    return term;
  }

  Forward run(const NetParams& p, const FieldInputs& in, bool keep) const {
    check_params(p);
    const std::size_t n = in.size();
    if (in.a.size() != n || in.tau.size() != n || in.z.size() != n || in.t.size() != n)
      throw UsageError("velocity net: input length mismatch");
    if (cfg_.shortcut && in.d.size() != n) throw UsageError("velocity net: shortcut step sizes missing");
    for (std::size_t j = 0; j < n; ++j)
      if (!std::isfinite(in.z[j]) || !std::isfinite(in.t[j])) throw NumericError("velocity net: non-finite input", 0);
    Forward f;
    const std::size_t tb = trunk_begin();
    const auto& l1 = p.layers[tb];
    const auto E = static_cast<Eigen::Index>(cfg_.embed_dim);
    f.h = sa_tau_forward(p, kSa, kTau, cfg_.n_states, in.s, in.a, in.tau, keep ? &f.embed : nullptr);
    f.hl = hl_features(in.z);
    const std::span<const double> dspan = cfg_.shortcut ? std::span<const double>(in.d) : std::span<const double>();
    const Matrix term = time_block(p, in.t, dspan, &f);
    f.pre1 = l1.weight.middleCols(0, E) * f.h;
    f.pre1.colwise() += l1.bias;
    f.pre1.noalias() += l1.weight.middleCols(E, f.hl.rows()) * f.hl;
    f.pre1 += term;
    Matrix h1;
    detail::activate(p.activation, f.pre1, h1);
    f.output = forward_layers(p, tb + 1, p.layers.size() - tb - 1, h1, keep ? &f.rest : nullptr).row(0).transpose();
    f.owner = &p;
    f.version = p.version;
    return f;
  }

  VelocityNetConfig cfg_;
  std::vector<double> freqs_;
};

}  // namespace wcrit
