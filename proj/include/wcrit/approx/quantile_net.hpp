#pragma once

// State-action x quantile-fraction conditioning shared by the velocity field
// and the one-step quantile networks: a learned (s,a) embedding multiplied
// elementwise with a learned projection of the cosine basis of tau.

#include <cstddef>
#include <span>
#include <vector>

#include "wcrit/approx/embeddings.hpp"
#include "wcrit/approx/mlp.hpp"
#include "wcrit/error.hpp"

namespace wcrit {

struct SaTauCache {
  std::vector<std::size_t> s;
  std::vector<std::size_t> a;
  Matrix basis;    // cosine basis, one column per sample
  Matrix pre_sa;
  Matrix pre_tau;
  Matrix h_sa;
  Matrix h_tau;
};

/// Layers `sa_layer` (one-hot [s, a] -> E) and `tau_layer` (basis -> E).
inline Matrix sa_tau_forward(const NetParams& p, std::size_t sa_layer, std::size_t tau_layer, std::size_t n_states,
                             std::span<const std::size_t> s, std::span<const std::size_t> a, std::span<const double> tau,
                             SaTauCache* cache) {
  const auto n = s.size();
  if (a.size() != n || tau.size() != n) throw UsageError("sa_tau_forward: input length mismatch");
  const auto& lsa = p.layers[sa_layer];
  const auto& ltau = p.layers[tau_layer];
  const auto cols = static_cast<Eigen::Index>(n);
  Matrix basis(static_cast<Eigen::Index>(ltau.in()), cols);
  Matrix pre_sa(static_cast<Eigen::Index>(lsa.out()), cols);
  for (std::size_t j = 0; j < n; ++j) {
    if (!(tau[j] >= 0.0 && tau[j] <= 1.0)) throw UsageError("quantile fraction outside [0, 1]");
    if (s[j] >= n_states || n_states + a[j] >= lsa.in()) throw UsageError("state or action index out of range");
    const auto c = static_cast<Eigen::Index>(j);
    cosine_embed_into(tau[j], std::span<double>(basis.col(c).data(), basis.rows()));
    pre_sa.col(c) = lsa.weight.col(static_cast<Eigen::Index>(s[j])) +
                    lsa.weight.col(static_cast<Eigen::Index>(n_states + a[j])) + lsa.bias;
  }
  Matrix pre_tau = ltau.weight * basis;
  pre_tau.colwise() += ltau.bias;
  Matrix h_sa, h_tau;
  detail::activate(p.activation, pre_sa, h_sa);
  detail::activate(p.activation, pre_tau, h_tau);
  Matrix h = h_sa.cwiseProduct(h_tau);
  if (cache) {
    cache->s.assign(s.begin(), s.end());
    cache->a.assign(a.begin(), a.end());
    cache->basis = std::move(basis);
    cache->pre_sa = std::move(pre_sa);
    cache->pre_tau = std::move(pre_tau);
    cache->h_sa = std::move(h_sa);
    cache->h_tau = std::move(h_tau);
  }
  return h;
}

inline void sa_tau_backward(const NetParams& p, std::size_t sa_layer, std::size_t tau_layer, std::size_t n_states,
                            const SaTauCache& cache, const Matrix& grad_h, NetParams& grads) {
  auto slope = [&](const Matrix& pre) { return detail::activation_slope(p.activation, pre); };
  const Matrix g_sa = grad_h.cwiseProduct(cache.h_tau).cwiseProduct(slope(cache.pre_sa));
  const Matrix g_tau = grad_h.cwiseProduct(cache.h_sa).cwiseProduct(slope(cache.pre_tau));
  auto& gsa = grads.layers[sa_layer];
  for (std::size_t j = 0; j < cache.s.size(); ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    gsa.weight.col(static_cast<Eigen::Index>(cache.s[j])) += g_sa.col(c);
    gsa.weight.col(static_cast<Eigen::Index>(n_states + cache.a[j])) += g_sa.col(c);
  }
  gsa.bias += g_sa.rowwise().sum();
  grads.layers[tau_layer].weight.noalias() += g_tau * cache.basis.transpose();
  grads.layers[tau_layer].bias += g_tau.rowwise().sum();
}

struct QuantileNetConfig {
  std::size_t n_states = 1;
  std::size_t n_actions = 1;
  std::size_t cosine_basis = 64;
  std::size_t embed_dim = 64;
  std::vector<std::size_t> hidden{256, 256};
};

/// One-step quantile network q(s, a, tau): used as the IQN baseline critic
/// and as the distilled student critic.
class QuantileNet {
 public:
  explicit QuantileNet(QuantileNetConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.n_states == 0 || cfg_.n_actions == 0 || cfg_.cosine_basis == 0 || cfg_.embed_dim == 0)
      throw ConfigError("QuantileNet sizes must be >= 1");
  }

  const QuantileNetConfig& config() const { return cfg_; }

  NetParams init(Rng& rng) const {
    NetParams p;
    p.layers.push_back(make_dense(cfg_.n_states + cfg_.n_actions, cfg_.embed_dim, rng));
    p.layers.push_back(make_dense(cfg_.cosine_basis, cfg_.embed_dim, rng));
    std::size_t in = cfg_.embed_dim;
    for (auto w : cfg_.hidden) {
      p.layers.push_back(make_dense(in, w, rng));
      in = w;
    }
    p.layers.push_back(make_dense(in, 1, rng));
    return p;
  }

  struct Forward {
    Vector output;
    SaTauCache embed;
    MlpCache trunk;
  };

  Forward forward(const NetParams& p, std::span<const std::size_t> s, std::span<const std::size_t> a,
                  std::span<const double> tau) const {
    Forward f;
    const Matrix h = sa_tau_forward(p, 0, 1, cfg_.n_states, s, a, tau, &f.embed);
    f.output = forward_layers(p, 2, p.layers.size() - 2, h, &f.trunk).row(0).transpose();
    return f;
  }

  Vector evaluate(const NetParams& p, std::span<const std::size_t> s, std::span<const std::size_t> a,
                  std::span<const double> tau) const {
    const Matrix h = sa_tau_forward(p, 0, 1, cfg_.n_states, s, a, tau, nullptr);
    return forward_layers(p, 2, p.layers.size() - 2, h, nullptr).row(0).transpose();
  }

  /// Parameter gradients given dLoss/dOutput per sample.
  NetParams backward(const NetParams& p, const Forward& f, const Vector& out_grad) const {
    NetParams grads = p.zeros_like();
    const Matrix gh = backward_layers(p, f.trunk, out_grad.transpose(), grads);
    sa_tau_backward(p, 0, 1, cfg_.n_states, f.embed, gh, grads);
    return grads;
  }

 private:
  QuantileNetConfig cfg_;
};

}  // namespace wcrit
