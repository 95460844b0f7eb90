#pragma once

// Control critics: conditional flow matching with independent (unsorted)
// pairing, and a quantile-regression critic with the Huber quantile loss.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "wcrit/approx/quantile_net.hpp"
#include "wcrit/dist1d.hpp"
#include "wcrit/env.hpp"
#include "wcrit/error.hpp"
#include "wcrit/flowcritic/critic.hpp"
#include "wcrit/random.hpp"

namespace wcrit {

/// Pairs the same fraction and target multisets as couple_batch, in random
/// order instead of sorted order.
inline CoupledEntry independent_couple(std::span<const double> tau_prime, std::span<const double> y,
                                       const SourceMap& sm, FlowCriticConfig cfg, Rng& rng) {
  cfg.coupling_mode = CouplingMode::independent;
  return couple_batch(tau_prime, y, sm, cfg, rng);
}

/// Same regression as flowiqn_loss with whatever pairing the batch carries.
inline LossResult independent_cfm_loss(const CoupledBatch& batch, const VelocityNet& net, const NetParams& p,
                                       double d = 0.0) {
  return velocity_regression_loss(batch, net, p, d);
}

struct IqnConfig {
  std::size_t n_quantiles = 16;  // online fractions per transition
  std::size_t n_targets = 16;    // target samples per transition
  double huber_kappa = 1.0;
  std::size_t cosine_basis = 64;
  std::size_t embed_dim = 64;
  std::vector<std::size_t> hidden{256, 256};
  double lr = 1e-3;
  double rho = 0.005;

  bool operator==(const IqnConfig&) const = default;

  void validate() const {
    if (n_quantiles == 0 || n_targets == 0) throw ConfigError("iqn quantile counts must be >= 1");
    if (!(huber_kappa > 0.0)) throw ConfigError("iqn.huber_kappa must be positive");
    if (cosine_basis == 0 || embed_dim == 0) throw ConfigError("iqn embedding sizes must be >= 1");
    for (auto w : hidden)
      if (w == 0) throw ConfigError("iqn hidden widths must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("iqn.lr must be positive");
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("iqn.rho must lie in [0, 1]");
  }

  QuantileNetConfig net_config(std::size_t n_states, std::size_t n_actions) const {
    return {n_states, n_actions, cosine_basis, embed_dim, hidden};
  }
};

/// |tau - 1{u < 0}| L_kappa(u) / kappa, with L_kappa the Huber loss.
inline double quantile_huber(double u, double tau, double kappa) {
  const double a = std::abs(u);
  const double huber = a <= kappa ? 0.5 * u * u : kappa * (a - 0.5 * kappa);
  return std::abs(tau - (u < 0.0 ? 1.0 : 0.0)) * huber / kappa;
}

/// d/dq of quantile_huber(y - q, tau, kappa).
inline double quantile_huber_grad(double u, double tau, double kappa) {
  const double slope = std::abs(u) <= kappa ? u : kappa * (u > 0.0 ? 1.0 : -1.0);
  return -std::abs(tau - (u < 0.0 ? 1.0 : 0.0)) * slope / kappa;
}

struct IqnEntry {
  std::size_t s = 0;
  std::size_t a = 0;
  std::vector<double> tau;
  std::vector<double> y;
};

/// Mean over all (fraction, target) pairs of the quantile-Huber loss of
/// u = y - q(s, a, tau).
inline LossResult iqn_loss(const QuantileNet& net, const NetParams& p, std::span<const IqnEntry> batch,
                           const IqnConfig& cfg) {
  std::vector<std::size_t> ss, aa;
  std::vector<double> tt;
  std::size_t pairs = 0;
  for (const auto& e : batch) {
    if (e.tau.empty() || e.y.empty()) throw UsageError("iqn_loss: empty fraction or target set");
    for (double t : e.tau) {
      ss.push_back(e.s);
      aa.push_back(e.a);
      tt.push_back(t);
    }
    pairs += e.tau.size() * e.y.size();
  }
  if (pairs == 0) throw UsageError("iqn_loss: empty batch");
  const auto f = net.forward(p, ss, aa, tt);
  const double n = static_cast<double>(pairs);
  Vector g = Vector::Zero(f.output.size());
  double loss = 0.0;
  Eigen::Index j = 0;
  for (const auto& e : batch)
    for (double t : e.tau) {
      const double q = f.output(j);
      for (double y : e.y) {
        loss += quantile_huber(y - q, t, cfg.huber_kappa);
        g(j) += quantile_huber_grad(y - q, t, cfg.huber_kappa) / n;
      }
      ++j;
    }
  return {loss / n, net.backward(p, f, g)};
}

/// Target samples r + gamma m q_target(s', a', tau') with tau' ~ U[0, 1].
inline std::vector<std::vector<double>> iqn_targets(const QuantileNet& net, const NetParams& target,
                                                    std::span<const Transition> trs, std::span<const std::size_t> a_next,
                                                    double gamma, std::size_t n, Rng& rng) {
  if (a_next.size() != trs.size()) throw UsageError("iqn_targets: one next action per transition required");
  std::vector<std::vector<double>> out(trs.size());
  std::vector<std::size_t> ss, aa, owner;
  std::vector<double> tt;
  for (std::size_t i = 0; i < trs.size(); ++i) {
    out[i].assign(n, trs[i].r);
    std::vector<double> tau(n);
    for (auto& t : tau) t = rng.uniform();
    if (trs[i].mask == 0.0 || gamma == 0.0) continue;
    for (double t : tau) {
      ss.push_back(trs[i].s_next);
      aa.push_back(a_next[i]);
      tt.push_back(t);
      owner.push_back(i);
    }
  }
  if (tt.empty()) return out;
  const Vector q = net.evaluate(target, ss, aa, tt);
  std::vector<std::size_t> next(trs.size(), 0);
  for (std::size_t j = 0; j < tt.size(); ++j) {
    const auto i = owner[j];
    out[i][next[i]++] = trs[i].r + gamma * trs[i].mask * q(static_cast<Eigen::Index>(j));
  }
  return out;
}

/// q(s, a, .) on the (k - 0.5)/n grid, sorted post hoc.
inline EmpiricalDistribution iqn_sample_distribution(const QuantileNet& net, const NetParams& p, std::size_t s,
                                                     std::size_t a, std::size_t n) {
  if (n == 0) throw UsageError("iqn_sample_distribution: n must be >= 1");
  const auto grid = quantile_grid(n);
  const std::vector<std::size_t> ss(n, s), aa(n, a);
  const Vector q = net.evaluate(p, ss, aa, grid);
  return EmpiricalDistribution(std::vector<double>(q.data(), q.data() + q.size()));
}

}  // namespace wcrit
