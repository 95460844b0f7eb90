#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "wcrit/approx/optim.hpp"
#include "wcrit/approx/quantile_net.hpp"
#include "wcrit/dist1d.hpp"
#include "wcrit/env.hpp"
#include "wcrit/error.hpp"
#include "wcrit/flowcritic/schedule.hpp"
#include "wcrit/flowcritic/source_map.hpp"
#include "wcrit/flowcritic/velocity_field.hpp"
#include "wcrit/random.hpp"

namespace wcrit {

enum class ScheduleMode { uniform, adaptive };
enum class CouplingMode { sorted, independent };
enum class TauMode { reuse, fresh };
enum class EnsembleAggregate { mean, min };

struct FlowCriticConfig {
  std::size_t K = 16;
  std::size_t M = 8;
  double kappa = 0.1;
  double gamma = 0.99;
  double lambda_c = 0.3;
  bool shortcut_enabled = false;
  std::vector<double> shortcut_step_sizes{0.5, 0.25, 0.125};
  ScheduleMode schedule_mode = ScheduleMode::uniform;
  std::size_t ensemble_size = 1;
  EnsembleAggregate aggregate = EnsembleAggregate::mean;
  CouplingMode coupling_mode = CouplingMode::sorted;
  TauMode tau_mode = TauMode::reuse;

  double rho = 0.005;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t schedule_every = 1000;
  std::size_t curvature_bins = 16;
  double schedule_eps = 1e-3;
  double schedule_ema = 0.9;
  std::size_t probe_size = 64;

  // network
  std::size_t embed_dim = 64;
  std::vector<std::size_t> hidden{256, 256};
  std::size_t cosine_basis = 64;
  std::size_t fourier_freqs = 64;
  std::size_t hlgauss_bins = 51;
  double hlgauss_sigma = 16.0;
  std::size_t step_embed_dim = 128;

  bool operator==(const FlowCriticConfig&) const = default;

  void validate() const {
    if (K == 0) throw ConfigError("critic.K must be >= 1");
    if (M == 0) throw ConfigError("critic.M must be >= 1");
    if (!(kappa > 0.0 && kappa <= 1.0)) throw ConfigError("critic.kappa must lie in (0, 1]");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
    if (!(lambda_c >= 0.0 && lambda_c <= 1.0)) throw ConfigError("critic.lambda_c must lie in [0, 1]");
    if (shortcut_enabled && shortcut_step_sizes.empty()) throw ConfigError("shortcut step sizes must be non-empty");
    for (double d : shortcut_step_sizes)
      if (!(d > 0.0 && d <= 1.0)) throw ConfigError("shortcut step sizes must lie in (0, 1]");
    if (ensemble_size == 0) throw ConfigError("critic.ensemble_size must be >= 1");
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("critic.rho must lie in [0, 1]");
    if (!(lr > 0.0)) throw ConfigError("critic.lr must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("critic.weight_decay must be >= 0");
    if (schedule_every == 0 || curvature_bins == 0 || probe_size == 0)
      throw ConfigError("schedule cadence, bins and probe size must be >= 1");
    if (!(schedule_eps >= 0.0)) throw ConfigError("critic.schedule_eps must be >= 0");
    if (!(schedule_ema >= 0.0 && schedule_ema < 1.0)) throw ConfigError("critic.schedule_ema must lie in [0, 1)");
  }

  /// Smallest shortcut step size; the flow-matching term is trained there.
  double min_step() const {
    return shortcut_step_sizes.empty() ? 0.0 : *std::min_element(shortcut_step_sizes.begin(), shortcut_step_sizes.end());
  }

  VelocityNetConfig net_config(std::size_t n_states, std::size_t n_actions, const SourceMap& sm) const {
    VelocityNetConfig v;
    v.n_states = n_states;
    v.n_actions = n_actions;
    v.embed_dim = embed_dim;
    v.hidden = hidden;
    v.shortcut = shortcut_enabled;
    v.emb.cosine_basis = cosine_basis;
    v.emb.fourier_freqs = fourier_freqs;
    v.emb.fourier_dim = 2 * fourier_freqs;
    v.emb.hlgauss_bins = hlgauss_bins;
    v.emb.hlgauss_sigma = hlgauss_sigma;
    v.emb.step_embed_dim = step_embed_dim;
    v.emb.v_min = std::min(sm.l, sm.q_min);
    v.emb.v_max = sm.u;
    return v;
  }
};

/// Online and EMA target parameters of one velocity network.
struct VelocityField {
  VelocityNet net;
  NetParams online;
  TargetParams target;

  VelocityField(VelocityNet n, NetParams p, double rho)
      : net(std::move(n)), online(std::move(p)), target(TargetParams::copy_of(online, rho)) {}

  static VelocityField create(const VelocityNetConfig& cfg, double rho, Rng& rng) {
    VelocityNet net(cfg);
    NetParams p = net.init(rng);
    return VelocityField(std::move(net), std::move(p), rho);
  }

  bool shortcut() const { return net.shortcut(); }
  const NetParams& params(bool use_target) const { return use_target ? target.shadow : online; }
};

struct LossResult {
  double loss = 0.0;
  NetParams grads;
};

// --- integration ------------------------------------------------------------

/// Forward Euler of a scalar field over the schedule's knots.
inline double euler_integrate(const std::function<double(double, double)>& v, double z0, const TimeSchedule& sched) {
  double z = z0;
  for (std::size_t m = 0; m < sched.steps(); ++m) {
    z += sched.dt(m) * v(sched.knots[m], z);
    if (!std::isfinite(z)) throw NumericError("non-finite state during Euler integration", m);
  }
  return z;
}

/// Batched Euler integration from z0 = g(tau). Shortcut fields use d = dt_m.
inline std::vector<double> integrate_params(const VelocityNet& net, const NetParams& p, const SourceMap& sm,
                                            std::span<const std::size_t> s, std::span<const std::size_t> a,
                                            std::span<const double> tau, const TimeSchedule& sched) {
  if (!sched.valid()) throw UsageError("integrate: invalid time schedule");
  std::vector<double> z(tau.size());
  for (std::size_t j = 0; j < tau.size(); ++j) z[j] = source_map(sm, tau[j]);
  if (z.empty()) return z;
  const Matrix ctx = net.context(p, s, a, tau);
  for (std::size_t m = 0; m < sched.steps(); ++m) {
    const double dt = sched.dt(m);
    const Vector v = net.velocity(p, ctx, z, net.time_term(p, sched.knots[m], dt));
    for (std::size_t j = 0; j < z.size(); ++j) {
      z[j] += dt * v(static_cast<Eigen::Index>(j));
      if (!std::isfinite(z[j])) throw NumericError("non-finite state during Euler integration", m);
    }
  }
  return z;
}

inline std::vector<double> integrate(const VelocityField& field, const SourceMap& sm, std::span<const std::size_t> s,
                                     std::span<const std::size_t> a, std::span<const double> tau,
                                     const TimeSchedule& sched, bool use_target) {
  return integrate_params(field.net, field.params(use_target), sm, s, a, tau, sched);
}

inline double integrate(const VelocityField& field, const SourceMap& sm, std::size_t s, std::size_t a, double tau,
                        const TimeSchedule& sched, bool use_target) {
  const std::size_t sv[1] = {s}, av[1] = {a};
  const double tv[1] = {tau};
  return integrate(field, sm, sv, av, tv, sched, use_target)[0];
}

// --- Bellman targets --------------------------------------------------------

struct TargetSamples {
  std::vector<double> tau_prime;
  std::vector<double> y;
};

/// K target samples per transition, y_k = r + gamma m Q_target(s', a', tau'_k).
/// All transitions are integrated in one batch.
inline std::vector<TargetSamples> bellman_targets(std::span<const Transition> trs, std::span<const std::size_t> a_next,
                                                  const VelocityField& field, const SourceMap& sm,
                                                  const TimeSchedule& sched, const FlowCriticConfig& cfg, Rng& rng) {
  if (a_next.size() != trs.size()) throw UsageError("bellman_targets: one next action per transition required");
  std::vector<TargetSamples> out(trs.size());
  std::vector<std::size_t> s, a;
  std::vector<double> tau;
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < trs.size(); ++i) {
    auto& o = out[i];
    o.tau_prime.resize(cfg.K);
    o.y.assign(cfg.K, trs[i].r);
    for (auto& t : o.tau_prime) t = rng.uniform();
    if (trs[i].mask == 0.0 || cfg.gamma == 0.0) continue;
    for (std::size_t k = 0; k < cfg.K; ++k) {
      s.push_back(trs[i].s_next);
      a.push_back(a_next[i]);
      tau.push_back(o.tau_prime[k]);
      owner.push_back(i);
    }
  }
  const auto q = integrate(field, sm, s, a, tau, sched, true);
  std::vector<std::size_t> next(trs.size(), 0);
  for (std::size_t j = 0; j < q.size(); ++j) {
    const auto i = owner[j];
    out[i].y[next[i]++] = trs[i].r + cfg.gamma * trs[i].mask * q[j];
  }
  return out;
}

inline TargetSamples bellman_targets(const Transition& tr, std::size_t a_next, const VelocityField& field,
                                     const SourceMap& sm, const TimeSchedule& sched, const FlowCriticConfig& cfg,
                                     Rng& rng) {
  const Transition t[1] = {tr};
  const std::size_t an[1] = {a_next};
  return bellman_targets(t, an, field, sm, sched, cfg, rng)[0];
}

// --- coupling ---------------------------------------------------------------

struct CoupledEntry {
  std::size_t s = 0;
  std::size_t a = 0;
  std::vector<double> tau;  // conditioning fractions, paired with z0
  std::vector<double> z0;
  std::vector<double> y;
  double t = 0.0;
  std::vector<double> zt;
  std::vector<double> u;

  bool is_monotone() const {
    return std::is_sorted(tau.begin(), tau.end()) && std::is_sorted(z0.begin(), z0.end()) &&
           std::is_sorted(y.begin(), y.end());
  }
};

struct CoupledBatch {
  std::vector<CoupledEntry> entries;

  std::size_t pairs() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.y.size();
    return n;
  }
  bool is_monotone() const {
    return std::all_of(entries.begin(), entries.end(), [](const CoupledEntry& e) { return e.is_monotone(); });
  }
};

/// Fills interpolants and target velocities at time t.
inline void set_interpolation_time(CoupledEntry& e, double t) {
  e.t = t;
  const auto K = e.y.size();
  e.zt.resize(K);
  e.u.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    e.zt[k] = (1.0 - t) * e.z0[k] + t * e.y[k];
    e.u[k] = e.y[k] - e.z0[k];
  }
}

/// Pairs source fractions with target samples. Sorted mode sorts both sides
/// (the monotone coupling); independent mode keeps the same multisets but
/// pairs them in random order.
inline CoupledEntry couple_batch(std::span<const double> tau_prime, std::span<const double> y, const SourceMap& sm,
                                 const FlowCriticConfig& cfg, Rng& rng) {
  if (tau_prime.size() != y.size()) throw UsageError("couple_batch: fraction and target counts differ");
  if (y.empty()) throw UsageError("couple_batch: empty target set");
  for (double v : y)
    if (!std::isfinite(v)) throw NumericError("couple_batch: non-finite Bellman target", 0);
  CoupledEntry e;
  const auto K = y.size();
  if (cfg.tau_mode == TauMode::reuse) {
    e.tau.assign(tau_prime.begin(), tau_prime.end());
  } else {
    e.tau.resize(K);
    for (auto& t : e.tau) t = rng.uniform();
  }
  e.y.assign(y.begin(), y.end());
  if (cfg.coupling_mode == CouplingMode::sorted) {
    std::sort(e.tau.begin(), e.tau.end());
    std::sort(e.y.begin(), e.y.end());
  } else if (cfg.tau_mode == TauMode::reuse) {
    // tau'_k produced y_k, so draw order would still be (nearly) monotone
    for (std::size_t k = K; k > 1; --k) std::swap(e.tau[k - 1], e.tau[rng.index(k)]);
  }
  e.z0.resize(K);
  for (std::size_t k = 0; k < K; ++k) e.z0[k] = source_map(sm, e.tau[k]);
  set_interpolation_time(e, rng.uniform());
  return e;
}

inline CoupledBatch couple_all(std::span<const Transition> trs, std::span<const TargetSamples> targets,
                               const SourceMap& sm, const FlowCriticConfig& cfg, Rng& rng) {
  if (trs.size() != targets.size()) throw UsageError("couple_all: size mismatch");
  CoupledBatch b;
  b.entries.reserve(trs.size());
  for (std::size_t i = 0; i < trs.size(); ++i) {
    auto e = couple_batch(targets[i].tau_prime, targets[i].y, sm, cfg, rng);
    e.s = trs[i].s;
    e.a = trs[i].a;
    b.entries.push_back(std::move(e));
  }
  return b;
}

// --- losses -----------------------------------------------------------------

/// Mean over all pairs of |v(t, z_t | s, a, tau) - u|^2; shortcut nets are
/// queried at step size d.
inline LossResult velocity_regression_loss(const CoupledBatch& batch, const VelocityNet& net, const NetParams& p,
                                           double d = 0.0) {
  FieldInputs in;
  in.reserve(batch.pairs());
  std::vector<double> u;
  u.reserve(batch.pairs());
  for (const auto& e : batch.entries) {
    if (e.tau.size() != e.y.size() || e.zt.size() != e.y.size() || e.u.size() != e.y.size())
      throw UsageError("coupled entry has inconsistent lengths");
    for (std::size_t k = 0; k < e.y.size(); ++k) {
      in.push(e.s, e.a, e.tau[k], e.zt[k], e.t, d);
      u.push_back(e.u[k]);
    }
  }
  if (u.empty()) throw UsageError("loss on an empty batch");
  const auto f = net.forward(p, in);
  const double n = static_cast<double>(u.size());
  Vector g(f.output.size());
  double loss = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    const double r = f.output(static_cast<Eigen::Index>(j)) - u[j];
    loss += r * r;
    g(static_cast<Eigen::Index>(j)) = 2.0 * r / n;
  }
  return {loss / n, net.backward(p, f, g)};
}

inline LossResult flowiqn_loss(const CoupledBatch& batch, const VelocityNet& net, const NetParams& p, double d = 0.0) {
  if (!batch.is_monotone()) throw UsageError("flowiqn_loss: batch is not monotonically coupled");
  return velocity_regression_loss(batch, net, p, d);
}

/// One 2d step against two composed d steps of the target parameters:
/// target = (s(t, z, d) + s(t + d, z + d s(t, z, d), d)) / 2.
/// Each entry draws one admissible d (2d <= 1) and t ~ U[0, 1 - 2d].
inline LossResult shortcut_consistency_loss(const CoupledBatch& batch, const VelocityNet& net, const NetParams& online,
                                            const NetParams& target, const FlowCriticConfig& cfg, Rng& rng) {
  if (!net.shortcut()) throw UsageError("shortcut_consistency_loss: field is not a shortcut model");
  std::vector<double> sizes;
  for (double d : cfg.shortcut_step_sizes)
    if (2.0 * d <= 1.0) sizes.push_back(d);
  LossResult res{0.0, online.zeros_like()};
  if (sizes.empty() || batch.entries.empty()) return res;

  FieldInputs first;
  first.reserve(batch.pairs());
  for (const auto& e : batch.entries) {
    const double d = sizes[rng.index(sizes.size())];
    const double t = rng.uniform(0.0, 1.0 - 2.0 * d);
    for (std::size_t k = 0; k < e.y.size(); ++k)
      first.push(e.s, e.a, e.tau[k], (1.0 - t) * e.z0[k] + t * e.y[k], t, d);
  }
  const Vector s1 = net.evaluate(target, first);
  FieldInputs second = first;
  for (std::size_t j = 0; j < second.size(); ++j) {
    second.z[j] = first.z[j] + first.d[j] * s1(static_cast<Eigen::Index>(j));
    second.t[j] = first.t[j] + first.d[j];
  }
  const Vector s2 = net.evaluate(target, second);
  FieldInputs big = first;
  for (auto& d : big.d) d *= 2.0;
  const auto f = net.forward(online, big);
  const double n = static_cast<double>(big.size());
  Vector g(f.output.size());
  for (Eigen::Index j = 0; j < g.size(); ++j) {
    const double r = f.output(j) - 0.5 * (s1(j) + s2(j));
    res.loss += r * r;
    g(j) = 2.0 * r / n;
  }
  res.loss /= n;
  res.grads = net.backward(online, f, g);
  return res;
}

/// (1 - lambda_c) L_FM + lambda_c L_con; plain flow matching without shortcut.
inline LossResult combined_loss(const CoupledBatch& batch, const VelocityField& field, const FlowCriticConfig& cfg,
                                Rng& rng) {
  const bool independent = cfg.coupling_mode == CouplingMode::independent;
  auto fm = [&] {
    const double d = field.shortcut() ? cfg.min_step() : 0.0;
    return independent ? velocity_regression_loss(batch, field.net, field.online, d)
                       : flowiqn_loss(batch, field.net, field.online, d);
  };
  if (!field.shortcut() || cfg.lambda_c == 0.0) return fm();
  auto con = shortcut_consistency_loss(batch, field.net, field.online, field.target.shadow, cfg, rng);
  if (cfg.lambda_c == 1.0) return con;
  auto res = fm();
  res.loss = (1.0 - cfg.lambda_c) * res.loss + cfg.lambda_c * con.loss;
  for (std::size_t i = 0; i < res.grads.layers.size(); ++i) {
    auto& g = res.grads.layers[i];
    const auto& c = con.grads.layers[i];
    g.weight = (1.0 - cfg.lambda_c) * g.weight + cfg.lambda_c * c.weight;
    g.bias = (1.0 - cfg.lambda_c) * g.bias + cfg.lambda_c * c.bias;
  }
  return res;
}

// --- read-out ---------------------------------------------------------------

/// Mean of integrated returns on the (k - 0.5)/K grid, for many (s, a) at once.
inline std::vector<double> scalarize(const VelocityField& field, const SourceMap& sm, std::span<const std::size_t> s,
                                     std::span<const std::size_t> a, std::size_t K_grid, const TimeSchedule& sched,
                                     bool use_target = false) {
  if (K_grid == 0) throw UsageError("scalarize: grid size must be >= 1");
  if (s.size() != a.size()) throw UsageError("scalarize: state/action count mismatch");
  const auto grid = quantile_grid(K_grid);
  std::vector<std::size_t> ss, aa;
  std::vector<double> tt;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (double t : grid) {
      ss.push_back(s[i]);
      aa.push_back(a[i]);
      tt.push_back(t);
    }
  const auto z = integrate(field, sm, ss, aa, tt, sched, use_target);
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < K_grid; ++k) acc += z[i * K_grid + k];
    out[i] = acc / static_cast<double>(K_grid);
  }
  return out;
}

inline double scalarize(const VelocityField& field, const SourceMap& sm, std::size_t s, std::size_t a,
                        std::size_t K_grid, const TimeSchedule& sched, bool use_target = false) {
  const std::size_t sv[1] = {s}, av[1] = {a};
  return scalarize(field, sm, sv, av, K_grid, sched, use_target)[0];
}

enum class SampleMode { random, grid };

inline EmpiricalDistribution sample_return_distribution(const VelocityField& field, const SourceMap& sm, std::size_t s,
                                                        std::size_t a, std::size_t n, const TimeSchedule& sched,
                                                        SampleMode mode, Rng* rng = nullptr, bool use_target = false) {
  if (n == 0) throw UsageError("sample_return_distribution: n must be >= 1");
  std::vector<double> tau;
  if (mode == SampleMode::grid) {
    tau = quantile_grid(n);
  } else {
    if (!rng) throw UsageError("sample_return_distribution: random mode needs an rng");
    tau.resize(n);
    for (auto& t : tau) t = rng->uniform();
  }
  const std::vector<std::size_t> ss(n, s), aa(n, a);
  return EmpiricalDistribution(integrate(field, sm, ss, aa, tau, sched, use_target));
}

struct TrajectoryLoss {
  double loss = 0.0;
  std::vector<double> endpoints;
};

/// Mean over tau of sum_m dt_m |v(t_m, z_m) - u*|^2 along the field's own
/// Euler path from g(tau), with u*(tau) = F^{-1}(tau) - g(tau). The endpoint
/// error is sum_m dt_m (v - u*), so by Jensen its square never exceeds the
/// per-tau loss.
inline TrajectoryLoss trajectory_loss(const VelocityNet& net, const NetParams& p, const SourceMap& sm,
                                      std::span<const std::size_t> s, std::span<const std::size_t> a,
                                      std::span<const double> tau, std::span<const double> ustar,
                                      const TimeSchedule& sched) {
  if (ustar.size() != tau.size()) throw UsageError("trajectory_loss: one displacement per fraction required");
  if (!sched.valid()) throw UsageError("trajectory_loss: invalid time schedule");
  TrajectoryLoss out;
  auto& z = out.endpoints;
  z.resize(tau.size());
  if (z.empty()) return out;
  for (std::size_t j = 0; j < tau.size(); ++j) z[j] = source_map(sm, tau[j]);
  const Matrix ctx = net.context(p, s, a, tau);
  double acc = 0.0;
  for (std::size_t m = 0; m < sched.steps(); ++m) {
    const double dt = sched.dt(m);
    const Vector v = net.velocity(p, ctx, z, net.time_term(p, sched.knots[m], dt));
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double r = v(static_cast<Eigen::Index>(j)) - ustar[j];
      acc += dt * r * r;
      z[j] += dt * v(static_cast<Eigen::Index>(j));
    }
  }
  out.loss = acc / static_cast<double>(z.size());
  return out;
}

// --- adaptive schedule ------------------------------------------------------

/// Per-bin mean |dv/dt| along probe trajectories: Euler through bin edges,
/// then a central difference of v along the flow at each bin centre.
inline std::vector<double> estimate_curvature(const VelocityNet& net, const NetParams& p, const SourceMap& sm,
                                              std::span<const std::size_t> s, std::span<const std::size_t> a,
                                              std::span<const double> tau, std::size_t bins, double h = 1e-3) {
  if (bins == 0) throw UsageError("estimate_curvature: bins must be >= 1");
  std::vector<double> curv(bins, 0.0);
  if (tau.empty()) return curv;
  const double width = 1.0 / static_cast<double>(bins);
  const Matrix ctx = net.context(p, s, a, tau);
  const std::size_t n = tau.size();
  std::vector<double> z(n), zm(n), zp(n), zq(n);
  for (std::size_t j = 0; j < n; ++j) z[j] = source_map(sm, tau[j]);
  for (std::size_t b = 0; b < bins; ++b) {
    const double t0 = static_cast<double>(b) * width;
    const double tc = t0 + 0.5 * width;
    const Vector v0 = net.velocity(p, ctx, z, net.time_term(p, t0, width));
    for (std::size_t j = 0; j < n; ++j) zm[j] = z[j] + 0.5 * width * v0(static_cast<Eigen::Index>(j));
    const Vector vc = net.velocity(p, ctx, zm, net.time_term(p, tc, width));
    for (std::size_t j = 0; j < n; ++j) {
      zp[j] = zm[j] + h * vc(static_cast<Eigen::Index>(j));
      zq[j] = zm[j] - h * vc(static_cast<Eigen::Index>(j));
    }
    const Vector vp = net.velocity(p, ctx, zp, net.time_term(p, tc + h, width));
    const Vector vq = net.velocity(p, ctx, zq, net.time_term(p, tc - h, width));
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const auto c = static_cast<Eigen::Index>(j);
      acc += std::abs(vp(c) - vq(c)) / (2.0 * h);
      z[j] += width * v0(c);
    }
    curv[b] = acc / static_cast<double>(n);
  }
  return curv;
}

/// Refreshes the schedule from the online field's curvature on a probe batch.
inline TimeSchedule update_schedule(const VelocityField& field, const SourceMap& sm, std::span<const std::size_t> s,
                                    std::span<const std::size_t> a, std::span<const double> tau, TimeSchedule sched,
                                    std::size_t M) {
  const auto c = estimate_curvature(field.net, field.online, sm, s, a, tau, sched.curvature_ema.size());
  refresh_schedule(sched, c, M);
  return sched;
}

// --- distillation -----------------------------------------------------------

/// Mean over the shared grid of |student(s, a, tau) - teacher(s, a, tau)|^2,
/// with the teacher's integrated values held fixed.
inline LossResult distill_student(const VelocityField& teacher, const SourceMap& sm, const QuantileNet& student,
                                  const NetParams& sp, std::span<const std::size_t> s, std::span<const std::size_t> a,
                                  std::size_t grid_size, const TimeSchedule& sched, bool teacher_target = false) {
  if (s.size() != a.size() || s.empty()) throw UsageError("distill_student: need matching non-empty state/action lists");
  const auto grid = quantile_grid(grid_size);
  std::vector<std::size_t> ss, aa;
  std::vector<double> tt;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (double t : grid) {
      ss.push_back(s[i]);
      aa.push_back(a[i]);
      tt.push_back(t);
    }
  const auto teach = integrate(teacher, sm, ss, aa, tt, sched, teacher_target);
  const auto f = student.forward(sp, ss, aa, tt);
  const double n = static_cast<double>(tt.size());
  Vector g(f.output.size());
  double loss = 0.0;
  for (std::size_t j = 0; j < tt.size(); ++j) {
    const double r = f.output(static_cast<Eigen::Index>(j)) - teach[j];
    loss += r * r;
    g(static_cast<Eigen::Index>(j)) = 2.0 * r / n;
  }
  return {loss / n, student.backward(sp, f, g)};
}

}  // namespace wcrit
