#pragma once

// Executable invariants, shared by `wcrit props` and the acceptance runner.
// Each check draws its own random instances from a seed and reports the
// worst case it saw.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "wcrit/approx/embeddings.hpp"
#include "wcrit/approx/mlp.hpp"
#include "wcrit/approx/quantile_net.hpp"
#include "wcrit/config.hpp"
#include "wcrit/dist1d.hpp"
#include "wcrit/env.hpp"
#include "wcrit/flowcritic/critic.hpp"
#include "wcrit/flowcritic/schedule.hpp"
#include "wcrit/random.hpp"
#include "wcrit/trainers.hpp"

namespace wcrit {

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

namespace props {

inline std::string fmt(double x) {
  std::ostringstream os;
  os.precision(3);
  os << x;
  return os.str();
}

inline std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

/// Small random velocity-net layout over [sm.l, sm.u].
inline VelocityNetConfig small_velocity_config(Rng& rng, const SourceMap& sm, bool shortcut) {
  VelocityNetConfig c;
  c.n_states = between(rng, 1, 3);
  c.n_actions = between(rng, 1, 3);
  c.embed_dim = between(rng, 2, 5);
  c.hidden.assign(between(rng, 1, 2), 0);
  for (auto& w : c.hidden) w = between(rng, 2, 6);
  c.shortcut = shortcut;
  c.emb.cosine_basis = between(rng, 2, 5);
  c.emb.fourier_freqs = between(rng, 1, 3);
  c.emb.fourier_dim = 2 * c.emb.fourier_freqs;
  c.emb.hlgauss_bins = between(rng, 3, 7);
  c.emb.hlgauss_sigma = rng.uniform(0.5, 2.0);
  c.emb.step_embed_dim = between(rng, 2, 4);
  c.emb.v_min = std::min(sm.l, sm.q_min);
  c.emb.v_max = sm.u;
  return c;
}

inline SourceMap random_source_map(Rng& rng) {
  const double r_max = rng.uniform(-2.0, 2.0);
  const double r_min = r_max - rng.uniform(0.1, 3.0);
  return compute_bounds(r_min, r_max, rng.uniform(0.0, 0.95), rng.uniform(0.05, 1.0));
}

/// Zeroes the W1 columns that read z, t and d, leaving a field that depends
/// on (s, a, tau) only.
inline void freeze_time_and_position(const VelocityNet& net, NetParams& p) {
  const auto& c = net.config();
  auto& W1 = p.layers[net.trunk_begin()].weight;
  const auto E = static_cast<Eigen::Index>(c.embed_dim);
  W1.rightCols(W1.cols() - E).setZero();
  ++p.version;
}

template <class Fn>
PropertyResult timed(std::string name, Fn&& fn) {
  PropertyResult r;
  r.name = std::move(name);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    fn(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace props

/// Sorted-sample W_p equals the minimum over all bijections (n <= 8).
inline PropertyResult check_sorted_coupling_optimality(std::size_t cases = 200, std::uint64_t seed = 1) {
  return props::timed("sorted_coupling_optimal", [&](PropertyResult& r) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t c = 0; c < cases; ++c) {
      const std::size_t n = props::between(rng, 1, 8);
      const double p = static_cast<double>(1 + c % 3);
      const bool ties = c % 4 == 0;
      std::vector<double> x(n), y(n);
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = ties ? std::round(rng.uniform(-3.0, 3.0)) : rng.uniform(-5.0, 5.0);
        y[i] = ties ? std::round(rng.uniform(-3.0, 3.0)) : rng.normal(0.0, 3.0);
      }
      const EmpiricalDistribution a(x), b(y);
      worst = std::max(worst, std::abs(wasserstein_emp(a, b, p) - brute_force_wasserstein(a, b, p)));
    }
    r.passed = worst <= 1e-12;
    r.detail = std::to_string(cases) + " pairs, max |sorted - brute force| = " + props::fmt(worst) + " (tol 1e-12)";
  });
}

/// Sorted coupling pairs the k-th smallest fraction with the k-th smallest target.
inline PropertyResult check_coupling_monotone(std::size_t cases = 200, std::uint64_t seed = 2) {
  return props::timed("coupling_monotone", [&](PropertyResult& r) {
    Rng rng(seed);
    FlowCriticConfig cfg;
    std::size_t bad = 0;
    for (std::size_t c = 0; c < cases; ++c) {
      const auto sm = props::random_source_map(rng);
      cfg.tau_mode = c % 2 ? TauMode::fresh : TauMode::reuse;
      const std::size_t K = props::between(rng, 1, 32);
      std::vector<double> tau(K), y(K);
      for (std::size_t k = 0; k < K; ++k) {
        tau[k] = rng.uniform();
        y[k] = rng.normal(0.0, 2.0);
      }
      const auto e = couple_batch(tau, y, sm, cfg, rng);
      bool ok = e.is_monotone();
      for (std::size_t k = 0; k < K && ok; ++k)
        ok = e.z0[k] == source_map(sm, e.tau[k]) && e.u[k] == e.y[k] - e.z0[k] &&
             e.zt[k] == (1.0 - e.t) * e.z0[k] + e.t * e.y[k];
      bad += ok ? 0 : 1;
    }
    r.passed = bad == 0;
    r.detail = std::to_string(cases) + " batches, " + std::to_string(bad) + " not monotone or inconsistent";
  });
}

/// Independent pairing keeps both multisets of the sorted pairing.
inline PropertyResult check_independent_marginals(std::size_t cases = 200, std::uint64_t seed = 3) {
  return props::timed("independent_same_marginals", [&](PropertyResult& r) {
    Rng rng(seed);
    FlowCriticConfig sorted_cfg, indep_cfg;
    indep_cfg.coupling_mode = CouplingMode::independent;
    std::size_t bad = 0;
    for (std::size_t c = 0; c < cases; ++c) {
      const auto sm = props::random_source_map(rng);
      const std::size_t K = props::between(rng, 2, 32);
      std::vector<double> tau(K), y(K);
      for (std::size_t k = 0; k < K; ++k) {
        tau[k] = rng.uniform();
        y[k] = rng.normal();
      }
      const auto a = couple_batch(tau, y, sm, sorted_cfg, rng);
      auto b = couple_batch(tau, y, sm, indep_cfg, rng);
      std::sort(b.tau.begin(), b.tau.end());
      std::sort(b.y.begin(), b.y.end());
      bad += (a.tau == b.tau && a.y == b.y) ? 0 : 1;
    }
    r.passed = bad == 0;
    r.detail = std::to_string(cases) + " batches, " + std::to_string(bad) + " with differing multisets";
  });
}

/// For any field and target, W2^2 of the Euler endpoints is at most the
/// trajectory loss: the tau pairing is a coupling and Jensen bounds each
/// endpoint error.
inline PropertyResult check_trajectory_bound(std::size_t cases = 100, std::uint64_t seed = 4) {
  return props::timed("trajectory_loss_bounds_w2", [&](PropertyResult& r) {
    Rng rng(seed);
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cases; ++c) {
      const auto sm = props::random_source_map(rng);
      const VelocityNet net(props::small_velocity_config(rng, sm, c % 2 == 1));
      const auto p = net.init(rng);
      const std::size_t n = props::between(rng, 1, 64);
      const auto grid = quantile_grid(n);
      std::vector<double> target(n), ustar(n);
      for (auto& y : target) y = rng.normal(0.5 * (sm.l + sm.u), sm.width());
      std::sort(target.begin(), target.end());
      for (std::size_t j = 0; j < n; ++j) ustar[j] = target[j] - source_map(sm, grid[j]);
      TimeSchedule sched = TimeSchedule::uniform(props::between(rng, 1, 8));
      if (c % 3 == 0) {
        std::vector<double> curv(8);
        for (auto& v : curv) v = rng.uniform(0.0, 5.0);
        sched.knots = knots_from_curvature(curv, 1e-3, sched.steps());
      }
      const std::size_t s = rng.index(net.config().n_states), a = rng.index(net.config().n_actions);
      const std::vector<std::size_t> ss(n, s), aa(n, a);
      const auto tl = trajectory_loss(net, p, sm, ss, aa, grid, ustar, sched);
      const double w2 = wasserstein_emp(EmpiricalDistribution(tl.endpoints), EmpiricalDistribution(target), 2.0);
      worst = std::max(worst, w2 * w2 - tl.loss - 1e-12 * (1.0 + tl.loss));
    }
    r.passed = worst <= 0.0;
    r.detail = std::to_string(cases) + " random fields, max(W2^2 - loss) = " + props::fmt(worst) + " (must be <= 0)";
  });
}

/// Fields constant in (t, z, d): the consistency residual is exactly zero,
/// and on dyadic instances one 2d step equals two composed d steps bit for bit.
inline PropertyResult check_shortcut_zero_bias(std::size_t cases = 100, std::uint64_t seed = 5) {
  return props::timed("shortcut_zero_bias", [&](PropertyResult& r) {
    Rng rng(seed);
    std::size_t bad_residual = 0, bad_compose = 0;
    double max_loss = 0.0;
    for (std::size_t c = 0; c < cases; ++c) {
      // residual: random net, frozen in (t, z, d), online == target
      const auto sm = props::random_source_map(rng);
      const VelocityNet net(props::small_velocity_config(rng, sm, true));
      auto p = net.init(rng);
      props::freeze_time_and_position(net, p);
      FlowCriticConfig cfg;
      cfg.shortcut_enabled = true;
      CoupledBatch batch;
      const std::size_t entries = props::between(rng, 1, 4);
      for (std::size_t i = 0; i < entries; ++i) {
        const std::size_t K = props::between(rng, 1, 16);
        std::vector<double> tau(K), y(K);
        for (std::size_t k = 0; k < K; ++k) {
          tau[k] = rng.uniform();
          y[k] = rng.normal(sm.u, sm.width());
        }
        auto e = couple_batch(tau, y, sm, cfg, rng);
        e.s = rng.index(net.config().n_states);
        e.a = rng.index(net.config().n_actions);
        batch.entries.push_back(std::move(e));
      }
      const auto res = shortcut_consistency_loss(batch, net, p, p, cfg, rng);
      max_loss = std::max(max_loss, res.loss);
      bool zero_grad = true;
      for (const auto& l : res.grads.layers) zero_grad = zero_grad && l.weight.isZero(0.0) && l.bias.isZero(0.0);
      if (res.loss != 0.0 || !zero_grad) ++bad_residual;

      // composition: dyadic constant field, dyadic source map and positions
      auto q = net.init(rng);
      props::freeze_time_and_position(net, q);
      auto& last = q.layers.back();
      last.weight.setZero();
      last.bias(0) = static_cast<double>(static_cast<long>(rng.index(129)) - 64) / 8.0;
      ++q.version;
      SourceMap dy;
      dy.l = static_cast<double>(static_cast<long>(rng.index(81)) - 40) / 4.0;
      dy.u = dy.l + static_cast<double>(1 + rng.index(40)) / 4.0;
      dy.q_min = dy.l;
      dy.q_max = dy.u;
      const std::size_t n = 8;
      std::vector<std::size_t> ss(n), aa(n);
      std::vector<double> tau(n);
      for (std::size_t j = 0; j < n; ++j) {
        ss[j] = rng.index(net.config().n_states);
        aa[j] = rng.index(net.config().n_actions);
        tau[j] = static_cast<double>(rng.index(65)) / 64.0;
      }
      const double d = std::ldexp(1.0, -static_cast<int>(1 + rng.index(3)));
      const double t = std::ldexp(static_cast<double>(rng.index(9)), -3) * (1.0 - 2.0 * d);
      FieldInputs in;
      for (std::size_t j = 0; j < n; ++j) in.push(ss[j], aa[j], tau[j], source_map(dy, tau[j]), t, d);
      const Vector v1 = net.evaluate(q, in);
      FieldInputs mid = in;
      for (std::size_t j = 0; j < n; ++j) {
        mid.z[j] = in.z[j] + d * v1(static_cast<Eigen::Index>(j));
        mid.t[j] = t + d;
      }
      const Vector v2 = net.evaluate(q, mid);
      FieldInputs big = in;
      for (auto& x : big.d) x = 2.0 * d;
      const Vector vb = net.evaluate(q, big);
      bool same = true;
      for (std::size_t j = 0; j < n; ++j) {
        const auto k = static_cast<Eigen::Index>(j);
        same = same && (in.z[j] + 2.0 * d * vb(k)) == (mid.z[j] + d * v2(k));
      }
      const std::size_t M = std::size_t{1} << rng.index(4);
      const auto coarse = integrate_params(net, q, dy, ss, aa, tau, TimeSchedule::uniform(M));
      const auto fine = integrate_params(net, q, dy, ss, aa, tau, TimeSchedule::uniform(2 * M));
      same = same && coarse == fine;
      if (!same) ++bad_compose;
    }
    r.passed = bad_residual == 0 && bad_compose == 0;
    r.detail = std::to_string(cases) + " instances, nonzero residual: " + std::to_string(bad_residual) +
               " (max loss " + props::fmt(max_loss) + "), composition mismatches: " + std::to_string(bad_compose);
  });
}

/// A single d = 1 step from t = 0 on a sorted shared grid: the velocity loss
/// equals the squared empirical W2 whenever the one-step map is monotone.
/// Instances are made monotone by shrinking the output layer.
inline PropertyResult check_single_step_identity(std::size_t cases = 100, std::uint64_t seed = 6) {
  return props::timed("single_step_loss_is_w2", [&](PropertyResult& r) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t c = 0; c < cases; ++c) {
      const auto sm = props::random_source_map(rng);
      const VelocityNet net(props::small_velocity_config(rng, sm, true));
      auto p = net.init(rng);
      const std::size_t K = props::between(rng, 2, 32);
      const auto grid = quantile_grid(K);
      const std::size_t s = rng.index(net.config().n_states), a = rng.index(net.config().n_actions);
      const std::vector<std::size_t> ss(K, s), aa(K, a);
      const auto one = TimeSchedule::uniform(1);
      std::vector<double> q;
      for (int shrink = 0; shrink < 80; ++shrink) {
        q = integrate_params(net, p, sm, ss, aa, grid, one);
        if (std::is_sorted(q.begin(), q.end())) break;
        p.layers.back().weight *= 0.5;
        p.layers.back().bias *= 0.5;
        ++p.version;
      }
      if (!std::is_sorted(q.begin(), q.end())) throw UsageError("could not make a monotone instance");

      std::vector<double> y(K);
      for (auto& v : y) v = rng.normal(0.5 * (sm.l + sm.u), sm.width());
      std::sort(y.begin(), y.end());
      CoupledEntry e;
      e.s = s;
      e.a = a;
      e.tau = grid;
      e.y = y;
      e.z0.resize(K);
      for (std::size_t k = 0; k < K; ++k) e.z0[k] = source_map(sm, grid[k]);
      set_interpolation_time(e, 0.0);
      CoupledBatch b;
      b.entries.push_back(e);
      const double loss = velocity_regression_loss(b, net, p, 1.0).loss;
      const double w2 = wasserstein_emp(EmpiricalDistribution(q), EmpiricalDistribution(y), 2.0);
      worst = std::max(worst, std::abs(loss - w2 * w2));
    }
    r.passed = worst <= 1e-9;
    r.detail = std::to_string(cases) + " instances, max |loss - W2^2| = " + props::fmt(worst) + " (tol 1e-9)";
  });
}

/// Distillation on a shared grid: the loss is an upper bound on W2^2 between
/// student and teacher, with equality when both are monotone in tau.
inline PropertyResult check_distillation_bound(std::size_t cases = 50, std::uint64_t seed = 7) {
  return props::timed("distillation_loss_vs_w2", [&](PropertyResult& r) {
    Rng rng(seed);
    double worst_gap = -std::numeric_limits<double>::infinity();
    double worst_eq = 0.0;
    for (std::size_t c = 0; c < cases; ++c) {
      const auto sm = props::random_source_map(rng);
      const auto vcfg = props::small_velocity_config(rng, sm, false);
      auto teacher = VelocityField::create(vcfg, 0.005, rng);
      QuantileNetConfig qc{vcfg.n_states, vcfg.n_actions, props::between(rng, 2, 5), props::between(rng, 2, 5), {4}};
      const QuantileNet student(qc);
      auto sp = student.init(rng);
      const std::size_t n = props::between(rng, 2, 32);
      const auto sched = TimeSchedule::uniform(props::between(rng, 1, 4));
      const std::size_t s = rng.index(vcfg.n_states), a = rng.index(vcfg.n_actions);
      const std::size_t sv[1] = {s}, av[1] = {a};
      const std::vector<std::size_t> ss(n, s), aa(n, a);
      const auto grid = quantile_grid(n);

      auto gap = [&] {
        const double loss = distill_student(teacher, sm, student, sp, sv, av, n, sched).loss;
        const auto tq = integrate(teacher, sm, ss, aa, grid, sched, false);
        const Vector sq = student.evaluate(sp, ss, aa, grid);
        const double w2 = wasserstein_emp(EmpiricalDistribution(std::vector<double>(sq.data(), sq.data() + sq.size())),
                                          EmpiricalDistribution(tq), 2.0);
        return std::pair{loss - w2 * w2, std::is_sorted(tq.begin(), tq.end())};
      };
      worst_gap = std::max(worst_gap, -gap().first);

      // monotone pair: constant student, teacher shrunk towards g
      sp.layers.back().weight.setZero();
      ++sp.version;
      for (int shrink = 0; shrink < 80; ++shrink) {
        const auto [g, sorted] = gap();
        if (sorted) {
          worst_eq = std::max(worst_eq, std::abs(g));
          break;
        }
        teacher.online.layers.back().weight *= 0.5;
        teacher.online.layers.back().bias *= 0.5;
        ++teacher.online.version;
      }
    }
    r.passed = worst_gap <= 1e-12 && worst_eq <= 1e-9;
    r.detail = std::to_string(cases) + " pairs, max(W2^2 - loss) = " + props::fmt(worst_gap) +
               ", monotone max |loss - W2^2| = " + props::fmt(worst_eq);
  });
}

namespace props {

/// Largest elementwise |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double gradient_error(NetParams p, NetParams analytic, const std::function<double(const NetParams&)>& loss,
                             double h, double floor) {
  std::vector<double*> slots;
  p.for_each([&](double& x) { slots.push_back(&x); });
  std::vector<const double*> grads;
  analytic.for_each([&](double& x) { grads.push_back(&x); });
  double worst = 0.0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const double orig = *slots[i];
    *slots[i] = orig + h;
    ++p.version;
    const double up = loss(p);
    *slots[i] = orig - h;
    ++p.version;
    const double down = loss(p);
    *slots[i] = orig;
    ++p.version;
    const double fd = (up - down) / (2.0 * h);
    const double g = *grads[i];
    worst = std::max(worst, std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), floor}));
  }
  return worst;
}

}  // namespace props

/// Backward passes against central differences on random small nets: plain
/// MLPs, quantile nets, and velocity nets with and without shortcut inputs,
/// through both a random linear read-out and the flow-matching loss.
inline PropertyResult check_gradients(std::size_t nets = 50, std::uint64_t seed = 8, double h = 1e-5,
                                      double floor = 1e-6, double tol = 1e-4) {
  return props::timed("gradient_check", [&](PropertyResult& r) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t c = 0; c < nets; ++c) {
      const std::size_t kind = c % 4;
      const std::size_t n = props::between(rng, 1, 6);
      Vector w(static_cast<Eigen::Index>(n));
      for (Eigen::Index j = 0; j < w.size(); ++j) w(j) = rng.normal();
      double err = 0.0;
      if (kind == 0) {
        std::vector<std::size_t> widths{props::between(rng, 1, 5)};
        for (std::size_t l = props::between(rng, 1, 3); l-- > 0;) widths.push_back(props::between(rng, 1, 6));
        widths.push_back(1);
        const auto act = c % 8 == 0 ? Activation::identity : Activation::gelu;
        const auto p = make_mlp(widths, rng, act);
        Matrix x(static_cast<Eigen::Index>(widths[0]), static_cast<Eigen::Index>(n));
        for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = rng.normal();
        const auto f = forward(p, x);
        const auto g = backward(p, f.cache, w.transpose());
        err = props::gradient_error(p, g.grads, [&](const NetParams& q) {
          return (forward_layers(q, 0, q.layers.size(), x, nullptr).row(0).transpose().array() * w.array()).sum();
        }, h, floor);
      } else if (kind == 1) {
        QuantileNetConfig qc{props::between(rng, 1, 3), props::between(rng, 1, 3), props::between(rng, 1, 5),
                             props::between(rng, 1, 5), {props::between(rng, 1, 5)}};
        const QuantileNet net(qc);
        const auto p = net.init(rng);
        std::vector<std::size_t> s(n), a(n);
        std::vector<double> tau(n);
        for (std::size_t j = 0; j < n; ++j) {
          s[j] = rng.index(qc.n_states);
          a[j] = rng.index(qc.n_actions);
          tau[j] = rng.uniform();
        }
        const auto f = net.forward(p, s, a, tau);
        err = props::gradient_error(p, net.backward(p, f, w), [&](const NetParams& q) {
          return (net.evaluate(q, s, a, tau).array() * w.array()).sum();
        }, h, floor);
      } else {
        const auto sm = props::random_source_map(rng);
        const bool shortcut = kind == 3;
        const VelocityNet net(props::small_velocity_config(rng, sm, shortcut));
        const auto p = net.init(rng);
        if (c % 8 < 4) {
          FieldInputs in;
          for (std::size_t j = 0; j < n; ++j)
            in.push(rng.index(net.config().n_states), rng.index(net.config().n_actions), rng.uniform(),
                    rng.uniform(sm.l - 0.5, sm.u + 0.5), rng.uniform(), rng.uniform(0.05, 1.0));
          const auto f = net.forward(p, in);
          err = props::gradient_error(p, net.backward(p, f, w), [&](const NetParams& q) {
            return (net.evaluate(q, in).array() * w.array()).sum();
          }, h, floor);
        } else {
          FlowCriticConfig cfg;
          CoupledBatch b;
          std::vector<double> tau(n), y(n);
          for (std::size_t j = 0; j < n; ++j) {
            tau[j] = rng.uniform();
            y[j] = rng.normal(sm.u, sm.width());
          }
          b.entries.push_back(couple_batch(tau, y, sm, cfg, rng));
          b.entries.back().s = rng.index(net.config().n_states);
          b.entries.back().a = rng.index(net.config().n_actions);
          const double d = shortcut ? 0.125 : 0.0;
          const auto res = flowiqn_loss(b, net, p, d);
          err = props::gradient_error(p, res.grads, [&](const NetParams& q) {
            return flowiqn_loss(b, net, q, d).loss;
          }, h, floor);
        }
      }
      worst = std::max(worst, err);
    }
    r.passed = worst <= tol;
    r.detail = std::to_string(nets) + " nets, max relative error = " + props::fmt(worst) + " (tol " + props::fmt(tol) +
               ", step " + props::fmt(h) + ")";
  });
}

/// The three MDPs of the contraction check.
inline std::vector<std::pair<std::string, TabularMdp>> contraction_mdps() {
  std::vector<std::pair<std::string, TabularMdp>> out;
  out.emplace_back("chain_bimodal(gamma=0.5)",
                   build_chain_mdp(4, {parse_reward_support("0:1"), parse_reward_support("0:1"),
                                       parse_reward_support("-1:0.5,1:0.5")}, 0.5));
  out.emplace_back("random(gamma=0.9)", build_random_mdp(6, 2, 0.9, 17));
  out.emplace_back("random(gamma=0.99)", build_random_mdp(6, 2, 0.99, 23));
  return out;
}

/// d_{k+1} <= gamma d_k + 2 atom_width past the first sweep, sup-W2, uniform policy.
inline PropertyResult check_contraction(std::size_t sweeps = 60, std::size_t atoms = 201) {
  return props::timed("contraction_bound", [&](PropertyResult& r) {
    bool all = true;
    std::string detail;
    for (const auto& [name, mdp] : contraction_mdps()) {
      const auto pi = FixedPolicy::uniform(mdp.n_states(), mdp.n_actions());
      const auto res = contraction_study(mdp, pi, 2.0, sweeps, atoms);
      double slack = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 1; k + 1 < res.distances.size(); ++k)
        slack = std::max(slack, res.distances[k + 1] - res.gamma * res.distances[k] - 2.0 * res.atom_width);
      all = all && res.bound_holds();
      detail += (detail.empty() ? "" : "; ") + name + " max(d_k+1 - gamma d_k - 2w) = " + props::fmt(slack);
    }
    r.passed = all;
    r.detail = detail;
  });
}

inline PropertyResult check_hl_gauss(std::size_t cases = 500, std::uint64_t seed = 9) {
  return props::timed("hl_gauss_probability_vector", [&](PropertyResult& r) {
    Rng rng(seed);
    double worst = 0.0;
    bool nonneg = true;
    for (std::size_t c = 0; c < cases; ++c) {
      EmbeddingConfig e;
      e.hlgauss_bins = props::between(rng, 1, 64);
      e.hlgauss_sigma = rng.uniform(0.05, 20.0);
      e.v_min = rng.uniform(-10.0, 0.0);
      e.v_max = e.v_min + rng.uniform(0.1, 10.0);
      const double span = e.v_max - e.v_min;
      std::vector<double> z(8);
      for (auto& v : z) v = rng.uniform(e.v_min - span, e.v_max + span);
      const Matrix f = hl_gauss_embed_batch(z, e);
      for (Eigen::Index j = 0; j < f.cols(); ++j) {
        worst = std::max(worst, std::abs(f.col(j).sum() - 1.0));
        nonneg = nonneg && (f.col(j).array() >= 0.0).all();
      }
    }
    r.passed = nonneg && worst <= 1e-12;
    r.detail = std::to_string(cases * 8) + " embeddings, max |sum - 1| = " + props::fmt(worst) +
               (nonneg ? ", all entries >= 0" : ", NEGATIVE entries");
  });
}

/// Constant curvature must reproduce the uniform grid.
inline PropertyResult check_constant_curvature_knots(std::size_t cases = 200, std::uint64_t seed = 10) {
  return props::timed("constant_curvature_uniform_knots", [&](PropertyResult& r) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t c = 0; c < cases; ++c) {
      const std::size_t M = props::between(rng, 1, 64);
      auto sched = TimeSchedule::uniform(M, props::between(rng, 1, 64));
      sched.eps = c % 5 == 0 ? 0.0 : rng.uniform(0.0, 0.1);
      const double level = c % 7 == 0 ? 0.0 : std::exp(rng.uniform(-10.0, 5.0));
      const std::vector<double> curv(sched.curvature_ema.size(), level);
      for (std::size_t rep = 0; rep < 3; ++rep) refresh_schedule(sched, curv, M);
      for (std::size_t m = 0; m <= M; ++m)
        worst = std::max(worst, std::abs(sched.knots[m] - static_cast<double>(m) / static_cast<double>(M)));
    }
    r.passed = worst <= 1e-9;
    r.detail = std::to_string(cases) + " schedules, max |t_m - m/M| = " + props::fmt(worst) + " (tol 1e-9)";
  });
}

inline PropertyResult check_config_round_trip(std::size_t cases = 100, std::uint64_t seed = 11) {
  return props::timed("config_round_trip", [&](PropertyResult& r) {
    Rng rng(seed);
    std::size_t bad = 0;
    for (std::size_t c = 0; c < cases; ++c) {
      RunConfig cfg;
      cfg.gamma = rng.uniform(0.0, 0.999);
      cfg.seed = rng.engine()();
      cfg.env.kind = static_cast<EnvKind>(rng.index(4));
      cfg.env.rewards = "0:1;-1:0.25,1:0.75";
      cfg.env.policy = c % 2 ? "uniform" : "det:0,1,0";
      cfg.critic_kind = static_cast<CriticKind>(rng.index(3));
      cfg.critic.K = props::between(rng, 1, 64);
      cfg.critic.kappa = rng.uniform(0.01, 1.0);
      cfg.critic.lambda_c = rng.uniform();
      cfg.critic.shortcut_enabled = c % 3 == 0;
      cfg.critic.shortcut_step_sizes = {rng.uniform(0.01, 1.0), 1.0 / 3.0};
      cfg.critic.hidden.assign(props::between(rng, 0, 3), 0);
      for (auto& w : cfg.critic.hidden) w = props::between(rng, 1, 512);
      cfg.critic.schedule_mode = static_cast<ScheduleMode>(rng.index(2));
      cfg.critic.lr = std::exp(rng.uniform(-12.0, -2.0));
      cfg.critic.hlgauss_sigma = rng.uniform(0.1, 30.0);
      cfg.iqn.huber_kappa = rng.uniform(0.1, 3.0);
      cfg.iqn.hidden = {props::between(rng, 1, 64)};
      cfg.gradient_steps = rng.index(100000);
      cfg.contraction_p = rng.uniform(1.0, 4.0);
      if (!(parse_config_text(serialize_config(cfg)) == cfg)) ++bad;
    }
    r.passed = bad == 0;
    r.detail = std::to_string(cases) + " configs, " + std::to_string(bad) + " changed by a round trip";
  });
}

/// The full suite run by `wcrit props`.
inline std::vector<PropertyResult> run_property_suite(std::uint64_t seed = 0) {
  auto s = [seed](std::uint64_t k) { return mix_seed(seed, k); };
  return {
      check_sorted_coupling_optimality(200, s(1)),
      check_coupling_monotone(200, s(2)),
      check_independent_marginals(200, s(3)),
      check_trajectory_bound(100, s(4)),
      check_shortcut_zero_bias(100, s(5)),
      check_single_step_identity(100, s(6)),
      check_distillation_bound(50, s(7)),
      check_gradients(50, s(8)),
      check_contraction(),
      check_hl_gauss(500, s(9)),
      check_constant_curvature_knots(200, s(10)),
      check_config_round_trip(100, s(11)),
  };
}

}  // namespace wcrit
