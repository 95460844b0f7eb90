#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wcrit/approx/optim.hpp"
#include "wcrit/approx/quantile_net.hpp"
#include "wcrit/baselines.hpp"
#include "wcrit/dist1d.hpp"
#include "wcrit/env.hpp"
#include "wcrit/error.hpp"
#include "wcrit/flowcritic/critic.hpp"
#include "wcrit/kv.hpp"
#include "wcrit/random.hpp"

namespace wcrit {

// --- run configuration ------------------------------------------------------

enum class EnvKind { chain, corridor, random, file };
enum class CriticKind { flowiqn, independent_cfm, iqn };

struct EnvSpec {
  EnvKind kind = EnvKind::chain;
  std::size_t n_states = 4;
  std::size_t n_actions = 1;
  std::string rewards = "0:1";   // chain: per-step supports, ';'-separated (one entry broadcasts)
  std::string file;              // kind=file: MDP spec path
  std::uint64_t seed = 0;        // kind=random: generator seed
  std::string policy = "uniform";     // uniform | corridor | det:a0,a1,...
  std::string behaviour = "policy";   // policy | uniform | corridor | det:...
  std::size_t dataset_size = 10000;
  std::size_t horizon = 100;

  bool operator==(const EnvSpec&) const = default;
};

struct RunConfig {
  double gamma = 0.99;
  std::uint64_t seed = 0;
  EnvSpec env;
  CriticKind critic_kind = CriticKind::flowiqn;
  FlowCriticConfig critic;
  IqnConfig iqn;
  std::size_t gradient_steps = 10000;
  std::size_t batch_size = 32;
  std::size_t eval_every = 1000;
  std::size_t eval_samples = 64;
  std::size_t J = 8;
  std::size_t oracle_atoms = 401;
  std::size_t max_eval_pairs = 256;
  std::size_t rollout_episodes = 1000;
  double contraction_p = 2.0;
  std::size_t contraction_sweeps = 50;

  bool operator==(const RunConfig&) const = default;

  /// Critic settings with the run-level discount and critic kind applied.
  FlowCriticConfig effective_critic() const {
    FlowCriticConfig c = critic;
    c.gamma = gamma;
    if (critic_kind == CriticKind::independent_cfm) c.coupling_mode = CouplingMode::independent;
    return c;
  }

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (eval_every == 0) throw ConfigError("train.eval_every must be >= 1");
    if (eval_samples == 0) throw ConfigError("train.eval_samples must be >= 1");
    if (J == 0) throw ConfigError("train.J must be >= 1");
    if (oracle_atoms < 2) throw ConfigError("eval.oracle_atoms must be >= 2");
    if (max_eval_pairs == 0) throw ConfigError("eval.max_pairs must be >= 1");
    if (!(contraction_p >= 1.0)) throw ConfigError("contraction.p must be >= 1");
    if (env.dataset_size == 0 || env.horizon == 0) throw ConfigError("env.dataset_size and env.horizon must be >= 1");
    effective_critic().validate();
    iqn.validate();
  }
};

/// Copy of `m` with a different discount.
inline TabularMdp with_gamma(const TabularMdp& m, double gamma) {
  const auto ns = m.n_states(), na = m.n_actions();
  std::vector<double> p;
  std::vector<RewardSupport> r;
  std::vector<bool> term;
  for (std::size_t s = 0; s < ns; ++s) {
    term.push_back(m.terminal(s));
    for (std::size_t a = 0; a < na; ++a) {
      r.push_back(m.reward(s, a));
      for (std::size_t s2 = 0; s2 < ns; ++s2) p.push_back(m.prob(s, a, s2));
    }
  }
  return TabularMdp(ns, na, std::move(p), std::move(r), std::move(term), gamma, m.start_state());
}

inline TabularMdp build_env(const RunConfig& cfg) {
  const auto& e = cfg.env;
  switch (e.kind) {
    case EnvKind::chain: {
      std::vector<RewardSupport> spec;
      for (auto part : kv::split(e.rewards, ';')) spec.push_back(parse_reward_support(part));
      return build_chain_mdp(e.n_states, spec, cfg.gamma, e.n_actions);
    }
    case EnvKind::corridor:
      return build_corridor_mdp(cfg.gamma);
    case EnvKind::random:
      return build_random_mdp(e.n_states, e.n_actions, cfg.gamma, e.seed);
    case EnvKind::file:
      return with_gamma(load_mdp(e.file), cfg.gamma);
  }
  throw ConfigError("unknown environment kind");
}

inline FixedPolicy parse_policy(std::string_view text, const TabularMdp& mdp) {
  FixedPolicy pi;
  if (text == "uniform") {
    pi = FixedPolicy::uniform(mdp.n_states(), mdp.n_actions());
  } else if (text == "corridor") {
    pi = corridor_behaviour_policy();
  } else if (text.starts_with("det:")) {
    std::vector<std::size_t> acts;
    for (auto part : kv::split(text.substr(4), ',')) acts.push_back(kv::to_count(part));
    if (acts.size() != mdp.n_states()) throw ConfigError("det: policy needs one action per state");
    pi = FixedPolicy::deterministic(acts, mdp.n_actions());
  } else {
    throw ConfigError("unknown policy '" + std::string(text) + "'");
  }
  pi.validate(mdp);
  return pi;
}

// --- metrics ----------------------------------------------------------------

struct MetricsRecord {
  std::size_t step = 0;
  double mean_w2 = 0.0;
  double iqm_neg_w2 = 0.0;
  double sup_w2 = 0.0;
  double loss = 0.0;  // mean training loss since the previous record; NaN before training

  bool operator==(const MetricsRecord&) const = default;
};

struct MetricsTrace {
  std::vector<MetricsRecord> records;
  bool aborted = false;
  std::string diagnostic;

  void push(const MetricsRecord& r) {
    if (!records.empty() && r.step <= records.back().step) throw UsageError("metrics steps must strictly increase");
    records.push_back(r);
  }
};

struct W2Report {
  std::vector<double> per_pair;
  double mean = 0.0;
  double sup = 0.0;
  double iqm_neg = 0.0;
};

using SamplerFn = std::function<EmpiricalDistribution(std::size_t s, std::size_t a, std::size_t n)>;

/// W2 between n grid samples of the critic and the atomized oracle, per pair.
inline W2Report evaluate_w2(const SamplerFn& sampler, const ReturnTable& oracle,
                            std::span<const std::pair<std::size_t, std::size_t>> pairs, std::size_t n_samples) {
  if (pairs.empty()) throw UsageError("evaluate_w2: no state-action pairs");
  if (n_samples == 0) throw UsageError("evaluate_w2: n_samples must be >= 1");
  W2Report rep;
  std::vector<double> neg;
  for (auto [s, a] : pairs) {
    if (s >= oracle.n_states || a >= oracle.n_actions) throw UsageError("evaluate_w2: pair missing from oracle table");
    const auto model = sampler(s, a, n_samples);
    const auto truth = atomize(oracle.at(s, a), n_samples);
    const double w = wasserstein_emp(model, truth, 2.0);
    rep.per_pair.push_back(w);
    neg.push_back(-w);
  }
  for (double w : rep.per_pair) {
    rep.mean += w;
    rep.sup = std::max(rep.sup, w);
  }
  rep.mean /= static_cast<double>(rep.per_pair.size());
  rep.iqm_neg = iqm_or_mean(neg);
  return rep;
}

/// Visited (s, a) pairs in index order, capped.
inline std::vector<std::pair<std::size_t, std::size_t>> eval_pairs(const Dataset& d, std::size_t cap) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < d.n_states && out.size() < cap; ++s)
    for (std::size_t a = 0; a < d.n_actions && out.size() < cap; ++a)
      if (d.behaviour_counts[s][a] > 0) out.emplace_back(s, a);
  return out;
}

// --- critics ----------------------------------------------------------------

class Critic {
 public:
  virtual ~Critic() = default;
  /// One gradient step; `step` counts from 1. Returns the training loss.
  virtual double train_step(std::span<const Transition> batch, std::span<const std::size_t> a_next, std::size_t step) = 0;
  /// n samples on the (k - 0.5)/n grid, sorted.
  virtual EmpiricalDistribution sample(std::size_t s, std::size_t a, std::size_t n) const = 0;
  /// Scalarized expected return for each (s, a).
  virtual std::vector<double> scalar(std::span<const std::size_t> s, std::span<const std::size_t> a,
                                     bool use_target) const = 0;
  virtual std::vector<const NetParams*> parameters() const = 0;
  /// key=value lines describing the critic (config and schedule knots).
  virtual std::string metadata() const = 0;
};

inline std::string join_doubles(std::span<const double> xs, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += kv::format_double(xs[i]);
  }
  return out;
}

class FlowCritic final : public Critic {
 public:
  struct Member {
    VelocityField field;
    AdamState opt;
    TimeSchedule sched;
  };

  FlowCritic(const FlowCriticConfig& cfg, std::size_t n_states, std::size_t n_actions, const SourceMap& sm,
             std::uint64_t seed)
      : cfg_(cfg), sm_(sm), rng_(mix_seed(seed, 11)) {
    cfg_.validate();
    const auto net_cfg = cfg_.net_config(n_states, n_actions, sm_);
    Rng init(mix_seed(seed, 12));
    for (std::size_t m = 0; m < cfg_.ensemble_size; ++m) {
      auto field = VelocityField::create(net_cfg, cfg_.rho, init);
      auto opt = AdamState::for_params(field.online, cfg_.lr);
      opt.weight_decay = cfg_.weight_decay;
      members_.push_back({std::move(field), std::move(opt), TimeSchedule::uniform(cfg_.M, cfg_.curvature_bins)});
      members_.back().sched.eps = cfg_.schedule_eps;
      members_.back().sched.ema_decay = cfg_.schedule_ema;
    }
  }

  const SourceMap& source() const { return sm_; }
  const std::vector<Member>& members() const { return members_; }
  std::vector<Member>& members() { return members_; }

  double train_step(std::span<const Transition> batch, std::span<const std::size_t> a_next, std::size_t step) override {
    double total = 0.0;
    for (auto& m : members_) {
      const auto targets = bellman_targets(batch, a_next, m.field, sm_, m.sched, cfg_, rng_);
      const auto coupled = couple_all(batch, targets, sm_, cfg_, rng_);
      auto res = combined_loss(coupled, m.field, cfg_, rng_);
      if (!std::isfinite(res.loss) || !res.grads.all_finite()) throw NumericError("non-finite critic loss", step);
      adam_step(m.field.online, res.grads, m.opt);
      ema_update(m.field.target, m.field.online);
      if (cfg_.schedule_mode == ScheduleMode::adaptive && step % cfg_.schedule_every == 0) refresh(m, batch);
      total += res.loss;
    }
    return total / static_cast<double>(members_.size());
  }

  EmpiricalDistribution sample(std::size_t s, std::size_t a, std::size_t n) const override {
    std::vector<double> avg(n, 0.0);
    for (const auto& m : members_) {
      const auto d = sample_return_distribution(m.field, sm_, s, a, n, m.sched, SampleMode::grid);
      for (std::size_t k = 0; k < n; ++k) avg[k] += d.samples()[k];
    }
    for (auto& v : avg) v /= static_cast<double>(members_.size());
    return EmpiricalDistribution(std::move(avg));
  }

  std::vector<double> scalar(std::span<const std::size_t> s, std::span<const std::size_t> a,
                             bool use_target) const override {
    std::vector<double> out;
    for (std::size_t i = 0; i < members_.size(); ++i) {
      const auto& m = members_[i];
      const auto v = scalarize(m.field, sm_, s, a, cfg_.K, m.sched, use_target);
      if (i == 0) {
        out = v;
      } else {
        for (std::size_t j = 0; j < v.size(); ++j)
          out[j] = cfg_.aggregate == EnsembleAggregate::min ? std::min(out[j], v[j]) : out[j] + v[j];
      }
    }
    if (cfg_.aggregate == EnsembleAggregate::mean)
      for (auto& v : out) v /= static_cast<double>(members_.size());
    return out;
  }

  std::vector<const NetParams*> parameters() const override {
    std::vector<const NetParams*> out;
    for (const auto& m : members_) out.push_back(&m.field.online);
    return out;
  }

  std::string metadata() const override {
    std::ostringstream os;
    os << "critic=flow\n";
    os << "source.l=" << kv::format_double(sm_.l) << "\nsource.u=" << kv::format_double(sm_.u) << '\n';
    for (std::size_t i = 0; i < members_.size(); ++i)
      os << "member." << i << ".knots=" << join_doubles(members_[i].sched.knots) << '\n';
    return os.str();
  }

 private:
  void refresh(Member& m, std::span<const Transition> batch) {
    std::vector<std::size_t> s, a;
    std::vector<double> tau;
    for (std::size_t j = 0; j < cfg_.probe_size; ++j) {
      const auto& tr = batch[j % batch.size()];
      s.push_back(tr.s);
      a.push_back(tr.a);
      tau.push_back(rng_.uniform());
    }
    m.sched = update_schedule(m.field, sm_, s, a, tau, m.sched, cfg_.M);
  }

  FlowCriticConfig cfg_;
  SourceMap sm_;
  Rng rng_;
  std::vector<Member> members_;
};

class IqnCritic final : public Critic {
 public:
  IqnCritic(const IqnConfig& cfg, double gamma, std::size_t n_states, std::size_t n_actions, std::uint64_t seed)
      : cfg_(cfg), gamma_(gamma), net_(cfg.net_config(n_states, n_actions)), rng_(mix_seed(seed, 11)) {
    cfg_.validate();
    Rng init(mix_seed(seed, 12));
    online_ = net_.init(init);
    target_ = TargetParams::copy_of(online_, cfg_.rho);
    opt_ = AdamState::for_params(online_, cfg_.lr);
  }

  double train_step(std::span<const Transition> batch, std::span<const std::size_t> a_next, std::size_t step) override {
    const auto ys = iqn_targets(net_, target_.shadow, batch, a_next, gamma_, cfg_.n_targets, rng_);
    std::vector<IqnEntry> entries(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      entries[i].s = batch[i].s;
      entries[i].a = batch[i].a;
      entries[i].tau.resize(cfg_.n_quantiles);
      for (auto& t : entries[i].tau) t = rng_.uniform();
      entries[i].y = ys[i];
    }
    auto res = iqn_loss(net_, online_, entries, cfg_);
    if (!std::isfinite(res.loss) || !res.grads.all_finite()) throw NumericError("non-finite critic loss", step);
    adam_step(online_, res.grads, opt_);
    ema_update(target_, online_);
    return res.loss;
  }

  EmpiricalDistribution sample(std::size_t s, std::size_t a, std::size_t n) const override {
    return iqn_sample_distribution(net_, online_, s, a, n);
  }

  std::vector<double> scalar(std::span<const std::size_t> s, std::span<const std::size_t> a,
                             bool use_target) const override {
    const auto grid = quantile_grid(cfg_.n_quantiles);
    std::vector<std::size_t> ss, aa;
    std::vector<double> tt;
    for (std::size_t i = 0; i < s.size(); ++i)
      for (double t : grid) {
        ss.push_back(s[i]);
        aa.push_back(a[i]);
        tt.push_back(t);
      }
    const Vector q = net_.evaluate(use_target ? target_.shadow : online_, ss, aa, tt);
    std::vector<double> out(s.size(), 0.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (std::size_t k = 0; k < grid.size(); ++k) out[i] += q(static_cast<Eigen::Index>(i * grid.size() + k));
      out[i] /= static_cast<double>(grid.size());
    }
    return out;
  }

  std::vector<const NetParams*> parameters() const override { return {&online_}; }

  std::string metadata() const override { return "critic=iqn\n"; }

 private:
  IqnConfig cfg_;
  double gamma_;
  QuantileNet net_;
  Rng rng_;
  NetParams online_;
  TargetParams target_;
  AdamState opt_;
};

inline SourceMap run_source_map(const RunConfig& cfg, const Dataset& data) {
  const auto [r_min, r_max] = data.reward_range();
  return compute_bounds(r_min, r_max, cfg.gamma, cfg.critic.kappa);
}

inline std::unique_ptr<Critic> make_critic(const RunConfig& cfg, const Dataset& data) {
  if (cfg.critic_kind == CriticKind::iqn)
    return std::make_unique<IqnCritic>(cfg.iqn, cfg.gamma, data.n_states, data.n_actions, cfg.seed);
  return std::make_unique<FlowCritic>(cfg.effective_critic(), data.n_states, data.n_actions, run_source_map(cfg, data),
                                      cfg.seed);
}

// --- fixed-policy evaluation ------------------------------------------------

struct RunStreams {
  std::uint64_t data;
  std::uint64_t batch;
  std::uint64_t eval;

  explicit RunStreams(std::uint64_t seed)
      : data(mix_seed(seed, 1)), batch(mix_seed(seed, 2)), eval(mix_seed(seed, 3)) {}
};

struct FixedPolicyRun {
  MetricsTrace trace;
  std::unique_ptr<Critic> critic;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // evaluation pairs, in final_eval order
  W2Report final_eval;
};

inline std::vector<Transition> sample_batch(const Dataset& d, std::size_t n, Rng& rng) {
  std::vector<Transition> out(n);
  for (auto& t : out) t = d.transitions[rng.index(d.transitions.size())];
  return out;
}

/// Trains a critic on a pre-generated dataset with next actions a' ~ pi(.|s'),
/// evaluating W2 to the exact oracle every eval_every steps.
inline FixedPolicyRun run_fixed_policy(const RunConfig& cfg) {
  cfg.validate();
  const RunStreams streams(cfg.seed);
  const auto mdp = build_env(cfg);
  const auto pi = parse_policy(cfg.env.policy, mdp);
  const auto behaviour = cfg.env.behaviour == "policy" ? pi : parse_policy(cfg.env.behaviour, mdp);
  const auto data = generate_dataset(mdp, behaviour, cfg.env.dataset_size, cfg.env.horizon, streams.data);
  OracleOptions oopt;
  oopt.support_size = cfg.oracle_atoms;
  const auto oracle = oracle_return_distribution(mdp, pi, oopt);
  const auto pairs = eval_pairs(data, cfg.max_eval_pairs);

  FixedPolicyRun run;
  run.pairs = pairs;
  run.critic = make_critic(cfg, data);
  auto& critic = *run.critic;
  const SamplerFn sampler = [&](std::size_t s, std::size_t a, std::size_t n) { return critic.sample(s, a, n); };
  auto record = [&](std::size_t step, double loss) {
    run.final_eval = evaluate_w2(sampler, oracle, pairs, cfg.eval_samples);
    run.trace.push({step, run.final_eval.mean, run.final_eval.iqm_neg, run.final_eval.sup, loss});
  };
  record(0, std::numeric_limits<double>::quiet_NaN());

  Rng brng(streams.batch);
  double loss_acc = 0.0;
  std::size_t loss_n = 0;
  std::vector<std::size_t> a_next(cfg.batch_size);
  for (std::size_t step = 1; step <= cfg.gradient_steps; ++step) {
    const auto batch = sample_batch(data, cfg.batch_size, brng);
    for (std::size_t i = 0; i < batch.size(); ++i) a_next[i] = brng.categorical(pi.probs[batch[i].s_next]);
    try {
      loss_acc += critic.train_step(batch, a_next, step);
      ++loss_n;
    } catch (const NumericError& e) {
      run.trace.aborted = true;
      run.trace.diagnostic = std::string(e.what()) + " at step " + std::to_string(step);
      return run;
    }
    if (step % cfg.eval_every == 0 || step == cfg.gradient_steps) {
      record(step, loss_acc / static_cast<double>(loss_n));
      loss_acc = 0.0;
      loss_n = 0;
    }
  }
  return run;
}

inline MetricsTrace train_fixed_policy(const RunConfig& cfg) { return run_fixed_policy(cfg).trace; }

// --- offline RL with rejection-sampling extraction --------------------------

/// Per-state empirical behaviour distribution; unvisited states fall back to
/// uniform and are listed in `fallback`.
struct BehaviourModel {
  std::vector<std::vector<double>> probs;
  std::vector<std::size_t> fallback;

  static BehaviourModel from_dataset(const Dataset& d) {
    BehaviourModel m;
    m.probs.resize(d.n_states);
    for (std::size_t s = 0; s < d.n_states; ++s) {
      const auto& c = d.behaviour_counts[s];
      double total = 0.0;
      for (auto x : c) total += static_cast<double>(x);
      if (total == 0.0) {
        m.probs[s].assign(d.n_actions, 1.0 / static_cast<double>(d.n_actions));
        m.fallback.push_back(s);
      } else {
        for (auto x : c) m.probs[s].push_back(static_cast<double>(x) / total);
      }
    }
    return m;
  }
};

/// For each state, draws J candidates from the behaviour model and keeps the
/// one with the highest scalarized value.
inline std::vector<std::size_t> select_actions(const Critic& critic, const BehaviourModel& beh,
                                               std::span<const std::size_t> states, std::size_t J, bool use_target,
                                               Rng& rng) {
  std::vector<std::size_t> cand_s, cand_a;
  for (auto s : states)
    for (std::size_t j = 0; j < J; ++j) {
      cand_s.push_back(s);
      cand_a.push_back(rng.categorical(beh.probs[s]));
    }
  std::vector<std::size_t> out(states.size());
  if (J == 1) {
    for (std::size_t i = 0; i < states.size(); ++i) out[i] = cand_a[i];
    return out;
  }
  // score each distinct (s, a) once
  std::vector<std::size_t> us, ua;
  for (std::size_t i = 0; i < cand_s.size(); ++i) {
    bool seen = false;
    for (std::size_t k = 0; k < us.size() && !seen; ++k) seen = us[k] == cand_s[i] && ua[k] == cand_a[i];
    if (!seen) {
      us.push_back(cand_s[i]);
      ua.push_back(cand_a[i]);
    }
  }
  const auto scores = critic.scalar(us, ua, use_target);
  auto score_of = [&](std::size_t s, std::size_t a) {
    for (std::size_t k = 0; k < us.size(); ++k)
      if (us[k] == s && ua[k] == a) return scores[k];
    return -std::numeric_limits<double>::infinity();
  };
  for (std::size_t i = 0; i < states.size(); ++i) {
    std::size_t best = cand_a[i * J];
    double best_v = score_of(states[i], best);
    for (std::size_t j = 1; j < J; ++j) {
      const auto a = cand_a[i * J + j];
      const double v = score_of(states[i], a);
      if (v > best_v) {
        best_v = v;
        best = a;
      }
    }
    out[i] = best;
  }
  return out;
}

struct OfflineResult {
  MetricsTrace trace;
  std::vector<std::size_t> policy;          // extracted action per state
  std::vector<std::size_t> fallback_states;  // states without behaviour data
  double behaviour_return = 0.0;             // exact expected return from the start state
  double policy_return = 0.0;
  double behaviour_rollout = 0.0;            // Monte Carlo estimates
  double policy_rollout = 0.0;
  bool support_respected = true;             // no zero-count action ever selected
};

inline OfflineResult train_offline_rejection(const RunConfig& cfg) {
  cfg.validate();
  const RunStreams streams(cfg.seed);
  const auto mdp = build_env(cfg);
  const auto behaviour = parse_policy(cfg.env.behaviour == "policy" ? cfg.env.policy : cfg.env.behaviour, mdp);
  const auto data = generate_dataset(mdp, behaviour, cfg.env.dataset_size, cfg.env.horizon, streams.data);
  const auto beh = BehaviourModel::from_dataset(data);
  const auto pairs = eval_pairs(data, cfg.max_eval_pairs);
  OracleOptions oopt;
  oopt.support_size = cfg.oracle_atoms;

  OfflineResult res;
  res.fallback_states = beh.fallback;
  auto critic = make_critic(cfg, data);
  Rng brng(streams.batch);
  Rng erng(streams.eval);

  std::vector<std::size_t> all_states(mdp.n_states());
  for (std::size_t s = 0; s < all_states.size(); ++s) all_states[s] = s;
  auto check_support = [&](std::span<const std::size_t> states, std::span<const std::size_t> acts) {
    for (std::size_t i = 0; i < states.size(); ++i)
      if (data.visited(states[i]) && data.behaviour_counts[states[i]][acts[i]] == 0) res.support_respected = false;
  };
  auto extract = [&](Rng& rng) {
    auto acts = select_actions(*critic, beh, all_states, cfg.J, false, rng);
    check_support(all_states, acts);
    return acts;
  };
  const SamplerFn sampler = [&](std::size_t s, std::size_t a, std::size_t n) { return critic->sample(s, a, n); };
  auto record = [&](std::size_t step, double loss) {
    const auto acts = extract(erng);
    const auto pi = FixedPolicy::deterministic(acts, mdp.n_actions());
    const auto oracle = oracle_return_distribution(mdp, pi, oopt);
    const auto rep = evaluate_w2(sampler, oracle, pairs, cfg.eval_samples);
    res.trace.push({step, rep.mean, rep.iqm_neg, rep.sup, loss});
  };
  record(0, std::numeric_limits<double>::quiet_NaN());

  double loss_acc = 0.0;
  std::size_t loss_n = 0;
  std::vector<std::size_t> next_states(cfg.batch_size);
  for (std::size_t step = 1; step <= cfg.gradient_steps; ++step) {
    const auto batch = sample_batch(data, cfg.batch_size, brng);
    for (std::size_t i = 0; i < batch.size(); ++i) next_states[i] = batch[i].s_next;
    try {
      auto a_next = select_actions(*critic, beh, next_states, cfg.J, true, brng);
      check_support(next_states, a_next);
      loss_acc += critic->train_step(batch, a_next, step);
      ++loss_n;
    } catch (const NumericError& e) {
      res.trace.aborted = true;
      res.trace.diagnostic = std::string(e.what()) + " at step " + std::to_string(step);
      break;
    }
    if (step % cfg.eval_every == 0 || step == cfg.gradient_steps) {
      record(step, loss_acc / static_cast<double>(loss_n));
      loss_acc = 0.0;
      loss_n = 0;
    }
  }

  Rng frng(mix_seed(cfg.seed, 4));
  res.policy = extract(frng);
  const auto pi = FixedPolicy::deterministic(res.policy, mdp.n_actions());
  res.behaviour_return = policy_return(mdp, behaviour);
  res.policy_return = policy_return(mdp, pi);
  auto mean = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return v.empty() ? 0.0 : m / static_cast<double>(v.size());
  };
  res.behaviour_rollout = mean(rollout_returns(mdp, behaviour, cfg.rollout_episodes, cfg.env.horizon, mix_seed(cfg.seed, 5)));
  res.policy_rollout = mean(rollout_returns(mdp, pi, cfg.rollout_episodes, cfg.env.horizon, mix_seed(cfg.seed, 5)));
  return res;
}

// --- fixed synthetic targets ----------------------------------------------

/// Finite mixture of atoms, normals and uniforms, used as a target that needs
/// no bootstrapping.
class SyntheticTarget {
 public:
  enum class Kind { atom, normal, uniform };
  struct Component {
    Kind kind;
    double weight;
    double a;  // atom location, normal mean, or uniform lower end
    double b;  // normal sd or uniform upper end; unused for atoms
  };

  SyntheticTarget(std::string name, std::vector<Component> parts) : name_(std::move(name)), parts_(std::move(parts)) {
    if (parts_.empty()) throw ConfigError("synthetic target needs at least one component");
    double total = 0.0;
    for (const auto& c : parts_) {
      if (!(c.weight > 0.0)) throw ConfigError("synthetic target weights must be positive");
      if (c.kind == Kind::normal && !(c.b > 0.0)) throw ConfigError("normal component needs sd > 0");
      if (c.kind == Kind::uniform && !(c.b > c.a)) throw ConfigError("uniform component needs a < b");
      total += c.weight;
    }
    for (auto& c : parts_) c.weight /= total;
  }

  const std::string& name() const { return name_; }

  double sample(Rng& rng) const {
    std::vector<double> w;
    for (const auto& c : parts_) w.push_back(c.weight);
    const auto& c = parts_[rng.categorical(w)];
    switch (c.kind) {
      case Kind::atom:
        return c.a;
      case Kind::normal:
        return rng.normal(c.a, c.b);
      case Kind::uniform:
        return rng.uniform(c.a, c.b);
    }
    return c.a;
  }

  double cdf(double x) const {
    double f = 0.0;
    for (const auto& c : parts_) {
      switch (c.kind) {
        case Kind::atom:
          f += c.weight * (x >= c.a ? 1.0 : 0.0);
          break;
        case Kind::normal:
          f += c.weight * 0.5 * std::erfc(-(x - c.a) / (c.b * std::numbers::sqrt2));
          break;
        case Kind::uniform:
          f += c.weight * std::clamp((x - c.a) / (c.b - c.a), 0.0, 1.0);
          break;
      }
    }
    return f;
  }

  /// inf{x : F(x) >= tau} by bisection.
  double quantile(double tau) const {
    double lo = -1.0, hi = 1.0;
    for (const auto& c : parts_) {
      const double spread = c.kind == Kind::normal ? 40.0 * c.b : 0.0;
      lo = std::min(lo, c.a - spread - 1.0);
      hi = std::max(hi, (c.kind == Kind::uniform ? c.b : c.a) + spread + 1.0);
    }
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (cdf(mid) >= tau) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    return hi;
  }

  /// Range used for the source map: exact for bounded parts, 0.1%/99.9%
  /// quantiles when normals are present.
  std::pair<double, double> range() const {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& c : parts_) {
      if (c.kind == Kind::normal) return {quantile(0.001), quantile(0.999)};
      lo = std::min(lo, c.a);
      hi = std::max(hi, c.kind == Kind::uniform ? c.b : c.a);
    }
    return {lo, hi};
  }

 private:
  std::string name_;
  std::vector<Component> parts_;
};

/// The five targets of the upper-bound study.
inline std::vector<SyntheticTarget> standard_synthetic_targets() {
  using K = SyntheticTarget::Kind;
  return {
      SyntheticTarget("gaussian_mixture", {{K::normal, 0.5, -2.0, 0.5}, {K::normal, 0.5, 2.0, 0.5}}),
      SyntheticTarget("bimodal_atoms", {{K::atom, 0.5, -1.0, 0.0}, {K::atom, 0.5, 1.0, 0.0}}),
      SyntheticTarget("uniform", {{K::uniform, 1.0, 0.0, 4.0}}),
      SyntheticTarget("three_atoms", {{K::atom, 0.2, -3.0, 0.0}, {K::atom, 0.5, 0.0, 0.0}, {K::atom, 0.3, 2.0, 0.0}}),
      SyntheticTarget("skewed_mixture", {{K::normal, 0.8, 0.0, 0.3}, {K::uniform, 0.2, 1.0, 5.0}}),
  };
}

struct SyntheticFit {
  double batch_loss = 0.0;       // minibatch-coupled loss on a fixed held-out batch
  double path_loss = 0.0;        // population loss along the straight quantile paths
  double trajectory_loss = 0.0;  // population loss along the model's own Euler path
  double w2_sq = 0.0;            // squared W2 between grid samples and the target
  double width = 0.0;            // u - l
  std::vector<double> losses;

  double slack() const { return 0.05 * width * width; }
  bool bound_holds() const { return w2_sq <= trajectory_loss + slack(); }
};

/// Trains a single-(s, a) flow critic directly on samples of `target`.
inline SyntheticFit fit_synthetic_target(const SyntheticTarget& target, const FlowCriticConfig& cfg,
                                         std::size_t steps, std::size_t batch_size, std::uint64_t seed,
                                         std::size_t eval_batch = 256, std::size_t eval_samples = 2000) {
  cfg.validate();
  if (batch_size == 0 || eval_batch == 0 || eval_samples == 0) throw ConfigError("batch sizes must be >= 1");
  const auto [lo, hi] = target.range();
  const SourceMap sm = compute_bounds(lo, hi, 0.0, cfg.kappa);
  Rng init(mix_seed(seed, 12));
  auto field = VelocityField::create(cfg.net_config(1, 1, sm), cfg.rho, init);
  auto opt = AdamState::for_params(field.online, cfg.lr);
  opt.weight_decay = cfg.weight_decay;
  const auto sched = TimeSchedule::uniform(cfg.M, cfg.curvature_bins);

  auto draw_batch = [&](std::size_t n, Rng& rng) {
    CoupledBatch b;
    std::vector<double> tau(cfg.K), y(cfg.K);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < cfg.K; ++k) {
        tau[k] = rng.uniform();
        y[k] = target.sample(rng);
      }
      b.entries.push_back(couple_batch(tau, y, sm, cfg, rng));
    }
    return b;
  };

  SyntheticFit fit;
  fit.width = sm.width();
  Rng rng(mix_seed(seed, 2));
  for (std::size_t step = 1; step <= steps; ++step) {
    const auto batch = draw_batch(batch_size, rng);
    auto res = combined_loss(batch, field, cfg, rng);
    if (!std::isfinite(res.loss) || !res.grads.all_finite()) throw NumericError("non-finite loss on synthetic target", step);
    adam_step(field.online, res.grads, opt);
    ema_update(field.target, field.online);
    fit.losses.push_back(res.loss);
  }

  Rng eval_rng(mix_seed(seed, 3));
  const auto held_out = draw_batch(eval_batch, eval_rng);
  const double d0 = field.shortcut() ? cfg.min_step() : 0.0;
  fit.batch_loss = velocity_regression_loss(held_out, field.net, field.online, d0).loss;

  // Population losses with the exact quantile coupling u* = F^{-1}(tau) - g(tau),
  // on the (k - 0.5)/n grid of fractions.
  const auto grid = quantile_grid(eval_samples);
  std::vector<double> ustar(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j) ustar[j] = target.quantile(grid[j]) - source_map(sm, grid[j]);
  const std::vector<std::size_t> zeros(grid.size(), 0);
  fit.trajectory_loss = trajectory_loss(field.net, field.online, sm, zeros, zeros, grid, ustar, sched).loss;

  const Matrix ctx = field.net.context(field.online, zeros, zeros, grid);
  std::vector<double> z(grid.size());
  const std::size_t path_times = 32;
  double path = 0.0;
  for (std::size_t i = 0; i < path_times; ++i) {
    const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(path_times);
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = source_map(sm, grid[j]) + t * ustar[j];
    const double d = field.shortcut() ? cfg.min_step() : 0.0;
    const Vector v = field.net.velocity(field.online, ctx, z, field.net.time_term(field.online, t, d));
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double r = v(static_cast<Eigen::Index>(j)) - ustar[j];
      path += r * r;
    }
  }
  fit.path_loss = path / static_cast<double>(path_times * grid.size());

  const auto model = sample_return_distribution(field, sm, 0, 0, eval_samples, sched, SampleMode::grid);
  std::vector<double> q;
  for (double t : grid) q.push_back(target.quantile(t));
  const double w2 = wasserstein_emp(model, EmpiricalDistribution(std::move(q)), 2.0);
  fit.w2_sq = w2 * w2;
  return fit;
}

// --- contraction study ------------------------------------------------------

struct ContractionResult {
  std::vector<double> distances;  // d_k = sup-W_p(Z_k, Z*), k = 0..sweeps
  std::vector<double> ratios;     // d_{k+1} / d_k (NaN when d_k = 0)
  double atom_width = 0.0;
  double gamma = 0.0;

  /// d_{k+1} <= gamma d_k + 2 atom_width for every k >= 1.
  bool bound_holds(double tol = 1e-12) const {
    for (std::size_t k = 1; k + 1 < distances.size(); ++k)
      if (distances[k + 1] > gamma * distances[k] + 2.0 * atom_width + tol) return false;
    return true;
  }
};

/// Runs categorical DP from Z = delta_0 and records the sup-W_p distance to
/// the converged fixed point after each sweep.
inline ContractionResult contraction_study(const TabularMdp& mdp, const FixedPolicy& pi, double p, std::size_t sweeps,
                                           std::size_t support_size = 401) {
  if (!(p >= 1.0)) throw ConfigError("metric order p must be >= 1");
  OracleOptions opt;
  opt.support_size = support_size;
  opt.sweeps = 100000;
  const auto fixed = oracle_return_distribution(mdp, pi, opt);
  ContractionResult res;
  res.atom_width = fixed.atom_width();
  res.gamma = mdp.gamma();
  auto z = dirac_zero_table(mdp, fixed.support);
  res.distances.push_back(sup_wasserstein(z, fixed, p));
  for (std::size_t k = 0; k < sweeps; ++k) {
    z = distributional_bellman_sweep(mdp, pi, z);
    res.distances.push_back(sup_wasserstein(z, fixed, p));
  }
  for (std::size_t k = 0; k + 1 < res.distances.size(); ++k)
    res.ratios.push_back(res.distances[k] > 0.0 ? res.distances[k + 1] / res.distances[k]
                                                : std::numeric_limits<double>::quiet_NaN());
  return res;
}

}  // namespace wcrit
