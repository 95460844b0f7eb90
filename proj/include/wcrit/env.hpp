#pragma once

// Small tabular MDPs, fixed policies, offline datasets and an exact
// distributional dynamic-programming oracle for return distributions.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wcrit/dist1d.hpp"
#include "wcrit/error.hpp"
#include "wcrit/kv.hpp"
#include "wcrit/random.hpp"

namespace wcrit {

struct RewardAtom {
  double value = 0.0;
  double prob = 1.0;

  friend bool operator==(const RewardAtom&, const RewardAtom&) = default;
};

using RewardSupport = std::vector<RewardAtom>;

inline constexpr double kProbTolerance = 1e-12;

/// Finite MDP with finite-support stochastic rewards. Terminal states are
/// absorbing with reward 0. Immutable after construction.
class TabularMdp {
 public:
  TabularMdp(std::size_t n_states, std::size_t n_actions, std::vector<double> transition,
             std::vector<RewardSupport> rewards, std::vector<bool> terminal_flags, double gamma,
             std::size_t start_state = 0)
      : n_states_(n_states),
        n_actions_(n_actions),
        transition_(std::move(transition)),
        reward_(std::move(rewards)),
        terminal_(std::move(terminal_flags)),
        gamma_(gamma),
        start_(start_state) {
    if (n_states_ == 0 || n_actions_ == 0) throw ConfigError("MDP needs at least one state and one action");
    if (transition_.size() != n_states_ * n_actions_ * n_states_)
      throw ConfigError("MDP transition tensor has the wrong size");
    if (reward_.size() != n_states_ * n_actions_) throw ConfigError("MDP reward table has the wrong size");
    if (terminal_.size() != n_states_) throw ConfigError("MDP terminal flags have the wrong size");
    if (!(gamma_ >= 0.0 && gamma_ < 1.0)) throw ConfigError("MDP discount must lie in [0, 1)");
    if (start_ >= n_states_) throw ConfigError("MDP start state out of range");
    for (std::size_t s = 0; s < n_states_; ++s) {
      for (std::size_t a = 0; a < n_actions_; ++a) {
        double row = 0.0;
        for (std::size_t s2 = 0; s2 < n_states_; ++s2) {
          const double p = prob(s, a, s2);
          if (!(p >= 0.0)) throw ConfigError("MDP transition probability negative or NaN");
          row += p;
        }
        if (std::abs(row - 1.0) > kProbTolerance)
          throw ConfigError("MDP transition row (" + std::to_string(s) + "," + std::to_string(a) + ") does not sum to 1");
        const auto& support = reward(s, a);
        if (support.empty()) throw ConfigError("MDP reward support is empty");
        double mass = 0.0;
        for (const auto& atom : support) {
          if (!(atom.prob >= 0.0) || !std::isfinite(atom.value)) throw ConfigError("MDP reward atom invalid");
          mass += atom.prob;
        }
        if (std::abs(mass - 1.0) > kProbTolerance) throw ConfigError("MDP reward support does not sum to 1");
        if (terminal_[s]) {
          if (prob(s, a, s) != 1.0) throw ConfigError("terminal state must self-loop");
          for (const auto& atom : support)
            if (atom.prob > 0.0 && atom.value != 0.0) throw ConfigError("terminal state must pay reward 0");
        }
      }
    }
  }

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  double gamma() const { return gamma_; }
  std::size_t start_state() const { return start_; }
  bool terminal(std::size_t s) const { return terminal_[s]; }

  double prob(std::size_t s, std::size_t a, std::size_t s_next) const {
    return transition_[(s * n_actions_ + a) * n_states_ + s_next];
  }
  const RewardSupport& reward(std::size_t s, std::size_t a) const { return reward_[s * n_actions_ + a]; }

  double expected_reward(std::size_t s, std::size_t a) const {
    double m = 0.0;
    for (const auto& atom : reward(s, a)) m += atom.value * atom.prob;
    return m;
  }

  /// Extremes over atoms with positive probability at non-terminal states.
  std::pair<double, double> reward_range() const {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t s = 0; s < n_states_; ++s) {
      if (terminal_[s]) continue;
      for (std::size_t a = 0; a < n_actions_; ++a)
        for (const auto& atom : reward(s, a))
          if (atom.prob > 0.0) {
            lo = std::min(lo, atom.value);
            hi = std::max(hi, atom.value);
          }
    }
    if (lo > hi) return {0.0, 0.0};
    return {lo, hi};
  }

 private:
  std::size_t n_states_;
  std::size_t n_actions_;
  std::vector<double> transition_;
  std::vector<RewardSupport> reward_;
  std::vector<bool> terminal_;
  double gamma_;
  std::size_t start_;
};

/// Per-state action distribution.
struct FixedPolicy {
  std::vector<std::vector<double>> probs;

  static FixedPolicy uniform(std::size_t n_states, std::size_t n_actions) {
    return {std::vector<std::vector<double>>(n_states, std::vector<double>(n_actions, 1.0 / static_cast<double>(n_actions)))};
  }

  static FixedPolicy deterministic(std::span<const std::size_t> actions, std::size_t n_actions) {
    FixedPolicy pi;
    for (auto a : actions) {
      std::vector<double> row(n_actions, 0.0);
      row.at(a) = 1.0;
      pi.probs.push_back(std::move(row));
    }
    return pi;
  }

  void validate(const TabularMdp& mdp) const {
    if (probs.size() != mdp.n_states()) throw ConfigError("policy has the wrong number of states");
    for (const auto& row : probs) {
      if (row.size() != mdp.n_actions()) throw ConfigError("policy row has the wrong number of actions");
      double total = 0.0;
      for (double p : row) {
        if (!(p >= 0.0)) throw ConfigError("policy probability negative or NaN");
        total += p;
      }
      if (std::abs(total - 1.0) > kProbTolerance) throw ConfigError("policy row does not sum to 1");
    }
  }
};

struct Transition {
  std::size_t s = 0;
  std::size_t a = 0;
  double r = 0.0;
  std::size_t s_next = 0;
  int mask = 1;  // 0 iff s_next is terminal

  friend bool operator==(const Transition&, const Transition&) = default;
};

struct Dataset {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<Transition> transitions;
  std::vector<std::vector<std::size_t>> behaviour_counts;  // [state][action]

  static Dataset from_transitions(std::size_t n_states, std::size_t n_actions, std::vector<Transition> transitions) {
    Dataset d{n_states, n_actions, std::move(transitions), {}};
    d.behaviour_counts.assign(n_states, std::vector<std::size_t>(n_actions, 0));
    for (const auto& t : d.transitions) {
      if (t.s >= n_states || t.a >= n_actions || t.s_next >= n_states) throw UsageError("transition index out of range");
      ++d.behaviour_counts[t.s][t.a];
    }
    return d;
  }

  std::pair<double, double> reward_range() const {
    if (transitions.empty()) return {0.0, 0.0};
    double lo = transitions.front().r;
    double hi = lo;
    for (const auto& t : transitions) {
      lo = std::min(lo, t.r);
      hi = std::max(hi, t.r);
    }
    return {lo, hi};
  }

  bool visited(std::size_t s) const {
    for (auto c : behaviour_counts[s])
      if (c > 0) return true;
    return false;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------------------
// Builders

/// Deterministic left-to-right chain s_0 -> ... -> s_{n-1} (terminal). Every
/// action moves right; `reward_spec[k]` is the reward support of step k, or a
/// single entry broadcast to all steps.
inline TabularMdp build_chain_mdp(std::size_t n_states, const std::vector<RewardSupport>& reward_spec, double gamma,
                                  std::size_t n_actions = 1) {
  if (n_states < 2) throw ConfigError("chain MDP needs at least 2 states");
  if (reward_spec.empty()) throw ConfigError("chain MDP reward spec is empty");
  if (reward_spec.size() != 1 && reward_spec.size() != n_states - 1)
    throw ConfigError("chain MDP reward spec must have 1 or n_states-1 entries");
  for (const auto& support : reward_spec)
    if (support.empty()) throw ConfigError("chain MDP reward support is empty");
  std::vector<double> p(n_states * n_actions * n_states, 0.0);
  std::vector<RewardSupport> r(n_states * n_actions);
  std::vector<bool> terminal(n_states, false);
  terminal[n_states - 1] = true;
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t a = 0; a < n_actions; ++a) {
      const std::size_t next = terminal[s] ? s : s + 1;
      p[(s * n_actions + a) * n_states + next] = 1.0;
      r[s * n_actions + a] = terminal[s] ? RewardSupport{{0.0, 1.0}} : reward_spec[reward_spec.size() == 1 ? 0 : s];
    }
  }
  return TabularMdp(n_states, n_actions, std::move(p), std::move(r), std::move(terminal), gamma);
}

/// Five-state corridor with three actions per state: advance (reward 0, or
/// the goal reward 1 at the last step), bail out to the terminal state
/// (reward 0.1), or gamble (advance with reward -1 or +0.5). State 4 is terminal.
inline TabularMdp build_corridor_mdp(double gamma) {
  constexpr std::size_t n = 5;
  constexpr std::size_t m = 3;
  std::vector<double> p(n * m * n, 0.0);
  std::vector<RewardSupport> r(n * m);
  std::vector<bool> terminal(n, false);
  terminal[4] = true;
  auto set = [&](std::size_t s, std::size_t a, std::size_t next, RewardSupport support) {
    p[(s * m + a) * n + next] = 1.0;
    r[s * m + a] = std::move(support);
  };
  for (std::size_t s = 0; s < 4; ++s) {
    set(s, 0, s + 1, {{s == 3 ? 1.0 : 0.0, 1.0}});
    set(s, 1, 4, {{0.1, 1.0}});
    set(s, 2, s + 1, {{-1.0, 0.5}, {0.5, 0.5}});
  }
  for (std::size_t a = 0; a < m; ++a) set(4, a, 4, {{0.0, 1.0}});
  return TabularMdp(n, m, std::move(p), std::move(r), std::move(terminal), gamma);
}

/// Mixed-quality behaviour for the corridor: every action is tried, except
/// that gambling is never taken in state 2.
inline FixedPolicy corridor_behaviour_policy() {
  return {{{0.4, 0.3, 0.3}, {0.4, 0.3, 0.3}, {0.5, 0.5, 0.0}, {0.4, 0.3, 0.3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}}};
}

/// Random MDP with cycles: every non-terminal (s,a) leads to up to three
/// successors and has a two-atom reward; the last state is terminal.
inline TabularMdp build_random_mdp(std::size_t n_states, std::size_t n_actions, double gamma, std::uint64_t seed) {
  if (n_states < 2) throw ConfigError("random MDP needs at least 2 states");
  Rng rng(seed);
  std::vector<double> p(n_states * n_actions * n_states, 0.0);
  std::vector<RewardSupport> r(n_states * n_actions);
  std::vector<bool> terminal(n_states, false);
  terminal[n_states - 1] = true;
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t a = 0; a < n_actions; ++a) {
      double* row = &p[(s * n_actions + a) * n_states];
      if (terminal[s]) {
        row[s] = 1.0;
        r[s * n_actions + a] = {{0.0, 1.0}};
        continue;
      }
      double weights[3];
      double total = 0.0;
      for (double& w : weights) total += (w = 0.2 + rng.uniform());
      for (int k = 0; k < 3; ++k) row[rng.index(n_states)] += weights[k] / total;
      double sum = 0.0;
      for (std::size_t s2 = 0; s2 < n_states; ++s2) sum += row[s2];
      for (std::size_t s2 = 0; s2 < n_states; ++s2) row[s2] /= sum;
      const double q = 0.2 + 0.6 * rng.uniform();
      const double lo = std::round(rng.uniform(-1.0, 0.5) * 8.0) / 8.0;
      const double hi = lo + 0.25 + std::round(rng.uniform() * 8.0) / 8.0;
      r[s * n_actions + a] = {{lo, q}, {hi, 1.0 - q}};
    }
  }
  return TabularMdp(n_states, n_actions, std::move(p), std::move(r), std::move(terminal), gamma);
}

/// Reward support text: atoms "value:prob" separated by ','. A bare value is a Dirac.
inline RewardSupport parse_reward_support(std::string_view text, std::size_t line = 0) {
  RewardSupport support;
  for (auto atom : kv::split(text, ',')) {
    if (atom.empty()) throw ParseError("empty reward atom", line);
    const auto colon = atom.find(':');
    if (colon == std::string_view::npos) {
      support.push_back({kv::to_double(atom, line), 1.0});
    } else {
      support.push_back({kv::to_double(atom.substr(0, colon), line), kv::to_double(atom.substr(colon + 1), line)});
    }
  }
  return support;
}

inline std::string format_reward_support(const RewardSupport& support) {
  std::string out;
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (i) out += ',';
    out += kv::format_double(support[i].value) + ':' + kv::format_double(support[i].prob);
  }
  return out;
}

/// Loads an MDP from key=value lines:
///   n_states, n_actions, gamma, start (optional), terminal=i,j,...
///   P.s.a = next:prob,next:prob     R.s.a = value:prob,...
/// Terminal states get their self-loop and zero reward automatically.
inline TabularMdp parse_mdp(std::string_view text) {
  const auto entries = kv::parse_text(text);
  std::size_t n_states = 0, n_actions = 0, start = 0;
  double gamma = -1.0;
  std::vector<std::size_t> terminals;
  std::vector<const kv::Entry*> rows;
  for (const auto& e : entries) {
    if (e.key == "n_states") n_states = kv::to_count(e.value, e.line);
    else if (e.key == "n_actions") n_actions = kv::to_count(e.value, e.line);
    else if (e.key == "gamma") gamma = kv::to_double(e.value, e.line);
    else if (e.key == "start") start = kv::to_count(e.value, e.line);
    else if (e.key == "terminal") {
      if (!e.value.empty())
        for (auto t : kv::split(e.value, ',')) terminals.push_back(kv::to_count(t, e.line));
    } else if (e.key.starts_with("P.") || e.key.starts_with("R.")) rows.push_back(&e);
    else throw ParseError("unknown MDP key '" + e.key + "'", e.line);
  }
  if (n_states == 0) throw ParseError("missing required key 'n_states'", 0);
  if (n_actions == 0) throw ParseError("missing required key 'n_actions'", 0);
  if (gamma < 0.0) throw ParseError("missing required key 'gamma'", 0);
  std::vector<double> p(n_states * n_actions * n_states, 0.0);
  std::vector<RewardSupport> r(n_states * n_actions);
  std::vector<bool> terminal(n_states, false);
  for (auto t : terminals) {
    if (t >= n_states) throw ParseError("terminal state out of range", 0);
    terminal[t] = true;
  }
  std::vector<bool> has_p(n_states * n_actions, false);
  for (const auto* e : rows) {
    const auto parts = kv::split(e->key, '.');
    if (parts.size() != 3) throw ParseError("expected P.s.a or R.s.a, got '" + e->key + "'", e->line);
    const auto s = kv::to_count(parts[1], e->line);
    const auto a = kv::to_count(parts[2], e->line);
    if (s >= n_states || a >= n_actions) throw ParseError("state/action out of range in '" + e->key + "'", e->line);
    if (parts[0] == "R") {
      r[s * n_actions + a] = parse_reward_support(e->value, e->line);
    } else {
      for (auto atom : kv::split(e->value, ',')) {
        const auto colon = atom.find(':');
        if (colon == std::string_view::npos) throw ParseError("expected next:prob", e->line);
        const auto next = kv::to_count(atom.substr(0, colon), e->line);
        if (next >= n_states) throw ParseError("successor out of range", e->line);
        p[(s * n_actions + a) * n_states + next] += kv::to_double(atom.substr(colon + 1), e->line);
      }
      has_p[s * n_actions + a] = true;
    }
  }
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t a = 0; a < n_actions; ++a) {
      if (terminal[s]) {
        std::fill_n(&p[(s * n_actions + a) * n_states], n_states, 0.0);
        p[(s * n_actions + a) * n_states + s] = 1.0;
        r[s * n_actions + a] = {{0.0, 1.0}};
        continue;
      }
      if (!has_p[s * n_actions + a])
        throw ParseError("missing transition row P." + std::to_string(s) + "." + std::to_string(a), 0);
      if (r[s * n_actions + a].empty()) r[s * n_actions + a] = {{0.0, 1.0}};
    }
  }
  return TabularMdp(n_states, n_actions, std::move(p), std::move(r), std::move(terminal), gamma, start);
}

inline TabularMdp load_mdp(const std::string& path) { return parse_mdp(kv::read_file(path)); }

// ---------------------------------------------------------------------------
// Sampling

inline double sample_reward(const RewardSupport& support, Rng& rng) {
  std::vector<double> w;
  w.reserve(support.size());
  for (const auto& atom : support) w.push_back(atom.prob);
  return support[rng.categorical(w)].value;
}

inline std::size_t sample_next_state(const TabularMdp& mdp, std::size_t s, std::size_t a, Rng& rng) {
  std::vector<double> w(mdp.n_states());
  for (std::size_t s2 = 0; s2 < mdp.n_states(); ++s2) w[s2] = mdp.prob(s, a, s2);
  return rng.categorical(w);
}

/// Episodic rollouts of `behaviour` from the start state. An episode restarts
/// on terminal entry or after `horizon` steps. Pure function of its arguments.
inline Dataset generate_dataset(const TabularMdp& mdp, const FixedPolicy& behaviour, std::size_t n, std::size_t horizon,
                                std::uint64_t seed) {
  if (n == 0) throw UsageError("generate_dataset: n must be >= 1");
  if (horizon == 0) throw UsageError("generate_dataset: horizon must be >= 1");
  behaviour.validate(mdp);
  if (mdp.terminal(mdp.start_state())) throw ConfigError("start state is terminal");
  Rng rng(seed);
  std::vector<Transition> out;
  out.reserve(n);
  std::size_t s = mdp.start_state();
  std::size_t t = 0;
  while (out.size() < n) {
    const auto a = rng.categorical(behaviour.probs[s]);
    const double r = sample_reward(mdp.reward(s, a), rng);
    const auto s2 = sample_next_state(mdp, s, a, rng);
    const int mask = mdp.terminal(s2) ? 0 : 1;
    out.push_back({s, a, r, s2, mask});
    ++t;
    if (mask == 0 || t >= horizon) {
      s = mdp.start_state();
      t = 0;
    } else {
      s = s2;
    }
  }
  return Dataset::from_transitions(mdp.n_states(), mdp.n_actions(), std::move(out));
}

inline void write_dataset_csv(const Dataset& d, std::ostream& os) {
  os << "s,a,r,s_next,mask\n";
  for (const auto& t : d.transitions)
    os << t.s << ',' << t.a << ',' << kv::format_double(t.r) << ',' << t.s_next << ',' << t.mask << '\n';
}

inline Dataset read_dataset_csv(std::istream& is, std::size_t n_states, std::size_t n_actions) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line) || kv::trim(line) != "s,a,r,s_next,mask") throw ParseError("missing dataset CSV header", 1);
  std::vector<Transition> out;
  while (std::getline(is, line)) {
    ++line_no;
    if (kv::trim(line).empty()) continue;
    const auto f = kv::split(line, ',');
    if (f.size() != 5) throw ParseError("expected 5 columns", line_no);
    out.push_back({kv::to_count(f[0], line_no), kv::to_count(f[1], line_no), kv::to_double(f[2], line_no),
                   kv::to_count(f[3], line_no), static_cast<int>(kv::to_int(f[4], line_no))});
  }
  return Dataset::from_transitions(n_states, n_actions, std::move(out));
}

// ---------------------------------------------------------------------------
// Scalar dynamic programming

/// Exact Q^pi by solving (I - gamma P_pi) q = r. Terminal pairs are 0.
inline std::vector<double> policy_evaluation(const TabularMdp& mdp, const FixedPolicy& pi) {
  pi.validate(mdp);
  const auto ns = mdp.n_states();
  const auto na = mdp.n_actions();
  const auto dim = static_cast<Eigen::Index>(ns * na);
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(dim, dim);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
  for (std::size_t s = 0; s < ns; ++s) {
    if (mdp.terminal(s)) continue;
    for (std::size_t u = 0; u < na; ++u) {
      const auto row = static_cast<Eigen::Index>(s * na + u);
      b(row) = mdp.expected_reward(s, u);
      for (std::size_t s2 = 0; s2 < ns; ++s2) {
        const double p = mdp.prob(s, u, s2);
        if (p == 0.0 || mdp.terminal(s2)) continue;
        for (std::size_t u2 = 0; u2 < na; ++u2)
          a(row, static_cast<Eigen::Index>(s2 * na + u2)) -= mdp.gamma() * p * pi.probs[s2][u2];
      }
    }
  }
  const Eigen::VectorXd q = a.partialPivLu().solve(b);
  return {q.data(), q.data() + q.size()};
}

/// Optimal Q* by value iteration.
inline std::vector<double> value_iteration(const TabularMdp& mdp, double tol = 1e-12, std::size_t max_iters = 100000) {
  const auto ns = mdp.n_states();
  const auto na = mdp.n_actions();
  std::vector<double> q(ns * na, 0.0);
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::vector<double> v(ns, 0.0);
    for (std::size_t s = 0; s < ns; ++s)
      if (!mdp.terminal(s)) v[s] = *std::max_element(q.begin() + static_cast<std::ptrdiff_t>(s * na),
                                                     q.begin() + static_cast<std::ptrdiff_t>((s + 1) * na));
    double change = 0.0;
    for (std::size_t s = 0; s < ns; ++s) {
      if (mdp.terminal(s)) continue;
      for (std::size_t a = 0; a < na; ++a) {
        double next = mdp.expected_reward(s, a);
        for (std::size_t s2 = 0; s2 < ns; ++s2) next += mdp.gamma() * mdp.prob(s, a, s2) * v[s2];
        change = std::max(change, std::abs(next - q[s * na + a]));
        q[s * na + a] = next;
      }
    }
    if (change < tol) break;
  }
  return q;
}

/// Expected discounted return of `pi` from the start state.
inline double policy_return(const TabularMdp& mdp, const FixedPolicy& pi) {
  const auto q = policy_evaluation(mdp, pi);
  const auto s = mdp.start_state();
  double v = 0.0;
  for (std::size_t a = 0; a < mdp.n_actions(); ++a) v += pi.probs[s][a] * q[s * mdp.n_actions() + a];
  return v;
}

/// Monte Carlo discounted returns of `pi` from the start state.
inline std::vector<double> rollout_returns(const TabularMdp& mdp, const FixedPolicy& pi, std::size_t episodes,
                                           std::size_t horizon, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out;
  out.reserve(episodes);
  for (std::size_t e = 0; e < episodes; ++e) {
    std::size_t s = mdp.start_state();
    double ret = 0.0;
    double discount = 1.0;
    for (std::size_t t = 0; t < horizon && !mdp.terminal(s); ++t) {
      const auto a = rng.categorical(pi.probs[s]);
      ret += discount * sample_reward(mdp.reward(s, a), rng);
      s = sample_next_state(mdp, s, a, rng);
      discount *= mdp.gamma();
    }
    out.push_back(ret);
  }
  return out;
}

/// Bounds on returns attainable from any non-terminal pair under any policy,
/// widened to include 0.
inline std::pair<double, double> attainable_return_bounds(const TabularMdp& mdp) {
  const auto ns = mdp.n_states();
  const auto na = mdp.n_actions();
  std::vector<double> vmax(ns, 0.0), vmin(ns, 0.0);
  double lo = 0.0, hi = 0.0;
  for (std::size_t it = 0; it < 100000; ++it) {
    double change = 0.0;
    lo = 0.0;
    hi = 0.0;
    for (std::size_t s = 0; s < ns; ++s) {
      if (mdp.terminal(s)) continue;
      double best = -std::numeric_limits<double>::infinity();
      double worst = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < na; ++a) {
        double rmax = -std::numeric_limits<double>::infinity();
        double rmin = std::numeric_limits<double>::infinity();
        for (const auto& atom : mdp.reward(s, a))
          if (atom.prob > 0.0) {
            rmax = std::max(rmax, atom.value);
            rmin = std::min(rmin, atom.value);
          }
        double cmax = -std::numeric_limits<double>::infinity();
        double cmin = std::numeric_limits<double>::infinity();
        for (std::size_t s2 = 0; s2 < ns; ++s2) {
          if (mdp.prob(s, a, s2) <= 0.0) continue;
          cmax = std::max(cmax, mdp.terminal(s2) ? 0.0 : vmax[s2]);
          cmin = std::min(cmin, mdp.terminal(s2) ? 0.0 : vmin[s2]);
        }
        best = std::max(best, rmax + mdp.gamma() * cmax);
        worst = std::min(worst, rmin + mdp.gamma() * cmin);
        hi = std::max(hi, rmax + mdp.gamma() * cmax);
        lo = std::min(lo, rmin + mdp.gamma() * cmin);
      }
      change = std::max({change, std::abs(best - vmax[s]), std::abs(worst - vmin[s])});
      vmax[s] = best;
      vmin[s] = worst;
    }
    if (change < 1e-13) break;
  }
  return {lo, hi};
}

// ---------------------------------------------------------------------------
// Distributional dynamic programming

/// Categorical return distributions for every (s,a) on a shared grid.
struct ReturnTable {
  std::vector<double> support;
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<std::vector<double>> probs;  // [s * n_actions + a][atom]

  double atom_width() const { return support.size() > 1 ? support[1] - support[0] : 0.0; }

  CategoricalDistribution at(std::size_t s, std::size_t a) const {
    return CategoricalDistribution(support, normalized(probs.at(s * n_actions + a)));
  }

  static std::vector<double> normalized(std::vector<double> p) {
    double total = 0.0;
    for (double x : p) total += x;
    for (double& x : p) x /= total;
    return p;
  }
};

struct OracleOptions {
  std::size_t support_size = 401;
  std::size_t sweeps = 5000;
  /// Explicit support bounds; when unset, attainable-return bounds are used.
  std::optional<std::pair<double, double>> bounds;
  double tolerance = 1e-13;
};

namespace detail {

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = (n == 1) ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  v.back() = hi;
  return v;
}

/// Splits mass at x between its two neighbouring atoms (mean preserving).
inline void project_mass(std::span<const double> support, double x, double mass, std::vector<double>& out) {
  const auto n = support.size();
  const double lo = support.front();
  const double hi = support.back();
  if (x <= lo) {
    out[0] += mass;
    return;
  }
  if (x >= hi) {
    out[n - 1] += mass;
    return;
  }
  const double pos = (x - lo) / (hi - lo) * static_cast<double>(n - 1);
  auto k = static_cast<std::size_t>(std::floor(pos));
  if (k >= n - 1) k = n - 2;
  // the grid index from `pos` can be off by one under rounding
  while (k > 0 && x < support[k]) --k;
  while (k + 2 < n && x > support[k + 1]) ++k;
  const double frac = std::clamp((x - support[k]) / (support[k + 1] - support[k]), 0.0, 1.0);
  out[k] += mass * (1.0 - frac);
  out[k + 1] += mass * frac;
}

}  // namespace detail

/// Support grid covering every attainable return (or explicit bounds, which
/// must cover them).
inline std::vector<double> oracle_support(const TabularMdp& mdp, const OracleOptions& opt) {
  if (opt.support_size < 2) throw ConfigError("oracle support_size must be >= 2");
  auto [lo, hi] = attainable_return_bounds(mdp);
  if (opt.bounds) {
    const double slack = 1e-9 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
    if (opt.bounds->first > lo + slack || opt.bounds->second < hi - slack)
      throw ConfigError("oracle support bounds exclude attainable returns [" + kv::format_double(lo) + ", " +
                        kv::format_double(hi) + "]");
    lo = opt.bounds->first;
    hi = opt.bounds->second;
  }
  if (hi - lo < 1e-9) {
    const double pad = 0.5 * std::max(1.0, std::abs(lo));
    lo -= pad;
    hi += pad;
  }
  return detail::linspace(lo, hi, opt.support_size);
}

/// Every pair starts as the projection of a Dirac at 0.
inline ReturnTable dirac_zero_table(const TabularMdp& mdp, std::vector<double> support) {
  ReturnTable t{std::move(support), mdp.n_states(), mdp.n_actions(), {}};
  std::vector<double> zero(t.support.size(), 0.0);
  detail::project_mass(t.support, 0.0, 1.0, zero);
  t.probs.assign(mdp.n_states() * mdp.n_actions(), zero);
  return t;
}

/// One application of the projected distributional Bellman operator.
inline ReturnTable distributional_bellman_sweep(const TabularMdp& mdp, const FixedPolicy& pi, const ReturnTable& z) {
  const auto ns = mdp.n_states();
  const auto na = mdp.n_actions();
  const auto n_atoms = z.support.size();
  std::vector<std::vector<double>> state_mix(ns, std::vector<double>(n_atoms, 0.0));
  for (std::size_t s = 0; s < ns; ++s)
    for (std::size_t a = 0; a < na; ++a)
      if (pi.probs[s][a] > 0.0)
        for (std::size_t j = 0; j < n_atoms; ++j) state_mix[s][j] += pi.probs[s][a] * z.probs[s * na + a][j];
  ReturnTable out = z;
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t a = 0; a < na; ++a) {
      auto& row = out.probs[s * na + a];
      std::fill(row.begin(), row.end(), 0.0);
      if (mdp.terminal(s)) {
        detail::project_mass(z.support, 0.0, 1.0, row);
        continue;
      }
      for (const auto& atom : mdp.reward(s, a)) {
        if (atom.prob <= 0.0) continue;
        for (std::size_t s2 = 0; s2 < ns; ++s2) {
          const double p = mdp.prob(s, a, s2) * atom.prob;
          if (p <= 0.0) continue;
          if (mdp.terminal(s2)) {
            detail::project_mass(z.support, atom.value, p, row);
            continue;
          }
          for (std::size_t j = 0; j < n_atoms; ++j) {
            const double m = state_mix[s2][j];
            if (m > 0.0) detail::project_mass(z.support, atom.value + mdp.gamma() * z.support[j], p * m, row);
          }
        }
      }
    }
  }
  return out;
}

/// Largest absolute probability change between two tables on the same grid.
inline double table_change(const ReturnTable& a, const ReturnTable& b) {
  double change = 0.0;
  for (std::size_t i = 0; i < a.probs.size(); ++i)
    for (std::size_t j = 0; j < a.probs[i].size(); ++j) change = std::max(change, std::abs(a.probs[i][j] - b.probs[i][j]));
  return change;
}

/// sup over (s,a) of W_p between two tables on the same grid.
inline double sup_wasserstein(const ReturnTable& a, const ReturnTable& b, double p) {
  double sup = 0.0;
  for (std::size_t s = 0; s < a.n_states; ++s)
    for (std::size_t u = 0; u < a.n_actions; ++u) sup = std::max(sup, wasserstein_cat(a.at(s, u), b.at(s, u), p));
  return sup;
}

/// Ground-truth return distributions: fixed point of the projected
/// distributional Bellman operator, iterated from Dirac-at-0 until the table
/// stops changing (or `sweeps` is exhausted).
inline ReturnTable oracle_return_distribution(const TabularMdp& mdp, const FixedPolicy& pi,
                                              const OracleOptions& opt = {}) {
  pi.validate(mdp);
  auto table = dirac_zero_table(mdp, oracle_support(mdp, opt));
  for (std::size_t k = 0; k < opt.sweeps; ++k) {
    auto next = distributional_bellman_sweep(mdp, pi, table);
    const double change = table_change(next, table);
    table = std::move(next);
    if (change < opt.tolerance) break;
  }
  return table;
}

}  // namespace wcrit
