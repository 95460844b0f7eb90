#pragma once

// Flat key=value run configuration. Dotted keys group settings
// (env.*, critic.*, iqn.*, train.*, eval.*, contraction.*); gamma and seed
// are top level. Only env.kind is required.

#include <algorithm>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "wcrit/error.hpp"
#include "wcrit/kv.hpp"
#include "wcrit/trainers.hpp"

namespace wcrit {

namespace detail {

template <class E>
struct EnumNames {
  std::vector<std::pair<E, std::string_view>> names;

  E parse(std::string_view key, std::string_view v, std::size_t line) const {
    for (const auto& [e, n] : names)
      if (n == v) return e;
    std::string allowed;
    for (const auto& [e, n] : names) allowed += (allowed.empty() ? "" : "|") + std::string(n);
    throw ParseError("invalid value '" + std::string(v) + "' for key '" + std::string(key) + "' (expected " + allowed + ")",
                     line);
  }
  std::string name(E e) const {
    for (const auto& [x, n] : names)
      if (x == e) return std::string(n);
    return "?";
  }
};

inline const EnumNames<EnvKind> kEnvKinds{
    {{EnvKind::chain, "chain"}, {EnvKind::corridor, "corridor"}, {EnvKind::random, "random"}, {EnvKind::file, "file"}}};
inline const EnumNames<CriticKind> kCriticKinds{{{CriticKind::flowiqn, "flowiqn"},
                                                 {CriticKind::independent_cfm, "independent_cfm"},
                                                 {CriticKind::iqn, "iqn"}}};
inline const EnumNames<ScheduleMode> kScheduleModes{{{ScheduleMode::uniform, "uniform"}, {ScheduleMode::adaptive, "adaptive"}}};
inline const EnumNames<CouplingMode> kCouplingModes{{{CouplingMode::sorted, "sorted"}, {CouplingMode::independent, "independent"}}};
inline const EnumNames<TauMode> kTauModes{{{TauMode::reuse, "reuse"}, {TauMode::fresh, "fresh"}}};
inline const EnumNames<EnsembleAggregate> kAggregates{{{EnsembleAggregate::mean, "mean"}, {EnsembleAggregate::min, "min"}}};

inline std::string join_counts(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline std::vector<std::size_t> parse_counts(std::string_view v, std::size_t line) {
  std::vector<std::size_t> out;
  for (auto part : kv::split(v, ',')) out.push_back(kv::to_count(part, line));
  return out;
}

inline std::vector<double> parse_doubles(std::string_view v, std::size_t line) {
  std::vector<double> out;
  for (auto part : kv::split(v, ',')) out.push_back(kv::to_double(part, line));
  return out;
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::function<void(RunConfig&, std::string_view, std::size_t)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// Every accepted key, in serialization order.
inline const std::vector<ConfigKey>& config_keys() {
  using detail::join_counts;
  using detail::parse_counts;
  using detail::parse_doubles;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto dbl = [&](std::string name, auto member) {
      k.push_back({name, [member](RunConfig& c, std::string_view v, std::size_t l) { member(c) = kv::to_double(v, l); },
                   [member](const RunConfig& c) { return kv::format_double(member(const_cast<RunConfig&>(c))); }});
    };
    auto cnt = [&](std::string name, auto member) {
      k.push_back({name, [member](RunConfig& c, std::string_view v, std::size_t l) { member(c) = kv::to_count(v, l); },
                   [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }});
    };
    auto str = [&](std::string name, auto member) {
      k.push_back({name, [member](RunConfig& c, std::string_view v, std::size_t) { member(c) = std::string(v); },
                   [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); }});
    };
    auto boolean = [&](std::string name, auto member) {
      k.push_back({name, [member](RunConfig& c, std::string_view v, std::size_t l) { member(c) = kv::to_bool(v, l); },
                   [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); }});
    };
    auto enumeration = [&](std::string name, const auto& names, auto member) {
      k.push_back({name,
                   [&names, member, name](RunConfig& c, std::string_view v, std::size_t l) { member(c) = names.parse(name, v, l); },
                   [&names, member](const RunConfig& c) { return names.name(member(const_cast<RunConfig&>(c))); }});
    };
    auto counts = [&](std::string name, auto member) {
      k.push_back({name,
                   [member](RunConfig& c, std::string_view v, std::size_t l) {
                     if (kv::trim(v).empty()) {
                       member(c).clear();
                     } else {
                       member(c) = parse_counts(v, l);
                     }
                   },
                   [member](const RunConfig& c) { return join_counts(member(const_cast<RunConfig&>(c))); }});
    };

    dbl("gamma", [](RunConfig& c) -> double& { return c.gamma; });
    k.push_back({"seed", [](RunConfig& c, std::string_view v, std::size_t l) { c.seed = kv::to_u64(v, l); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});

    enumeration("env.kind", detail::kEnvKinds, [](RunConfig& c) -> EnvKind& { return c.env.kind; });
    cnt("env.n_states", [](RunConfig& c) -> std::size_t& { return c.env.n_states; });
    cnt("env.n_actions", [](RunConfig& c) -> std::size_t& { return c.env.n_actions; });
    str("env.rewards", [](RunConfig& c) -> std::string& { return c.env.rewards; });
    str("env.file", [](RunConfig& c) -> std::string& { return c.env.file; });
    k.push_back({"env.seed", [](RunConfig& c, std::string_view v, std::size_t l) { c.env.seed = kv::to_u64(v, l); },
                 [](const RunConfig& c) { return std::to_string(c.env.seed); }});
    str("env.policy", [](RunConfig& c) -> std::string& { return c.env.policy; });
    str("env.behaviour", [](RunConfig& c) -> std::string& { return c.env.behaviour; });
    cnt("env.dataset_size", [](RunConfig& c) -> std::size_t& { return c.env.dataset_size; });
    cnt("env.horizon", [](RunConfig& c) -> std::size_t& { return c.env.horizon; });

    enumeration("critic.kind", detail::kCriticKinds, [](RunConfig& c) -> CriticKind& { return c.critic_kind; });
    cnt("critic.K", [](RunConfig& c) -> std::size_t& { return c.critic.K; });
    cnt("critic.M", [](RunConfig& c) -> std::size_t& { return c.critic.M; });
    dbl("critic.kappa", [](RunConfig& c) -> double& { return c.critic.kappa; });
    dbl("critic.lambda_c", [](RunConfig& c) -> double& { return c.critic.lambda_c; });
    boolean("critic.shortcut", [](RunConfig& c) -> bool& { return c.critic.shortcut_enabled; });
    k.push_back({"critic.shortcut_steps",
                 [](RunConfig& c, std::string_view v, std::size_t l) { c.critic.shortcut_step_sizes = parse_doubles(v, l); },
                 [](const RunConfig& c) { return join_doubles(c.critic.shortcut_step_sizes); }});
    enumeration("critic.schedule", detail::kScheduleModes, [](RunConfig& c) -> ScheduleMode& { return c.critic.schedule_mode; });
    cnt("critic.ensemble", [](RunConfig& c) -> std::size_t& { return c.critic.ensemble_size; });
    enumeration("critic.aggregate", detail::kAggregates, [](RunConfig& c) -> EnsembleAggregate& { return c.critic.aggregate; });
    enumeration("critic.coupling", detail::kCouplingModes, [](RunConfig& c) -> CouplingMode& { return c.critic.coupling_mode; });
    enumeration("critic.tau_mode", detail::kTauModes, [](RunConfig& c) -> TauMode& { return c.critic.tau_mode; });
    dbl("critic.rho", [](RunConfig& c) -> double& { return c.critic.rho; });
    dbl("critic.lr", [](RunConfig& c) -> double& { return c.critic.lr; });
    dbl("critic.weight_decay", [](RunConfig& c) -> double& { return c.critic.weight_decay; });
    cnt("critic.schedule_every", [](RunConfig& c) -> std::size_t& { return c.critic.schedule_every; });
    cnt("critic.curvature_bins", [](RunConfig& c) -> std::size_t& { return c.critic.curvature_bins; });
    dbl("critic.schedule_eps", [](RunConfig& c) -> double& { return c.critic.schedule_eps; });
    dbl("critic.schedule_ema", [](RunConfig& c) -> double& { return c.critic.schedule_ema; });
    cnt("critic.probe_size", [](RunConfig& c) -> std::size_t& { return c.critic.probe_size; });
    cnt("critic.embed_dim", [](RunConfig& c) -> std::size_t& { return c.critic.embed_dim; });
    counts("critic.hidden", [](RunConfig& c) -> std::vector<std::size_t>& { return c.critic.hidden; });
    cnt("critic.cosine_basis", [](RunConfig& c) -> std::size_t& { return c.critic.cosine_basis; });
    cnt("critic.fourier_freqs", [](RunConfig& c) -> std::size_t& { return c.critic.fourier_freqs; });
    cnt("critic.hlgauss_bins", [](RunConfig& c) -> std::size_t& { return c.critic.hlgauss_bins; });
    dbl("critic.hlgauss_sigma", [](RunConfig& c) -> double& { return c.critic.hlgauss_sigma; });
    cnt("critic.step_embed_dim", [](RunConfig& c) -> std::size_t& { return c.critic.step_embed_dim; });

    cnt("iqn.n_quantiles", [](RunConfig& c) -> std::size_t& { return c.iqn.n_quantiles; });
    cnt("iqn.n_targets", [](RunConfig& c) -> std::size_t& { return c.iqn.n_targets; });
    dbl("iqn.huber_kappa", [](RunConfig& c) -> double& { return c.iqn.huber_kappa; });
    cnt("iqn.cosine_basis", [](RunConfig& c) -> std::size_t& { return c.iqn.cosine_basis; });
    cnt("iqn.embed_dim", [](RunConfig& c) -> std::size_t& { return c.iqn.embed_dim; });
    counts("iqn.hidden", [](RunConfig& c) -> std::vector<std::size_t>& { return c.iqn.hidden; });
    dbl("iqn.lr", [](RunConfig& c) -> double& { return c.iqn.lr; });
    dbl("iqn.rho", [](RunConfig& c) -> double& { return c.iqn.rho; });

    cnt("train.steps", [](RunConfig& c) -> std::size_t& { return c.gradient_steps; });
    cnt("train.batch_size", [](RunConfig& c) -> std::size_t& { return c.batch_size; });
    cnt("train.eval_every", [](RunConfig& c) -> std::size_t& { return c.eval_every; });
    cnt("train.eval_samples", [](RunConfig& c) -> std::size_t& { return c.eval_samples; });
    cnt("train.J", [](RunConfig& c) -> std::size_t& { return c.J; });

    cnt("eval.oracle_atoms", [](RunConfig& c) -> std::size_t& { return c.oracle_atoms; });
    cnt("eval.max_pairs", [](RunConfig& c) -> std::size_t& { return c.max_eval_pairs; });
    cnt("eval.rollouts", [](RunConfig& c) -> std::size_t& { return c.rollout_episodes; });

    dbl("contraction.p", [](RunConfig& c) -> double& { return c.contraction_p; });
    cnt("contraction.sweeps", [](RunConfig& c) -> std::size_t& { return c.contraction_sweeps; });
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

/// Sets one key; `line` is used in error messages (0 for command-line overrides).
inline void apply_override(RunConfig& cfg, std::string_view key, std::string_view value, std::size_t line = 0) {
  const auto* k = find_config_key(key);
  if (!k) throw ParseError("unknown key '" + std::string(key) + "'", line);
  k->set(cfg, kv::trim(value), line);
}

/// Parses "key=value" as given to --set.
inline std::pair<std::string, std::string> split_assignment(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) throw ParseError("expected key=value, got '" + std::string(text) + "'", 0);
  return {std::string(kv::trim(text.substr(0, eq))), std::string(kv::trim(text.substr(eq + 1)))};
}

inline RunConfig parse_config_text(std::string_view text) {
  RunConfig cfg;
  bool have_kind = false;
  for (const auto& e : kv::parse_text(text)) {
    apply_override(cfg, e.key, e.value, e.line);
    have_kind = have_kind || e.key == "env.kind";
  }
  if (!have_kind) throw ParseError("missing required key 'env.kind'", 0);
  return cfg;
}

inline RunConfig parse_config(const std::string& path) { return parse_config_text(kv::read_file(path)); }

/// Every key, one per line; parse_config_text(serialize_config(c)) == c.
inline std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + "=" + k.get(cfg) + "\n";
  return out;
}

}  // namespace wcrit
