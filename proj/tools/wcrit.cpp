// wcrit: run fixed-policy evaluation, offline extraction, contraction studies,
// the property suite, and seed/override sweeps from key=value configs.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wcrit/approx/checkpoint.hpp"
#include "wcrit/config.hpp"
#include "wcrit/platform.hpp"
#include "wcrit/properties.hpp"
#include "wcrit/report.hpp"
#include "wcrit/trainers.hpp"

namespace fs = std::filesystem;
using namespace wcrit;

namespace {

struct CommonOpts {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  std::size_t jobs = 1;
};

void add_common(CLI::App* sub, CommonOpts& o, bool needs_config = true) {
  auto* c = sub->add_option("--config", o.config, "key=value run configuration");
  if (needs_config) c->required();
  sub->add_option("--out", o.out, "output directory")->capture_default_str();
  sub->add_option("--seed", o.seed, "seed (overrides the config and WCRIT_SEED)");
  sub->add_option("--set", o.sets, "override key=value (repeatable)");
  sub->add_option("--jobs", o.jobs, "parallel runs")->check(CLI::PositiveNumber)->capture_default_str();
}

/// Config file, then --set, then WCRIT_SEED, then --seed.
RunConfig resolve_config(const CommonOpts& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : parse_config(o.config);
  for (const auto& s : o.sets) {
    const auto [k, v] = split_assignment(s);
    apply_override(cfg, k, v);
  }
  if (const char* env = std::getenv("WCRIT_SEED")) cfg.seed = kv::to_u64(env);
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

fs::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
  return fs::path(dir);
}

std::string to_string_with(const std::function<void(std::ostream&)>& f) {
  std::ostringstream os;
  f(os);
  return os.str();
}

void write_trace(const fs::path& dir, const MetricsTrace& trace, const nlohmann::json& extra = {}) {
  write_text_file((dir / "metrics.csv").string(), to_string_with([&](std::ostream& os) { write_metrics_csv(trace, os); }));
  write_text_file((dir / "events.jsonl").string(),
                  to_string_with([&](std::ostream& os) { write_events_jsonl(trace, os, extra); }));
  write_text_file((dir / "mean_w2.svg").string(), metrics_svg(trace));
}

void write_checkpoints(const fs::path& dir, const RunConfig& cfg, const Critic& critic) {
  const auto params = critic.parameters();
  std::string meta = serialize_config(cfg) + critic.metadata();
  meta += "checkpoints=" + std::to_string(params.size()) + "\n";
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto name = "critic_" + std::to_string(i) + ".ckpt";
    save_checkpoint((dir / name).string(), *params[i]);
    meta += "checkpoint." + std::to_string(i) + "=" + name + "\n";
  }
  write_text_file((dir / "critic.meta").string(), meta);
}

struct RunSummary {
  MetricsRecord last;
  bool aborted = false;
  std::optional<double> policy_return;
};

RunSummary run_eval_fixed(const RunConfig& cfg, const fs::path& dir) {
  auto run = run_fixed_policy(cfg);
  write_text_file((dir / "config.cfg").string(), serialize_config(cfg));
  write_trace(dir, run.trace);
  std::string per_pair = "s,a,w2\n";
  const auto& pairs = run.pairs;
  for (std::size_t i = 0; i < pairs.size() && i < run.final_eval.per_pair.size(); ++i)
    per_pair += std::to_string(pairs[i].first) + "," + std::to_string(pairs[i].second) + "," +
                kv::format_double(run.final_eval.per_pair[i]) + "\n";
  write_text_file((dir / "final_w2.csv").string(), per_pair);
  write_checkpoints(dir, cfg, *run.critic);
  return {run.trace.records.back(), run.trace.aborted, std::nullopt};
}

RunSummary run_offline(const RunConfig& cfg, const fs::path& dir) {
  const auto res = train_offline_rejection(cfg);
  write_text_file((dir / "config.cfg").string(), serialize_config(cfg));
  nlohmann::json extra{{"behaviour_return", res.behaviour_return},   {"policy_return", res.policy_return},
                       {"behaviour_rollout", res.behaviour_rollout}, {"policy_rollout", res.policy_rollout},
                       {"support_respected", res.support_respected}, {"fallback_states", res.fallback_states}};
  write_trace(dir, res.trace, extra);
  std::string pol = "state,action,fallback\n";
  for (std::size_t s = 0; s < res.policy.size(); ++s) {
    const bool fb = std::find(res.fallback_states.begin(), res.fallback_states.end(), s) != res.fallback_states.end();
    pol += std::to_string(s) + "," + std::to_string(res.policy[s]) + "," + (fb ? "1" : "0") + "\n";
  }
  write_text_file((dir / "policy.csv").string(), pol);
  write_text_file((dir / "returns.csv").string(),
                  "behaviour_return,policy_return,behaviour_rollout,policy_rollout,support_respected\n" +
                      kv::format_double(res.behaviour_return) + "," + kv::format_double(res.policy_return) + "," +
                      kv::format_double(res.behaviour_rollout) + "," + kv::format_double(res.policy_rollout) + "," +
                      (res.support_respected ? "1" : "0") + "\n");
  return {res.trace.records.back(), res.trace.aborted, res.policy_return};
}

int cmd_contraction(const CommonOpts& o) {
  const auto cfg = resolve_config(o);
  const auto dir = prepare_dir(o.out);
  const auto mdp = build_env(cfg);
  const auto pi = parse_policy(cfg.env.policy, mdp);
  const auto res = contraction_study(mdp, pi, cfg.contraction_p, cfg.contraction_sweeps, cfg.oracle_atoms);
  std::string csv = "sweep,distance,ratio,bound\n";
  std::vector<double> xs;
  for (std::size_t k = 0; k < res.distances.size(); ++k) {
    const double ratio = k == 0 ? std::numeric_limits<double>::quiet_NaN() : res.ratios[k - 1];
    const double bound = k == 0 ? std::numeric_limits<double>::quiet_NaN()
                                : res.gamma * res.distances[k - 1] + 2.0 * res.atom_width;
    csv += std::to_string(k) + "," + kv::format_double(res.distances[k]) + "," + kv::format_double(ratio) + "," +
           kv::format_double(bound) + "\n";
    xs.push_back(static_cast<double>(k));
  }
  write_text_file((dir / "contraction.csv").string(), csv);
  write_text_file((dir / "config.cfg").string(), serialize_config(cfg));
  write_text_file((dir / "contraction.svg").string(),
                  svg_line_plot(xs, res.distances, "Distance to fixed point", "sweep", "sup-W_p"));
  const bool ok = res.bound_holds();
  std::cout << "contraction: gamma=" << res.gamma << " atom_width=" << res.atom_width << " sweeps=" << res.distances.size() - 1
            << " bound " << (ok ? "holds" : "VIOLATED") << "\n";
  return ok ? 0 : 1;
}

int cmd_props(const CommonOpts& o) {
  const std::uint64_t seed = o.seed ? *o.seed : 0;
  const auto dir = prepare_dir(o.out);
  const auto results = run_property_suite(seed);
  std::string csv = "name,passed,detail\n";
  bool all = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    std::string detail = r.detail;
    std::replace(detail.begin(), detail.end(), ',', ';');
    csv += r.name + "," + (r.passed ? "1" : "0") + "," + detail + "\n";
    all = all && r.passed;
  }
  write_text_file((dir / "props.csv").string(), csv);
  return all ? 0 : 1;
}

int cmd_single(const CommonOpts& o, bool offline) {
  const auto cfg = resolve_config(o);
  const auto dir = prepare_dir(o.out);
  const auto s = offline ? run_offline(cfg, dir) : run_eval_fixed(cfg, dir);
  std::cout << (offline ? "offline" : "eval-fixed") << ": step=" << s.last.step << " mean_w2=" << s.last.mean_w2
            << " sup_w2=" << s.last.sup_w2;
  if (s.policy_return) std::cout << " policy_return=" << *s.policy_return;
  std::cout << (s.aborted ? " (aborted)" : "") << "\n";
  return s.aborted ? 3 : 0;
}

// --- sweep ------------------------------------------------------------------

struct Axis {
  std::string key;
  std::vector<std::string> values;
};

/// "key=v1,v2,..."; values holding commas themselves are separated by '|'.
Axis parse_axis(const std::string& text) {
  const auto [key, rest] = split_assignment(text);
  if (!find_config_key(key)) throw ParseError("unknown sweep key '" + key + "'", 0);
  Axis ax{key, {}};
  const char sep = rest.find('|') != std::string::npos ? '|' : ',';
  for (auto v : kv::split(rest, sep)) ax.values.emplace_back(kv::trim(v));
  if (ax.values.empty() || rest.empty()) throw ParseError("sweep key '" + key + "' has no values", 0);
  return ax;
}

int cmd_sweep(const CommonOpts& o, const std::vector<std::string>& over, std::size_t seeds, const std::string& mode) {
  const auto base = resolve_config(o);
  std::vector<Axis> axes;
  for (const auto& t : over) axes.push_back(parse_axis(t));
  if (seeds == 0) throw ConfigError("--seeds must be >= 1");

  // cartesian product, first axis varying slowest; every value is checked before any run
  std::vector<std::vector<std::pair<std::string, std::string>>> combos{{}};
  for (const auto& ax : axes) {
    std::vector<std::vector<std::pair<std::string, std::string>>> next;
    for (const auto& c : combos)
      for (const auto& v : ax.values) {
        auto n = c;
        n.emplace_back(ax.key, v);
        next.push_back(std::move(n));
      }
    combos = std::move(next);
  }
  std::vector<RunConfig> configs;
  for (const auto& c : combos) {
    RunConfig cfg = base;
    for (const auto& [k, v] : c) apply_override(cfg, k, v);
    cfg.validate();
    configs.push_back(cfg);
  }

  const auto root = prepare_dir(o.out);
  struct Job {
    std::size_t config;
    std::size_t seed_index;
    RunConfig cfg;
    fs::path dir;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < configs.size(); ++i)
    for (std::size_t k = 0; k < seeds; ++k) {
      RunConfig cfg = configs[i];
      cfg.seed = base.seed + k;
      jobs.push_back({i, k, cfg, root / ("cfg" + std::to_string(i) + "_seed" + std::to_string(k))});
    }

  std::vector<RunSummary> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        prepare_dir(jobs[j].dir.string());
        results[j] = mode == "offline" ? run_offline(jobs[j].cfg, jobs[j].dir) : run_eval_fixed(jobs[j].cfg, jobs[j].dir);
      } catch (const std::exception& e) {
        errors[j] = e.what();
      }
      std::lock_guard lock(log_mu);
      std::cerr << "[" << j + 1 << "/" << jobs.size() << "] " << jobs[j].dir.filename().string()
                << (errors[j].empty() ? "" : " failed: " + errors[j]) << "\n";
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(o.jobs, jobs.size()); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::string runs = "config,seed,dir,step,mean_w2,iqm_neg_w2,sup_w2,loss,policy_return,status\n";
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto& r = results[j].last;
    const auto pr = results[j].policy_return;
    runs += std::to_string(jobs[j].config) + "," + std::to_string(jobs[j].cfg.seed) + "," +
            jobs[j].dir.filename().string() + "," + std::to_string(r.step) + "," + kv::format_double(r.mean_w2) + "," +
            kv::format_double(r.iqm_neg_w2) + "," + kv::format_double(r.sup_w2) + "," + kv::format_double(r.loss) + "," +
            (pr ? kv::format_double(*pr) : "") + "," +
            (!errors[j].empty() ? "error" : results[j].aborted ? "aborted" : "ok") + "\n";
  }
  write_text_file((root / "runs.csv").string(), runs);

  std::string summary = "config,overrides,seeds,iqm_mean_w2,iqm_sup_w2";
  summary += mode == "offline" ? ",iqm_policy_return\n" : "\n";
  bool failed = false;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    std::vector<double> mean, sup, ret;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (jobs[j].config != i) continue;
      if (!errors[j].empty() || results[j].aborted) {
        failed = true;
        continue;
      }
      mean.push_back(results[j].last.mean_w2);
      sup.push_back(results[j].last.sup_w2);
      if (results[j].policy_return) ret.push_back(*results[j].policy_return);
    }
    std::string ov;
    for (const auto& [k, v] : combos[i]) ov += (ov.empty() ? "" : ";") + k + "=" + v;
    auto agg = [](const std::vector<double>& v) { return v.empty() ? std::string("nan") : kv::format_double(iqm_or_mean(v)); };
    summary += std::to_string(i) + "," + ov + "," + std::to_string(mean.size()) + "," + agg(mean) + "," + agg(sup);
    summary += mode == "offline" ? "," + agg(ret) + "\n" : "\n";
  }
  write_text_file((root / "summary.csv").string(), summary);
  std::cout << "sweep: " << configs.size() << " configurations x " << seeds << " seeds -> "
            << (root / "summary.csv").string() << "\n";
  return failed ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Distributional critics with quantile-coupled flow matching"};
  app.require_subcommand(1);

  CommonOpts eval_o, off_o, con_o, props_o, sweep_o;
  auto* eval = app.add_subcommand("eval-fixed", "train a critic on a fixed policy and track W2 to the exact oracle");
  add_common(eval, eval_o);
  auto* off = app.add_subcommand("offline", "offline training with rejection-sampling action extraction");
  add_common(off, off_o);
  auto* con = app.add_subcommand("contraction", "distributional DP distances to the fixed point per sweep");
  add_common(con, con_o);
  auto* prp = app.add_subcommand("props", "run the property suite; nonzero exit on any failure");
  prp->add_option("--out", props_o.out, "output directory")->capture_default_str();
  prp->add_option("--seed", props_o.seed, "seed for the random instances");
  auto* swp = app.add_subcommand("sweep", "cartesian product of overrides x seeds with an IQM summary");
  add_common(swp, sweep_o);
  std::vector<std::string> over;
  std::size_t seeds = 1;
  std::string mode = "eval-fixed";
  swp->add_option("--over", over, "key=v1,v2,... (use '|' between values that contain commas)");
  swp->add_option("--seeds", seeds, "seeds per configuration")->capture_default_str();
  swp->add_option("--mode", mode, "trainer to sweep")->check(CLI::IsMember({"eval-fixed", "offline"}))->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*eval) return cmd_single(eval_o, false);
    if (*off) return cmd_single(off_o, true);
    if (*con) return cmd_contraction(con_o);
    if (*prp) return cmd_props(props_o);
    if (*swp) return cmd_sweep(sweep_o, over, seeds, mode);
  } catch (const ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
