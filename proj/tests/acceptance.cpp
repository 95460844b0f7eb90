// Acceptance runner: one PASS/FAIL line per criterion, with the measured
// numbers and the wall-clock limit. `--only N` runs a single criterion.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wcrit/config.hpp"
#include "wcrit/platform.hpp"
#include "wcrit/properties.hpp"
#include "wcrit/report.hpp"
#include "wcrit/trainers.hpp"

#ifndef WCRIT_CONFIG_DIR
#define WCRIT_CONFIG_DIR "configs"
#endif

using namespace wcrit;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double limit_s;
  std::function<Outcome()> run;
};

std::string num(double x, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << x;
  return os.str();
}

RunConfig load(const std::string& name) { return parse_config(std::string(WCRIT_CONFIG_DIR) + "/" + name); }

Outcome from_property(const PropertyResult& r) { return {r.passed, r.detail}; }

/// Small trunk matching the shipped configs.
FlowCriticConfig synthetic_critic() {
  const auto c = load("chain_bimodal.cfg");
  return c.effective_critic();
}

Outcome prop1_bound() {
  const auto cfg = synthetic_critic();
  Outcome out{true, ""};
  for (const auto& target : standard_synthetic_targets()) {
    const auto fit = fit_synthetic_target(target, cfg, 5000, 16, 0);
    out.passed = out.passed && fit.bound_holds();
    out.detail += (out.detail.empty() ? "" : "; ") + target.name() + ": W2^2=" + num(fit.w2_sq) +
                  " <= L=" + num(fit.trajectory_loss) + " + " + num(fit.slack()) + (fit.bound_holds() ? "" : " VIOLATED") +
                  " (minibatch " + num(fit.batch_loss) + ", straight-path " + num(fit.path_loss) + ")";
  }
  return out;
}

double final_mean_w2(const RunConfig& cfg) {
  const auto trace = train_fixed_policy(cfg);
  if (trace.aborted) throw NumericError("run aborted: " + trace.diagnostic, cfg.gradient_steps);
  return trace.records.back().mean_w2;
}

Outcome coupling_ablation(std::size_t seeds) {
  const auto base = load("chain_bimodal.cfg");
  std::size_t wins = 0;
  std::string detail;
  for (std::size_t k = 0; k < seeds; ++k) {
    RunConfig a = base, b = base;
    a.seed = b.seed = k;
    a.critic_kind = CriticKind::flowiqn;
    b.critic_kind = CriticKind::independent_cfm;
    const double wa = final_mean_w2(a), wb = final_mean_w2(b);
    wins += wa < wb ? 1 : 0;
    detail += "seed " + std::to_string(k) + ": " + num(wa) + " vs " + num(wb) + "; ";
  }
  return {wins >= 4, "FlowIQN lower in " + std::to_string(wins) + "/" + std::to_string(seeds) + " seeds (" +
                         detail.substr(0, detail.size() - 2) + ")"};
}

Outcome schedule_ablation(std::size_t seeds) {
  auto base = load("chain_bimodal.cfg");
  base.critic.M = 4;
  std::vector<double> ad, un;
  for (std::size_t k = 0; k < seeds; ++k) {
    RunConfig a = base, u = base;
    a.seed = u.seed = k;
    a.critic.schedule_mode = ScheduleMode::adaptive;
    u.critic.schedule_mode = ScheduleMode::uniform;
    ad.push_back(final_mean_w2(a));
    un.push_back(final_mean_w2(u));
  }
  const double ia = iqm_or_mean(ad), iu = iqm_or_mean(un);
  const auto knots = check_constant_curvature_knots(200, 10);
  std::string per;
  for (std::size_t k = 0; k < seeds; ++k) per += num(ad[k]) + "/" + num(un[k]) + (k + 1 < seeds ? ", " : "");
  return {ia <= iu && knots.passed, "IQM mean W2 adaptive " + num(ia) + " vs uniform " + num(iu) + " (per seed " + per +
                                        "); " + knots.detail};
}

Outcome offline_sanity(std::size_t seeds) {
  const auto base = load("corridor_offline.cfg");
  std::size_t wins = 0;
  bool support = true;
  std::string detail;
  for (std::size_t k = 0; k < seeds; ++k) {
    RunConfig c = base;
    c.seed = k;
    const auto r = train_offline_rejection(c);
    if (r.trace.aborted) throw NumericError("run aborted: " + r.trace.diagnostic, c.gradient_steps);
    wins += r.policy_return >= r.behaviour_return ? 1 : 0;
    support = support && r.support_respected;
    detail += "seed " + std::to_string(k) + ": " + num(r.policy_return) + " vs " + num(r.behaviour_return) +
              " (rollouts " + num(r.policy_rollout) + " vs " + num(r.behaviour_rollout) + "); ";
  }
  return {wins >= 4 && support, "extracted >= behaviour in " + std::to_string(wins) + "/" + std::to_string(seeds) +
                                    " seeds, zero-support selections: " + (support ? "none" : "PRESENT") + " (" +
                                    detail.substr(0, detail.size() - 2) + ")"};
}

std::string csv_of(const MetricsTrace& t) {
  std::ostringstream os;
  write_metrics_csv(t, os);
  return os.str();
}

Outcome determinism() {
  std::vector<std::pair<std::string, RunConfig>> runs;
  auto chain = load("chain_bimodal.cfg");
  chain.gradient_steps = 300;
  chain.eval_every = 100;
  chain.seed = 7;
  runs.emplace_back("flowiqn", chain);
  auto adaptive = chain;
  adaptive.critic.schedule_mode = ScheduleMode::adaptive;
  adaptive.critic.schedule_every = 50;
  adaptive.critic.shortcut_enabled = true;
  adaptive.critic.ensemble_size = 2;
  runs.emplace_back("shortcut+adaptive+ensemble", adaptive);
  auto iqn = chain;
  iqn.critic_kind = CriticKind::iqn;
  iqn.iqn.hidden = {64, 64};
  runs.emplace_back("iqn", iqn);
  auto off = load("corridor_offline.cfg");
  off.gradient_steps = 300;
  off.eval_every = 100;
  off.seed = 3;

  bool same = true;
  std::string detail;
  for (const auto& [name, cfg] : runs) {
    const bool eq = csv_of(train_fixed_policy(cfg)) == csv_of(train_fixed_policy(cfg));
    same = same && eq;
    detail += name + (eq ? " identical" : " DIFFERS") + "; ";
  }
  const auto o1 = train_offline_rejection(off), o2 = train_offline_rejection(off);
  const bool eq = csv_of(o1.trace) == csv_of(o2.trace) && o1.policy == o2.policy;
  same = same && eq;
  detail += std::string("offline ") + (eq ? "identical" : "DIFFERS");
  return {same, detail};
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"acceptance criteria"};
  int only = 0;
  std::size_t seeds = 5;
  app.add_option("--only", only, "run a single criterion (1-10)");
  app.add_option("--seeds", seeds, "seeds for the ablations")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "sorted coupling equals exhaustive optimum", 1.0, [] { return from_property(check_sorted_coupling_optimality(200, 1)); }},
      {2, "W2^2 <= loss + 0.05 (u-l)^2 on 5 synthetic targets", 120.0, prop1_bound},
      {3, "DP contraction d_k+1 <= gamma d_k + 2 atom_width", 30.0, [] { return from_property(check_contraction(60, 401)); }},
      {4, "zero shortcut bias for (t,z,d)-constant fields", 1.0, [] { return from_property(check_shortcut_zero_bias(100, 5)); }},
      {5, "single d=1 step loss equals empirical W2^2", 1.0, [] { return from_property(check_single_step_identity(100, 6)); }},
      {6, "sorted coupling beats independent CFM", 900.0, [&] { return coupling_ablation(seeds); }},
      {7, "adaptive schedule <= uniform at M=4", 900.0, [&] { return schedule_ablation(seeds); }},
      {8, "backward matches central differences", 10.0, [] { return from_property(check_gradients(50, 8)); }},
      {9, "offline extraction beats behaviour, respects support", 600.0, [&] { return offline_sanity(seeds); }},
      {10, "byte-identical CSV on repeat runs", 600.0, determinism},
  };

  bool all = true;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.limit_s;
    const bool pass = o.passed && in_time;
    all = all && pass;
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << c.id << ". " << c.title << ": " << o.detail << " | " << num(secs, 3)
              << " s (limit " << num(c.limit_s) << " s" << (in_time ? "" : ", EXCEEDED") << ")" << std::endl;
  }
  return all ? 0 : 1;
}
