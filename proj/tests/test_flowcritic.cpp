#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "wcrit/flowcritic/critic.hpp"
#include "wcrit/properties.hpp"

using namespace wcrit;

namespace {

SourceMap unit_map() { return compute_bounds(0.0, 1.0, 0.9, 0.1); }  // l = 9, u = 10

/// Field whose output is the constant c everywhere: zero read-out weights.
VelocityField constant_field(double c, bool shortcut, const SourceMap& sm, std::uint64_t seed = 3) {
  Rng rng(seed);
  auto cfg = props::small_velocity_config(rng, sm, shortcut);
  auto f = VelocityField::create(cfg, 0.01, rng);
  f.online.layers.back().weight.setZero();
  f.online.layers.back().bias.setConstant(c);
  ++f.online.version;
  f.target = TargetParams::copy_of(f.online, 0.01);
  return f;
}

CoupledBatch single_pair(double z0, double y, double tau, double t) {
  CoupledEntry e;
  e.tau = {tau};
  e.z0 = {z0};
  e.y = {y};
  set_interpolation_time(e, t);
  return {{e}};
}

}  // namespace

TEST(SourceMap, BoundsFromRewards) {
  const auto sm = unit_map();
  EXPECT_NEAR(sm.q_max, 10.0, 1e-12);
  EXPECT_NEAR(sm.q_min, 0.0, 1e-12);
  EXPECT_NEAR(sm.u, 10.0, 1e-12);
  EXPECT_NEAR(sm.l, 9.0, 1e-12);
  EXPECT_DOUBLE_EQ(compute_bounds(-1.0, 1.0, 0.5, 1.0).l, -2.0);
  EXPECT_THROW(compute_bounds(0.0, 1.0, 1.0, 0.1), ConfigError);
  EXPECT_THROW(compute_bounds(0.0, 1.0, 0.9, 0.0), ConfigError);
  EXPECT_NO_THROW(compute_bounds(0.0, 1.0, 0.0, 0.1));
}

TEST(SourceMap, DegenerateIntervalStaysInjective) {
  const auto sm = compute_bounds(2.0, 2.0, 0.5, 0.1);
  EXPECT_DOUBLE_EQ(sm.u, 4.0);
  EXPECT_LT(sm.l, sm.u);
  EXPECT_LT(source_map(sm, 0.2), source_map(sm, 0.8));
}

TEST(SourceMap, AffineEndpoints) {
  SourceMap sm;
  sm.l = 9.0;
  sm.u = 10.0;
  EXPECT_EQ(source_map(sm, 0.0), 9.0);
  EXPECT_EQ(source_map(sm, 1.0), 10.0);
  EXPECT_EQ(source_map(sm, 0.5), 9.5);
}

TEST(Euler, ConstantAndZeroFields) {
  auto sched = TimeSchedule::uniform(5);
  EXPECT_NEAR(euler_integrate([](double, double) { return 2.0; }, 0.0, sched), 2.0, 1e-15);
  sched.knots = {0.0, 0.05, 0.6, 0.61, 1.0};
  EXPECT_NEAR(euler_integrate([](double, double) { return 2.0; }, 0.0, sched), 2.0, 1e-15);
  EXPECT_EQ(euler_integrate([](double, double) { return 0.0; }, -3.25, sched), -3.25);
}

TEST(Euler, LeftEndpointQuadrature) {
  // 2 (0 + 1/4 + 1/2 + 3/4) / 4 = 0.75
  const auto sched = TimeSchedule::uniform(4);
  EXPECT_DOUBLE_EQ(euler_integrate([](double t, double) { return 2.0 * t; }, 1.0, sched), 1.75);
}

TEST(Euler, NonFiniteStateReportsStep) {
  const auto sched = TimeSchedule::uniform(4);
  try {
    euler_integrate([](double t, double) { return t > 0.3 ? std::numeric_limits<double>::infinity() : 0.0; }, 0.0, sched);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.step(), 2u);
  }
}

TEST(Euler, HalfStepsComposeToAveragedField) {
  const double a = 0.3, b = -1.7, t = 0.25, d = 0.5, z = 0.4;
  auto v = [&](double s) { return a + b * s; };
  const double two = z + 0.5 * d * v(t) + 0.5 * d * v(t + 0.5 * d);
  const double one = z + d * 0.5 * (v(t) + v(t + 0.5 * d));
  EXPECT_NEAR(two, one, 1e-15);
}

TEST(Integrate, ZeroFieldReturnsSource) {
  const auto sm = unit_map();
  const auto f = constant_field(0.0, false, sm);
  for (double tau : {0.0, 0.3, 1.0})
    EXPECT_DOUBLE_EQ(integrate(f, sm, 0, 0, tau, TimeSchedule::uniform(8), false), source_map(sm, tau));
}

TEST(Integrate, ConstantFieldShiftsByC) {
  const auto sm = unit_map();
  const auto f = constant_field(-1.5, true, sm);
  EXPECT_NEAR(integrate(f, sm, 0, 0, 0.4, TimeSchedule::uniform(6), false), source_map(sm, 0.4) - 1.5, 1e-12);
}

TEST(BellmanTargets, TerminalAndMyopic) {
  const auto sm = unit_map();
  const auto f = constant_field(3.0, false, sm);
  FlowCriticConfig cfg;
  cfg.K = 5;
  cfg.gamma = 0.9;
  Rng rng(1);
  const auto sched = TimeSchedule::uniform(4);
  for (double y : bellman_targets(Transition{0, 0, 0.7, 0, 0}, 0, f, sm, sched, cfg, rng).y) EXPECT_EQ(y, 0.7);
  cfg.gamma = 0.0;
  for (double y : bellman_targets(Transition{0, 0, -0.2, 0, 1}, 0, f, sm, sched, cfg, rng).y) EXPECT_EQ(y, -0.2);
}

TEST(BellmanTargets, ZeroFieldBootstrapsSourceMap) {
  const auto sm = unit_map();
  const auto f = constant_field(0.0, false, sm);
  FlowCriticConfig cfg;
  cfg.K = 6;
  cfg.gamma = 0.9;
  Rng rng(2);
  const auto t = bellman_targets(Transition{0, 0, 0.5, 0, 1}, 0, f, sm, TimeSchedule::uniform(4), cfg, rng);
  ASSERT_EQ(t.y.size(), 6u);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(t.y[k], 0.5 + 0.9 * source_map(sm, t.tau_prime[k]), 1e-12);
}

TEST(Coupling, SortedPairsAndInterpolants) {
  SourceMap sm;
  sm.l = 9.0;
  sm.u = 10.0;
  FlowCriticConfig cfg;
  Rng rng(4);
  const std::vector<double> tau{0.7, 0.2}, y{5.0, 1.0};
  auto e = couple_batch(tau, y, sm, cfg, rng);
  EXPECT_EQ(e.tau, (std::vector<double>{0.2, 0.7}));
  EXPECT_EQ(e.z0, (std::vector<double>{source_map(sm, 0.2), source_map(sm, 0.7)}));
  EXPECT_EQ(e.y, (std::vector<double>{1.0, 5.0}));
  set_interpolation_time(e, 0.0);
  EXPECT_EQ(e.zt, e.z0);
  set_interpolation_time(e, 1.0);
  EXPECT_EQ(e.zt, e.y);
  const std::vector<double> one{1.0};
  EXPECT_THROW(couple_batch(tau, one, sm, cfg, rng), UsageError);
}

TEST(Loss, ConstantPredictorSinglePair) {
  const auto sm = unit_map();
  const auto f = constant_field(0.8, false, sm);
  for (double t : {0.0, 0.35, 0.9}) {
    const auto b = single_pair(9.2, 10.5, 0.2, t);
    const double want = std::pow(0.8 - (10.5 - 9.2), 2.0);
    EXPECT_NEAR(flowiqn_loss(b, f.net, f.online).loss, want, 1e-12);
    EXPECT_NEAR(independent_cfm_loss(b, f.net, f.online).loss, want, 1e-12);
  }
}

TEST(Loss, ExactTargetVelocityGivesZero) {
  const auto sm = unit_map();
  const auto f = constant_field(1.25, false, sm);
  EXPECT_EQ(flowiqn_loss(single_pair(9.0, 10.25, 0.0, 0.5), f.net, f.online).loss, 0.0);
}

TEST(Loss, FlowiqnRejectsUnsortedBatch) {
  const auto sm = unit_map();
  const auto f = constant_field(0.0, false, sm);
  CoupledEntry e;
  e.tau = {0.2, 0.7};
  e.z0 = {9.2, 9.7};
  e.y = {5.0, 1.0};
  set_interpolation_time(e, 0.5);
  EXPECT_THROW(flowiqn_loss({{e}}, f.net, f.online), UsageError);
}

TEST(Shortcut, ConstantFieldHasNoConsistencyResidual) {
  const auto sm = unit_map();
  const auto f = constant_field(0.6, true, sm);
  FlowCriticConfig cfg;
  cfg.shortcut_enabled = true;
  Rng rng(5);
  CoupledBatch b;
  for (int i = 0; i < 4; ++i) b.entries.push_back(single_pair(9.1 + 0.2 * i, 10.0 + i, 0.1 + 0.2 * i, 0.1 * i).entries[0]);
  const auto r = shortcut_consistency_loss(b, f.net, f.online, f.target.shadow, cfg, rng);
  EXPECT_EQ(r.loss, 0.0);
  cfg.shortcut_step_sizes = {0.75};  // t + 2d > 1 for every t: skipped
  EXPECT_EQ(shortcut_consistency_loss(b, f.net, f.online, f.target.shadow, cfg, rng).loss, 0.0);
}

TEST(Shortcut, CombinedLossEndpoints) {
  const auto sm = unit_map();
  Rng init(6);
  auto vcfg = props::small_velocity_config(init, sm, true);
  vcfg.n_states = vcfg.n_actions = 1;
  auto f = VelocityField::create(vcfg, 0.01, init);
  f.target.shadow.layers.back().bias.array() += 0.3;  // make the consistency term non-zero
  FlowCriticConfig cfg;
  cfg.shortcut_enabled = true;
  CoupledBatch b;
  for (int i = 0; i < 3; ++i) b.entries.push_back(single_pair(9.1 + 0.3 * i, 9.5 + i, 0.1 + 0.3 * i, 0.2).entries[0]);

  cfg.lambda_c = 0.0;
  Rng r1(7), r2(7);
  EXPECT_EQ(combined_loss(b, f, cfg, r1).loss, flowiqn_loss(b, f.net, f.online, cfg.min_step()).loss);
  cfg.lambda_c = 1.0;
  const double con = shortcut_consistency_loss(b, f.net, f.online, f.target.shadow, cfg, r2).loss;
  Rng r3(7);
  EXPECT_EQ(combined_loss(b, f, cfg, r3).loss, con);
  EXPECT_GT(con, 0.0);
}

TEST(Scalarize, GridAndConstantFields) {
  const auto sm = unit_map();
  const auto g = quantile_grid(4);
  EXPECT_EQ(g, (std::vector<double>{0.125, 0.375, 0.625, 0.875}));
  const auto sched = TimeSchedule::uniform(4);
  EXPECT_NEAR(scalarize(constant_field(0.0, false, sm), sm, 0, 0, 4, sched), source_map(sm, 0.5), 1e-12);
  EXPECT_NEAR(scalarize(constant_field(-2.0, false, sm), sm, 0, 0, 4, sched), source_map(sm, 0.5) - 2.0, 1e-12);
}

TEST(Samples, ZeroFieldGrid) {
  const auto sm = unit_map();
  const auto f = constant_field(0.0, false, sm);
  const auto sched = TimeSchedule::uniform(3);
  const auto d = sample_return_distribution(f, sm, 0, 0, 8, sched, SampleMode::grid);
  const auto g = quantile_grid(8);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_DOUBLE_EQ(d.samples()[k], source_map(sm, g[k]));
  const auto one = sample_return_distribution(f, sm, 0, 0, 1, sched, SampleMode::grid);
  EXPECT_DOUBLE_EQ(one.samples()[0], source_map(sm, 0.5));
  EXPECT_THROW(sample_return_distribution(f, sm, 0, 0, 4, sched, SampleMode::random), UsageError);
}

TEST(Schedule, ConstantCurvatureIsUniform) {
  const std::vector<double> c(16, 2.5);
  const auto k = knots_from_curvature(c, 1e-3, 7);
  for (std::size_t m = 0; m <= 7; ++m) EXPECT_NEAR(k[m], static_cast<double>(m) / 7.0, 1e-9);
}

TEST(Schedule, PiecewiseCurvatureInversion) {
  // weights sqrt(4) = 2 and sqrt(1) = 1, total 1.5: 2 t / 1.5 = 1/2
  const std::vector<double> c{4.0, 1.0};
  const auto k = knots_from_curvature(c, 0.0, 2);
  EXPECT_NEAR(k[1], 0.375, 1e-15);
}

TEST(Schedule, ZeroCurvatureFallsBackToUniform) {
  const std::vector<double> c(8, 0.0);
  const auto k = knots_from_curvature(c, 0.0, 4);
  EXPECT_EQ(k, (std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}));
  EXPECT_THROW(knots_from_curvature(c, 0.0, 0), ConfigError);
}

TEST(Schedule, RefreshKeepsValidKnots) {
  auto s = TimeSchedule::uniform(5, 4);
  refresh_schedule(s, std::vector<double>{100.0, 0.0, 0.0, 1.0}, 5);
  EXPECT_TRUE(s.valid());
  EXPECT_LT(s.knots[1], 0.2);
  EXPECT_THROW(refresh_schedule(s, std::vector<double>{1.0}, 5), UsageError);
}

TEST(Distill, ConstantStudentAgainstSourceMapTeacher) {
  const auto sm = unit_map();
  const auto teacher = constant_field(0.0, false, sm);
  const QuantileNet student({1, 1, 3, 4, {5}});
  Rng rng(8);
  auto sp = student.init(rng);
  sp.layers.back().weight.setZero();
  sp.layers.back().bias.setConstant(9.3);
  const std::vector<std::size_t> s{0}, a{0};
  const auto r = distill_student(teacher, sm, student, sp, s, a, 8, TimeSchedule::uniform(4));
  double want = 0.0;
  for (double t : quantile_grid(8)) want += std::pow(9.3 - source_map(sm, t), 2.0) / 8.0;
  EXPECT_NEAR(r.loss, want, 1e-12);
}

TEST(Trajectory, ZeroFieldZeroDisplacement) {
  const auto sm = unit_map();
  const auto f = constant_field(0.0, false, sm);
  const std::vector<std::size_t> s{0, 0}, a{0, 0};
  const std::vector<double> tau{0.25, 0.75}, ustar{0.0, 0.5};
  const auto r = trajectory_loss(f.net, f.online, sm, s, a, tau, ustar, TimeSchedule::uniform(4));
  EXPECT_NEAR(r.loss, 0.125, 1e-12);  // mean of 0 and 0.5^2
  EXPECT_DOUBLE_EQ(r.endpoints[1], source_map(sm, 0.75));
}
