#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "wcrit/baselines.hpp"
#include "wcrit/properties.hpp"

using namespace wcrit;

TEST(QuantileHuber, HandValues) {
  EXPECT_EQ(quantile_huber(0.0, 0.3, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(quantile_huber(0.5, 0.5, 1.0), 0.0625);
  // linear regime, asymmetric weight
  EXPECT_DOUBLE_EQ(quantile_huber(-3.0, 0.25, 1.0), 0.75 * 2.5);
  EXPECT_DOUBLE_EQ(quantile_huber(3.0, 0.25, 1.0), 0.25 * 2.5);
}

TEST(QuantileHuber, SymmetricTargetsCancelAtMedian) {
  const double g = quantile_huber_grad(0.4, 0.5, 1.0) + quantile_huber_grad(-0.4, 0.5, 1.0);
  EXPECT_EQ(g, 0.0);
  // gradient is d/dq of L(y - q): negative when the target lies above
  EXPECT_LT(quantile_huber_grad(0.4, 0.5, 1.0), 0.0);
}

TEST(QuantileHuber, GradientMatchesDifferences) {
  for (double u : {-2.0, -0.3, 0.1, 0.7, 1.9})
    for (double tau : {0.1, 0.5, 0.8}) {
      const double h = 1e-6;
      // q -> q + h moves u -> u - h
      const double fd = (quantile_huber(u - h, tau, 0.5) - quantile_huber(u + h, tau, 0.5)) / (2.0 * h);
      EXPECT_NEAR(quantile_huber_grad(u, tau, 0.5), fd, 1e-8);
    }
}

TEST(Independent, SameMultisetsShuffledOrder) {
  SourceMap sm;
  sm.l = -1.0;
  sm.u = 2.0;
  FlowCriticConfig cfg;
  Rng rng(3);
  std::vector<double> tau(16), y(16);
  for (auto& t : tau) t = rng.uniform();
  for (auto& v : y) v = rng.normal();
  bool any_unsorted = false;
  for (int rep = 0; rep < 5; ++rep) {
    const auto e = independent_couple(tau, y, sm, cfg, rng);
    auto a = e.tau, b = tau, c = e.y, d = y;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::sort(c.begin(), c.end());
    std::sort(d.begin(), d.end());
    EXPECT_EQ(a, b);
    EXPECT_EQ(c, d);
    for (std::size_t k = 0; k < e.tau.size(); ++k) EXPECT_EQ(e.z0[k], source_map(sm, e.tau[k]));
    any_unsorted = any_unsorted || !e.is_monotone();
  }
  EXPECT_TRUE(any_unsorted);
}

TEST(IqnLoss, MatchesHandSum) {
  const QuantileNet net({1, 1, 2, 3, {4}});
  Rng rng(4);
  auto p = net.init(rng);
  p.layers.back().weight.setZero();
  p.layers.back().bias.setConstant(0.5);
  IqnConfig cfg;
  cfg.huber_kappa = 1.0;
  const std::vector<IqnEntry> batch{{0, 0, {0.25, 0.75}, {0.0, 1.0, 3.0}}};
  double want = 0.0;
  for (double t : {0.25, 0.75})
    for (double y : {0.0, 1.0, 3.0}) want += quantile_huber(y - 0.5, t, 1.0) / 6.0;
  EXPECT_NEAR(iqn_loss(net, p, batch, cfg).loss, want, 1e-15);
}

TEST(IqnLoss, GradientMatchesDifferences) {
  const QuantileNet net({2, 2, 4, 5, {6, 3}});
  Rng rng(5);
  const auto p = net.init(rng);
  IqnConfig cfg;
  cfg.huber_kappa = 0.7;
  std::vector<IqnEntry> batch;
  for (std::size_t i = 0; i < 3; ++i) {
    IqnEntry e{i % 2, (i + 1) % 2, {}, {}};
    for (int k = 0; k < 4; ++k) {
      e.tau.push_back(rng.uniform());
      e.y.push_back(rng.normal(0.0, 2.0));
    }
    batch.push_back(e);
  }
  const auto r = iqn_loss(net, p, batch, cfg);
  const double err = props::gradient_error(p, r.grads, [&](const NetParams& q) { return iqn_loss(net, q, batch, cfg).loss; },
                                           1e-6, 1e-6);
  EXPECT_LE(err, 1e-4);
}

TEST(IqnSamples, ConstantAndMonotoneNets) {
  const QuantileNet net({1, 1, 3, 2, {3}});
  Rng rng(6);
  auto p = net.init(rng);
  p.layers.back().weight.setZero();
  p.layers.back().bias.setConstant(-0.7);
  const auto d = iqn_sample_distribution(net, p, 0, 0, 5);
  for (double v : d.samples()) EXPECT_EQ(v, -0.7);
  EXPECT_EQ(iqn_sample_distribution(net, p, 0, 0, 1).size(), 1u);
  EXPECT_THROW(iqn_sample_distribution(net, p, 0, 0, 0), UsageError);
}

TEST(IqnTargets, TerminalTransitionsKeepReward) {
  const QuantileNet net({2, 1, 3, 2, {3}});
  Rng rng(7);
  const auto p = net.init(rng);
  const std::vector<Transition> trs{{0, 0, 1.5, 1, 0}, {0, 0, -0.5, 1, 1}};
  const std::vector<std::size_t> an{0, 0};
  const auto y = iqn_targets(net, p, trs, an, 0.9, 4, rng);
  for (double v : y[0]) EXPECT_EQ(v, 1.5);
  for (double v : y[1]) EXPECT_NE(v, -0.5);
}
