#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "wcrit/approx/checkpoint.hpp"
#include "wcrit/approx/embeddings.hpp"
#include "wcrit/approx/mlp.hpp"
#include "wcrit/approx/optim.hpp"
#include "wcrit/approx/quantile_net.hpp"
#include "wcrit/properties.hpp"

using namespace wcrit;

namespace {

EmbeddingConfig small_emb(std::size_t bins, double sigma) {
  EmbeddingConfig c;
  c.hlgauss_bins = bins;
  c.hlgauss_sigma = sigma;
  c.v_min = -2.0;
  c.v_max = 3.0;
  c.fourier_freqs = 4;
  c.fourier_dim = 8;
  return c;
}

}  // namespace

TEST(Cosine, Endpoints) {
  EXPECT_EQ(cosine_embed(0.0, 4), (std::vector<double>{1, 1, 1, 1}));
  const auto c = cosine_embed(1.0, 3);
  EXPECT_NEAR(c[0], 1.0, 1e-15);
  EXPECT_NEAR(c[1], -1.0, 1e-15);
  EXPECT_NEAR(c[2], 1.0, 1e-15);
  EXPECT_THROW(cosine_embed(1.5, 3), UsageError);
}

TEST(Cosine, RecurrenceMatchesDirectCos) {
  for (double tau : {0.1, 0.37, 0.5, 0.93})
    for (std::size_t i = 0; auto v : cosine_embed(tau, 64)) EXPECT_NEAR(v, std::cos(std::numbers::pi * static_cast<double>(i++) * tau), 1e-12);
}

TEST(Fourier, ZeroTime) {
  const auto cfg = small_emb(5, 1.0);
  const auto f = fourier_time_embed(0.0, cfg);
  ASSERT_EQ(f.size(), 8u);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(f[2 * j], 0.0);
    EXPECT_EQ(f[2 * j + 1], 1.0);
  }
  EXPECT_EQ(fourier_time_embed(0.3, cfg), fourier_time_embed(0.3, cfg));
}

TEST(HlGauss, NormalizedAndSymmetric) {
  const auto cfg = small_emb(11, 0.75);
  for (double z : {-5.0, -2.0, -0.3, 0.5, 1.7, 3.0, 9.0}) {
    const auto e = hl_gauss_embed(z, cfg);
    double total = 0.0;
    for (double v : e) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-9) << z;
  }
  const double mid = 0.5;
  const auto l = hl_gauss_embed(mid - 0.8, cfg), r = hl_gauss_embed(mid + 0.8, cfg);
  for (std::size_t i = 0; i < l.size(); ++i) EXPECT_NEAR(l[i], r[l.size() - 1 - i], 1e-12);
}

TEST(HlGauss, NarrowKernelIsOneHot) {
  const auto cfg = small_emb(5, 1e-3);
  // bin 3 of [-2, 3] in unit bins is centred at 1.5
  const auto e = hl_gauss_embed(1.5, cfg);
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_NEAR(e[i], i == 3 ? 1.0 : 0.0, 1e-12);
}

TEST(HlGauss, FastCdfMatchesErfc) {
  Eigen::ArrayXXd x(1, 801);
  for (Eigen::Index i = 0; i < x.cols(); ++i) x(0, i) = -8.0 + 0.02 * static_cast<double>(i);
  const auto c = detail::normal_cdf(x);
  for (Eigen::Index i = 0; i < x.cols(); ++i)
    EXPECT_NEAR(c(0, i), 0.5 * std::erfc(-x(0, i) / std::numbers::sqrt2), 1.2e-7);
}

TEST(Mlp, ZeroWeightsGiveFinalBias) {
  Rng rng(1);
  const std::size_t widths[] = {3, 5, 2};
  auto p = make_mlp(widths, rng);
  for (auto& l : p.layers) l.weight.setZero();
  Vector x(3);
  x << 0.4, -1.0, 2.0;
  const Vector y = forward(p, x);
  EXPECT_EQ(y(0), p.layers.back().bias(0));
  EXPECT_EQ(y(1), p.layers.back().bias(1));
}

TEST(Mlp, SingleIdentityLayerIsAffine) {
  Rng rng(2);
  const std::size_t widths[] = {3, 2};
  const auto p = make_mlp(widths, rng, Activation::identity);
  Vector x(3);
  x << 1.0, 2.0, -3.0;
  const Vector want = p.layers[0].weight * x + p.layers[0].bias;
  EXPECT_TRUE(forward(p, x).isApprox(want, 1e-15));
  EXPECT_EQ(forward(p, x), forward(p, x));
}

TEST(Mlp, LeastSquaresGradientClosedForm) {
  Rng rng(3);
  const std::size_t widths[] = {3, 1};
  const auto p = make_mlp(widths, rng, Activation::identity);
  Matrix x(3, 1);
  x << 0.5, -1.5, 2.0;
  const double y = 0.25;
  const auto f = forward(p, x);
  const double r = f.output(0, 0) - y;  // loss 0.5 r^2
  Matrix g(1, 1);
  g << r;
  const auto b = backward(p, f.cache, g);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(b.grads.layers[0].weight(0, i), r * x(i, 0), 1e-15);
  EXPECT_NEAR(b.grads.layers[0].bias(0), r, 1e-15);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(b.input_grad(i, 0), r * p.layers[0].weight(0, i), 1e-15);
}

TEST(Mlp, ZeroOutputGradient) {
  Rng rng(4);
  const std::size_t widths[] = {2, 4, 4, 3};
  const auto p = make_mlp(widths, rng);
  const Matrix x = Matrix::Random(2, 5);
  const auto f = forward(p, x);
  const auto b = backward(p, f.cache, Matrix::Zero(3, 5));
  for (const auto& l : b.grads.layers) {
    EXPECT_EQ(l.weight.norm(), 0.0);
    EXPECT_EQ(l.bias.norm(), 0.0);
  }
}

TEST(Mlp, StaleCacheAndShapeErrors) {
  Rng rng(5);
  const std::size_t widths[] = {2, 3, 1};
  auto p = make_mlp(widths, rng);
  const auto f = forward(p, Matrix(Matrix::Random(2, 4)));
  p.add_scaled(p.zeros_like(), 1.0);
  EXPECT_THROW(backward(p, f.cache, Matrix::Ones(1, 4)), UsageError);
  EXPECT_THROW(forward(p, Matrix(Matrix::Random(3, 4))), UsageError);
}

TEST(Mlp, CentralDifferences) {
  Rng rng(6);
  for (int c = 0; c < 10; ++c) {
    const std::size_t widths[] = {1 + rng.index(4), 1 + rng.index(6), 1 + rng.index(6), 1 + rng.index(3)};
    const auto p = make_mlp(widths, rng, c % 2 ? Activation::gelu : Activation::identity);
    const Matrix x = Matrix::Random(static_cast<Eigen::Index>(widths[0]), 3);
    const Matrix w = Matrix::Random(static_cast<Eigen::Index>(widths[3]), 3);
    const auto f = forward(p, x);
    const auto b = backward(p, f.cache, w);
    const double err = props::gradient_error(p, b.grads, [&](const NetParams& q) {
      return (forward_layers(q, 0, q.layers.size(), x, nullptr).array() * w.array()).sum();
    }, 1e-6, 1e-6);
    EXPECT_LE(err, 1e-4) << "net " << c;
  }
}

TEST(QuantileNetGrad, CentralDifferences) {
  Rng rng(7);
  const QuantileNet net({2, 3, 4, 5, {6}});
  const auto p = net.init(rng);
  const std::vector<std::size_t> s{0, 1, 1}, a{2, 0, 1};
  const std::vector<double> tau{0.1, 0.5, 0.9};
  Vector w(3);
  w << 0.3, -1.2, 0.7;
  const auto f = net.forward(p, s, a, tau);
  const auto g = net.backward(p, f, w);
  const double err = props::gradient_error(p, g, [&](const NetParams& q) { return net.evaluate(q, s, a, tau).dot(w); },
                                           1e-6, 1e-6);
  EXPECT_LE(err, 1e-4);
}

TEST(Adam, ZeroGradientKeepsParams) {
  Rng rng(8);
  const std::size_t widths[] = {2, 3};
  auto p = make_mlp(widths, rng);
  const auto before = p;
  auto st = AdamState::for_params(p, 1e-2);
  adam_step(p, p.zeros_like(), st);
  EXPECT_EQ(p.layers[0].weight, before.layers[0].weight);
  EXPECT_EQ(p.layers[0].bias, before.layers[0].bias);
}

TEST(Adam, FirstStepIsSignLike) {
  Rng rng(9);
  const std::size_t widths[] = {3, 2};
  auto p = make_mlp(widths, rng);
  const auto before = p;
  auto g = p.zeros_like();
  g.layers[0].weight << 0.5, -2.0, 1e-3, 4.0, -1e-6, 0.0;
  g.layers[0].bias << -0.25, 3.0;
  auto st = AdamState::for_params(p, 1e-2);
  adam_step(p, g, st);
  // m_hat = g and v_hat = g^2 after bias correction
  for (Eigen::Index k = 0; k < 6; ++k) {
    const double gk = g.layers[0].weight.data()[k];
    const double want = -st.lr * gk / (std::abs(gk) + st.eps);
    EXPECT_NEAR(p.layers[0].weight.data()[k] - before.layers[0].weight.data()[k], want, 1e-15);
  }
  auto p2 = before;
  auto st2 = AdamState::for_params(p2, 1e-2);
  adam_step(p2, g, st2);
  EXPECT_EQ(p2.layers[0].weight, p.layers[0].weight);
}

TEST(Ema, ExtremesAndFixedPoint) {
  Rng rng(10);
  const std::size_t widths[] = {2, 3, 1};
  const auto online = make_mlp(widths, rng);
  const auto other = make_mlp(widths, rng);
  auto copy = TargetParams::copy_of(other, 1.0);
  ema_update(copy, online);
  EXPECT_EQ(copy.shadow.layers[1].weight, online.layers[1].weight);
  auto frozen = TargetParams::copy_of(other, 0.0);
  ema_update(frozen, online);
  EXPECT_EQ(frozen.shadow.layers[1].weight, other.layers[1].weight);
  auto fixed = TargetParams::copy_of(online, 0.37);
  ema_update(fixed, online);
  EXPECT_EQ(fixed.shadow.layers[0].weight, online.layers[0].weight);
  EXPECT_THROW(TargetParams::copy_of(online, 1.5), ConfigError);
}

TEST(Checkpoint, BitExactRoundTrip) {
  Rng rng(11);
  const std::size_t widths[] = {4, 7, 3};
  const auto p = make_mlp(widths, rng);
  std::stringstream ss;
  write_checkpoint(ss, p);
  const auto q = read_checkpoint(ss);
  ASSERT_TRUE(q.same_shape(p));
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    EXPECT_EQ(q.layers[i].weight, p.layers[i].weight);
    EXPECT_EQ(q.layers[i].bias, p.layers[i].bias);
  }
  std::istringstream junk("not a checkpoint");
  EXPECT_THROW(read_checkpoint(junk), ParseError);
}
