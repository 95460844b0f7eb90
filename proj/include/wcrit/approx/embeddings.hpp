#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "wcrit/error.hpp"

namespace wcrit {

struct EmbeddingConfig {
  std::size_t cosine_basis = 64;
  std::size_t fourier_dim = 128;    // = 2 * fourier_freqs (interleaved sin, cos)
  std::size_t fourier_freqs = 64;
  std::size_t hlgauss_bins = 51;
  double hlgauss_sigma = 16.0;      // in units of bin width
  double v_min = -1.0;
  double v_max = 1.0;
  std::size_t step_embed_dim = 128;

  void validate() const {
    if (cosine_basis == 0 || fourier_freqs == 0 || hlgauss_bins == 0 || step_embed_dim == 0)
      throw ConfigError("embedding sizes must be >= 1");
    if (fourier_dim != 2 * fourier_freqs) throw ConfigError("fourier_dim must equal 2 * fourier_freqs");
    if (!(v_min < v_max)) throw ConfigError("HL-Gauss range needs v_min < v_max");
    if (!(hlgauss_sigma > 0.0)) throw ConfigError("HL-Gauss sigma must be positive");
  }
};

/// out[i] = cos(pi * i * tau), evaluated with the Chebyshev recurrence.
inline void cosine_embed_into(double tau, std::span<double> out) {
  if (out.empty()) return;
  out[0] = 1.0;
  if (out.size() == 1) return;
  const double c1 = std::cos(std::numbers::pi * tau);
  out[1] = c1;
  for (std::size_t i = 2; i < out.size(); ++i) out[i] = 2.0 * c1 * out[i - 1] - out[i - 2];
}

inline std::vector<double> cosine_embed(double tau, std::size_t n) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw UsageError("cosine_embed: tau outside [0, 1]");
  std::vector<double> out(n);
  cosine_embed_into(tau, out);
  return out;
}

/// Fixed frequencies, geometric from 1 to 1000.
inline std::vector<double> fourier_frequencies(std::size_t n) {
  std::vector<double> f(n, 1.0);
  for (std::size_t j = 1; j < n; ++j) f[j] = std::pow(1000.0, static_cast<double>(j) / static_cast<double>(n - 1));
  return f;
}

/// Interleaved (sin f_j x, cos f_j x).
inline void fourier_embed_into(double x, std::span<const double> freqs, std::span<double> out) {
  for (std::size_t j = 0; j < freqs.size(); ++j) {
    out[2 * j] = std::sin(freqs[j] * x);
    out[2 * j + 1] = std::cos(freqs[j] * x);
  }
}

/// Raw (pre-projection) Fourier features of a flow time.
inline std::vector<double> fourier_time_embed(double t, const EmbeddingConfig& cfg) {
  cfg.validate();
  if (!(t >= 0.0 && t <= 1.0)) throw UsageError("fourier_time_embed: t outside [0, 1]");
  std::vector<double> out(cfg.fourier_dim);
  fourier_embed_into(t, fourier_frequencies(cfg.fourier_freqs), out);
  return out;
}

namespace detail {

// Standard normal CDF through the erfc rational Chebyshev fit
// (fractional error < 1.2e-7), written over arrays so exp vectorizes.
inline Eigen::ArrayXXd normal_cdf(const Eigen::ArrayXXd& x) {
  const Eigen::ArrayXXd t = 1.0 / (1.0 + (0.25 * std::numbers::sqrt2) * x.abs());
  Eigen::ArrayXXd out =
      0.5 * t *
      (-1.26551223 - 0.5 * x.square() +
       t * (1.00002368 +
            t * (0.37409196 +
                 t * (0.09678418 +
                      t * (-0.18628806 +
                           t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
          .exp();
  double* o = out.data();
  const double* xs = x.data();
  for (Eigen::Index i = 0; i < out.size(); ++i) o[i] = 0.5 + std::copysign(0.5 - o[i], xs[i]);
  return out;
}

}  // namespace detail

/// Histogram-loss Gaussian embedding: mass of N(z, sigma^2) in each bin of a
/// uniform grid on [v_min, v_max], renormalized. z is clamped into range.
/// One column per input value.
inline Eigen::MatrixXd hl_gauss_embed_batch(std::span<const double> z, const EmbeddingConfig& cfg) {
  const auto bins = static_cast<Eigen::Index>(cfg.hlgauss_bins);
  const auto n = static_cast<Eigen::Index>(z.size());
  const double width = (cfg.v_max - cfg.v_min) / static_cast<double>(bins);
  const double sigma = cfg.hlgauss_sigma * width;
  Eigen::ArrayXd edges(bins + 1);
  for (Eigen::Index i = 0; i <= bins; ++i) edges[i] = cfg.v_min + width * static_cast<double>(i);
  edges[bins] = cfg.v_max;
  Eigen::ArrayXd zc(n);
  for (Eigen::Index j = 0; j < n; ++j) zc[j] = std::clamp(z[static_cast<std::size_t>(j)], cfg.v_min, cfg.v_max);

  Eigen::ArrayXXd arg(bins + 1, n);
  for (Eigen::Index j = 0; j < n; ++j) arg.col(j) = (edges - zc[j]) / sigma;
  const Eigen::ArrayXXd cdf = detail::normal_cdf(arg);
  Eigen::MatrixXd out = (cdf.bottomRows(bins) - cdf.topRows(bins)).matrix();
  for (Eigen::Index j = 0; j < n; ++j) {
    const double total = cdf(bins, j) - cdf(0, j);
    if (total > 0.0) {
      out.col(j) *= 1.0 / total;
    } else {
      // sigma so small that every bin underflows: one-hot at the containing bin
      out.col(j).setZero();
      auto k = static_cast<Eigen::Index>((zc[j] - cfg.v_min) / width);
      out(std::min(k, bins - 1), j) = 1.0;
    }
  }
  return out;
}

inline std::vector<double> hl_gauss_embed(double z, const EmbeddingConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(z)) throw UsageError("hl_gauss_embed: z must be finite");
  const double zs[1] = {z};
  const Eigen::MatrixXd m = hl_gauss_embed_batch(zs, cfg);
  return std::vector<double>(m.data(), m.data() + m.size());
}

}  // namespace wcrit
