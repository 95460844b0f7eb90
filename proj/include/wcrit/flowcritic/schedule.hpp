#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "wcrit/error.hpp"

namespace wcrit {

/// Euler knots 0 = t_0 < ... < t_M = 1 plus the smoothed per-bin curvature
/// that produced them. Bins split [0, 1] uniformly.
struct TimeSchedule {
  std::vector<double> knots{0.0, 1.0};
  std::vector<double> curvature_ema;
  double eps = 1e-3;
  double ema_decay = 0.9;
  bool has_curvature = false;

  std::size_t steps() const { return knots.size() - 1; }
  double dt(std::size_t m) const { return knots[m + 1] - knots[m]; }

  bool valid() const {
    if (knots.size() < 2 || knots.front() != 0.0 || knots.back() != 1.0) return false;
    for (std::size_t m = 0; m + 1 < knots.size(); ++m)
      if (!(knots[m] < knots[m + 1])) return false;
    return true;
  }

  static TimeSchedule uniform(std::size_t M, std::size_t bins = 16) {
    if (M == 0) throw ConfigError("number of Euler steps M must be >= 1");
    if (bins == 0) throw ConfigError("curvature bins must be >= 1");
    TimeSchedule s;
    s.knots.resize(M + 1);
    for (std::size_t m = 0; m <= M; ++m) s.knots[m] = static_cast<double>(m) / static_cast<double>(M);
    s.knots.back() = 1.0;
    s.curvature_ema.assign(bins, 0.0);
    return s;
  }
};

/// Inverts C(t) = int_0^t sqrt(c + eps) / int_0^1 sqrt(c + eps), with c
/// constant inside each bin, so C is piecewise linear and t_m = C^{-1}(m/M)
/// is exact. Falls back to the uniform grid when the total mass vanishes.
inline std::vector<double> knots_from_curvature(std::span<const double> curvature, double eps, std::size_t M) {
  if (M == 0) throw ConfigError("number of Euler steps M must be >= 1");
  if (curvature.empty()) throw UsageError("knots_from_curvature: no curvature bins");
  if (!(eps >= 0.0)) throw ConfigError("schedule eps must be >= 0");
  const std::size_t B = curvature.size();
  const double width = 1.0 / static_cast<double>(B);
  std::vector<double> cum(B + 1, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const double c = curvature[b];
    const double w = (std::isfinite(c) && c > 0.0) ? std::sqrt(c + eps) : std::sqrt(eps);
    cum[b + 1] = cum[b] + w * width;
  }
  const double total = cum[B];
  std::vector<double> knots(M + 1);
  knots[0] = 0.0;
  knots[M] = 1.0;
  if (!(total > 0.0) || !std::isfinite(total)) {
    for (std::size_t m = 1; m < M; ++m) knots[m] = static_cast<double>(m) / static_cast<double>(M);
    return knots;
  }
  std::size_t b = 0;
  for (std::size_t m = 1; m < M; ++m) {
    const double target = total * static_cast<double>(m) / static_cast<double>(M);
    while (b + 1 < B && cum[b + 1] < target) ++b;
    const double mass = cum[b + 1] - cum[b];
    const double frac = mass > 0.0 ? (target - cum[b]) / mass : 0.0;
    double t = (static_cast<double>(b) + frac) * width;
    // keep strictly increasing under rounding
    if (!(t > knots[m - 1])) t = std::nextafter(knots[m - 1], 2.0);
    knots[m] = t;
  }
  for (std::size_t m = M; m-- > 1;)
    if (!(knots[m] < knots[m + 1])) knots[m] = std::nextafter(knots[m + 1], -1.0);
  return knots;
}

/// Folds a fresh per-bin curvature estimate into the EMA and recomputes M knots.
inline void refresh_schedule(TimeSchedule& sched, std::span<const double> observed, std::size_t M) {
  if (observed.size() != sched.curvature_ema.size())
    throw UsageError("refresh_schedule: curvature bin count mismatch");
  if (!sched.has_curvature) {
    sched.curvature_ema.assign(observed.begin(), observed.end());
    sched.has_curvature = true;
  } else {
    for (std::size_t b = 0; b < observed.size(); ++b)
      sched.curvature_ema[b] = sched.ema_decay * sched.curvature_ema[b] + (1.0 - sched.ema_decay) * observed[b];
  }
  sched.knots = knots_from_curvature(sched.curvature_ema, sched.eps, M);
}

}  // namespace wcrit
