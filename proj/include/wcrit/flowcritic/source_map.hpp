#pragma once

#include <algorithm>
#include <cmath>

#include "wcrit/error.hpp"

namespace wcrit {

/// Affine map from a quantile fraction to the return interval [l, u].
struct SourceMap {
  double kappa = 0.1;
  double q_min = 0.0;
  double q_max = 0.0;
  double l = 0.0;
  double u = 0.0;

  double width() const { return u - l; }
};

/// Bounds from dataset reward extremes. gamma = 0 is accepted (pure reward
/// regression); a degenerate interval is widened below l so g stays
/// injective.
inline SourceMap compute_bounds(double r_min, double r_max, double gamma, double kappa) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (!(kappa > 0.0 && kappa <= 1.0)) throw ConfigError("kappa must lie in (0, 1]");
  if (!std::isfinite(r_min) || !std::isfinite(r_max) || r_min > r_max)
    throw ConfigError("reward bounds must be finite with r_min <= r_max");
  SourceMap sm;
  sm.kappa = kappa;
  sm.q_max = r_max / (1.0 - gamma);
  sm.q_min = r_min / (1.0 - gamma);
  sm.u = sm.q_max;
  sm.l = sm.q_max - kappa * (sm.q_max - sm.q_min);
  if (sm.l == sm.u) sm.l = sm.u - 1e-6 * std::max(1.0, std::abs(sm.u));
  return sm;
}

/// g(tau) = l + tau (u - l)
inline double source_map(const SourceMap& sm, double tau) { return sm.l + tau * (sm.u - sm.l); }

}  // namespace wcrit
