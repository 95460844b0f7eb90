#pragma once

#include <cmath>
#include <cstddef>

#include "wcrit/approx/mlp.hpp"
#include "wcrit/error.hpp"

namespace wcrit {

struct AdamState {
  NetParams m;
  NetParams v;
  std::size_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled

  static AdamState for_params(const NetParams& params, double lr) {
    AdamState s;
    s.m = params.zeros_like();
    s.v = params.zeros_like();
    s.lr = lr;
    return s;
  }
};

/// Bias-corrected Adam step, in place.
inline void adam_step(NetParams& params, const NetParams& grads, AdamState& state) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v))
    throw UsageError("adam_step: shape mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    if (state.weight_decay > 0.0) p -= state.lr * state.weight_decay * p;
    p.array() -= state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    update(params.layers[i].weight, grads.layers[i].weight, state.m.layers[i].weight, state.v.layers[i].weight);
    update(params.layers[i].bias, grads.layers[i].bias, state.m.layers[i].bias, state.v.layers[i].bias);
  }
  ++params.version;
}

/// Slowly tracking shadow copy of online parameters.
struct TargetParams {
  NetParams shadow;
  double rho = 0.005;

  static TargetParams copy_of(const NetParams& online, double rho) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("target smoothing coefficient must lie in [0, 1]");
    return {online, rho};
  }
};

/// shadow <- (1 - rho) * shadow + rho * online
inline void ema_update(TargetParams& target, const NetParams& online) {
  if (!target.shadow.same_shape(online)) throw UsageError("ema_update: shape mismatch");
  const double rho = target.rho;
  if (rho == 0.0) return;
  for (std::size_t i = 0; i < online.layers.size(); ++i) {
    auto& s = target.shadow.layers[i];
    const auto& o = online.layers[i];
    if (rho == 1.0) {
      s.weight = o.weight;
      s.bias = o.bias;
    } else {
      s.weight += rho * (o.weight - s.weight);
      s.bias += rho * (o.bias - s.bias);
    }
  }
  ++target.shadow.version;
}

}  // namespace wcrit
