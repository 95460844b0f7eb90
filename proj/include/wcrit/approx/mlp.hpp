#pragma once

// Dense layers with reverse-mode gradients. Batches are column-major: one
// sample per column.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "wcrit/error.hpp"
#include "wcrit/random.hpp"

namespace wcrit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { gelu, relu, identity };

struct Dense {
  Matrix weight;  // out x in
  Vector bias;    // out

  std::size_t in() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out() const { return static_cast<std::size_t>(weight.rows()); }
};

/// Parameter set: a list of dense layers. Also used for gradients and
/// optimizer moments, which share the shape of the parameters.
struct NetParams {
  std::vector<Dense> layers;
  Activation activation = Activation::gelu;
  /// Bumped by every in-place update; activation caches record it.
  std::uint64_t version = 0;

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  bool same_shape(const NetParams& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].weight.rows() != other.layers[i].weight.rows() ||
          layers[i].weight.cols() != other.layers[i].weight.cols() ||
          layers[i].bias.size() != other.layers[i].bias.size())
        return false;
    return true;
  }

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  NetParams zeros_like() const {
    NetParams z;
    z.activation = activation;
    for (const auto& l : layers) z.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    return z;
  }

  /// this += scale * other
  void add_scaled(const NetParams& other, double scale) {
    if (!same_shape(other)) throw UsageError("NetParams::add_scaled: shape mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].weight += scale * other.layers[i].weight;
      layers[i].bias += scale * other.layers[i].bias;
    }
    ++version;
  }

  /// Applies f(double&) to every scalar, weights then biases, layer by layer.
  template <class F>
  void for_each(F&& f) {
    for (auto& l : layers) {
      for (Eigen::Index k = 0; k < l.weight.size(); ++k) f(l.weight.data()[k]);
      for (Eigen::Index k = 0; k < l.bias.size(); ++k) f(l.bias.data()[k]);
    }
  }
};

/// Fan-in scaled uniform initialization: U(-1/sqrt(in), 1/sqrt(in)).
inline Dense make_dense(std::size_t in, std::size_t out, Rng& rng) {
  if (in == 0 || out == 0) throw ConfigError("dense layer widths must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Dense d{Matrix(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)), Vector(static_cast<Eigen::Index>(out))};
  for (Eigen::Index k = 0; k < d.weight.size(); ++k) d.weight.data()[k] = rng.uniform(-bound, bound);
  for (Eigen::Index k = 0; k < d.bias.size(); ++k) d.bias.data()[k] = rng.uniform(-bound, bound);
  return d;
}

/// MLP with widths {in, h1, ..., out}.
inline NetParams make_mlp(std::span<const std::size_t> widths, Rng& rng, Activation act = Activation::gelu) {
  if (widths.size() < 2) throw ConfigError("MLP needs at least input and output widths");
  NetParams p;
  p.activation = act;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) p.layers.push_back(make_dense(widths[i], widths[i + 1], rng));
  return p;
}

namespace detail {

inline constexpr double kGeluC = 0.79788456080286535588;  // sqrt(2 / pi)
inline constexpr double kGeluA = 0.044715;

// GELU in its tanh form, 0.5 x (1 + tanh(u)) with u = c (x + a x^3),
// evaluated as x * sigmoid(2u) so the whole expression vectorizes.
inline auto gelu_gate(const Matrix& pre) {
  const auto x = pre.array();
  return 1.0 / (1.0 + (-2.0 * kGeluC * (x + kGeluA * x.cube())).exp());
}

inline void activate(Activation act, const Matrix& pre, Matrix& out) {
  switch (act) {
    case Activation::gelu:
      out = (pre.array() * gelu_gate(pre)).matrix();
      break;
    case Activation::relu:
      out = pre.cwiseMax(0.0);
      break;
    case Activation::identity:
      out = pre;
      break;
  }
}

/// Elementwise derivative of the activation at `pre`.
inline Matrix activation_slope(Activation act, const Matrix& pre) {
  switch (act) {
    case Activation::gelu: {
      const Eigen::ArrayXXd g = gelu_gate(pre);
      const auto x = pre.array();
      return (g + 2.0 * kGeluC * x * g * (1.0 - g) * (1.0 + 3.0 * kGeluA * x.square())).matrix();
    }
    case Activation::relu:
      return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::identity:
      break;
  }
  return Matrix::Ones(pre.rows(), pre.cols());
}

}  // namespace detail

/// Activations saved by a forward pass over a contiguous run of layers.
struct MlpCache {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation of each layer
  const void* owner = nullptr;
  std::uint64_t version = 0;
  std::size_t first_layer = 0;
  bool final_activation = false;
};

/// Forward over layers [first, first + count). Hidden layers use the params'
/// activation; the last one is linear unless `final_activation`.
inline Matrix forward_layers(const NetParams& params, std::size_t first, std::size_t count, const Matrix& x,
                             MlpCache* cache, bool final_activation = false) {
  if (first + count > params.layers.size() || count == 0) throw UsageError("forward: layer range out of bounds");
  if (static_cast<std::size_t>(x.rows()) != params.layers[first].in())
    throw UsageError("forward: input width " + std::to_string(x.rows()) + " does not match layer width " +
                     std::to_string(params.layers[first].in()));
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
    cache->owner = &params;
    cache->version = params.version;
    cache->first_layer = first;
    cache->final_activation = final_activation;
  }
  Matrix h;
  for (std::size_t i = first; i < first + count; ++i) {
    const auto& layer = params.layers[i];
    const Matrix& in = (i == first) ? x : h;
    Matrix pre = layer.bias.replicate(1, in.cols());
    pre.noalias() += layer.weight * in;
    const bool last = (i + 1 == first + count);
    const Activation act = (last && !final_activation) ? Activation::identity : params.activation;
    if (cache) cache->inputs.push_back(i == first ? x : std::move(h));
    if (act == Activation::identity) {
      h = cache ? pre : std::move(pre);
    } else {
      detail::activate(act, pre, h);
    }
    if (cache) cache->pre.push_back(std::move(pre));
  }
  return h;
}

struct ForwardResult {
  Matrix output;
  MlpCache cache;
};

/// Full forward pass, keeping the activations needed by `backward`.
inline ForwardResult forward(const NetParams& params, const Matrix& inputs) {
  ForwardResult r;
  r.output = forward_layers(params, 0, params.layers.size(), inputs, &r.cache);
  return r;
}

/// Forward pass for a single feature vector.
inline Vector forward(const NetParams& params, const Vector& input) {
  return forward_layers(params, 0, params.layers.size(), Matrix(input), nullptr).col(0);
}

/// Accumulates parameter gradients of layers covered by `cache` into `grads`
/// (same shape as params) and returns the gradient w.r.t. the cached input.
inline Matrix backward_layers(const NetParams& params, const MlpCache& cache, const Matrix& out_grad, NetParams& grads) {
  if (cache.owner != &params || cache.version != params.version)
    throw UsageError("backward: stale activation cache (parameters changed since forward)");
  if (!grads.same_shape(params)) throw UsageError("backward: gradient buffer shape mismatch");
  const std::size_t count = cache.pre.size();
  Matrix g = out_grad;
  for (std::size_t k = count; k-- > 0;) {
    const std::size_t i = cache.first_layer + k;
    const auto& pre = cache.pre[k];
    if (g.rows() != pre.rows() || g.cols() != pre.cols()) throw UsageError("backward: gradient shape mismatch");
    const bool last = (k + 1 == count);
    const Activation act = (last && !cache.final_activation) ? Activation::identity : params.activation;
    if (act != Activation::identity)
      g = g.cwiseProduct(detail::activation_slope(act, pre));
    grads.layers[i].weight.noalias() += g * cache.inputs[k].transpose();
    grads.layers[i].bias += g.rowwise().sum();
    g = params.layers[i].weight.transpose() * g;
  }
  return g;
}

struct BackwardResult {
  NetParams grads;
  Matrix input_grad;
};

/// Exact reverse-mode gradients given dLoss/dOutput.
inline BackwardResult backward(const NetParams& params, const MlpCache& cache, const Matrix& out_grad) {
  BackwardResult r{params.zeros_like(), {}};
  r.input_grad = backward_layers(params, cache, out_grad, r.grads);
  return r;
}

}  // namespace wcrit
