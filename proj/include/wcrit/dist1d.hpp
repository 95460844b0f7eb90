#pragma once

// One-dimensional distributions, quantile functions and Wasserstein distances.
//
// Quantile convention everywhere: the left-continuous generalized inverse
// F^{-1}(tau) = inf{x : F(x) >= tau}, with tau = 0 mapped to the smallest
// point carrying mass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "wcrit/error.hpp"

namespace wcrit {

/// Equal-weight sample set kept in sorted order.
class EmpiricalDistribution {
 public:
  explicit EmpiricalDistribution(std::vector<double> samples) : samples_(std::move(samples)) {
    if (samples_.empty()) throw UsageError("EmpiricalDistribution: needs at least one sample");
    std::stable_sort(samples_.begin(), samples_.end());
  }

  std::span<const double> samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  double min() const { return samples_.front(); }
  double max() const { return samples_.back(); }

  double mean() const {
    return std::accumulate(samples_.begin(), samples_.end(), 0.0) / static_cast<double>(samples_.size());
  }

 private:
  std::vector<double> samples_;
};

/// Probability vector over a strictly increasing grid.
class CategoricalDistribution {
 public:
  CategoricalDistribution(std::vector<double> support, std::vector<double> probs)
      : support_(std::move(support)), probs_(std::move(probs)) {
    if (support_.empty() || support_.size() != probs_.size())
      throw UsageError("CategoricalDistribution: support and probs must be non-empty and equal length");
    for (std::size_t i = 1; i < support_.size(); ++i)
      if (!(support_[i] > support_[i - 1])) throw UsageError("CategoricalDistribution: support not strictly increasing");
    double total = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0)) throw UsageError("CategoricalDistribution: negative or NaN probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) throw UsageError("CategoricalDistribution: probabilities must sum to 1");
  }

  static CategoricalDistribution dirac(double x) { return {{x}, {1.0}}; }

  std::span<const double> support() const { return support_; }
  std::span<const double> probs() const { return probs_; }
  std::size_t size() const { return support_.size(); }

  double mean() const {
    double m = 0.0;
    for (std::size_t i = 0; i < support_.size(); ++i) m += support_[i] * probs_[i];
    return m;
  }

 private:
  std::vector<double> support_;
  std::vector<double> probs_;
};

/// Source/target pairs of a one-dimensional coupling, ordered by source.
struct CoupledPairs {
  std::vector<std::pair<double, double>> pairs;

  bool is_monotone() const {
    for (std::size_t i = 1; i < pairs.size(); ++i)
      if (pairs[i].first < pairs[i - 1].first || pairs[i].second < pairs[i - 1].second) return false;
    return true;
  }
};

inline void check_level(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw UsageError("quantile level must lie in [0, 1]");
}

inline double quantile_function(const EmpiricalDistribution& d, double tau) {
  check_level(tau);
  const auto n = d.size();
  const auto k = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * tau));
  return d.samples()[std::clamp<std::size_t>(k, 1, n) - 1];
}

inline double quantile_function(const CategoricalDistribution& d, double tau) {
  check_level(tau);
  const auto support = d.support();
  const auto probs = d.probs();
  double cum = 0.0;
  std::size_t last_positive = 0;
  bool any = false;
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cum += probs[i];
    last_positive = i;
    if (!any && tau == 0.0) return support[i];
    any = true;
    if (cum >= tau) return support[i];
  }
  return support[last_positive];
}

/// Grid atomization: n equal-mass samples at levels (k - 0.5) / n.
inline std::vector<double> quantile_grid(std::size_t n) {
  std::vector<double> grid(n);
  for (std::size_t k = 0; k < n; ++k) grid[k] = (static_cast<double>(k) + 0.5) / static_cast<double>(n);
  return grid;
}

template <class Distribution>
EmpiricalDistribution atomize(const Distribution& d, std::size_t n) {
  if (n == 0) throw UsageError("atomize: n must be positive");
  std::vector<double> out;
  out.reserve(n);
  for (double tau : quantile_grid(n)) out.push_back(quantile_function(d, tau));
  return EmpiricalDistribution(std::move(out));
}

namespace detail {

inline double power_cost(double gap, double p) {
  const double a = std::abs(gap);
  if (p == 1.0) return a;
  if (p == 2.0) return a * a;
  return std::pow(a, p);
}

inline double root(double mean_cost, double p) {
  if (p == 1.0) return mean_cost;
  if (p == 2.0) return std::sqrt(mean_cost);
  return std::pow(mean_cost, 1.0 / p);
}

inline void check_order(double p) {
  if (!(p >= 1.0)) throw UsageError("Wasserstein order p must be >= 1");
}

inline double sorted_cost(std::span<const double> a, std::span<const double> b, double p) {
  double total = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) total += power_cost(a[k] - b[k], p);
  return total / static_cast<double>(a.size());
}

}  // namespace detail

enum class Resample { no, common_grid };

/// W_p between equal-weight sample sets via sorted order statistics.
/// Unequal sizes need Resample::common_grid, which evaluates both quantile
/// functions on the (k - 0.5)/K grid with K = lcm of the two sizes.
inline double wasserstein_emp(const EmpiricalDistribution& a, const EmpiricalDistribution& b, double p,
                              Resample resample = Resample::no) {
  detail::check_order(p);
  if (a.size() == b.size()) return detail::root(detail::sorted_cost(a.samples(), b.samples(), p), p);
  if (resample == Resample::no)
    throw UsageError("wasserstein_emp: unequal sample counts (pass Resample::common_grid)");
  std::size_t k = std::lcm(a.size(), b.size());
  if (k > (std::size_t{1} << 20)) k = 16 * std::max(a.size(), b.size());
  const auto ra = atomize(a, k);
  const auto rb = atomize(b, k);
  return detail::root(detail::sorted_cost(ra.samples(), rb.samples(), p), p);
}

/// Exact W_p between categorical distributions: integrates |F_a^{-1} - F_b^{-1}|^p
/// piecewise over the merged CDF breakpoints.
inline double wasserstein_cat(const CategoricalDistribution& a, const CategoricalDistribution& b, double p) {
  detail::check_order(p);
  const auto xa = a.support();
  const auto pa = a.probs();
  const auto xb = b.support();
  const auto pb = b.probs();
  std::size_t i = 0;
  std::size_t j = 0;
  auto skip_empty = [](std::span<const double> probs, std::size_t& idx) {
    while (idx + 1 < probs.size() && probs[idx] <= 0.0) ++idx;
  };
  skip_empty(pa, i);
  skip_empty(pb, j);
  double ca = pa[i];
  double cb = pb[j];
  double level = 0.0;
  double integral = 0.0;
  while (true) {
    const bool last_a = i + 1 >= xa.size();
    const bool last_b = j + 1 >= xb.size();
    const double next = (last_a && last_b) ? 1.0 : std::min(last_a ? 1.0 : ca, last_b ? 1.0 : cb);
    if (next > level) integral += (next - level) * detail::power_cost(xa[i] - xb[j], p);
    level = std::max(level, next);
    if (last_a && last_b) break;
    const bool advance_a = !last_a && ca <= next;
    const bool advance_b = !last_b && cb <= next;
    if (!advance_a && !advance_b) break;
    if (advance_a) {
      ++i;
      skip_empty(pa, i);
      ca += pa[i];
    }
    if (advance_b) {
      ++j;
      skip_empty(pb, j);
      cb += pb[j];
    }
  }
  return detail::root(std::max(integral, 0.0), p);
}

/// Pairs the k-th order statistic of `sources` with the k-th of `targets`.
/// Ties keep their original relative order.
inline CoupledPairs monotone_coupling(std::span<const double> sources, std::span<const double> targets) {
  if (sources.size() != targets.size()) throw UsageError("monotone_coupling: length mismatch");
  std::vector<double> s(sources.begin(), sources.end());
  std::vector<double> t(targets.begin(), targets.end());
  std::stable_sort(s.begin(), s.end());
  std::stable_sort(t.begin(), t.end());
  CoupledPairs out;
  out.pairs.reserve(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) out.pairs.emplace_back(s[k], t[k]);
  return out;
}

/// Exhaustive minimum over all n! bijections. Test oracle; refuses n > 8.
inline double brute_force_wasserstein(const EmpiricalDistribution& a, const EmpiricalDistribution& b, double p) {
  detail::check_order(p);
  const auto n = a.size();
  if (n != b.size()) throw UsageError("brute_force_wasserstein: unequal sample counts");
  if (n > 8) throw UsageError("brute_force_wasserstein: n > 8 refused (factorial blowup)");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  const auto xs = a.samples();
  const auto ys = b.samples();
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) total += detail::power_cost(xs[k] - ys[perm[k]], p);
    best = std::min(best, total / static_cast<double>(n));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return detail::root(best, p);
}

/// Inter-quartile mean: drops floor(n/4) values from each end.
inline double iqm(std::span<const double> values) {
  if (values.size() < 4) throw UsageError("iqm: needs at least 4 values");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const std::size_t drop = v.size() / 4;
  const double sum = std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(drop),
                                     v.end() - static_cast<std::ptrdiff_t>(drop), 0.0);
  return sum / static_cast<double>(v.size() - 2 * drop);
}

/// IQM when at least four values exist, plain mean otherwise.
inline double iqm_or_mean(std::span<const double> values) {
  if (values.empty()) throw UsageError("iqm_or_mean: empty input");
  if (values.size() >= 4) return iqm(values);
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace wcrit
