#ifndef RORRLAB_STATS_HPP
#define RORRLAB_STATS_HPP

// Small expression-friendly reductions shared by the estimators.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

namespace rorrlab {

using Index = Eigen::Index;

template <typename Derived>
typename Derived::Scalar mean(const Eigen::MatrixBase<Derived>& v) {
  return v.mean();
}

// Copy of v with its sample mean removed.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> centered(
    const Eigen::MatrixBase<Derived>& v) {
  return v.array() - v.mean();
}

// Sample standard deviation with the n-1 divisor.
template <typename Derived>
typename Derived::Scalar sample_sd(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Index n = v.size();
  if (n < 2) return Scalar(0);
  const Scalar m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / Scalar(n - 1));
}

// Standard error of a sample mean.
template <typename Derived>
typename Derived::Scalar mean_se(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  return sample_sd(v) / std::sqrt(Scalar(v.size()));
}

template <typename Derived, typename WDerived>
typename Derived::Scalar weighted_mean(const Eigen::MatrixBase<Derived>& v,
                                       const Eigen::MatrixBase<WDerived>& w) {
  return v.dot(w) / w.sum();
}

// Linear-interpolation quantile of an ascending, nonempty sample.
inline double quantile_sorted(const std::vector<double>& s, double p) {
  const double h = static_cast<double>(s.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline constexpr double kZ95 = 1.96;

inline std::pair<double, double> ci95(double estimate, double se) {
  return {estimate - kZ95 * se, estimate + kZ95 * se};
}

}  // namespace rorrlab

#endif
