#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>

namespace mcot {

// log(sum_i exp(x_i)), shifted by the maximum so that no term overflows.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.size() == 0) return -std::numeric_limits<Scalar>::infinity();
  const Scalar top = x.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((x.derived().array() - top).exp().sum());
}

// Softmax in place of a log-domain vector; returns the log-normaliser.
template <typename Derived>
typename Derived::Scalar softmax_inplace(Eigen::DenseBase<Derived>& x) {
  const auto lse = log_sum_exp(x);
  x.derived().array() = (x.derived().array() - lse).exp();
  return lse;
}

} // namespace mcot
