#pragma once

#include "mcot/types.hpp"

namespace mcot {

// Affine moment functional f(y) = coefficients * phi(y) + offset, where phi(y) is a
// feature vector of the sample (for water heaters, the mode sequence m_0..m_T).
struct MomentMap {
  Matrix coefficients; // A x D
  Vector offset;       // A

  Index constraints() const noexcept { return coefficients.rows(); }
  Index features() const noexcept { return coefficients.cols(); }

  template <typename Derived>
  Vector apply(const Eigen::MatrixBase<Derived>& phi) const {
    return coefficients * phi + offset;
  }

  static MomentMap identity(Index dim) {
    return MomentMap{Matrix::Identity(dim, dim), Vector::Zero(dim)};
  }
};

} // namespace mcot
