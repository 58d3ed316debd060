#pragma once

#include <cmath>

#include <Eigen/Core>

namespace reliab::linalg {

/// Rank-one update of an upper-triangular Cholesky factor.
///
/// On return `upper` satisfies R'ᵀR' = RᵀR + x xᵀ. The diagonal of R must be
/// strictly positive; it stays positive. `x` is used as scratch and is
/// overwritten. O(n²).
inline void cholesky_update_upper(Eigen::Ref<Eigen::MatrixXd> upper, Eigen::Ref<Eigen::VectorXd> x) {
  const Eigen::Index n = upper.rows();
  for (Eigen::Index k = 0; k < n; ++k) {
    const double xk = x(k);
    if (xk == 0.0) continue;
    const double rkk = upper(k, k);
    const double r = std::hypot(rkk, xk);
    const double c = r / rkk;
    const double s = xk / rkk;
    upper(k, k) = r;
    const Eigen::Index rest = n - k - 1;
    if (rest > 0) {
      auto row = upper.row(k).tail(rest);
      auto tail = x.tail(rest);
      row = (row + s * tail.transpose()) / c;
      tail = c * tail - s * row.transpose();
    }
  }
}

}  // namespace reliab::linalg
