#pragma once

#include <Eigen/Core>

namespace georeg {

/// Full singular value decomposition of a 3x3 matrix: m = u * diag(s) * v^T
/// with orthonormal u, v and s sorted descending (all nonnegative).  u and v
/// are not forced to be proper rotations; callers that need det = +1 fix the
/// sign themselves.
struct Svd3 {
  Eigen::Matrix3d u;
  Eigen::Vector3d s;
  Eigen::Matrix3d v;
};

/// Computes the SVD via a cyclic Jacobi eigen-solve of m^T m.  Handles
/// rank-deficient and zero matrices by completing the missing singular
/// directions to an orthonormal basis.
Svd3 svd3(const Eigen::Matrix3d& m);

}  // namespace georeg
