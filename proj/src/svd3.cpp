#include "georeg/svd3.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <array>
#include <cmath>

namespace georeg {

namespace {

// One Jacobi rotation zeroing a(p,q); accumulates the rotation into v.
void jacobi_rotate(Eigen::Matrix3d& a, Eigen::Matrix3d& v, int p, int q) {
  const double apq = a(p, q);
  if (apq == 0.0) return;
  const double tau = (a(q, q) - a(p, p)) / (2.0 * apq);
  const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(tau) + std::sqrt(1.0 + tau * tau));
  const double c = 1.0 / std::sqrt(1.0 + t * t);
  const double s = t * c;
  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
  rot(p, p) = c;
  rot(q, q) = c;
  rot(p, q) = s;
  rot(q, p) = -s;
  a = rot.transpose() * a * rot;
  a(p, q) = 0.0;  // forced by construction; kills rounding residue
  a(q, p) = 0.0;
  v = v * rot;
}

double offdiag_sq(const Eigen::Matrix3d& a) {
  return a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
}

}  // namespace

Svd3 svd3(const Eigen::Matrix3d& m) {
  Eigen::Matrix3d a = m.transpose() * m;
  Eigen::Matrix3d v = Eigen::Matrix3d::Identity();

  const double scale = a.cwiseAbs().maxCoeff();
  const double tol = std::max(scale, 1e-300) * 1e-30;
  for (int sweep = 0; sweep < 60 && offdiag_sq(a) > tol * tol; ++sweep) {
    jacobi_rotate(a, v, 0, 1);
    jacobi_rotate(a, v, 0, 2);
    jacobi_rotate(a, v, 1, 2);
  }

  std::array<int, 3> order = {0, 1, 2};
  std::sort(order.begin(), order.end(),
            [&a](int i, int j) { return a(i, i) > a(j, j); });

  Svd3 out;
  for (int k = 0; k < 3; ++k) {
    out.s(k) = std::sqrt(std::max(a(order[k], order[k]), 0.0));
    out.v.col(k) = v.col(order[k]);
  }

  // Left singular vectors: u_k = m v_k / s_k where s_k carries signal;
  // directions lost to rank deficiency are completed orthonormally.
  const double cutoff = out.s(0) * 1e-12;
  int valid = 0;
  for (int k = 0; k < 3; ++k) {
    if (out.s(k) <= cutoff) break;
    Eigen::Vector3d u = m * out.v.col(k) / out.s(k);
    for (int j = 0; j < valid; ++j) u -= u.dot(out.u.col(j)) * out.u.col(j);
    const double n = u.norm();
    if (n < 0.5) break;  // numerically indistinct from the span so far
    out.u.col(valid++) = u / n;
  }
  if (valid == 0) {
    out.u.setIdentity();
  } else if (valid == 1) {
    out.u.col(1) = out.u.col(0).unitOrthogonal();
    out.u.col(2) = out.u.col(0).cross(out.u.col(1));
  } else if (valid == 2) {
    out.u.col(2) = out.u.col(0).cross(out.u.col(1));
  }
  return out;
}

}  // namespace georeg
