#pragma once

// Shared test utilities: seeded random data, rigid-transform generators and
// a central finite-difference gradient checker for tape-built losses.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Geometry>

#include "georeg/cloud.hpp"
#include "georeg/tensor.hpp"

namespace testutil {

using georeg::Mat;
using georeg::PointCloud;
using georeg::RigidTransform;
using georeg::Tape;
using georeg::Var;

inline Mat rand_mat(std::mt19937_64& rng, int rows, int cols, double lo = -1.0,
                    double hi = 1.0) {
  std::uniform_real_distribution<double> uni(lo, hi);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = uni(rng);
  return m;
}

inline PointCloud rand_cloud(std::mt19937_64& rng, int n, double scale = 1.0) {
  return rand_mat(rng, n, 3, -scale, scale);
}

inline Eigen::Matrix3d rand_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Vector3d axis(gauss(rng), gauss(rng), gauss(rng));
  while (axis.norm() < 1e-6)
    axis = Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
  std::uniform_real_distribution<double> uni(0.0, M_PI);
  return Eigen::AngleAxisd(uni(rng), axis.normalized()).toRotationMatrix();
}

inline RigidTransform rand_rigid(std::mt19937_64& rng, double t_scale = 1.0) {
  RigidTransform t;
  t.rotation = rand_rotation(rng);
  std::uniform_real_distribution<double> uni(-t_scale, t_scale);
  t.translation = Eigen::Vector3d(uni(rng), uni(rng), uni(rng));
  return t;
}

// Norm-relative difference with an absolute fallback for near-zero pairs.
// Relative error with a noise floor: central differences carry roundoff of
// roughly 1e-11 * |f|, so quantities this small on both sides are compared
// absolutely (an exactly-zero analytic gradient, e.g. a key bias under
// softmax, would otherwise divide FD noise by itself).
inline double rel_err(const Mat& a, const Mat& b) {
  const double denom = std::max(a.norm(), b.norm());
  if (denom < 1e-7) return (a - b).norm();
  return (a - b).norm() / denom;
}

inline double rel_err(double a, double b) {
  const double denom = std::max(std::abs(a), std::abs(b));
  if (denom < 1e-7) return std::abs(a - b);
  return std::abs(a - b) / denom;
}

// A loss builder receives one tape-attached leaf per input value and must
// return a 1x1 loss Var built on that tape.
using LossBuilder =
    std::function<Var(Tape& tape, const std::vector<Var>& leaves)>;

inline double eval_builder(const LossBuilder& build,
                           const std::vector<Mat>& values) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(values.size());
  for (const Mat& v : values) leaves.push_back(tape.leaf(v));
  return build(tape, leaves).v(0, 0);
}

// Worst norm-relative deviation between the tape gradients of `build` and
// central finite differences (step h) over every entry of every input.
inline double gradient_max_rel_err(const LossBuilder& build,
                                   const std::vector<Mat>& values,
                                   double h = 1e-5) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(values.size());
  for (const Mat& v : values) leaves.push_back(tape.leaf(v));
  const Var loss = build(tape, leaves);
  tape.backward(loss);

  double worst = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    const Mat analytic = tape.grad(leaves[k]);
    Mat fd = Mat::Zero(values[k].rows(), values[k].cols());
    std::vector<Mat> bumped = values;
    for (int i = 0; i < values[k].rows(); ++i)
      for (int j = 0; j < values[k].cols(); ++j) {
        const double base = values[k](i, j);
        bumped[k](i, j) = base + h;
        const double up = eval_builder(build, bumped);
        bumped[k](i, j) = base - h;
        const double down = eval_builder(build, bumped);
        bumped[k](i, j) = base;
        fd(i, j) = (up - down) / (2.0 * h);
      }
    worst = std::max(worst, rel_err(analytic, fd));
  }
  return worst;
}

}  // namespace testutil
