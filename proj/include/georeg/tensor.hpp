#pragma once

#include <Eigen/Core>
#include <functional>
#include <utility>
#include <vector>

#include "georeg/errors.hpp"

namespace georeg {

using Mat = Eigen::MatrixXd;

class Tape;

/// A dense 64-bit matrix value, optionally attached to a tape node.
/// Vectors are n-by-1 or 1-by-n matrices and scalars are 1-by-1, so every
/// operation below is defined on matrices only.  Detached Vars flow through
/// the same operations and act as constants during backprop.
struct Var {
  Mat v;
  Tape* tape = nullptr;
  int id = -1;

  Var() = default;
  explicit Var(Mat value) : v(std::move(value)) {}

  bool attached() const { return tape != nullptr && id >= 0; }
  Eigen::Index rows() const { return v.rows(); }
  Eigen::Index cols() const { return v.cols(); }
};

/// Wraps a plain matrix as a detached constant.
inline Var constant(Mat value) { return Var(std::move(value)); }

/// 1x1 convenience constant.
Var scalar_const(double value);

/// Extracts the value of a 1x1 Var.
double scalar(const Var& x);

/// Append-only record of differentiable operations.
///
/// Each node stores its output shape and a closure that scatters the output
/// adjoint into the adjoints of its parents.  backward() seeds the loss
/// adjoint with 1 and visits nodes exactly once in reverse creation order,
/// which is a topological order because operands always precede results.
class Tape {
 public:
  using BackFn = std::function<void(const Mat& out_grad, Tape& tape)>;

  /// Registers a parameter or input; its adjoint is retrievable after
  /// backward().
  Var leaf(Mat value);

  /// Number of recorded nodes.
  std::size_t size() const { return nodes_.size(); }

  /// Reverse accumulation from `loss`, which must be an attached 1x1 Var.
  void backward(const Var& loss);

  /// Adjoint of `x` after backward(); a zero matrix if none was accumulated.
  Mat grad(const Var& x) const;

  // Internal plumbing used by the operation implementations.
  int add_node(Eigen::Index rows, Eigen::Index cols, BackFn back);
  void accumulate(int id, const Mat& g);

 private:
  struct Node {
    Eigen::Index rows, cols;
    BackFn back;  // null for leaves
  };
  std::vector<Node> nodes_;
  std::vector<Mat> grads_;
};

// --- Elementwise and broadcast arithmetic -------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& x, double s);
/// s * x + shift where `shift` is a constant of the same shape.
Var affine(const Var& x, double s, const Mat& shift);
Var hadamard(const Var& a, const Var& b);
/// Elementwise product with a constant mask/coefficient matrix.
Var mul_const(const Var& x, const Mat& m);
/// Adds a 1-by-m row vector to every row of an n-by-m matrix.
Var add_rowvec(const Var& x, const Var& r);
/// Adds an n-by-1 column vector to every column of an n-by-m matrix.
Var add_colvec(const Var& x, const Var& c);
/// exp(a .* x + b) with constant coefficient matrices a, b.
Var exp_affine(const Var& x, const Mat& a, const Mat& b);
Var exp(const Var& x);
/// log(1 + x), elementwise; requires x > -1.
Var log1p(const Var& x);
Var leaky_relu(const Var& x, double negative_slope);

// --- Linear algebra ------------------------------------------------------

Var matmul(const Var& a, const Var& b);
/// a * b^T without materializing the transpose node.
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& x);

// --- Reductions and row-structured ops -----------------------------------

Var rowsum(const Var& x);                 // n-by-1
Var sum_all(const Var& x);                // 1-by-1
Var softmax_rows(const Var& x);           // rows are stabilized distributions
Var logsumexp_rows(const Var& x);         // n-by-1
Var logsumexp_cols(const Var& x);         // 1-by-m
/// Per-row normalization to zero mean / unit variance followed by a learned
/// elementwise gain and offset (both 1-by-d).
Var layer_norm_rows(const Var& x, const Var& gain, const Var& offset,
                    double eps = 1e-6);
/// Rows scaled to (approximately) unit Euclidean norm; eps stabilizes the
/// inverse norm so zero rows stay finite.
Var normalize_rows(const Var& x, double eps = 1e-12);
/// D(i,j) = ||a_i - b_j||_2 for row vectors a_i, b_j (smoothed near zero).
Var pairwise_dist(const Var& a, const Var& b);

// --- Structure / indexing ------------------------------------------------

Var gather_rows(const Var& x, const std::vector<int>& rows);
Var slice_cols(const Var& x, int begin, int count);
Var hconcat(const std::vector<Var>& xs);
/// Collapses each block of `group` consecutive rows to its channelwise
/// maximum: (g*group)-by-d -> g-by-d.  Ties route the gradient to the first
/// (lowest-index) maximizing row.
Var rowgroup_max(const Var& x, int group);
/// E(i,j) = dot(q.row(i), r.row(i*m+j)) where q is n-by-d and r stacks an
/// n-by-m grid of d-wide rows.  This is the pairwise-embedding contraction
/// used by geometric attention scores.
Var rowwise_pair_dot(const Var& q, const Var& r, int m);
/// Extends an n-by-m score matrix with one trailing row and column filled
/// with the 1x1 slack score `alpha` (shared corner included).
Var dustbin_augment(const Var& scores, const Var& alpha);
/// coeff * sum of the selected entries (duplicates accumulate).
Var select_sum(const Var& x, const std::vector<std::pair<int, int>>& entries,
               double coeff);

}  // namespace georeg
