#include "georeg/tensor.hpp"

#include <cmath>
#include <string>

namespace georeg {

namespace {

std::string shape_str(const Var& x) {
  return std::to_string(x.rows()) + "x" + std::to_string(x.cols());
}

// Tape the result should be recorded on: null when every operand is a
// constant.  Mixing operands from two live tapes is a usage bug.
Tape* result_tape(std::initializer_list<const Var*> xs) {
  Tape* t = nullptr;
  for (const Var* x : xs) {
    if (!x->attached()) continue;
    if (t != nullptr && t != x->tape)
      throw ParameterError("operands attached to different tapes");
    t = x->tape;
  }
  return t;
}

int parent_id(const Var& x, Tape* t) {
  return (t != nullptr && x.tape == t) ? x.id : -1;
}

}  // namespace

Var scalar_const(double value) {
  Mat m(1, 1);
  m(0, 0) = value;
  return Var(std::move(m));
}

double scalar(const Var& x) {
  if (x.rows() != 1 || x.cols() != 1)
    throw DimensionError("scalar: expected 1x1, got " + shape_str(x));
  return x.v(0, 0);
}

Var Tape::leaf(Mat value) {
  Var out;
  out.v = std::move(value);
  out.tape = this;
  out.id = add_node(out.v.rows(), out.v.cols(), nullptr);
  return out;
}

int Tape::add_node(Eigen::Index rows, Eigen::Index cols, BackFn back) {
  nodes_.push_back(Node{rows, cols, std::move(back)});
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::accumulate(int id, const Mat& g) {
  Mat& slot = grads_[static_cast<std::size_t>(id)];
  if (slot.size() == 0)
    slot = Mat::Zero(nodes_[static_cast<std::size_t>(id)].rows,
                     nodes_[static_cast<std::size_t>(id)].cols);
  slot += g;
}

void Tape::backward(const Var& loss) {
  if (loss.tape != this || loss.id < 0)
    throw ParameterError("backward: loss is not attached to this tape");
  if (loss.rows() != 1 || loss.cols() != 1)
    throw DimensionError("backward: loss must be 1x1, got " + shape_str(loss));
  grads_.assign(nodes_.size(), Mat());
  grads_[static_cast<std::size_t>(loss.id)] = Mat::Ones(1, 1);
  for (int i = loss.id; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.back == nullptr) continue;  // leaf
    const Mat& g = grads_[static_cast<std::size_t>(i)];
    if (g.size() == 0) continue;  // node does not influence the loss
    n.back(g, *this);
  }
}

Mat Tape::grad(const Var& x) const {
  if (x.tape != this || x.id < 0)
    throw ParameterError("grad: value is not attached to this tape");
  const auto id = static_cast<std::size_t>(x.id);
  if (id < grads_.size() && grads_[id].size() != 0) return grads_[id];
  return Mat::Zero(nodes_[id].rows, nodes_[id].cols);
}

// --- Elementwise and broadcast arithmetic -------------------------------

Var add(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("add: " + shape_str(a) + " vs " + shape_str(b));
  Var out(a.v + b.v);
  Tape* t = result_tape({&a, &b});
  if (t == nullptr) return out;
  const int pa = parent_id(a, t), pb = parent_id(b, t);
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(), [pa, pb](const Mat& g, Tape& tp) {
    if (pa >= 0) tp.accumulate(pa, g);
    if (pb >= 0) tp.accumulate(pb, g);
  });
  return out;
}

Var sub(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("sub: " + shape_str(a) + " vs " + shape_str(b));
  Var out(a.v - b.v);
  Tape* t = result_tape({&a, &b});
  if (t == nullptr) return out;
  const int pa = parent_id(a, t), pb = parent_id(b, t);
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(), [pa, pb](const Mat& g, Tape& tp) {
    if (pa >= 0) tp.accumulate(pa, g);
    if (pb >= 0) tp.accumulate(pb, -g);
  });
  return out;
}

Var scale(const Var& x, double s) {
  Var out(s * x.v);
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(), [px, s](const Mat& g, Tape& tp) {
    tp.accumulate(px, s * g);
  });
  return out;
}

Var affine(const Var& x, double s, const Mat& shift) {
  if (shift.rows() != x.rows() || shift.cols() != x.cols())
    throw DimensionError("affine: shift shape mismatch");
  Var out(s * x.v + shift);
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(), [px, s](const Mat& g, Tape& tp) {
    tp.accumulate(px, s * g);
  });
  return out;
}

Var hadamard(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("hadamard: " + shape_str(a) + " vs " + shape_str(b));
  Var out(a.v.cwiseProduct(b.v));
  Tape* t = result_tape({&a, &b});
  if (t == nullptr) return out;
  const int pa = parent_id(a, t), pb = parent_id(b, t);
  Mat av = (pb >= 0) ? a.v : Mat();
  Mat bv = (pa >= 0) ? b.v : Mat();
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(),
                       [pa, pb, av = std::move(av), bv = std::move(bv)](
                           const Mat& g, Tape& tp) {
                         if (pa >= 0) tp.accumulate(pa, g.cwiseProduct(bv));
                         if (pb >= 0) tp.accumulate(pb, g.cwiseProduct(av));
                       });
  return out;
}

Var mul_const(const Var& x, const Mat& m) {
  if (m.rows() != x.rows() || m.cols() != x.cols())
    throw DimensionError("mul_const: coefficient shape mismatch");
  Var out(x.v.cwiseProduct(m));
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(),
                       [px, m](const Mat& g, Tape& tp) {
                         tp.accumulate(px, g.cwiseProduct(m));
                       });
  return out;
}

Var add_rowvec(const Var& x, const Var& r) {
  if (r.rows() != 1 || r.cols() != x.cols())
    throw DimensionError("add_rowvec: vector is " + shape_str(r) +
                         " for matrix " + shape_str(x));
  Var out(x.v.rowwise() + r.v.row(0));
  Tape* t = result_tape({&x, &r});
  if (t == nullptr) return out;
  const int px = parent_id(x, t), pr = parent_id(r, t);
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(), [px, pr](const Mat& g, Tape& tp) {
    if (px >= 0) tp.accumulate(px, g);
    if (pr >= 0) tp.accumulate(pr, g.colwise().sum());
  });
  return out;
}

Var add_colvec(const Var& x, const Var& c) {
  if (c.cols() != 1 || c.rows() != x.rows())
    throw DimensionError("add_colvec: vector is " + shape_str(c) +
                         " for matrix " + shape_str(x));
  Var out(x.v.colwise() + c.v.col(0));
  Tape* t = result_tape({&x, &c});
  if (t == nullptr) return out;
  const int px = parent_id(x, t), pc = parent_id(c, t);
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(), [px, pc](const Mat& g, Tape& tp) {
    if (px >= 0) tp.accumulate(px, g);
    if (pc >= 0) tp.accumulate(pc, g.rowwise().sum());
  });
  return out;
}

Var exp_affine(const Var& x, const Mat& a, const Mat& b) {
  if (a.rows() != x.rows() || a.cols() != x.cols() || b.rows() != x.rows() ||
      b.cols() != x.cols())
    throw DimensionError("exp_affine: coefficient shape mismatch");
  Var out((a.cwiseProduct(x.v) + b).array().exp().matrix());
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  Mat y = out.v;
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(),
                       [px, a, y = std::move(y)](const Mat& g, Tape& tp) {
                         tp.accumulate(px, g.cwiseProduct(y).cwiseProduct(a));
                       });
  return out;
}

Var exp(const Var& x) {
  Var out(x.v.array().exp().matrix());
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  Mat y = out.v;
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(),
                       [px, y = std::move(y)](const Mat& g, Tape& tp) {
                         tp.accumulate(px, g.cwiseProduct(y));
                       });
  return out;
}

Var log1p(const Var& x) {
  if ((x.v.array() <= -1.0).any())
    throw ParameterError("log1p: argument has entries <= -1");
  Var out(x.v.unaryExpr([](double v) { return std::log1p(v); }));
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  Mat xv = x.v;
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(),
                       [px, xv = std::move(xv)](const Mat& g, Tape& tp) {
                         tp.accumulate(
                             px, (g.array() / (1.0 + xv.array())).matrix());
                       });
  return out;
}

Var leaky_relu(const Var& x, double negative_slope) {
  Var out(x.v.unaryExpr([negative_slope](double v) {
    return v >= 0.0 ? v : negative_slope * v;
  }));
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  Mat xv = x.v;
  out.tape = t;
  out.id = t->add_node(
      out.rows(), out.cols(),
      [px, negative_slope, xv = std::move(xv)](const Mat& g, Tape& tp) {
        Mat d = xv.unaryExpr(
            [negative_slope](double v) { return v >= 0.0 ? 1.0 : negative_slope; });
        tp.accumulate(px, g.cwiseProduct(d));
      });
  return out;
}

// --- Linear algebra ------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + shape_str(a) + " * " + shape_str(b));
  Var out(a.v * b.v);
  Tape* t = result_tape({&a, &b});
  if (t == nullptr) return out;
  const int pa = parent_id(a, t), pb = parent_id(b, t);
  Mat av = (pb >= 0) ? a.v : Mat();
  Mat bv = (pa >= 0) ? b.v : Mat();
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(),
                       [pa, pb, av = std::move(av), bv = std::move(bv)](
                           const Mat& g, Tape& tp) {
                         if (pa >= 0) tp.accumulate(pa, g * bv.transpose());
                         if (pb >= 0) tp.accumulate(pb, av.transpose() * g);
                       });
  return out;
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: " + shape_str(a) + " * " + shape_str(b) +
                         "^T");
  Var out(a.v * b.v.transpose());
  Tape* t = result_tape({&a, &b});
  if (t == nullptr) return out;
  const int pa = parent_id(a, t), pb = parent_id(b, t);
  Mat av = (pb >= 0) ? a.v : Mat();
  Mat bv = (pa >= 0) ? b.v : Mat();
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(),
                       [pa, pb, av = std::move(av), bv = std::move(bv)](
                           const Mat& g, Tape& tp) {
                         if (pa >= 0) tp.accumulate(pa, g * bv);
                         if (pb >= 0) tp.accumulate(pb, g.transpose() * av);
                       });
  return out;
}

Var transpose(const Var& x) {
  Var out(x.v.transpose());
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(), [px](const Mat& g, Tape& tp) {
    tp.accumulate(px, g.transpose());
  });
  return out;
}

// --- Reductions and row-structured ops -----------------------------------

Var rowsum(const Var& x) {
  Var out(Mat(x.v.rowwise().sum()));
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  const Eigen::Index cols = x.cols();
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(),
                       [px, cols](const Mat& g, Tape& tp) {
                         tp.accumulate(px, g.col(0).replicate(1, cols));
                       });
  return out;
}

Var sum_all(const Var& x) {
  Mat s(1, 1);
  s(0, 0) = x.v.sum();
  Var out(std::move(s));
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  const Eigen::Index r = x.rows(), c = x.cols();
  out.tape = t;
  out.id = t->add_node(1, 1, [px, r, c](const Mat& g, Tape& tp) {
    tp.accumulate(px, Mat::Constant(r, c, g(0, 0)));
  });
  return out;
}

Var softmax_rows(const Var& x) {
  Mat y = x.v;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double m = y.row(i).maxCoeff();
    y.row(i) = (y.row(i).array() - m).exp();
    y.row(i) /= y.row(i).sum();
  }
  Var out(std::move(y));
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  Mat saved = out.v;
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(),
                       [px, y = std::move(saved)](const Mat& g, Tape& tp) {
                         Mat gy = g.cwiseProduct(y);
                         Eigen::VectorXd s = gy.rowwise().sum();
                         Mat centered = g;
                         centered.colwise() -= s;
                         tp.accumulate(px, y.cwiseProduct(centered));
                       });
  return out;
}

Var logsumexp_rows(const Var& x) {
  Mat y(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.v.row(i).maxCoeff();
    y(i, 0) = m + std::log((x.v.row(i).array() - m).exp().sum());
  }
  Var out(std::move(y));
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  Mat p = (x.v.colwise() - out.v.col(0)).array().exp().matrix();  // softmax
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(),
                       [px, p = std::move(p)](const Mat& g, Tape& tp) {
                         tp.accumulate(
                             px, (p.array().colwise() * g.col(0).array())
                                     .matrix());
                       });
  return out;
}

Var logsumexp_cols(const Var& x) {
  Mat y(1, x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double m = x.v.col(j).maxCoeff();
    y(0, j) = m + std::log((x.v.col(j).array() - m).exp().sum());
  }
  Var out(std::move(y));
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  Mat p = (x.v.rowwise() - out.v.row(0)).array().exp().matrix();
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(),
                       [px, p = std::move(p)](const Mat& g, Tape& tp) {
                         tp.accumulate(
                             px, (p.array().rowwise() * g.row(0).array())
                                     .matrix());
                       });
  return out;
}

Var layer_norm_rows(const Var& x, const Var& gain, const Var& offset,
                    double eps) {
  if (gain.rows() != 1 || gain.cols() != x.cols() || offset.rows() != 1 ||
      offset.cols() != x.cols())
    throw DimensionError("layer_norm_rows: gain/offset must be 1x" +
                         std::to_string(x.cols()));
  if (eps <= 0.0) throw ParameterError("layer_norm_rows: eps must be > 0");
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.v.row(i).mean();
    const double var = (x.v.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.v.row(i).array() - mean) * inv_std(i);
  }
  Mat y = (xhat.array().rowwise() * gain.v.row(0).array()).matrix();
  y.rowwise() += offset.v.row(0);
  Var out(std::move(y));
  Tape* t = result_tape({&x, &gain, &offset});
  if (t == nullptr) return out;
  const int px = parent_id(x, t), pg = parent_id(gain, t),
            po = parent_id(offset, t);
  Mat gv = gain.v;
  out.tape = t;
  out.id = t->add_node(
      out.rows(), out.cols(),
      [px, pg, po, xhat = std::move(xhat), inv_std = std::move(inv_std),
       gv = std::move(gv)](const Mat& g, Tape& tp) {
        if (po >= 0) tp.accumulate(po, g.colwise().sum());
        if (pg >= 0) tp.accumulate(pg, g.cwiseProduct(xhat).colwise().sum());
        if (px >= 0) {
          Mat dxh = (g.array().rowwise() * gv.row(0).array()).matrix();
          Mat dx(g.rows(), g.cols());
          for (Eigen::Index i = 0; i < g.rows(); ++i) {
            const double m1 = dxh.row(i).mean();
            const double m2 = dxh.row(i).cwiseProduct(xhat.row(i)).mean();
            dx.row(i) = inv_std(i) *
                        (dxh.row(i).array() - m1 - xhat.row(i).array() * m2);
          }
          tp.accumulate(px, dx);
        }
      });
  return out;
}

Var normalize_rows(const Var& x, double eps) {
  const Eigen::Index n = x.rows();
  Eigen::VectorXd inv_norm(n);
  for (Eigen::Index i = 0; i < n; ++i)
    inv_norm(i) = 1.0 / std::sqrt(x.v.row(i).squaredNorm() + eps * eps);
  Var out((x.v.array().colwise() * inv_norm.array()).matrix());
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  Mat xv = x.v;
  out.tape = t;
  out.id = t->add_node(
      out.rows(), out.cols(),
      [px, xv = std::move(xv), inv_norm = std::move(inv_norm)](const Mat& g,
                                                               Tape& tp) {
        Mat dx(g.rows(), g.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          const double proj = xv.row(i).dot(g.row(i));
          dx.row(i) = g.row(i) * inv_norm(i) -
                      xv.row(i) * (proj * std::pow(inv_norm(i), 3));
        }
        tp.accumulate(px, dx);
      });
  return out;
}

Var pairwise_dist(const Var& a, const Var& b) {
  if (a.cols() != b.cols())
    throw DimensionError("pairwise_dist: row width " + shape_str(a) + " vs " +
                         shape_str(b));
  constexpr double kSmooth = 1e-24;  // keeps sqrt differentiable at zero
  const Eigen::Index n = a.rows(), m = b.rows();
  Mat d2 = -2.0 * (a.v * b.v.transpose());
  d2.colwise() += a.v.rowwise().squaredNorm();
  d2.rowwise() += b.v.rowwise().squaredNorm().transpose();
  Mat d = (d2.array().max(0.0) + kSmooth).sqrt().matrix();
  Var out(std::move(d));
  Tape* t = result_tape({&a, &b});
  if (t == nullptr) return out;
  const int pa = parent_id(a, t), pb = parent_id(b, t);
  Mat av = a.v, bv = b.v, dv = out.v;
  out.tape = t;
  out.id = t->add_node(
      n, m,
      [pa, pb, av = std::move(av), bv = std::move(bv), dv = std::move(dv)](
          const Mat& g, Tape& tp) {
        Mat da = (pa >= 0) ? Mat::Zero(av.rows(), av.cols()) : Mat();
        Mat db = (pb >= 0) ? Mat::Zero(bv.rows(), bv.cols()) : Mat();
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          for (Eigen::Index j = 0; j < g.cols(); ++j) {
            if (g(i, j) == 0.0) continue;
            const Eigen::RowVectorXd diff = av.row(i) - bv.row(j);
            const Eigen::RowVectorXd dd = diff * (g(i, j) / dv(i, j));
            if (pa >= 0) da.row(i) += dd;
            if (pb >= 0) db.row(j) -= dd;
          }
        }
        if (pa >= 0) tp.accumulate(pa, da);
        if (pb >= 0) tp.accumulate(pb, db);
      });
  return out;
}

// --- Structure / indexing ------------------------------------------------

Var gather_rows(const Var& x, const std::vector<int>& rows) {
  Mat y(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= x.rows())
      throw ParameterError("gather_rows: index " + std::to_string(rows[k]) +
                           " out of range for " + shape_str(x));
    y.row(static_cast<Eigen::Index>(k)) = x.v.row(rows[k]);
  }
  Var out(std::move(y));
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  const Eigen::Index xr = x.rows(), xc = x.cols();
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(),
                       [px, rows, xr, xc](const Mat& g, Tape& tp) {
                         Mat dx = Mat::Zero(xr, xc);
                         for (std::size_t k = 0; k < rows.size(); ++k)
                           dx.row(rows[k]) +=
                               g.row(static_cast<Eigen::Index>(k));
                         tp.accumulate(px, dx);
                       });
  return out;
}

Var slice_cols(const Var& x, int begin, int count) {
  if (begin < 0 || count < 1 || begin + count > x.cols())
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") of " +
                         shape_str(x));
  Var out(x.v.middleCols(begin, count));
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  const Eigen::Index xr = x.rows(), xc = x.cols();
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(),
                       [px, begin, count, xr, xc](const Mat& g, Tape& tp) {
                         Mat dx = Mat::Zero(xr, xc);
                         dx.middleCols(begin, count) = g;
                         tp.accumulate(px, dx);
                       });
  return out;
}

Var hconcat(const std::vector<Var>& xs) {
  if (xs.empty()) throw ParameterError("hconcat: empty input list");
  Eigen::Index rows = xs.front().rows(), cols = 0;
  for (const Var& x : xs) {
    if (x.rows() != rows)
      throw DimensionError("hconcat: inconsistent row counts");
    cols += x.cols();
  }
  Mat y(rows, cols);
  Eigen::Index at = 0;
  std::vector<const Var*> ptrs;
  ptrs.reserve(xs.size());
  for (const Var& x : xs) {
    y.middleCols(at, x.cols()) = x.v;
    at += x.cols();
    ptrs.push_back(&x);
  }
  Var out(std::move(y));
  Tape* t = nullptr;
  for (const Var& x : xs) {
    Tape* xt = result_tape({&x});
    if (xt != nullptr) {
      if (t != nullptr && t != xt)
        throw ParameterError("hconcat: operands attached to different tapes");
      t = xt;
    }
  }
  if (t == nullptr) return out;
  std::vector<int> parents;
  std::vector<Eigen::Index> offsets, widths;
  at = 0;
  for (const Var& x : xs) {
    parents.push_back(parent_id(x, t));
    offsets.push_back(at);
    widths.push_back(x.cols());
    at += x.cols();
  }
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(),
                       [parents, offsets, widths](const Mat& g, Tape& tp) {
                         for (std::size_t k = 0; k < parents.size(); ++k)
                           if (parents[k] >= 0)
                             tp.accumulate(
                                 parents[k],
                                 g.middleCols(offsets[k], widths[k]));
                       });
  return out;
}

Var rowgroup_max(const Var& x, int group) {
  if (group < 1) throw ParameterError("rowgroup_max: group must be >= 1");
  if (x.rows() % group != 0)
    throw DimensionError("rowgroup_max: " + std::to_string(x.rows()) +
                         " rows not divisible by group " +
                         std::to_string(group));
  const Eigen::Index ng = x.rows() / group, d = x.cols();
  Mat y(ng, d);
  Eigen::MatrixXi arg(ng, d);
  for (Eigen::Index gi = 0; gi < ng; ++gi) {
    for (Eigen::Index c = 0; c < d; ++c) {
      double best = x.v(gi * group, c);
      Eigen::Index bi = gi * group;
      for (Eigen::Index r = gi * group + 1; r < (gi + 1) * group; ++r) {
        if (x.v(r, c) > best) {
          best = x.v(r, c);
          bi = r;
        }
      }
      y(gi, c) = best;
      arg(gi, c) = static_cast<int>(bi);
    }
  }
  Var out(std::move(y));
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  const Eigen::Index xr = x.rows();
  out.tape = t;
  out.id = t->add_node(out.rows(), out.cols(),
                       [px, arg = std::move(arg), xr, d](const Mat& g,
                                                         Tape& tp) {
                         Mat dx = Mat::Zero(xr, d);
                         for (Eigen::Index gi = 0; gi < g.rows(); ++gi)
                           for (Eigen::Index c = 0; c < d; ++c)
                             dx(arg(gi, c), c) += g(gi, c);
                         tp.accumulate(px, dx);
                       });
  return out;
}

Var rowwise_pair_dot(const Var& q, const Var& r, int m) {
  if (m < 1) throw ParameterError("rowwise_pair_dot: m must be >= 1");
  if (r.cols() != q.cols() || r.rows() != q.rows() * m)
    throw DimensionError("rowwise_pair_dot: q " + shape_str(q) + " with r " +
                         shape_str(r) + " and m=" + std::to_string(m));
  const Eigen::Index n = q.rows();
  Mat e(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    e.row(i) = (r.v.middleRows(i * m, m) * q.v.row(i).transpose()).transpose();
  Var out(std::move(e));
  Tape* t = result_tape({&q, &r});
  if (t == nullptr) return out;
  const int pq = parent_id(q, t), pr = parent_id(r, t);
  Mat qv = (pr >= 0) ? q.v : Mat();
  Mat rv = (pq >= 0) ? r.v : Mat();
  out.tape = t;
  out.id = t->add_node(
      n, m,
      [pq, pr, m, qv = std::move(qv), rv = std::move(rv)](const Mat& g,
                                                          Tape& tp) {
        if (pq >= 0) {
          Mat dq(g.rows(), rv.cols());
          for (Eigen::Index i = 0; i < g.rows(); ++i)
            dq.row(i) = g.row(i) * rv.middleRows(i * m, m);
          tp.accumulate(pq, dq);
        }
        if (pr >= 0) {
          Mat dr(g.rows() * m, qv.cols());
          for (Eigen::Index i = 0; i < g.rows(); ++i)
            dr.middleRows(i * m, m) = g.row(i).transpose() * qv.row(i);
          tp.accumulate(pr, dr);
        }
      });
  return out;
}

Var dustbin_augment(const Var& scores, const Var& alpha) {
  if (alpha.rows() != 1 || alpha.cols() != 1)
    throw DimensionError("dustbin_augment: alpha must be 1x1, got " +
                         shape_str(alpha));
  const Eigen::Index n = scores.rows(), m = scores.cols();
  Mat y(n + 1, m + 1);
  y.topLeftCorner(n, m) = scores.v;
  y.row(n).setConstant(alpha.v(0, 0));
  y.col(m).setConstant(alpha.v(0, 0));
  Var out(std::move(y));
  Tape* t = result_tape({&scores, &alpha});
  if (t == nullptr) return out;
  const int ps = parent_id(scores, t), pa = parent_id(alpha, t);
  out.tape = t;
  out.id = t->add_node(n + 1, m + 1, [ps, pa, n, m](const Mat& g, Tape& tp) {
    if (ps >= 0) tp.accumulate(ps, g.topLeftCorner(n, m));
    if (pa >= 0) {
      Mat da(1, 1);
      da(0, 0) = g.row(n).sum() + g.col(m).sum() - g(n, m);
      tp.accumulate(pa, da);
    }
  });
  return out;
}

Var select_sum(const Var& x, const std::vector<std::pair<int, int>>& entries,
               double coeff) {
  double acc = 0.0;
  for (const auto& [i, j] : entries) {
    if (i < 0 || i >= x.rows() || j < 0 || j >= x.cols())
      throw ParameterError("select_sum: entry (" + std::to_string(i) + ", " +
                           std::to_string(j) + ") out of range for " +
                           shape_str(x));
    acc += x.v(i, j);
  }
  Mat y(1, 1);
  y(0, 0) = coeff * acc;
  Var out(std::move(y));
  Tape* t = result_tape({&x});
  if (t == nullptr) return out;
  const int px = x.id;
  const Eigen::Index xr = x.rows(), xc = x.cols();
  out.tape = t;
  out.id = t->add_node(1, 1, [px, entries, coeff, xr, xc](const Mat& g,
                                                          Tape& tp) {
    Mat dx = Mat::Zero(xr, xc);
    for (const auto& [i, j] : entries) dx(i, j) += coeff * g(0, 0);
    tp.accumulate(px, dx);
  });
  return out;
}

}  // namespace georeg
