#include "georeg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "georeg/attention.hpp"
#include "georeg/errors.hpp"
#include "georeg/features.hpp"
#include "georeg/matching.hpp"

namespace georeg {

OverlapTable compute_overlap(const SuperpointGraph& graph_p,
                             const SuperpointGraph& graph_q,
                             const RigidTransform& t_gt, double tau,
                             double positive_overlap) {
  if (!(tau > 0.0)) throw ParameterError("compute_overlap: tau must be > 0");
  const PointCloud moved = apply_transform(graph_p.dense_points, t_gt);
  const double tau2 = tau * tau;

  const int mp = static_cast<int>(graph_p.superpoints.rows());
  const int mq = static_cast<int>(graph_q.superpoints.rows());
  OverlapTable table;
  table.o = Mat::Zero(mp, mq);
  for (int i = 0; i < mp; ++i) {
    const auto& patch_p = graph_p.patches[static_cast<std::size_t>(i)];
    for (int j = 0; j < mq; ++j) {
      const auto& patch_q = graph_q.patches[static_cast<std::size_t>(j)];
      int covered = 0;
      for (int dp : patch_p) {
        for (int dq : patch_q) {
          if ((moved.row(dp) - graph_q.dense_points.row(dq)).squaredNorm() <=
              tau2) {
            ++covered;
            break;
          }
        }
      }
      table.o(i, j) = static_cast<double>(covered) /
                      static_cast<double>(patch_p.size());
    }
  }

  std::vector<bool> is_anchor(static_cast<std::size_t>(mp), false);
  for (int i = 0; i < mp; ++i) {
    for (int j = 0; j < mq; ++j) {
      if (table.o(i, j) >= positive_overlap) {
        table.positives.emplace_back(i, j);
        is_anchor[static_cast<std::size_t>(i)] = true;
      } else if (table.o(i, j) == 0.0) {
        table.negatives.emplace_back(i, j);
      }
    }
  }
  for (int i = 0; i < mp; ++i)
    if (is_anchor[static_cast<std::size_t>(i)]) table.anchors.push_back(i);
  return table;
}

namespace {

// Mean over anchor rows of log(1 + pos_sum * neg_sum) for one direction.
// dist is the (tape) distance matrix with anchors over rows; w_pos/w_neg are
// the frozen per-entry weights (zero where a pair is not in the relevant
// set or already inside its margin).
Var circle_direction(const Var& dist, const Mat& w_pos, const Mat& w_neg,
                     const std::vector<int>& anchors,
                     const CircleLossConfig& cfg) {
  const Var pos_terms =
      mul_const(exp_affine(dist, w_pos, -cfg.delta_p * w_pos), w_pos);
  const Var neg_terms =
      mul_const(exp_affine(dist, -w_neg, cfg.delta_n * w_neg), w_neg);
  const Var per_anchor = log1p(hadamard(rowsum(pos_terms), rowsum(neg_terms)));
  return scale(sum_all(gather_rows(per_anchor, anchors)),
               1.0 / static_cast<double>(anchors.size()));
}

}  // namespace

Var overlap_circle_loss(const Var& hp, const Var& hq,
                        const OverlapTable& table,
                        const CircleLossConfig& cfg) {
  if (hp.rows() != table.o.rows() || hq.rows() != table.o.cols())
    throw DimensionError("overlap_circle_loss: feature rows do not match the "
                         "overlap table");
  if (!(cfg.delta_p < cfg.delta_n))
    throw ParameterError("overlap_circle_loss: delta_p must be < delta_n");

  const Var dist = pairwise_dist(normalize_rows(hp), normalize_rows(hq));
  const Mat& d = dist.v;

  // Frozen sample weights: sqrt-overlap-scaled clamped slack for positives,
  // clamped slack for negatives.  Backprop treats them as constants.
  Mat w_pos = Mat::Zero(d.rows(), d.cols());
  for (const auto& [i, j] : table.positives)
    w_pos(i, j) = std::sqrt(table.o(i, j)) *
                  std::max(0.0, cfg.gamma * (d(i, j) - cfg.delta_p));
  Mat w_neg = Mat::Zero(d.rows(), d.cols());
  for (const auto& [i, j] : table.negatives)
    w_neg(i, j) = std::max(0.0, cfg.gamma * (cfg.delta_n - d(i, j)));

  // Q-direction anchors: columns with at least one positive.
  std::vector<int> anchors_q;
  {
    std::vector<bool> seen(static_cast<std::size_t>(d.cols()), false);
    for (const auto& [i, j] : table.positives)
      seen[static_cast<std::size_t>(j)] = true;
    for (int j = 0; j < static_cast<int>(d.cols()); ++j)
      if (seen[static_cast<std::size_t>(j)]) anchors_q.push_back(j);
  }
  if (table.anchors.empty() && anchors_q.empty())
    throw LossError("overlap_circle_loss: no anchor patch in either "
                    "direction (degenerate batch)");

  // An empty direction contributes zero; the total stays (L_P + L_Q) / 2.
  Var loss_p = table.anchors.empty()
                   ? scalar_const(0.0)
                   : circle_direction(dist, w_pos, w_neg, table.anchors, cfg);
  Var loss_q = anchors_q.empty()
                   ? scalar_const(0.0)
                   : circle_direction(transpose(dist), w_pos.transpose(),
                                      w_neg.transpose(), anchors_q, cfg);
  return scale(add(loss_p, loss_q), 0.5);
}

GtPointMatches make_gt_point_matches(const Mat& patch_p, const Mat& patch_q,
                                     const RigidTransform& t_gt, double tau) {
  if (patch_p.cols() != 3 || patch_q.cols() != 3)
    throw DimensionError("make_gt_point_matches: patches must be n-by-3");
  if (!(tau > 0.0))
    throw ParameterError("make_gt_point_matches: tau must be > 0");
  const int n = static_cast<int>(patch_p.rows());
  const int m = static_cast<int>(patch_q.rows());

  Mat moved(n, 3);
  for (int x = 0; x < n; ++x)
    moved.row(x) = (t_gt.rotation * patch_p.row(x).transpose() +
                    t_gt.translation)
                       .transpose();

  auto nearest = [](const Mat& from, int row, const Mat& among) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int r = 0; r < static_cast<int>(among.rows()); ++r) {
      const double dd = (from.row(row) - among.row(r)).squaredNorm();
      if (dd < best_d) {
        best_d = dd;
        best = r;
      }
    }
    return std::make_pair(best, best_d);
  };

  GtPointMatches out;
  std::vector<bool> used_p(static_cast<std::size_t>(n), false);
  std::vector<bool> used_q(static_cast<std::size_t>(m), false);
  for (int x = 0; x < n; ++x) {
    const auto [y, d2] = nearest(moved, x, patch_q);
    if (d2 > tau * tau) continue;
    const auto [back, back_d2] = nearest(patch_q, y, moved);
    (void)back_d2;
    if (back != x) continue;
    out.matches.emplace_back(x, y);
    used_p[static_cast<std::size_t>(x)] = true;
    used_q[static_cast<std::size_t>(y)] = true;
  }
  for (int x = 0; x < n; ++x)
    if (!used_p[static_cast<std::size_t>(x)]) out.unmatched_p.push_back(x);
  for (int y = 0; y < m; ++y)
    if (!used_q[static_cast<std::size_t>(y)]) out.unmatched_q.push_back(y);
  return out;
}

Var point_matching_loss(const std::vector<Var>& log_assignments,
                        const std::vector<GtPointMatches>& gts) {
  if (log_assignments.empty())
    throw LossError("point_matching_loss: no sampled superpoint matches");
  if (log_assignments.size() != gts.size())
    throw DimensionError("point_matching_loss: assignment/gt count mismatch");

  Var total = scalar_const(0.0);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const Var& lz = log_assignments[g];
    const int n = static_cast<int>(lz.rows()) - 1;  // dustbin row index
    const int m = static_cast<int>(lz.cols()) - 1;  // dustbin column index
    std::vector<std::pair<int, int>> entries;
    for (const auto& [x, y] : gts[g].matches) {
      if (x < 0 || x >= n || y < 0 || y >= m)
        throw ParameterError("point_matching_loss: match index outside patch");
      entries.emplace_back(x, y);
    }
    for (int x : gts[g].unmatched_p) {
      if (x < 0 || x >= n)
        throw ParameterError("point_matching_loss: P index outside patch");
      entries.emplace_back(x, m);
    }
    for (int y : gts[g].unmatched_q) {
      if (y < 0 || y >= m)
        throw ParameterError("point_matching_loss: Q index outside patch");
      entries.emplace_back(n, y);
    }
    total = add(total, select_sum(lz, entries, -1.0));
  }
  return scale(total, 1.0 / static_cast<double>(gts.size()));
}

// --- Optimizer and loop ------------------------------------------------------

TrainItem prepare_pair(const PointCloud& p, const PointCloud& q,
                       const RigidTransform& t_gt, const GraphConfig& gcfg,
                       double matching_radius) {
  TrainItem item;
  item.graph_p = build_graph(p, gcfg.dense_voxel, gcfg.super_voxel);
  item.graph_q = build_graph(q, gcfg.dense_voxel, gcfg.super_voxel);
  item.t_gt = t_gt;
  item.desc_dense_p =
      point_descriptors(item.graph_p.dense_points, gcfg.dense_feat_radius);
  item.desc_super_p =
      point_descriptors(item.graph_p.superpoints, gcfg.super_feat_radius);
  item.desc_dense_q =
      point_descriptors(item.graph_q.dense_points, gcfg.dense_feat_radius);
  item.desc_super_q =
      point_descriptors(item.graph_q.superpoints, gcfg.super_feat_radius);
  item.table = compute_overlap(item.graph_p, item.graph_q, t_gt,
                               matching_radius);

  auto patch_block = [](const SuperpointGraph& g, int s) {
    const auto& rows = g.patches[static_cast<std::size_t>(s)];
    Mat block(static_cast<Eigen::Index>(rows.size()), 3);
    for (std::size_t r = 0; r < rows.size(); ++r)
      block.row(static_cast<Eigen::Index>(r)) = g.dense_points.row(rows[r]);
    return block;
  };
  item.gt_of_positive.reserve(item.table.positives.size());
  for (const auto& [i, j] : item.table.positives)
    item.gt_of_positive.push_back(
        make_gt_point_matches(patch_block(item.graph_p, i),
                              patch_block(item.graph_q, j), t_gt,
                              matching_radius));
  return item;
}

namespace {

// Uniform sample of `count` distinct indices from [0, total), in draw order.
std::vector<int> sample_without_replacement(int total, int count,
                                            std::mt19937_64& rng) {
  std::vector<int> pool(static_cast<std::size_t>(total));
  std::iota(pool.begin(), pool.end(), 0);
  const int keep = std::min(total, count);
  for (int r = 0; r < keep; ++r) {
    std::uniform_int_distribution<int> pick(r, total - 1);
    std::swap(pool[static_cast<std::size_t>(r)],
              pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(keep));
  return pool;
}

}  // namespace

StepLosses train_step(const TrainItem& item, Model& model, AdamState& state,
                      const TrainConfig& cfg, std::mt19937_64& rng) {
  if (item.table.positives.empty())
    throw TrainingError("train_step: pair has no positive patch match");
  const std::vector<int> sampled = sample_without_replacement(
      static_cast<int>(item.table.positives.size()), cfg.n_g, rng);

  Tape tape;
  const BoundModel bm = bind_model(&tape, model);

  // Superpoint branch: lift descriptors, run the transformer, circle loss.
  const Var super_p =
      matmul(constant(item.desc_super_p), bm.super_lift);
  const Var super_q =
      matmul(constant(item.desc_super_q), bm.super_lift);
  const auto [hp, hq] =
      run_transformer(bm, item.graph_p.superpoints, super_p,
                      item.graph_q.superpoints, super_q);
  const Var loss_oc = overlap_circle_loss(hp, hq, item.table, cfg.circle);

  // Dense branch: per sampled ground-truth patch pair, correlate the lifted
  // features and push the assignment through the unrolled transport solve.
  const Var dense_p = matmul(constant(item.desc_dense_p), bm.dense_lift);
  const Var dense_q = matmul(constant(item.desc_dense_q), bm.dense_lift);
  const double inv_sqrt_d =
      1.0 / std::sqrt(static_cast<double>(model.config.dense_dim));
  std::vector<Var> log_assignments;
  std::vector<GtPointMatches> gts;
  log_assignments.reserve(sampled.size());
  gts.reserve(sampled.size());
  for (int s : sampled) {
    const auto& [i, j] = item.table.positives[static_cast<std::size_t>(s)];
    const Var fp = gather_rows(
        dense_p, item.graph_p.patches[static_cast<std::size_t>(i)]);
    const Var fq = gather_rows(
        dense_q, item.graph_q.patches[static_cast<std::size_t>(j)]);
    const Var cost = scale(matmul_nt(fp, fq), inv_sqrt_d);
    log_assignments.push_back(
        sinkhorn_log(cost, bm.dustbin, cfg.sinkhorn_iters));
    gts.push_back(item.gt_of_positive[static_cast<std::size_t>(s)]);
  }
  const Var loss_p = point_matching_loss(log_assignments, gts);

  const Var total = add(loss_oc, loss_p);
  if (!std::isfinite(total.v(0, 0)))
    throw TrainingError("train_step: non-finite loss, aborting step");
  tape.backward(total);

  // Adaptive-moment update over the canonical parameter order.
  auto params = enumerate_params(model);
  const auto bound = enumerate_bound(bm);
  if (state.m.empty()) {
    for (const auto& [name, mat] : params) {
      (void)name;
      state.m.push_back(Mat::Zero(mat->rows(), mat->cols()));
      state.v.push_back(Mat::Zero(mat->rows(), mat->cols()));
    }
  }
  if (state.m.size() != params.size())
    throw TrainingError("train_step: optimizer state does not match model");
  ++state.t;
  const double lr =
      cfg.adam.lr * std::pow(cfg.adam.lr_decay, static_cast<double>(state.t - 1));
  const double bc1 = 1.0 - std::pow(cfg.adam.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.adam.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Mat g = tape.grad(*bound[k].second);
    Mat& m = state.m[k];
    Mat& v = state.v[k];
    m = cfg.adam.beta1 * m + (1.0 - cfg.adam.beta1) * g;
    v = cfg.adam.beta2 * v.array().matrix() +
        (1.0 - cfg.adam.beta2) * g.array().square().matrix();
    const Mat update =
        ((m / bc1).array() / ((v / bc2).array().sqrt() + cfg.adam.eps))
            .matrix();
    *params[k].second -= lr * update;
  }
  return {loss_oc.v(0, 0), loss_p.v(0, 0)};
}

std::vector<StepLosses> train_loop(Model& model,
                                   const std::vector<TrainItem>& items,
                                   const TrainConfig& cfg, std::ostream* log) {
  if (items.empty()) throw TrainingError("train_loop: no training items");
  std::mt19937_64 rng(cfg.seed);
  AdamState state;
  std::vector<StepLosses> history;
  history.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    const TrainItem& item =
        items[static_cast<std::size_t>(step) % items.size()];
    const StepLosses losses = train_step(item, model, state, cfg, rng);
    history.push_back(losses);
    if (log != nullptr) {
      const double lr = cfg.adam.lr *
                        std::pow(cfg.adam.lr_decay,
                                 static_cast<double>(state.t - 1));
      char line[160];
      std::snprintf(line, sizeof(line),
                    "{\"step\":%d,\"loss_oc\":%.10g,\"loss_p\":%.10g,"
                    "\"lr\":%.10g}\n",
                    step, losses.loss_oc, losses.loss_p, lr);
      (*log) << line;
    }
  }
  return history;
}

}  // namespace georeg
