#include "georeg/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/LU>

#include "georeg/errors.hpp"
#include "georeg/svd3.hpp"

namespace georeg {

RigidTransform weighted_svd(const Mat& p, const Mat& q,
                            const Eigen::VectorXd& weights) {
  const Eigen::Index n = p.rows();
  if (q.rows() != n || weights.size() != n)
    throw DimensionError("weighted_svd: pair/weight counts differ");
  if (p.cols() != 3 || q.cols() != 3)
    throw DimensionError("weighted_svd: points must be n-by-3");
  if (n < 3)
    throw EstimationError("weighted_svd: need at least 3 pairs, got " +
                          std::to_string(n));
  if (weights.minCoeff() < 0.0)
    throw ParameterError("weighted_svd: negative weight");
  const double wsum = weights.sum();
  if (!(wsum > 0.0))
    throw EstimationError("weighted_svd: weights sum to zero");

  const Eigen::RowVector3d centroid_p = (weights.transpose() * p) / wsum;
  const Eigen::RowVector3d centroid_q = (weights.transpose() * q) / wsum;

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (Eigen::Index j = 0; j < n; ++j)
    h += weights(j) * (p.row(j) - centroid_p).transpose() *
         (q.row(j) - centroid_q);

  const Svd3 svd = svd3(h);
  // A unique rotation needs two well-separated directions; collinear or
  // coincident points collapse the cross-covariance below that.
  if (!(svd.s(0) > 0.0) || svd.s(1) <= svd.s(0) * 1e-12)
    throw EstimationError("weighted_svd: rank-deficient cross-covariance",
                          /*degenerate=*/true);

  Eigen::Matrix3d diag = Eigen::Matrix3d::Identity();
  diag(2, 2) = (svd.v * svd.u.transpose()).determinant();
  RigidTransform t;
  t.rotation = svd.v * diag * svd.u.transpose();
  t.translation =
      centroid_q.transpose() - t.rotation * centroid_p.transpose();
  return t;
}

int count_inliers(const PointCloud& pts_p, const PointCloud& pts_q,
                  const CorrespondenceSet& corr, const RigidTransform& t,
                  double tau_a) {
  int count = 0;
  for (const auto& [ip, iq] : corr.pairs) {
    const Eigen::Vector3d moved =
        t.rotation * pts_p.row(ip).transpose() + t.translation;
    if ((moved - pts_q.row(iq).transpose()).norm() < tau_a) ++count;
  }
  return count;
}

namespace {

// Gathers the matched coordinate rows of a correspondence subset.
void gather_pairs(const PointCloud& pts_p, const PointCloud& pts_q,
                  const CorrespondenceSet& corr, const std::vector<int>& rows,
                  Mat& p, Mat& q) {
  p.resize(static_cast<Eigen::Index>(rows.size()), 3);
  q.resize(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& [ip, iq] = corr.pairs[static_cast<std::size_t>(rows[r])];
    p.row(static_cast<Eigen::Index>(r)) = pts_p.row(ip);
    q.row(static_cast<Eigen::Index>(r)) = pts_q.row(iq);
  }
}

std::vector<int> inlier_rows(const PointCloud& pts_p, const PointCloud& pts_q,
                             const CorrespondenceSet& corr,
                             const RigidTransform& t, double tau_a) {
  std::vector<int> rows;
  for (int j = 0; j < corr.size(); ++j) {
    const auto& [ip, iq] = corr.pairs[static_cast<std::size_t>(j)];
    const Eigen::Vector3d moved =
        t.rotation * pts_p.row(ip).transpose() + t.translation;
    if ((moved - pts_q.row(iq).transpose()).norm() < tau_a) rows.push_back(j);
  }
  return rows;
}

double mean_residual(const PointCloud& pts_p, const PointCloud& pts_q,
                     const CorrespondenceSet& corr,
                     const std::vector<int>& rows, const RigidTransform& t) {
  if (rows.empty()) return std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (int j : rows) {
    const auto& [ip, iq] = corr.pairs[static_cast<std::size_t>(j)];
    sum += (t.rotation * pts_p.row(ip).transpose() + t.translation -
            pts_q.row(iq).transpose())
               .norm();
  }
  return sum / static_cast<double>(rows.size());
}

CorrespondenceSet subset(const CorrespondenceSet& corr,
                         const std::vector<int>& rows) {
  CorrespondenceSet out;
  out.level = corr.level;
  for (int j : rows) {
    out.pairs.push_back(corr.pairs[static_cast<std::size_t>(j)]);
    out.scores.push_back(corr.scores[static_cast<std::size_t>(j)]);
    if (!corr.group_of.empty())
      out.group_of.push_back(corr.group_of[static_cast<std::size_t>(j)]);
  }
  return out;
}

}  // namespace

LgrResult local_to_global(const PointCloud& pts_p, const PointCloud& pts_q,
                          const CorrespondenceSet& corr,
                          const EstimatorConfig& cfg) {
  if (corr.level != CorrLevel::kPoint)
    throw ParameterError("local_to_global: needs point-level correspondences");
  if (static_cast<int>(corr.group_of.size()) != corr.size())
    throw ParameterError("local_to_global: correspondences carry no groups");
  if (cfg.refinement_rounds < 0)
    throw ParameterError("local_to_global: negative refinement rounds");

  // Local phase: one weighted solve per group with enough pairs.
  std::vector<std::vector<int>> groups;
  for (int j = 0; j < corr.size(); ++j) {
    const int g = corr.group_of[static_cast<std::size_t>(j)];
    if (g >= static_cast<int>(groups.size()))
      groups.resize(static_cast<std::size_t>(g) + 1);
    groups[static_cast<std::size_t>(g)].push_back(j);
  }

  bool have_best = false;
  RigidTransform best;
  int best_count = -1;
  double best_residual = std::numeric_limits<double>::infinity();
  for (const auto& rows : groups) {
    if (static_cast<int>(rows.size()) < cfg.min_local_corr) continue;
    Mat p, q;
    gather_pairs(pts_p, pts_q, corr, rows, p, q);
    Eigen::VectorXd w(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
      w(static_cast<Eigen::Index>(r)) =
          corr.scores[static_cast<std::size_t>(rows[r])];
    RigidTransform cand;
    try {
      cand = weighted_svd(p, q, w);
    } catch (const EstimationError&) {
      continue;  // degenerate local configuration: drop this candidate
    }
    const std::vector<int> inl = inlier_rows(pts_p, pts_q, corr, cand, cfg.tau_a);
    const int c = static_cast<int>(inl.size());
    const double res = mean_residual(pts_p, pts_q, corr, inl, cand);
    if (c > best_count || (c == best_count && res < best_residual)) {
      best = cand;
      best_count = c;
      best_residual = res;
      have_best = true;
    }
  }
  if (!have_best)
    throw EstimationError(
        "local_to_global: no group produced a usable candidate (need >= " +
        std::to_string(cfg.min_local_corr) + " pairs and full rank)");

  LgrResult out;
  out.transform = best;
  out.inliers_per_round.push_back(best_count);

  // Global phase: alternate inlier re-selection under the current pose and
  // an unweighted re-fit on the surviving pairs.
  for (int round = 0; round < cfg.refinement_rounds; ++round) {
    const std::vector<int> rows =
        inlier_rows(pts_p, pts_q, corr, out.transform, cfg.tau_a);
    if (static_cast<int>(rows.size()) >= 3) {
      Mat p, q;
      gather_pairs(pts_p, pts_q, corr, rows, p, q);
      try {
        out.transform = weighted_svd(
            p, q, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(rows.size())));
      } catch (const EstimationError&) {
        // Degenerate consensus set: keep the current pose.
      }
    }
    out.inliers_per_round.push_back(
        count_inliers(pts_p, pts_q, corr, out.transform, cfg.tau_a));
  }

  out.inliers = subset(
      corr, inlier_rows(pts_p, pts_q, corr, out.transform, cfg.tau_a));
  return out;
}

RigidTransform ransac_estimate(const PointCloud& pts_p,
                               const PointCloud& pts_q,
                               const CorrespondenceSet& corr,
                               const EstimatorConfig& cfg,
                               std::uint64_t seed) {
  const int n = corr.size();
  if (n < 3)
    throw EstimationError("ransac_estimate: need at least 3 pairs, got " +
                          std::to_string(n));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, n - 1);

  bool have_best = false;
  RigidTransform best;
  int best_count = -1;
  Mat p(3, 3), q(3, 3);
  for (int it = 0; it < cfg.ransac_iters; ++it) {
    int a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || a == c || b == c) continue;
    const int rows[3] = {a, b, c};
    for (int r = 0; r < 3; ++r) {
      const auto& [ip, iq] = corr.pairs[static_cast<std::size_t>(rows[r])];
      p.row(r) = pts_p.row(ip);
      q.row(r) = pts_q.row(iq);
    }
    RigidTransform cand;
    try {
      cand = weighted_svd(p, q, Eigen::Vector3d::Ones());
    } catch (const EstimationError&) {
      continue;  // collinear sample
    }
    const int count = count_inliers(pts_p, pts_q, corr, cand, cfg.tau_a);
    if (count > best_count) {
      best = cand;
      best_count = count;
      have_best = true;
    }
  }
  if (!have_best)
    throw EstimationError("ransac_estimate: all samples degenerate",
                          /*degenerate=*/true);

  const std::vector<int> rows =
      inlier_rows(pts_p, pts_q, corr, best, cfg.tau_a);
  if (static_cast<int>(rows.size()) >= 3) {
    Mat rp, rq;
    gather_pairs(pts_p, pts_q, corr, rows, rp, rq);
    try {
      best = weighted_svd(
          rp, rq, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(rows.size())));
    } catch (const EstimationError&) {
      // Keep the raw hypothesis when the consensus set is degenerate.
    }
  }
  return best;
}

}  // namespace georeg
