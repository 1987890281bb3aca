#include "georeg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "georeg/errors.hpp"

namespace georeg {

double rre_deg(const Eigen::Matrix3d& r_gt, const Eigen::Matrix3d& r_est) {
  const double cosine =
      ((r_gt.transpose() * r_est).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(cosine, -1.0, 1.0)) * 180.0 / M_PI;
}

double rte(const Eigen::Vector3d& t_gt, const Eigen::Vector3d& t_est) {
  return (t_gt - t_est).norm();
}

double inlier_ratio(const PointCloud& pts_p, const PointCloud& pts_q,
                    const CorrespondenceSet& corr, const RigidTransform& t_gt,
                    double radius) {
  if (corr.size() == 0) return 0.0;
  int inliers = 0;
  for (const auto& [ip, iq] : corr.pairs) {
    const Eigen::Vector3d moved =
        t_gt.rotation * pts_p.row(ip).transpose() + t_gt.translation;
    if ((moved - pts_q.row(iq).transpose()).norm() < radius) ++inliers;
  }
  return static_cast<double>(inliers) / static_cast<double>(corr.size());
}

double patch_inlier_ratio(const CorrespondenceSet& supermatches,
                          const OverlapTable& table) {
  if (supermatches.size() == 0) return 0.0;
  int hits = 0;
  for (const auto& [i, j] : supermatches.pairs)
    if (table.o(i, j) > 0.0) ++hits;
  return static_cast<double>(hits) / static_cast<double>(supermatches.size());
}

double correspondence_rmse(const PointCloud& pts_p, const PointCloud& pts_q,
                           const GtPointMatches& gt,
                           const RigidTransform& t_est) {
  if (gt.matches.empty())
    throw ParameterError("correspondence_rmse: no ground-truth matches");
  double sum = 0.0;
  for (const auto& [ip, iq] : gt.matches) {
    const Eigen::Vector3d moved =
        t_est.rotation * pts_p.row(ip).transpose() + t_est.translation;
    sum += (moved - pts_q.row(iq).transpose()).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(gt.matches.size()));
}

namespace {

double mean_min_sqdist(const PointCloud& from, const PointCloud& to) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < to.rows(); ++j)
      best = std::min(best, (from.row(i) - to.row(j)).squaredNorm());
    sum += best;
  }
  return sum / static_cast<double>(from.rows());
}

}  // namespace

double modified_chamfer(const PointCloud& p, const PointCloud& q,
                        const PointCloud& clean_p, const PointCloud& clean_q,
                        const RigidTransform& t_est) {
  const PointCloud moved_p = apply_transform(p, t_est);
  const PointCloud moved_clean_p = apply_transform(clean_p, t_est);
  return mean_min_sqdist(moved_p, clean_q) + mean_min_sqdist(q, moved_clean_p);
}

MetricsReport compute_metrics(const CorrespondenceSet& corr,
                              const CorrespondenceSet& supermatches,
                              const RigidTransform& t_est,
                              const RigidTransform* t_gt,
                              const SuperpointGraph& graph_p,
                              const SuperpointGraph& graph_q,
                              const MetricThresholds& thresholds,
                              const PointCloud* clean_p,
                              const PointCloud* clean_q) {
  MetricsReport report;
  report.thresholds = thresholds;
  if (t_gt == nullptr) return report;

  report.ir = inlier_ratio(graph_p.dense_points, graph_q.dense_points, corr,
                           *t_gt, thresholds.inlier_radius);
  report.fmr = *report.ir >= thresholds.fmr_min_ir;
  report.rre_deg = rre_deg(t_gt->rotation, t_est.rotation);
  report.rte = rte(t_gt->translation, t_est.translation);

  const OverlapTable table =
      compute_overlap(graph_p, graph_q, *t_gt, thresholds.gt_radius);
  report.pir = patch_inlier_ratio(supermatches, table);

  // Registration recall: scene protocol needs ground-truth dense matches.
  if (thresholds.protocol == RecallProtocol::kScene) {
    const GtPointMatches gt_matches =
        make_gt_point_matches(graph_p.dense_points, graph_q.dense_points,
                              *t_gt, thresholds.gt_radius);
    if (!gt_matches.matches.empty()) {
      report.rmse = correspondence_rmse(
          graph_p.dense_points, graph_q.dense_points, gt_matches, t_est);
      report.rr = *report.rmse < thresholds.rmse_max;
    }
  } else {
    report.rr = *report.rre_deg < thresholds.rre_max_deg &&
                *report.rte < thresholds.rte_max;
  }

  if (clean_p != nullptr && clean_q != nullptr)
    report.chamfer = modified_chamfer(graph_p.dense_points,
                                      graph_q.dense_points, *clean_p,
                                      *clean_q, t_est);
  return report;
}

}  // namespace georeg
