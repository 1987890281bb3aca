#pragma once

// Evaluation metrics.  Every function is a plain loop over its inputs so an
// independent reimplementation can reproduce the values bit for bit.

#include <optional>

#include "georeg/cloud.hpp"
#include "georeg/matching.hpp"
#include "georeg/training.hpp"

namespace georeg {

// Geodesic rotation error in degrees: arccos((trace(Rg^T Re) - 1) / 2).
double rre_deg(const Eigen::Matrix3d& r_gt, const Eigen::Matrix3d& r_est);

// Euclidean translation error.
double rte(const Eigen::Vector3d& t_gt, const Eigen::Vector3d& t_est);

// Fraction of correspondences with residual under t_gt strictly below
// `radius`.
double inlier_ratio(const PointCloud& pts_p, const PointCloud& pts_q,
                    const CorrespondenceSet& corr, const RigidTransform& t_gt,
                    double radius);

// Fraction of superpoint matches whose patches genuinely overlap (table
// entry > 0).
double patch_inlier_ratio(const CorrespondenceSet& supermatches,
                          const OverlapTable& table);

// Root-mean-square residual of ground-truth correspondences under t_est.
double correspondence_rmse(const PointCloud& pts_p, const PointCloud& pts_q,
                           const GtPointMatches& gt,
                           const RigidTransform& t_est);

// Modified (two-sided, squared) Chamfer distance: each raw cloud is compared
// against the clean, complete version of the other side, with the estimated
// transform mapping P into Q's frame.
double modified_chamfer(const PointCloud& p, const PointCloud& q,
                        const PointCloud& clean_p, const PointCloud& clean_q,
                        const RigidTransform& t_est);

enum class RecallProtocol { kScene, kOdometry };

struct MetricThresholds {
  double inlier_radius = 0.1;   // IR residual threshold
  double fmr_min_ir = 0.05;     // pair counts toward FMR when IR >= this
  double rmse_max = 0.2;        // scene-protocol RR threshold
  double rre_max_deg = 5.0;     // odometry-protocol RR rotation threshold
  double rte_max = 2.0;         // odometry-protocol RR translation threshold
  double gt_radius = 0.1;       // radius for ground-truth matches / overlap
  RecallProtocol protocol = RecallProtocol::kScene;
};

// Per-pair report; fields that need the ground-truth transform are absent
// when it is not supplied.
struct MetricsReport {
  std::optional<double> ir;
  std::optional<bool> fmr;  // this pair's indicator (aggregate FMR is a mean)
  std::optional<bool> rr;
  std::optional<double> pir;
  std::optional<double> rmse;
  std::optional<double> rre_deg;
  std::optional<double> rte;
  std::optional<double> chamfer;
  MetricThresholds thresholds;
};

// Evaluates one registered pair.  t_gt may be null (no ground truth: only
// fields derivable from t_est are filled).  clean_p/clean_q may be null,
// omitting the Chamfer term.
MetricsReport compute_metrics(const CorrespondenceSet& corr,
                              const CorrespondenceSet& supermatches,
                              const RigidTransform& t_est,
                              const RigidTransform* t_gt,
                              const SuperpointGraph& graph_p,
                              const SuperpointGraph& graph_q,
                              const MetricThresholds& thresholds,
                              const PointCloud* clean_p = nullptr,
                              const PointCloud* clean_q = nullptr);

}  // namespace georeg
