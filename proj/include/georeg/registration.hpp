#pragma once

// Pose estimation from dense correspondences: closed-form weighted alignment
// (Kabsch / weighted SVD), the hypothesize-and-verify local-to-global
// estimator, and a classic RANSAC baseline for comparison.

#include <cstdint>
#include <vector>

#include "georeg/cloud.hpp"
#include "georeg/matching.hpp"

namespace georeg {

struct EstimatorConfig {
  double tau_a = 0.1;         // acceptance radius for inlier counting
  int refinement_rounds = 5;  // N_r iterative re-fit rounds after selection
  int min_local_corr = 3;     // groups below this size produce no candidate
  int ransac_iters = 50000;   // baseline estimator budget
};

// Minimizes sum_j w_j |R p_j + t - q_j|^2 in closed form.  p and q are
// n-by-3 with matched rows.  Throws EstimationError for fewer than 3 pairs
// or an all-zero weight vector, and a degenerate-flagged EstimationError
// when the weighted cross-covariance is rank deficient (collinear points).
RigidTransform weighted_svd(const Mat& p, const Mat& q,
                            const Eigen::VectorXd& weights);

// Number of pairs with |R p + t - q| strictly below tau_a.
int count_inliers(const PointCloud& pts_p, const PointCloud& pts_q,
                  const CorrespondenceSet& corr, const RigidTransform& t,
                  double tau_a);

struct LgrResult {
  RigidTransform transform;
  CorrespondenceSet inliers;
  // Inlier count of the selected candidate, then after each refinement
  // round; length refinement_rounds + 1.
  std::vector<int> inliers_per_round;
};

// Local-to-global registration: solves one weighted alignment per
// correspondence group (scores as weights), keeps the candidate pose that
// admits the most inliers over the union, then alternates inlier
// re-selection and unit-weight re-fitting for refinement_rounds rounds.
LgrResult local_to_global(const PointCloud& pts_p, const PointCloud& pts_q,
                          const CorrespondenceSet& corr,
                          const EstimatorConfig& cfg);

// Classic 3-point RANSAC with a final refit on the best consensus set.
// Deterministic for a fixed seed.
RigidTransform ransac_estimate(const PointCloud& pts_p,
                               const PointCloud& pts_q,
                               const CorrespondenceSet& corr,
                               const EstimatorConfig& cfg, std::uint64_t seed);

}  // namespace georeg
