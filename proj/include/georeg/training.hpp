#pragma once

// Supervision construction (patch overlap table, ground-truth point matches)
// and both training losses, plus a small adaptive-moment gradient descent
// loop that drives them at desk scale.

#include <cstdint>
#include <iosfwd>
#include <random>
#include <utility>
#include <vector>

#include "georeg/cloud.hpp"
#include "georeg/model.hpp"
#include "georeg/tensor.hpp"

namespace georeg {

// Patch pairs sharing at least this overlap ratio are positives.
constexpr double kPositiveOverlap = 0.1;

// Directional patch overlap: o(i,j) is the fraction of points of patch i of
// P with a counterpart in patch j of Q within the matching radius after the
// ground-truth transform.  `anchors` lists P patches with >= 1 positive.
struct OverlapTable {
  Mat o;
  std::vector<std::pair<int, int>> positives;  // o >= kPositiveOverlap
  std::vector<std::pair<int, int>> negatives;  // o == 0
  std::vector<int> anchors;
};

OverlapTable compute_overlap(const SuperpointGraph& graph_p,
                             const SuperpointGraph& graph_q,
                             const RigidTransform& t_gt, double tau,
                             double positive_overlap = kPositiveOverlap);

struct CircleLossConfig {
  double delta_p = 0.1;  // positive margin
  double delta_n = 1.4;  // negative margin
  double gamma = 24.0;   // scale factor
};

// Overlap-aware circle loss on the two superpoint feature matrices (rows are
// unit-normalized internally).  Per anchor i of P:
//
//   log(1 + sum_j w_ij e^{w_ij (d_ij - delta_p)}
//           * sum_k v_ik e^{v_ik (delta_n - d_ik)})
//
// over positives j and negatives k, with w_ij = sqrt(o_ij) *
// max(0, gamma (d_ij - delta_p)) and v_ik = max(0, gamma (delta_n - d_ik)).
// The weights are computed from the forward values and treated as constants
// during backprop, so pairs already inside their margin contribute neither
// loss nor gradient.  The total is the mean over anchors, symmetrized over
// both directions: (L_P + L_Q) / 2.  Raises LossError when neither
// direction has an anchor.
Var overlap_circle_loss(const Var& hp, const Var& hq,
                        const OverlapTable& table,
                        const CircleLossConfig& cfg);

// Ground-truth matches between two patches, in patch-local row indices.
struct GtPointMatches {
  std::vector<std::pair<int, int>> matches;  // mutual nearest within tau
  std::vector<int> unmatched_p;              // rows of P patch left unmatched
  std::vector<int> unmatched_q;              // rows of Q patch left unmatched
};

// patch_p/patch_q are n-by-3 / m-by-3 coordinate blocks.  A pair matches
// when each point is the other's nearest neighbor under t_gt and their
// distance is at most tau; ties break toward the lower index.
GtPointMatches make_gt_point_matches(const Mat& patch_p, const Mat& patch_q,
                                     const RigidTransform& t_gt, double tau);

// Negative log-likelihood point matching loss.  Each entry of
// log_assignments is the LOG of one (n+1)-by-(m+1) augmented assignment
// (as produced by sinkhorn_log); its loss sums -log z over the ground-truth
// matches, the row dustbin for unmatched P points and the column dustbin
// for unmatched Q points.  The result is the mean over all sampled groups.
Var point_matching_loss(const std::vector<Var>& log_assignments,
                        const std::vector<GtPointMatches>& gts);

// --- Optimizer and loop ----------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr_decay = 1.0;  // per-step exponential factor
};

// First/second moment buffers, lazily shaped on the first step.
struct AdamState {
  std::vector<Mat> m;
  std::vector<Mat> v;
  long t = 0;
};

struct TrainConfig {
  AdamConfig adam;
  CircleLossConfig circle;
  double matching_radius = 0.05;  // tau, defaults to the dense voxel size
  int n_g = 128;                  // sampled ground-truth superpoint matches
  int sinkhorn_iters = 10;        // unrolled iterations on the tape
  int steps = 100;
  std::uint64_t seed = 0;
};

// Everything about one training pair that does not depend on parameters:
// both graphs, raw invariant descriptors per level, the overlap table and
// the ground-truth point matches for every positive patch pair.
struct TrainItem {
  SuperpointGraph graph_p;
  SuperpointGraph graph_q;
  RigidTransform t_gt;
  Mat desc_dense_p, desc_super_p;
  Mat desc_dense_q, desc_super_q;
  OverlapTable table;
  std::vector<GtPointMatches> gt_of_positive;  // parallel to table.positives
};

struct GraphConfig {
  double dense_voxel = 0.05;
  double super_voxel = 0.2;
  double dense_feat_radius = 0.125;
  double super_feat_radius = 0.5;
};

TrainItem prepare_pair(const PointCloud& p, const PointCloud& q,
                       const RigidTransform& t_gt, const GraphConfig& gcfg,
                       double matching_radius);

struct StepLosses {
  double loss_oc = 0.0;
  double loss_p = 0.0;
};

// One optimization step: forward (lift -> transformer -> both losses),
// backward, adaptive-moment update.  `rng` drives the ground-truth group
// sampling.  A non-finite loss aborts the step with TrainingError before
// any parameter is touched.
StepLosses train_step(const TrainItem& item, Model& model, AdamState& state,
                      const TrainConfig& cfg, std::mt19937_64& rng);

// Round-robin over items for cfg.steps steps.  When `log` is non-null one
// JSON object per step is written: {"step":..,"loss_oc":..,"loss_p":..,
// "lr":..}.
std::vector<StepLosses> train_loop(Model& model,
                                   const std::vector<TrainItem>& items,
                                   const TrainConfig& cfg,
                                   std::ostream* log = nullptr);

}  // namespace georeg
