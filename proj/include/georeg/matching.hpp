#pragma once

// Correspondence extraction at both hierarchy levels: dual-normalized
// Gaussian correlation between superpoint features, and per-patch optimal
// transport (Sinkhorn with dustbins) followed by mutual top-k selection for
// dense point pairs.

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "georeg/cloud.hpp"
#include "georeg/tensor.hpp"

namespace georeg {

enum class CorrLevel { kSuperpoint, kPoint };

const char* corr_level_name(CorrLevel level);

// A set of index pairs between two clouds at one hierarchy level.  For point
// level sets, group_of records which superpoint match produced each pair.
struct CorrespondenceSet {
  CorrLevel level = CorrLevel::kSuperpoint;
  std::vector<std::pair<int, int>> pairs;  // (index in P, index in Q)
  std::vector<double> scores;              // confidence per pair
  std::vector<int> group_of;               // empty for superpoint level

  [[nodiscard]] int size() const { return static_cast<int>(pairs.size()); }
};

// Gaussian correlation s_ij = exp(-|hp_i - hq_j|^2) between row-normalized
// feature matrices.  A zero feature row cannot be put on the unit
// hypersphere and raises DataError naming the row.
Mat gaussian_correlation(const Mat& hp, const Mat& hq);

// Dual normalization: each entry is divided by the product of its row sum
// and column sum, s̄_ij = s_ij^2 / (Σ_k s_ik · Σ_k s_kj), suppressing
// entries that are large only because their whole row or column is large.
Mat dual_normalize(const Mat& s);

enum class SuperMatchMode { kTopK, kThreshold };

// Extracts superpoint correspondences from the two hybrid feature matrices.
//   kTopK      — the n_c entries of the dual-normalized correlation with the
//                largest values (all entries when n_c exceeds the grid).
//   kThreshold — pairs whose normalized feature distance is below thresh,
//                padded with the closest 128 pairs when fewer qualify.
// Reported scores are dual-normalized correlation values in both modes.
CorrespondenceSet superpoint_match(const Mat& hp, const Mat& hq, int n_c,
                                   SuperMatchMode mode, double thresh = 0.75);

// Soft assignment produced by Sinkhorn.  augmented is the full
// (n+1)-by-(m+1) matrix including the dustbin row/column; truncated drops
// both and holds the per-pair confidences used downstream.
struct AssignmentMatrix {
  Mat augmented;
  Mat truncated;
};

// Entropy-regularized optimal transport on the dustbin-augmented score
// matrix, computed in the log domain (overflow-safe).  Row marginals are
// (1,...,1,m) and column marginals (1,...,1,n).
AssignmentMatrix sinkhorn(const Mat& scores, double alpha, int iters);

// Tape variant with unrolled iterations; returns the LOG of the augmented
// assignment so losses can consume it without re-taking logarithms.
Var sinkhorn_log(const Var& scores, const Var& alpha, int iters);

// Dense point matching: for every superpoint match, correlates the two
// patches' feature rows (scaled by 1/sqrt(width)), runs Sinkhorn, and keeps
// pairs that are in the mutual top-k of their row and column AND beat both
// of their dustbin entries.  Duplicates across overlapping patches keep the
// highest-scoring occurrence.
CorrespondenceSet point_match(const SuperpointGraph& graph_p,
                              const SuperpointGraph& graph_q,
                              const CorrespondenceSet& supermatches,
                              int k_mutual, int iters, double alpha);

// CSV export with header "level,ip,iq,score,group"; group is -1 for sets
// without group ids.  append_csv_rows emits data rows only, so several sets
// (e.g. both hierarchy levels) can share one file.
void append_csv_rows(std::ostream& os, const CorrespondenceSet& set);
std::string correspondences_csv(const CorrespondenceSet& set);
void write_correspondences_csv(const CorrespondenceSet& set,
                               const std::string& path);

}  // namespace georeg
