#pragma once

#include <utility>

#include "georeg/cloud.hpp"
#include "georeg/model.hpp"
#include "georeg/tensor.hpp"

namespace georeg {

/// Sinusoidal embedding of pairwise superpoint distances.
/// Returns an (m*m)-by-width matrix; the row for pair (i, j) is i*m + j.
/// Channel 2c holds sin(t / 10000^(2c/width)) and channel 2c+1 the matching
/// cosine, with t = ||p_i - p_j|| / sigma_dist.
Mat distance_embedding(const PointCloud& superpoints, double sigma_dist,
                       int width);

/// Sinusoidal embedding of the angles between each pair direction and the
/// directions to the k nearest reference neighbors.  Returns an
/// (m*m*k)-by-width matrix; the row for pair (i, j) and reference slot x is
/// (i*m + j)*k + x.  Diagonal pairs (and missing reference slots in tiny
/// clouds) are zero rows; a degenerate zero-length direction yields angle 0.
Mat angular_embedding(const PointCloud& superpoints, double sigma_angle_rad,
                      int k, int width);

/// Pairwise geometric structure embedding: the distance term plus the
/// channelwise maximum over the k angular terms, each behind its own learned
/// projection.  dist_emb is (m*m)-by-d, ang_emb is (m*m*k)-by-d.
Var aggregate_embedding(const Var& dist_emb, const Var& ang_emb, const Var& wd,
                        const Var& wa, int k);

/// One residual attention block (multi-head attention + feed-forward, each
/// with add-and-layer-norm).  `x_q` attends over `x_kv`; for self-attention
/// pass the same Var twice.  `geo` is the (m*m)-by-d projected geometric
/// embedding added to the keys, or null for cross attention / vanilla mode.
Var attention_block(const BoundBlock& p, const Var& x_q, const Var& x_kv,
                    const Var* geo, int heads);

/// Full feature transformer: projects the per-cloud superpoint features to
/// the model width, then interleaves geometric self-attention and
/// feature-based cross-attention num_layers times.  With num_layers == 0 the
/// outputs are just the projected inputs.
std::pair<Var, Var> run_transformer(const BoundModel& m,
                                    const PointCloud& superpoints_p,
                                    const Var& features_p,
                                    const PointCloud& superpoints_q,
                                    const Var& features_q);

/// Executes exactly the per-layer projection work a self-attention layer
/// performs in the given mode: query/key/value projections always, plus the
/// pairwise-embedding projection in standard mode (shared mode hoists that
/// projection out of the layers, vanilla mode has none).  Returns a checksum
/// of the products so the work cannot be optimized away; used by the
/// cost-scaling benchmark.
double self_attention_projection_work(AttentionMode mode, const Mat& x,
                                      const Mat& pair_embedding, const Mat& wq,
                                      const Mat& wk, const Mat& wv,
                                      const Mat& wr);

}  // namespace georeg
