#include "georeg/attention.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <vector>

#include "georeg/errors.hpp"

namespace georeg {

namespace {

// Writes the sinusoid expansion of t into row `r` of `out`.
void sinusoid_row(Mat& out, Eigen::Index r, double t,
                  const std::vector<double>& inv_period) {
  for (std::size_t c = 0; c < inv_period.size(); ++c) {
    const double arg = t * inv_period[c];
    out(r, static_cast<Eigen::Index>(2 * c)) = std::sin(arg);
    out(r, static_cast<Eigen::Index>(2 * c + 1)) = std::cos(arg);
  }
}

std::vector<double> sinusoid_periods(int width) {
  if (width < 2 || width % 2 != 0)
    throw ConfigError("embedding width must be even and >= 2");
  std::vector<double> inv(static_cast<std::size_t>(width / 2));
  for (int c = 0; c < width / 2; ++c)
    inv[static_cast<std::size_t>(c)] =
        1.0 / std::pow(10000.0, 2.0 * c / static_cast<double>(width));
  return inv;
}

}  // namespace

Mat distance_embedding(const PointCloud& superpoints, double sigma_dist,
                       int width) {
  if (!(sigma_dist > 0.0))
    throw ParameterError("distance_embedding: sigma_dist must be > 0");
  const std::vector<double> inv_period = sinusoid_periods(width);
  const Eigen::Index m = superpoints.rows();
  Mat out(m * m, width);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double t =
          (superpoints.row(i) - superpoints.row(j)).norm() / sigma_dist;
      sinusoid_row(out, i * m + j, t, inv_period);
    }
  }
  return out;
}

Mat angular_embedding(const PointCloud& superpoints, double sigma_angle_rad,
                      int k, int width) {
  if (!(sigma_angle_rad > 0.0))
    throw ParameterError("angular_embedding: sigma_angle must be > 0");
  if (k < 1) throw ParameterError("angular_embedding: k must be >= 1");
  const std::vector<double> inv_period = sinusoid_periods(width);
  const Eigen::Index m = superpoints.rows();
  Mat out = Mat::Zero(m * m * k, width);

  // Reference neighbors: k nearest other superpoints (fewer in tiny clouds).
  const int k_eff = std::min<int>(k, static_cast<int>(m) - 1);
  std::vector<std::vector<int>> refs(static_cast<std::size_t>(m));
  if (k_eff > 0) {
    const KnnResult nn = knn_search(superpoints, superpoints, k_eff + 1);
    for (Eigen::Index i = 0; i < m; ++i) {
      auto& r = refs[static_cast<std::size_t>(i)];
      for (int c = 0; c <= k_eff && static_cast<int>(r.size()) < k_eff; ++c)
        if (nn.indices(i, c) != static_cast<int>(i))
          r.push_back(nn.indices(i, c));
    }
  }

  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Vector3d pi = superpoints.row(i).transpose();
    const auto& r = refs[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) continue;  // masked: stays a zero row
      const Eigen::Vector3d dj = superpoints.row(j).transpose() - pi;
      for (std::size_t x = 0; x < r.size(); ++x) {
        const Eigen::Vector3d dx =
            superpoints.row(r[x]).transpose() - pi;
        double angle = 0.0;  // degenerate directions keep angle 0
        if (dj.squaredNorm() > 1e-24 && dx.squaredNorm() > 1e-24)
          angle = std::atan2(dx.cross(dj).norm(), dx.dot(dj));
        sinusoid_row(out, (i * m + j) * k + static_cast<Eigen::Index>(x),
                     angle / sigma_angle_rad, inv_period);
      }
    }
  }
  return out;
}

Var aggregate_embedding(const Var& dist_emb, const Var& ang_emb, const Var& wd,
                        const Var& wa, int k) {
  if (ang_emb.rows() != dist_emb.rows() * k)
    throw DimensionError("aggregate_embedding: angular rows " +
                         std::to_string(ang_emb.rows()) + " != pairs*k");
  const Var dist_term = matmul(dist_emb, wd);
  const Var ang_term = rowgroup_max(matmul(ang_emb, wa), k);
  return add(dist_term, ang_term);
}

Var attention_block(const BoundBlock& p, const Var& x_q, const Var& x_kv,
                    const Var* geo, int heads) {
  const int d = static_cast<int>(x_q.cols());
  if (heads < 1 || d % heads != 0)
    throw ConfigError("attention_block: head count " + std::to_string(heads) +
                      " does not divide width " + std::to_string(d));
  const int m = static_cast<int>(x_kv.rows());
  if (geo != nullptr && geo->rows() != x_q.rows() * m)
    throw DimensionError("attention_block: geometric term has " +
                         std::to_string(geo->rows()) + " rows for " +
                         std::to_string(x_q.rows() * m) + " pairs");
  const int dh = d / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  const Var q = add_rowvec(matmul(x_q, p.wq), p.bq);
  const Var k = add_rowvec(matmul(x_kv, p.wk), p.bk);
  const Var v = add_rowvec(matmul(x_kv, p.wv), p.bv);

  std::vector<Var> heads_out;
  heads_out.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Var qh = slice_cols(q, h * dh, dh);
    const Var kh = slice_cols(k, h * dh, dh);
    const Var vh = slice_cols(v, h * dh, dh);
    Var scores = matmul_nt(qh, kh);
    if (geo != nullptr) {
      const Var gh = slice_cols(*geo, h * dh, dh);
      scores = add(scores, rowwise_pair_dot(qh, gh, m));
    }
    const Var attn = softmax_rows(scale(scores, inv_sqrt_dh));
    heads_out.push_back(matmul(attn, vh));
  }
  const Var merged = add_rowvec(matmul(hconcat(heads_out), p.wo), p.bo);
  const Var x1 =
      layer_norm_rows(add(x_q, merged), p.ln1_gain, p.ln1_offset);
  const Var hidden =
      leaky_relu(add_rowvec(matmul(x1, p.ff_w1), p.ff_b1), kLeakySlope);
  const Var ff = add_rowvec(matmul(hidden, p.ff_w2), p.ff_b2);
  return layer_norm_rows(add(x1, ff), p.ln2_gain, p.ln2_offset);
}

std::pair<Var, Var> run_transformer(const BoundModel& m,
                                    const PointCloud& superpoints_p,
                                    const Var& features_p,
                                    const PointCloud& superpoints_q,
                                    const Var& features_q) {
  const ModelConfig& cfg = m.config;
  if (features_p.cols() != cfg.super_dim || features_q.cols() != cfg.super_dim)
    throw DimensionError("run_transformer: feature width != super_dim");
  if (features_p.rows() != superpoints_p.rows() ||
      features_q.rows() != superpoints_q.rows())
    throw DimensionError("run_transformer: feature rows != superpoint count");

  Var xp = matmul(features_p, m.input_proj);
  Var xq = matmul(features_q, m.input_proj);
  if (cfg.num_layers == 0) return {xp, xq};

  // Geometric structure embeddings depend only on the superpoints, so they
  // are built once here and reused by every layer.
  Var agg_p, agg_q;
  if (cfg.mode != AttentionMode::kVanilla) {
    const double sigma_a = cfg.sigma_angle_deg * M_PI / 180.0;
    const Var dist_p =
        constant(distance_embedding(superpoints_p, cfg.sigma_dist, cfg.d_model));
    const Var ang_p = constant(angular_embedding(
        superpoints_p, sigma_a, cfg.angle_neighbors, cfg.d_model));
    const Var dist_q =
        constant(distance_embedding(superpoints_q, cfg.sigma_dist, cfg.d_model));
    const Var ang_q = constant(angular_embedding(
        superpoints_q, sigma_a, cfg.angle_neighbors, cfg.d_model));
    agg_p = aggregate_embedding(dist_p, ang_p, m.embed_wd, m.embed_wa,
                                cfg.angle_neighbors);
    agg_q = aggregate_embedding(dist_q, ang_q, m.embed_wd, m.embed_wa,
                                cfg.angle_neighbors);
    if (cfg.mode == AttentionMode::kShared) {
      // One global projection with a leaky-rectified nonlinearity, hoisted
      // out of the per-layer score computation.
      agg_p = matmul(leaky_relu(agg_p, kLeakySlope), m.shared_wr);
      agg_q = matmul(leaky_relu(agg_q, kLeakySlope), m.shared_wr);
    }
  }

  for (const BoundLayer& layer : m.layers) {
    Var geo_p, geo_q;
    const Var* gp = nullptr;
    const Var* gq = nullptr;
    if (cfg.mode == AttentionMode::kStandard) {
      geo_p = matmul(agg_p, layer.self_block.wr);
      geo_q = matmul(agg_q, layer.self_block.wr);
      gp = &geo_p;
      gq = &geo_q;
    } else if (cfg.mode == AttentionMode::kShared) {
      gp = &agg_p;
      gq = &agg_q;
    }
    xp = attention_block(layer.self_block, xp, xp, gp, cfg.heads);
    xq = attention_block(layer.self_block, xq, xq, gq, cfg.heads);
    const Var xp_cross =
        attention_block(layer.cross_block, xp, xq, nullptr, cfg.heads);
    const Var xq_cross =
        attention_block(layer.cross_block, xq, xp, nullptr, cfg.heads);
    xp = xp_cross;
    xq = xq_cross;
  }
  return {xp, xq};
}

double self_attention_projection_work(AttentionMode mode, const Mat& x,
                                      const Mat& pair_embedding, const Mat& wq,
                                      const Mat& wk, const Mat& wv,
                                      const Mat& wr) {
  double checksum = 0.0;
  checksum += (x * wq).sum();
  checksum += (x * wk).sum();
  checksum += (x * wv).sum();
  if (mode == AttentionMode::kStandard) checksum += (pair_embedding * wr).sum();
  return checksum;
}

}  // namespace georeg
