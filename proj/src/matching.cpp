#include "georeg/matching.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "georeg/errors.hpp"

namespace georeg {

const char* corr_level_name(CorrLevel level) {
  return level == CorrLevel::kSuperpoint ? "superpoint" : "point";
}

namespace {

// Row-normalizes a feature matrix onto the unit hypersphere.
Mat unit_rows(const Mat& h, const char* side) {
  Mat out(h.rows(), h.cols());
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    const double n = h.row(i).norm();
    if (!(n > 0.0))
      throw DataError(std::string("gaussian_correlation: feature row ") +
                      std::to_string(i) + " of " + side +
                      " has zero norm and cannot be normalized");
    out.row(i) = h.row(i) / n;
  }
  return out;
}

}  // namespace

Mat gaussian_correlation(const Mat& hp, const Mat& hq) {
  if (hp.cols() != hq.cols())
    throw DimensionError("gaussian_correlation: feature widths differ (" +
                         std::to_string(hp.cols()) + " vs " +
                         std::to_string(hq.cols()) + ")");
  const Mat up = unit_rows(hp, "P");
  const Mat uq = unit_rows(hq, "Q");
  Mat s(up.rows(), uq.rows());
  for (Eigen::Index i = 0; i < up.rows(); ++i)
    for (Eigen::Index j = 0; j < uq.rows(); ++j)
      s(i, j) = std::exp(-(up.row(i) - uq.row(j)).squaredNorm());
  return s;
}

Mat dual_normalize(const Mat& s) {
  const Eigen::VectorXd row_sum = s.rowwise().sum();
  const Eigen::RowVectorXd col_sum = s.colwise().sum();
  Mat out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (Eigen::Index j = 0; j < s.cols(); ++j)
      out(i, j) = s(i, j) * s(i, j) / (row_sum(i) * col_sum(j));
  return out;
}

CorrespondenceSet superpoint_match(const Mat& hp, const Mat& hq, int n_c,
                                   SuperMatchMode mode, double thresh) {
  if (n_c < 1) throw ParameterError("superpoint_match: n_c must be >= 1");
  const Mat s = gaussian_correlation(hp, hq);
  const Mat sbar = dual_normalize(s);
  const Eigen::Index n = sbar.rows();
  const Eigen::Index m = sbar.cols();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n * m));
  std::iota(order.begin(), order.end(), 0);

  CorrespondenceSet out;
  out.level = CorrLevel::kSuperpoint;
  auto emit = [&](Eigen::Index flat) {
    out.pairs.emplace_back(static_cast<int>(flat / m),
                           static_cast<int>(flat % m));
    out.scores.push_back(sbar(flat / m, flat % m));
  };

  if (mode == SuperMatchMode::kTopK) {
    // Largest dual-normalized entries; ties break toward the lower flat
    // index so output is reproducible.
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      const double va = sbar(a / m, a % m);
      const double vb = sbar(b / m, b % m);
      if (va != vb) return va > vb;
      return a < b;
    });
    const auto keep = std::min<std::size_t>(order.size(),
                                            static_cast<std::size_t>(n_c));
    for (std::size_t r = 0; r < keep; ++r) emit(order[r]);
    return out;
  }

  // Threshold mode ranks by feature distance on the unit hypersphere.  The
  // Gaussian correlation is exp(-d^2), so distance < thresh is equivalent to
  // s > exp(-thresh^2) and the distance ordering is the reverse of the s
  // ordering -- no need to recompute distances.
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const double va = s(a / m, a % m);
    const double vb = s(b / m, b % m);
    if (va != vb) return va > vb;
    return a < b;
  });
  const double s_cut = std::exp(-thresh * thresh);
  std::size_t keep = 0;
  while (keep < order.size() && s(order[keep] / m, order[keep] % m) > s_cut)
    ++keep;
  // Too few qualifying pairs: pad with the closest 128.
  constexpr std::size_t kAugmentCount = 128;
  if (keep < kAugmentCount) keep = std::min(order.size(), kAugmentCount);
  for (std::size_t r = 0; r < keep; ++r) emit(order[r]);
  return out;
}

AssignmentMatrix sinkhorn(const Mat& scores, double alpha, int iters) {
  if (iters < 1) throw ParameterError("sinkhorn: iters must be >= 1");
  if (!scores.allFinite())
    throw DataError("sinkhorn: score matrix has non-finite entries");
  const Eigen::Index n = scores.rows();
  const Eigen::Index m = scores.cols();

  Mat aug(n + 1, m + 1);
  aug.topLeftCorner(n, m) = scores;
  aug.row(n).setConstant(alpha);
  aug.col(m).setConstant(alpha);

  // Log marginals: each real row/column carries unit mass, the dustbins
  // absorb whatever the other side leaves unmatched.
  Eigen::VectorXd log_mu = Eigen::VectorXd::Zero(n + 1);
  log_mu(n) = std::log(static_cast<double>(m));
  Eigen::RowVectorXd log_nu = Eigen::RowVectorXd::Zero(m + 1);
  log_nu(m) = std::log(static_cast<double>(n));

  auto lse_rows = [](const Mat& x) -> Eigen::VectorXd {
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double top = x.row(i).maxCoeff();
      out(i) = top + std::log((x.row(i).array() - top).exp().sum());
    }
    return out;
  };

  Eigen::VectorXd u = Eigen::VectorXd::Zero(n + 1);
  Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(m + 1);
  for (int t = 0; t < iters; ++t) {
    u = log_mu - lse_rows(aug.rowwise() + v);
    v = log_nu -
        lse_rows((aug.colwise() + u).transpose()).transpose();
  }

  AssignmentMatrix out;
  out.augmented = ((aug.colwise() + u).rowwise() + v).array().exp();
  out.truncated = out.augmented.topLeftCorner(n, m);
  return out;
}

Var sinkhorn_log(const Var& scores, const Var& alpha, int iters) {
  if (iters < 1) throw ParameterError("sinkhorn_log: iters must be >= 1");
  const Eigen::Index n = scores.rows();
  const Eigen::Index m = scores.cols();
  const Var aug = dustbin_augment(scores, alpha);

  Mat log_mu = Mat::Zero(n + 1, 1);
  log_mu(n, 0) = std::log(static_cast<double>(m));
  Mat log_nu = Mat::Zero(1, m + 1);
  log_nu(0, m) = std::log(static_cast<double>(n));
  const Var mu = constant(log_mu);
  const Var nu = constant(log_nu);

  Var u = constant(Mat::Zero(n + 1, 1));
  Var v = constant(Mat::Zero(1, m + 1));
  for (int t = 0; t < iters; ++t) {
    u = sub(mu, logsumexp_rows(add_rowvec(aug, v)));
    v = sub(nu, logsumexp_cols(add_colvec(aug, u)));
  }
  return add_colvec(add_rowvec(aug, v), u);
}

namespace {

// Indices of the k largest entries of a row/column vector, ranked by value
// with lower indices first on ties.
std::vector<int> top_indices(const Eigen::VectorXd& vals, int k) {
  std::vector<int> idx(static_cast<std::size_t>(vals.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const auto keep = std::min<std::size_t>(idx.size(),
                                          static_cast<std::size_t>(k));
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(keep),
                    idx.end(), [&](int a, int b) {
                      if (vals(a) != vals(b)) return vals(a) > vals(b);
                      return a < b;
                    });
  idx.resize(keep);
  return idx;
}

}  // namespace

CorrespondenceSet point_match(const SuperpointGraph& graph_p,
                              const SuperpointGraph& graph_q,
                              const CorrespondenceSet& supermatches,
                              int k_mutual, int iters, double alpha) {
  if (supermatches.level != CorrLevel::kSuperpoint)
    throw ParameterError("point_match: supermatches must be superpoint level");
  if (k_mutual < 1) throw ParameterError("point_match: k_mutual must be >= 1");
  if (graph_p.dense_features.cols() != graph_q.dense_features.cols())
    throw DimensionError("point_match: dense feature widths differ");
  const double inv_sqrt_d =
      1.0 / std::sqrt(static_cast<double>(graph_p.dense_features.cols()));

  // Deduplicate across overlapping patches, keeping the best score; the map
  // key order also fixes the final output order.
  std::map<std::pair<int, int>, std::pair<double, int>> best;

  for (int g = 0; g < supermatches.size(); ++g) {
    const auto& patch_p =
        graph_p.patches[static_cast<std::size_t>(supermatches.pairs[g].first)];
    const auto& patch_q =
        graph_q.patches[static_cast<std::size_t>(supermatches.pairs[g].second)];
    const int n = static_cast<int>(patch_p.size());
    const int m = static_cast<int>(patch_q.size());

    Mat cost(n, m);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < m; ++b)
        cost(a, b) = graph_p.dense_features.row(patch_p[a]).dot(
                         graph_q.dense_features.row(patch_q[b])) *
                     inv_sqrt_d;

    const AssignmentMatrix assign = sinkhorn(cost, alpha, iters);
    const Mat& z = assign.truncated;

    std::vector<std::vector<int>> row_top(static_cast<std::size_t>(n));
    for (int a = 0; a < n; ++a)
      row_top[static_cast<std::size_t>(a)] =
          top_indices(z.row(a).transpose(), k_mutual);
    std::vector<std::vector<int>> col_top(static_cast<std::size_t>(m));
    for (int b = 0; b < m; ++b)
      col_top[static_cast<std::size_t>(b)] = top_indices(z.col(b), k_mutual);

    for (int a = 0; a < n; ++a) {
      for (int b : row_top[static_cast<std::size_t>(a)]) {
        const auto& ct = col_top[static_cast<std::size_t>(b)];
        if (std::find(ct.begin(), ct.end(), a) == ct.end()) continue;
        // Must also beat both dustbin alternatives for its row and column.
        if (!(z(a, b) > assign.augmented(a, m) &&
              z(a, b) > assign.augmented(n, b)))
          continue;
        const std::pair<int, int> key{patch_p[static_cast<std::size_t>(a)],
                                      patch_q[static_cast<std::size_t>(b)]};
        auto it = best.find(key);
        if (it == best.end())
          best.emplace(key, std::make_pair(z(a, b), g));
        else if (z(a, b) > it->second.first)
          it->second = {z(a, b), g};
      }
    }
  }

  CorrespondenceSet out;
  out.level = CorrLevel::kPoint;
  out.pairs.reserve(best.size());
  for (const auto& [key, val] : best) {
    out.pairs.push_back(key);
    out.scores.push_back(val.first);
    out.group_of.push_back(val.second);
  }
  return out;
}

void append_csv_rows(std::ostream& os, const CorrespondenceSet& set) {
  char buf[64];
  for (int i = 0; i < set.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", set.scores[static_cast<std::size_t>(i)]);
    os << corr_level_name(set.level) << ','
       << set.pairs[static_cast<std::size_t>(i)].first << ','
       << set.pairs[static_cast<std::size_t>(i)].second << ',' << buf << ','
       << (set.group_of.empty() ? -1 : set.group_of[static_cast<std::size_t>(i)])
       << '\n';
  }
}

std::string correspondences_csv(const CorrespondenceSet& set) {
  std::ostringstream os;
  os << "level,ip,iq,score,group\n";
  append_csv_rows(os, set);
  return os.str();
}

void write_correspondences_csv(const CorrespondenceSet& set,
                               const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << correspondences_csv(set);
}

}  // namespace georeg
