#include "georeg/features.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "georeg/errors.hpp"
#include "georeg/weights_io.hpp"

namespace georeg {

Mat point_descriptors(const PointCloud& points, double radius) {
  if (!(radius > 0.0))
    throw ParameterError("point_descriptors: radius must be > 0");
  if (points.rows() < 1)
    throw DataError("point_descriptors: cloud has no points");

  constexpr int kBins = 8;
  const KdTree tree(points);
  Mat out = Mat::Zero(points.rows(), kDescriptorWidth);

  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::Vector3d center = points.row(i).transpose();
    const std::vector<int> nb = tree.radius(center, radius);

    // Distance histogram over neighbors, self excluded, as bin fractions.
    int count = 0;
    for (const int j : nb) {
      if (j == static_cast<int>(i)) continue;
      const double d = (points.row(j).transpose() - center).norm();
      int bin = static_cast<int>(d / radius * kBins);
      bin = std::min(bin, kBins - 1);
      out(i, bin) += 1.0;
      ++count;
    }
    if (count > 0) out.row(i).head(kBins) /= static_cast<double>(count);

    // Sorted eigenvalue ratios of the neighborhood covariance (self
    // included).  Eigenvalues are invariant under rigid motion.
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const int j : nb) mean += points.row(j).transpose();
    mean /= static_cast<double>(nb.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const int j : nb) {
      const Eigen::Vector3d d = points.row(j).transpose() - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(nb.size());
    const double trace = cov.trace();
    if (trace > 1e-20) {
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
      const Eigen::Vector3d ev = eig.eigenvalues();  // ascending
      for (int a = 0; a < 3; ++a)
        out(i, kBins + a) = std::max(ev(2 - a), 0.0) / trace;
    }
  }
  return out;
}

FeatureProvider load_feature_provider(const std::string& weights_path) {
  const std::vector<WeightsEntry> entries = read_weights(weights_path);
  const WeightsEntry* dense = find_entry(entries, "dense_features");
  const WeightsEntry* super = find_entry(entries, "super_features");
  if (dense == nullptr || super == nullptr)
    throw DataError(weights_path +
                    ": needs 'dense_features' and 'super_features' entries");
  FeatureProvider p;
  p.mode = FeatureMode::kFileLoaded;
  p.dense_loaded = entry_matrix(*dense);
  p.super_loaded = entry_matrix(*super);
  return p;
}

void compute_features(SuperpointGraph& graph, const FeatureProvider& provider) {
  if (provider.mode == FeatureMode::kFileLoaded) {
    if (provider.dense_loaded.rows() != graph.dense_points.rows())
      throw DataError("feature rows " +
                      std::to_string(provider.dense_loaded.rows()) + " != " +
                      std::to_string(graph.dense_points.rows()) +
                      " points for level dense");
    if (provider.super_loaded.rows() != graph.superpoints.rows())
      throw DataError("feature rows " +
                      std::to_string(provider.super_loaded.rows()) + " != " +
                      std::to_string(graph.superpoints.rows()) +
                      " points for level super");
    graph.dense_features = provider.dense_loaded;
    graph.superpoint_features = provider.super_loaded;
    return;
  }
  if (provider.dense_lift.rows() != kDescriptorWidth ||
      provider.super_lift.rows() != kDescriptorWidth)
    throw ConfigError("feature lift matrices must have " +
                      std::to_string(kDescriptorWidth) + " rows");
  graph.dense_features =
      point_descriptors(graph.dense_points, provider.dense_radius) *
      provider.dense_lift;
  graph.superpoint_features =
      point_descriptors(graph.superpoints, provider.super_radius) *
      provider.super_lift;
}

}  // namespace georeg
