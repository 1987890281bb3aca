#pragma once

#include <string>

#include "georeg/cloud.hpp"
#include "georeg/tensor.hpp"

namespace georeg {

/// Width of the raw rotation/translation-invariant point descriptor:
/// an 8-bin histogram of neighbor distances plus the 3 sorted eigenvalue
/// ratios of the local covariance.
constexpr int kDescriptorWidth = 11;

/// Raw invariant descriptors, one row per point.  `radius` bounds the
/// neighborhood used for both the distance histogram and the covariance;
/// points with no neighbors inside it get all-zero channels.
Mat point_descriptors(const PointCloud& points, double radius);

/// Source of per-level features for a SuperpointGraph.
///
/// kBuiltin computes invariant descriptors and applies a learned linear lift
/// per level; kFileLoaded takes both feature matrices verbatim from a
/// weights file (entries "dense_features" / "super_features").
enum class FeatureMode { kBuiltin, kFileLoaded };

struct FeatureProvider {
  FeatureMode mode = FeatureMode::kBuiltin;
  // builtin
  double dense_radius = 0.125;  // 2.5x the dense voxel size by convention
  double super_radius = 0.5;    // 2.5x the superpoint voxel size
  Mat dense_lift;               // kDescriptorWidth x dense_dim
  Mat super_lift;               // kDescriptorWidth x super_dim
  // file_loaded
  Mat dense_loaded;
  Mat super_loaded;
};

/// Provider that loads both levels verbatim from a weights file.
FeatureProvider load_feature_provider(const std::string& weights_path);

/// Fills graph.dense_features and graph.superpoint_features.  Row order
/// matches point order at each level; a row-count mismatch in file-loaded
/// mode raises DataError naming the offending level.
void compute_features(SuperpointGraph& graph, const FeatureProvider& provider);

}  // namespace georeg
