#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "georeg/tensor.hpp"

namespace georeg {

/// Point clouds are dense row-per-point matrices (n-by-3, n >= 1).
using PointCloud = Eigen::MatrixX3d;

/// Proper rigid motion p -> rotation * p + translation.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d operator()(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }
  RigidTransform inverse() const;
  Eigen::Matrix4d homogeneous() const;
};

/// compose(a, b) applies b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t);

/// Centroid-per-cell voxel grid filter.  Output rows are ordered by integer
/// cell key, so the result is deterministic regardless of input order.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel);

/// Exact k nearest neighbors of every query row among `base` rows.
/// Row i of `indices`/`distances` lists the neighbors of query i sorted by
/// ascending distance; equal distances break toward the lower base index.
struct KnnResult {
  Eigen::MatrixXi indices;
  Mat distances;
};
KnnResult knn_search(const PointCloud& query, const PointCloud& base, int k);

/// Exact k-d tree over a fixed cloud.  Used by knn_search above for larger
/// inputs; small inputs fall back to a brute-force scan.
class KdTree {
 public:
  explicit KdTree(const PointCloud& pts);

  /// k best (distance, index) pairs, sorted ascending, ties by lower index.
  void knn(const Eigen::Vector3d& query, int k, std::vector<int>& indices,
           std::vector<double>& distances) const;

  /// Indices with ||p - query|| <= radius, sorted ascending by index.
  std::vector<int> radius(const Eigen::Vector3d& query, double r) const;

 private:
  struct Node {
    int axis = -1;        // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into perm_
  };

  int build(int begin, int end);
  void search(int node, const Eigen::Vector3d& q, int k,
              std::vector<std::pair<double, int>>& heap) const;
  void collect(int node, const Eigen::Vector3d& q, double r2,
               std::vector<int>& out) const;

  Eigen::MatrixX3d pts_;
  std::vector<int> perm_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Two-level decomposition of a cloud: every dense point belongs to the
/// patch of its nearest superpoint (ties toward the lower superpoint index).
/// Superpoints whose patch came out empty are dropped and indices compacted.
struct SuperpointGraph {
  PointCloud dense_points;
  PointCloud superpoints;
  std::vector<int> patch_of;               // dense row -> superpoint row
  std::vector<std::vector<int>> patches;   // superpoint row -> dense rows
  Mat dense_features;                      // filled by compute_features
  Mat superpoint_features;
};

SuperpointGraph group_points(const PointCloud& dense,
                             const PointCloud& superpoints);

/// Full two-level hierarchy from a raw cloud: voxel filter at dense_voxel,
/// voxel filter of the result at super_voxel, then point-to-node grouping.
SuperpointGraph build_graph(const PointCloud& cloud, double dense_voxel,
                            double super_voxel);

// --- File formats ---------------------------------------------------------

/// Whitespace-separated ASCII "x y z" per line.
PointCloud read_xyz(const std::string& path);
void write_xyz(const std::string& path, const PointCloud& cloud);

/// Binary little-endian PLY; vertex x/y/z must be float32 properties.
PointCloud read_ply(const std::string& path);

/// Dispatches on extension: .xyz/.txt as ASCII, .ply as binary PLY.
PointCloud read_cloud(const std::string& path);

/// Transforms serialize as 16 whitespace-separated reals: the row-major
/// 4x4 homogeneous matrix, one transform per line.
std::string transform_to_line(const RigidTransform& t);
RigidTransform transform_from_line(const std::string& line);
void write_transform(const std::string& path, const RigidTransform& t);
RigidTransform read_transform(const std::string& path);

}  // namespace georeg
