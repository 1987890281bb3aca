#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <random>

#include "georeg/cloud.hpp"
#include "georeg/errors.hpp"
#include "georeg/features.hpp"
#include "georeg/weights_io.hpp"
#include "helpers.hpp"

using namespace georeg;
using testutil::rand_cloud;
using testutil::rand_rigid;

TEST_CASE("builtin descriptors are invariant under a rigid transform") {
  std::mt19937_64 rng(41);
  const PointCloud pts = rand_cloud(rng, 80, 1.0);
  const RigidTransform t = rand_rigid(rng, 4.0);
  const Mat a = point_descriptors(pts, 0.6);
  const Mat b = point_descriptors(apply_transform(pts, t), 0.6);
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == kDescriptorWidth);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("plane and corner patches disagree in the eigenvalue channels") {
  // A flat plane: one covariance eigenvalue vanishes.
  PointCloud plane(25, 3);
  int r = 0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) plane.row(r++) << 0.1 * i, 0.1 * j, 0.0;
  // A corner of three orthogonal faces: all eigenvalues comparable.
  PointCloud corner(27, 3);
  r = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      corner.row(r++) << 0.1 * i, 0.1 * j, 0.0;
      corner.row(r++) << 0.1 * i, 0.0, 0.1 * j + 0.1;
      corner.row(r++) << 0.0, 0.1 * i + 0.1, 0.1 * j + 0.1;
    }
  const Mat dp = point_descriptors(plane, 1.0);
  const Mat dc = point_descriptors(corner, 1.0);
  // Channels 8..10 are the descending eigenvalue ratios; the smallest one
  // is ~0 for the plane and clearly positive for the corner.
  CHECK(dp(12, 10) < 1e-9);
  CHECK(dc(0, 10) > 0.01);
}

TEST_CASE("descriptors of isolated points are all-zero rows") {
  PointCloud pts(2, 3);
  pts << 0, 0, 0, 100, 0, 0;
  const Mat d = point_descriptors(pts, 0.5);
  CHECK(d.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(d.row(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("compute_features fills both levels with matching row counts") {
  std::mt19937_64 rng(42);
  const PointCloud pts = rand_cloud(rng, 150, 1.0);
  SuperpointGraph g = build_graph(pts, 0.1, 0.5);
  FeatureProvider provider;
  provider.dense_lift = testutil::rand_mat(rng, kDescriptorWidth, 16);
  provider.super_lift = testutil::rand_mat(rng, kDescriptorWidth, 24);
  provider.dense_radius = 0.25;
  provider.super_radius = 1.25;
  compute_features(g, provider);
  CHECK(g.dense_features.rows() == g.dense_points.rows());
  CHECK(g.dense_features.cols() == 16);
  CHECK(g.superpoint_features.rows() == g.superpoints.rows());
  CHECK(g.superpoint_features.cols() == 24);
  CHECK(g.dense_features.allFinite());
  CHECK(g.superpoint_features.allFinite());
}

TEST_CASE("file-loaded features round-trip the weights format bit-exactly") {
  std::mt19937_64 rng(43);
  const PointCloud pts = rand_cloud(rng, 100, 1.0);
  SuperpointGraph g = build_graph(pts, 0.12, 0.5);
  const Mat dense = testutil::rand_mat(rng, g.dense_points.rows(), 8);
  const Mat super = testutil::rand_mat(rng, g.superpoints.rows(), 12);

  const std::string path = "/tmp/georeg_test_features.geow";
  write_weights(path, {make_entry("dense_features", dense),
                       make_entry("super_features", super)});
  const FeatureProvider provider = load_feature_provider(path);
  CHECK(provider.mode == FeatureMode::kFileLoaded);
  compute_features(g, provider);
  CHECK((g.dense_features - dense).cwiseAbs().maxCoeff() == 0.0);
  CHECK((g.superpoint_features - super).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("file-loaded row-count mismatch names the offending level") {
  std::mt19937_64 rng(44);
  const PointCloud pts = rand_cloud(rng, 100, 1.0);
  SuperpointGraph g = build_graph(pts, 0.12, 0.5);
  FeatureProvider provider;
  provider.mode = FeatureMode::kFileLoaded;
  provider.dense_loaded = Mat::Zero(g.dense_points.rows() + 3, 8);
  provider.super_loaded = Mat::Zero(g.superpoints.rows(), 8);
  try {
    compute_features(g, provider);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("dense") != std::string::npos);
  }
}

TEST_CASE("feature row order follows point order") {
  // Two well-separated clusters: descriptors of the far cluster's points
  // must land in the rows of those points.
  PointCloud pts(8, 3);
  for (int i = 0; i < 4; ++i) pts.row(i) << 0.05 * i, 0, 0;
  for (int i = 0; i < 4; ++i) pts.row(4 + i) << 50 + 0.2 * i, 0, 0;
  const Mat d = point_descriptors(pts, 0.8);
  // The two clusters have different spacings, so the histogram rows differ
  // between clusters but the pattern is shared within each cluster's core.
  CHECK((d.row(0) - d.row(4)).cwiseAbs().maxCoeff() > 1e-9);
}
