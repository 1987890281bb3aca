#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <string>

#include "georeg/errors.hpp"
#include "georeg/features.hpp"
#include "georeg/metrics.hpp"
#include "georeg/pipeline.hpp"
#include "georeg/synth.hpp"
#include "georeg/training.hpp"
#include "helpers.hpp"
#include "model_fd.hpp"

using namespace georeg;
using testutil::rand_cloud;
using testutil::rand_rigid;

namespace {

Eigen::Matrix3d rot_z(double deg) {
  return Eigen::AngleAxisd(deg * M_PI / 180.0, Eigen::Vector3d::UnitZ())
      .toRotationMatrix();
}

// Nearest-neighbor gap from every row of a to b.
double max_nn_gap(const PointCloud& a, const PointCloud& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      best = std::min(best, (a.row(i) - b.row(j)).norm());
    worst = std::max(worst, best);
  }
  return worst;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in),
          std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("shape sampling is seeded and sized") {
  const PointCloud a = make_shape(ShapeKind::kComposite, 500, 42);
  const PointCloud b = make_shape(ShapeKind::kComposite, 500, 42);
  const PointCloud c = make_shape(ShapeKind::kComposite, 500, 43);
  CHECK(a.rows() == 500);
  CHECK((a - b).norm() == 0.0);
  CHECK((a - c).norm() > 0.0);
  for (const ShapeKind kind : {ShapeKind::kSphere, ShapeKind::kBox,
                               ShapeKind::kRoom}) {
    const PointCloud s = make_shape(kind, 200, 7);
    CHECK(s.rows() == 200);
    CHECK(s.allFinite());
  }
  CHECK(parse_shape_kind("composite") == ShapeKind::kComposite);
  CHECK(std::string(shape_kind_name(ShapeKind::kRoom)) == "room");
  CHECK_THROWS_AS(parse_shape_kind("dodecahedron"), ConfigError);
}

TEST_CASE("a full-overlap noise-free pair is exactly recoverable") {
  const PointCloud shape = make_shape(ShapeKind::kComposite, 300, 3);
  SynthConfig cfg;
  cfg.keep_ratio = 1.0;
  cfg.max_rotation_deg = 0.0;
  cfg.noise_sigma = 0.0;
  cfg.sample_count = 300;
  cfg.seed = 9;
  const SynthPair pair = make_pair(shape, cfg);
  CHECK(pair.p.rows() == 300);
  CHECK(pair.q.rows() == 300);
  // With zero max rotation the sampled pose is a pure translation.
  CHECK((pair.t_gt.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  // The transformed source coincides with the target as a point set.
  CHECK(max_nn_gap(apply_transform(pair.p, pair.t_gt), pair.q) < 1e-12);
  CHECK(max_nn_gap(pair.q, apply_transform(pair.p, pair.t_gt)) < 1e-12);
}

TEST_CASE("pair generation honors crop, subsample, seed and noise clip") {
  const PointCloud shape = make_shape(ShapeKind::kComposite, 1000, 5);
  SynthConfig cfg;
  cfg.keep_ratio = 0.7;
  cfg.sample_count = 300;
  cfg.noise_sigma = 0.0;
  cfg.seed = 4;
  const SynthPair a = make_pair(shape, cfg);
  CHECK(a.p.rows() == 300);
  CHECK(a.q.rows() == 300);
  // Clean clouds are the complete model in each frame.
  CHECK(a.clean_p.rows() == 1000);
  CHECK(a.clean_q.rows() == 1000);
  CHECK(max_nn_gap(apply_transform(a.clean_p, a.t_gt), a.clean_q) < 1e-12);
  // Every sampled point comes from the clean cloud of its side.
  CHECK(max_nn_gap(a.p, a.clean_p) < 1e-12);

  const SynthPair b = make_pair(shape, cfg);
  CHECK((a.p - b.p).norm() == 0.0);
  CHECK((a.q - b.q).norm() == 0.0);
  CHECK((a.t_gt.rotation - b.t_gt.rotation).norm() == 0.0);
  cfg.seed = 5;
  const SynthPair c = make_pair(shape, cfg);
  CHECK((a.p - c.p).norm() > 0.0);

  // Jitter is clipped per coordinate.
  cfg.seed = 4;
  cfg.noise_sigma = 0.5;
  cfg.noise_clip = 0.01;
  const SynthPair noisy = make_pair(shape, cfg);
  CHECK(max_nn_gap(noisy.p, noisy.clean_p) <=
        std::sqrt(3.0) * 0.01 + 1e-12);
}

TEST_CASE("rotation and translation errors have closed-form values") {
  CHECK(rre_deg(Eigen::Matrix3d::Identity(), Eigen::Matrix3d::Identity()) ==
        doctest::Approx(0.0));
  CHECK(rre_deg(Eigen::Matrix3d::Identity(), rot_z(90.0)) ==
        doctest::Approx(90.0).epsilon(1e-9));
  CHECK(rre_deg(rot_z(30.0), rot_z(75.0)) == doctest::Approx(45.0));
  CHECK(rte(Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(3, 4, 0)) ==
        doctest::Approx(5.0));
}

TEST_CASE("inlier ratio counts strict sub-threshold residuals") {
  PointCloud p(4, 3), q(4, 3);
  p.setZero();
  q.setZero();
  q(3, 0) = 0.5;  // residual 0.5 >= 0.1: outlier
  CorrespondenceSet corr;
  corr.level = CorrLevel::kPoint;
  for (int i = 0; i < 4; ++i) {
    corr.pairs.emplace_back(i, i);
    corr.scores.push_back(1.0);
  }
  CHECK(inlier_ratio(p, q, corr, RigidTransform{}, 0.1) ==
        doctest::Approx(0.75));
  CHECK(inlier_ratio(p, q, corr, RigidTransform{}, 0.5) ==
        doctest::Approx(0.75));  // strict comparison at the boundary
  CHECK(inlier_ratio(p, q, corr, RigidTransform{}, 0.51) ==
        doctest::Approx(1.0));
}

TEST_CASE("metric helpers agree with independent loops") {
  std::mt19937_64 rng(120);
  const PointCloud p = rand_cloud(rng, 30, 1.0);
  const RigidTransform gt = rand_rigid(rng, 1.0);
  PointCloud q = apply_transform(p, gt);
  q += 0.03 * rand_cloud(rng, 30, 1.0);
  CorrespondenceSet corr;
  corr.level = CorrLevel::kPoint;
  for (int i = 0; i < 30; ++i) {
    corr.pairs.emplace_back(i, (i + 1) % 30);
    corr.scores.push_back(0.5);
  }

  const double radius = 0.25;
  int manual = 0;
  for (int i = 0; i < 30; ++i) {
    const Eigen::RowVector3d moved =
        (gt.rotation * p.row(i).transpose() + gt.translation).transpose();
    if ((moved - q.row((i + 1) % 30)).norm() < radius) ++manual;
  }
  CHECK(inlier_ratio(p, q, corr, gt, radius) ==
        doctest::Approx(manual / 30.0));

  GtPointMatches gtm;
  for (int i = 0; i < 30; ++i) gtm.matches.emplace_back(i, i);
  const RigidTransform est = rand_rigid(rng, 1.0);
  double sq = 0.0;
  for (int i = 0; i < 30; ++i) {
    const Eigen::RowVector3d moved =
        (est.rotation * p.row(i).transpose() + est.translation).transpose();
    sq += (moved - q.row(i)).squaredNorm();
  }
  CHECK(correspondence_rmse(p, q, gtm, est) ==
        doctest::Approx(std::sqrt(sq / 30.0)).epsilon(1e-12));

  // Chamfer: squared nearest-neighbor means, both directions, vs clean sets.
  const PointCloud clean_p = rand_cloud(rng, 25, 1.0);
  const PointCloud clean_q = rand_cloud(rng, 27, 1.0);
  auto mean_sq_nn = [](const PointCloud& a, const PointCloud& b) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < b.rows(); ++j)
        best = std::min(best, (a.row(i) - b.row(j)).squaredNorm());
      total += best;
    }
    return total / static_cast<double>(a.rows());
  };
  const double expect =
      mean_sq_nn(apply_transform(p, est), clean_q) +
      mean_sq_nn(q, apply_transform(clean_p, est));
  CHECK(modified_chamfer(p, q, clean_p, clean_q, est) ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("patch inlier ratio counts genuinely overlapping matches") {
  OverlapTable table;
  table.o = Mat::Zero(2, 2);
  table.o(0, 0) = 0.4;
  table.o(1, 1) = 0.05;  // small but nonzero still counts
  CorrespondenceSet sm;
  sm.level = CorrLevel::kSuperpoint;
  sm.pairs = {{0, 0}, {0, 1}, {1, 1}, {1, 0}};
  sm.scores = {1, 1, 1, 1};
  CHECK(patch_inlier_ratio(sm, table) == doctest::Approx(0.5));
}

TEST_CASE("compute_metrics on a perfectly registered pair") {
  const PointCloud shape = make_shape(ShapeKind::kComposite, 600, 8);
  SynthConfig scfg;
  scfg.sample_count = 350;
  scfg.noise_sigma = 0.0;
  scfg.seed = 2;
  const SynthPair pair = make_pair(shape, scfg);
  SuperpointGraph gp = build_graph(pair.p, 0.06, 0.3);
  SuperpointGraph gq = build_graph(pair.q, 0.06, 0.3);

  // Ground-truth correspondences from mutual nearest neighbors.
  const GtPointMatches gtm = make_gt_point_matches(
      gp.dense_points, gq.dense_points, pair.t_gt, 0.1);
  REQUIRE(gtm.matches.size() >= 10);
  CorrespondenceSet corr;
  corr.level = CorrLevel::kPoint;
  for (const auto& [x, y] : gtm.matches) {
    corr.pairs.emplace_back(x, y);
    corr.scores.push_back(1.0);
  }
  const OverlapTable table = compute_overlap(gp, gq, pair.t_gt, 0.1);
  CorrespondenceSet sm;
  sm.level = CorrLevel::kSuperpoint;
  for (const auto& [i, j] : table.positives) {
    sm.pairs.emplace_back(i, j);
    sm.scores.push_back(1.0);
  }
  REQUIRE(sm.size() >= 1);

  MetricThresholds thr;
  const MetricsReport report =
      compute_metrics(corr, sm, pair.t_gt, &pair.t_gt, gp, gq, thr,
                      &pair.clean_p, &pair.clean_q);
  REQUIRE(report.ir.has_value());
  CHECK(*report.ir > 0.95);
  CHECK(*report.fmr);
  CHECK(*report.pir == doctest::Approx(1.0));
  CHECK(*report.rre_deg == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(*report.rte == doctest::Approx(0.0).epsilon(1e-9));
  REQUIRE(report.rmse.has_value());
  CHECK(*report.rmse < 0.05);
  CHECK(*report.rr);
  REQUIRE(report.chamfer.has_value());
  CHECK(*report.chamfer < 0.01);

  // Without ground truth every field is absent.
  const MetricsReport blind =
      compute_metrics(corr, sm, pair.t_gt, nullptr, gp, gq, thr);
  CHECK(!blind.ir.has_value());
  CHECK(!blind.rr.has_value());
  CHECK(!blind.rmse.has_value());
  CHECK(!blind.chamfer.has_value());

  // Odometry protocol judges recall from pose errors alone.
  MetricThresholds odo = thr;
  odo.protocol = RecallProtocol::kOdometry;
  const MetricsReport odo_report =
      compute_metrics(corr, sm, pair.t_gt, &pair.t_gt, gp, gq, odo);
  REQUIRE(odo_report.rr.has_value());
  CHECK(*odo_report.rr);
  CHECK(!odo_report.rmse.has_value());
}

TEST_CASE("metrics and timings JSON are well formed") {
  MetricsReport report;
  report.ir = 0.75;
  report.fmr = true;
  report.rr = false;
  report.rre_deg = 12.5;
  const std::string text = metrics_json(report);
  const nlohmann::json parsed = nlohmann::json::parse(text);
  CHECK(parsed["ir"].get<double>() == doctest::Approx(0.75));
  CHECK(parsed["fmr"].get<bool>());
  CHECK_FALSE(parsed["rr"].get<bool>());
  CHECK(parsed["rre_deg"].get<double>() == doctest::Approx(12.5));
  CHECK(!parsed.contains("rte"));
  CHECK(!parsed.contains("chamfer"));
  CHECK(parsed["thresholds"]["inlier_radius"].get<double>() ==
        doctest::Approx(0.1));
  CHECK(parsed["thresholds"]["protocol"].get<std::string>() == "scene");
  // Serialization is deterministic.
  CHECK(metrics_json(report) == text);

  PipelineResult result;
  result.model_seconds = 0.25;
  result.pose_seconds = 0.5;
  result.total_seconds = 0.75;
  const std::string tpath = "/tmp/georeg_test_timings.json";
  write_timings_json(result, tpath);
  const nlohmann::json tj = nlohmann::json::parse(slurp(tpath));
  CHECK(tj["model_seconds"].get<double>() == doctest::Approx(0.25));
  CHECK(tj["pose_seconds"].get<double>() == doctest::Approx(0.5));
  CHECK(tj["total_seconds"].get<double>() == doctest::Approx(0.75));
  std::remove(tpath.c_str());
}

TEST_CASE("config parsing: overrides, files, and rejection of bad input") {
  PipelineConfig cfg;
  set_config_value(cfg, "dense_voxel", "0.1");
  set_config_value(cfg, "estimator", "ransac");
  set_config_value(cfg, "match_mode", "threshold");
  set_config_value(cfg, "nc", "64");
  set_config_value(cfg, "mode", "shared");
  set_config_value(cfg, "protocol", "odometry");
  CHECK(cfg.dense_voxel == doctest::Approx(0.1));
  CHECK(cfg.estimator == Estimator::kRansac);
  CHECK(cfg.match_mode == SuperMatchMode::kThreshold);
  CHECK(cfg.num_correspondences == 64);
  CHECK(cfg.model.mode == AttentionMode::kShared);
  CHECK(cfg.thresholds.protocol == RecallProtocol::kOdometry);

  CHECK_THROWS_AS(set_config_value(cfg, "no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(set_config_value(cfg, "nc", "many"), ConfigError);
  CHECK_THROWS_AS(set_config_value(cfg, "estimator", "magic"), ConfigError);

  const std::string path = "/tmp/georeg_test_config.cfg";
  {
    std::ofstream out(path);
    out << "# comment line\n\nsuper_voxel = 0.4\nk_mutual=5\n";
  }
  PipelineConfig from_file;
  load_config_file(from_file, path);
  CHECK(from_file.super_voxel == doctest::Approx(0.4));
  CHECK(from_file.k_mutual == 5);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_config_file(from_file, "/tmp/georeg_missing.cfg"),
                  DataError);

  CHECK(parse_estimator("lgr") == Estimator::kLgr);
  CHECK(parse_estimator("svd") == Estimator::kSvd);
  CHECK(std::string(estimator_name(Estimator::kRansac)) == "ransac");
}

TEST_CASE("pair digests identify inputs") {
  std::mt19937_64 rng(121);
  const PointCloud a = rand_cloud(rng, 10, 1.0);
  const PointCloud b = rand_cloud(rng, 10, 1.0);
  CHECK(pair_digest(a, b) == pair_digest(a, b));
  CHECK(pair_digest(a, b) != pair_digest(b, a));
  CHECK(pair_digest(a, b).find("p10q10") == 0);
}

TEST_CASE("end-to-end registration of an easy pair with a hand-set model") {
  // A clean full-overlap pair with the dense voxel below the point spacing:
  // the per-point invariant descriptors are then identical across frames, so
  // a model whose dense projection passes them through sharply produces
  // confident, mostly-correct point matches without any training (the random
  // superpoint transformer is kept as-is; its invariant inputs already line
  // up corresponding regions).
  const PointCloud shape = make_shape(ShapeKind::kComposite, 800, 31);
  SynthConfig scfg;
  scfg.keep_ratio = 1.0;
  scfg.max_rotation_deg = 45.0;
  scfg.noise_sigma = 0.0;
  scfg.sample_count = 800;
  scfg.seed = 6;
  const SynthPair pair = make_pair(shape, scfg);

  PipelineConfig cfg;
  cfg.model = testutil::tiny_config(AttentionMode::kStandard);
  cfg.model.d_model = 16;
  cfg.model.num_layers = 1;
  cfg.model.sigma_dist = 0.45;
  cfg.model.dense_dim = kDescriptorWidth;
  cfg.dense_voxel = 0.01;
  cfg.super_voxel = 0.45;
  cfg.dense_radius = 0.15;
  cfg.super_radius = 1.125;
  cfg.num_correspondences = 48;
  cfg.k_mutual = 1;
  cfg.pose.tau_a = 0.1;
  Model model = init_model(cfg.model, 12);
  model.dense_lift = 8.0 * Mat::Identity(kDescriptorWidth, kDescriptorWidth);

  const PipelineResult res = run_pipeline(pair.p, pair.q, model, cfg,
                                          &pair.t_gt, &pair.clean_p,
                                          &pair.clean_q);
  REQUIRE(res.metrics.rre_deg.has_value());
  CHECK(*res.metrics.rre_deg < 2.0);
  CHECK(*res.metrics.rte < 0.05);
  CHECK(*res.metrics.ir > 0.2);
  CHECK(*res.metrics.pir > 0.5);
  CHECK(*res.metrics.rr);
  REQUIRE(res.lgr_rounds.size() ==
          static_cast<std::size_t>(cfg.pose.refinement_rounds) + 1);
  CHECK(res.total_seconds ==
        doctest::Approx(res.model_seconds + res.pose_seconds));
  CHECK(res.model_seconds >= 0.0);
  CHECK(res.pose_seconds >= 0.0);

  // Same pair through the other estimators.  The unweighted svd refit is
  // not outlier-robust, so only its mechanics are asserted.
  PipelineConfig svd_cfg = cfg;
  svd_cfg.estimator = Estimator::kSvd;
  const PipelineResult svd_res = run_pipeline(pair.p, pair.q, model, svd_cfg,
                                              &pair.t_gt);
  CHECK(svd_res.metrics.rre_deg.has_value());
  CHECK(svd_res.lgr_rounds.empty());
  CHECK((svd_res.transform.rotation.transpose() * svd_res.transform.rotation -
         Eigen::Matrix3d::Identity())
            .cwiseAbs()
            .maxCoeff() < 1e-9);

  PipelineConfig ransac_cfg = cfg;
  ransac_cfg.estimator = Estimator::kRansac;
  ransac_cfg.pose.ransac_iters = 2000;
  const PipelineResult rres = run_pipeline(pair.p, pair.q, model, ransac_cfg,
                                           &pair.t_gt);
  CHECK(*rres.metrics.rre_deg < 5.0);

  // Artifact writers round-trip through the filesystem.
  const std::string mpath = "/tmp/georeg_test_metrics.json";
  const std::string cpath = "/tmp/georeg_test_corr.csv";
  write_metrics_json(res.metrics, mpath);
  write_result_csv(res, cpath);
  const nlohmann::json mj = nlohmann::json::parse(slurp(mpath));
  CHECK(mj["ir"].get<double>() == doctest::Approx(*res.metrics.ir));
  const std::string csv = slurp(cpath);
  CHECK(csv.rfind("level,ip,iq,score,group\n", 0) == 0);
  CHECK(csv.find("superpoint,") != std::string::npos);
  CHECK(csv.find("point,") != std::string::npos);
  std::remove(mpath.c_str());
  std::remove(cpath.c_str());
}

TEST_CASE("estimator failures surface as staged pipeline errors") {
  // A strictly collinear scene defeats every candidate solve: each group's
  // cross-covariance is rank deficient, so the estimate stage reports the
  // failure with the pair digest attached.
  PointCloud line(40, 3);
  for (int i = 0; i < 40; ++i) line.row(i) << 0.05 * i, 0.0, 0.0;
  PipelineConfig cfg;
  cfg.model = testutil::tiny_config(AttentionMode::kStandard);
  cfg.model.angle_neighbors = 2;
  cfg.dense_voxel = 0.05;
  cfg.super_voxel = 0.4;
  cfg.dense_radius = 0.12;
  cfg.super_radius = 0.8;
  cfg.num_correspondences = 16;
  const Model model = init_model(cfg.model, 8);
  try {
    run_pipeline(line, line, model, cfg);
    FAIL("expected PipelineError");
  } catch (const PipelineError& e) {
    CHECK(e.stage == "estimate");
    CHECK(!e.digest.empty());
    CHECK(std::string(e.what()).find("estimate") != std::string::npos);
  }
}
