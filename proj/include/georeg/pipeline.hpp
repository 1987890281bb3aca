#pragma once

// End-to-end inference: configuration, the staged forward pass
// (downsample -> group -> features -> transformer -> superpoint match ->
// point match -> estimator -> metrics) and artifact serialization.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "georeg/matching.hpp"
#include "georeg/metrics.hpp"
#include "georeg/model.hpp"
#include "georeg/registration.hpp"

namespace georeg {

enum class Estimator { kLgr, kRansac, kSvd };

Estimator parse_estimator(const std::string& name);
const char* estimator_name(Estimator e);

struct PipelineConfig {
  ModelConfig model;             // used when a model is created from scratch
  Estimator estimator = Estimator::kLgr;
  SuperMatchMode match_mode = SuperMatchMode::kTopK;
  int num_correspondences = 256;  // N_c for top-k superpoint matching
  double match_threshold = 0.75;  // feature distance bound, threshold mode
  int k_mutual = 3;
  int sinkhorn_iters = 100;
  double dense_voxel = 0.05;
  double super_voxel = 0.2;
  double dense_radius = 0.125;  // descriptor neighborhood, dense level
  double super_radius = 0.5;    // descriptor neighborhood, superpoint level
  EstimatorConfig pose;         // tau_a / refinement rounds / RANSAC budget
  int svd_top = 250;            // correspondences kept by the svd estimator
  MetricThresholds thresholds;
  std::uint64_t seed = 0;
};

// Applies one "key=value" setting; unknown keys or unparsable values raise
// ConfigError.  Shared by the config-file reader and CLI overrides so both
// accept the same vocabulary.
void set_config_value(PipelineConfig& cfg, const std::string& key,
                      const std::string& value);

// Flat key=value file; '#' starts a comment, blank lines are skipped.
// Values land on top of the defaults already in cfg (call order implements
// the CLI > file > defaults precedence).
void load_config_file(PipelineConfig& cfg, const std::string& path);

// Short stable fingerprint of an input pair, quoted by stage errors.
std::string pair_digest(const PointCloud& p, const PointCloud& q);

struct PipelineResult {
  SuperpointGraph graph_p;
  SuperpointGraph graph_q;
  CorrespondenceSet supermatches;
  CorrespondenceSet points;
  RigidTransform transform;
  std::vector<int> lgr_rounds;  // inlier trace, LGR estimator only
  MetricsReport metrics;
  double model_seconds = 0.0;  // everything up to and including point match
  double pose_seconds = 0.0;   // the estimator
  double total_seconds = 0.0;
};

// Runs the full pipeline on one pair.  t_gt / clean_p / clean_q are optional
// (metrics degrade gracefully without them).  Any stage failure is rethrown
// as PipelineError carrying the stage name and the pair digest.
PipelineResult run_pipeline(const PointCloud& p, const PointCloud& q,
                            const Model& model, const PipelineConfig& cfg,
                            const RigidTransform* t_gt = nullptr,
                            const PointCloud* clean_p = nullptr,
                            const PointCloud* clean_q = nullptr);

// --- Artifacts --------------------------------------------------------------

std::string metrics_json(const MetricsReport& report);
void write_metrics_json(const MetricsReport& report, const std::string& path);

// Both correspondence levels in one CSV (superpoint rows first).
void write_result_csv(const PipelineResult& result, const std::string& path);

void write_timings_json(const PipelineResult& result, const std::string& path);

}  // namespace georeg
