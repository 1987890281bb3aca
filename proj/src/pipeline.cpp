#include "georeg/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "georeg/attention.hpp"
#include "georeg/errors.hpp"
#include "georeg/features.hpp"

namespace georeg {

Estimator parse_estimator(const std::string& name) {
  if (name == "lgr") return Estimator::kLgr;
  if (name == "ransac") return Estimator::kRansac;
  if (name == "svd") return Estimator::kSvd;
  throw ConfigError("unknown estimator '" + name +
                    "' (expected lgr|ransac|svd)");
}

const char* estimator_name(Estimator e) {
  switch (e) {
    case Estimator::kLgr: return "lgr";
    case Estimator::kRansac: return "ransac";
    case Estimator::kSvd: return "svd";
  }
  return "?";
}

namespace {

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double out = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': bad real value '" + value +
                      "'");
  }
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int out = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': bad integer value '" +
                      value + "'");
  }
}

}  // namespace

void set_config_value(PipelineConfig& cfg, const std::string& key,
                      const std::string& value) {
  if (key == "mode") {
    try {
      cfg.model.mode = attention_mode_from_name(value);
    } catch (const Error&) {
      throw ConfigError("config key 'mode': bad value '" + value + "'");
    }
  } else if (key == "d_model") {
    cfg.model.d_model = parse_int(key, value);
  } else if (key == "heads") {
    cfg.model.heads = parse_int(key, value);
  } else if (key == "num_layers") {
    cfg.model.num_layers = parse_int(key, value);
  } else if (key == "dense_dim") {
    cfg.model.dense_dim = parse_int(key, value);
  } else if (key == "super_dim") {
    cfg.model.super_dim = parse_int(key, value);
  } else if (key == "sigma_dist") {
    cfg.model.sigma_dist = parse_real(key, value);
  } else if (key == "sigma_angle_deg") {
    cfg.model.sigma_angle_deg = parse_real(key, value);
  } else if (key == "angle_neighbors") {
    cfg.model.angle_neighbors = parse_int(key, value);
  } else if (key == "estimator") {
    try {
      cfg.estimator = parse_estimator(value);
    } catch (const ConfigError&) {
      throw ConfigError("config key 'estimator': bad value '" + value + "'");
    }
  } else if (key == "match_mode") {
    if (value == "topk") {
      cfg.match_mode = SuperMatchMode::kTopK;
    } else if (value == "threshold") {
      cfg.match_mode = SuperMatchMode::kThreshold;
    } else {
      throw ConfigError("config key 'match_mode': bad value '" + value + "'");
    }
  } else if (key == "nc") {
    cfg.num_correspondences = parse_int(key, value);
  } else if (key == "match_threshold") {
    cfg.match_threshold = parse_real(key, value);
  } else if (key == "k_mutual") {
    cfg.k_mutual = parse_int(key, value);
  } else if (key == "sinkhorn_iters") {
    cfg.sinkhorn_iters = parse_int(key, value);
  } else if (key == "dense_voxel") {
    cfg.dense_voxel = parse_real(key, value);
  } else if (key == "super_voxel") {
    cfg.super_voxel = parse_real(key, value);
  } else if (key == "dense_radius") {
    cfg.dense_radius = parse_real(key, value);
  } else if (key == "super_radius") {
    cfg.super_radius = parse_real(key, value);
  } else if (key == "tau_a") {
    cfg.pose.tau_a = parse_real(key, value);
  } else if (key == "refinement_rounds") {
    cfg.pose.refinement_rounds = parse_int(key, value);
  } else if (key == "min_local_corr") {
    cfg.pose.min_local_corr = parse_int(key, value);
  } else if (key == "ransac_iters") {
    cfg.pose.ransac_iters = parse_int(key, value);
  } else if (key == "svd_top") {
    cfg.svd_top = parse_int(key, value);
  } else if (key == "inlier_radius") {
    cfg.thresholds.inlier_radius = parse_real(key, value);
  } else if (key == "fmr_min_ir") {
    cfg.thresholds.fmr_min_ir = parse_real(key, value);
  } else if (key == "rmse_max") {
    cfg.thresholds.rmse_max = parse_real(key, value);
  } else if (key == "rre_max_deg") {
    cfg.thresholds.rre_max_deg = parse_real(key, value);
  } else if (key == "rte_max") {
    cfg.thresholds.rte_max = parse_real(key, value);
  } else if (key == "gt_radius") {
    cfg.thresholds.gt_radius = parse_real(key, value);
  } else if (key == "protocol") {
    if (value == "scene") {
      cfg.thresholds.protocol = RecallProtocol::kScene;
    } else if (value == "odometry") {
      cfg.thresholds.protocol = RecallProtocol::kOdometry;
    } else {
      throw ConfigError("config key 'protocol': bad value '" + value + "'");
    }
  } else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(
        std::strtoull(value.c_str(), nullptr, 10));
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void load_config_file(PipelineConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::size_t begin = line.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) continue;
    const std::size_t end = line.find_last_not_of(" \t\r\n");
    line = line.substr(begin, end - begin + 1);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key=value");
    auto trim = [](std::string s) {
      const std::size_t b = s.find_first_not_of(" \t");
      if (b == std::string::npos) return std::string();
      const std::size_t e = s.find_last_not_of(" \t");
      return s.substr(b, e - b + 1);
    };
    set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::string pair_digest(const PointCloud& p, const PointCloud& q) {
  // FNV-1a over the raw coordinate bytes of both clouds.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const PointCloud& c) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(c.data());
    const std::size_t len = static_cast<std::size_t>(c.size()) * sizeof(double);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  mix(p);
  mix(q);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "p%ldq%ld-%016llx",
                static_cast<long>(p.rows()), static_cast<long>(q.rows()),
                static_cast<unsigned long long>(h));
  return buf;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Runs one stage, converting any failure into a PipelineError that names
// the stage and the offending pair.
template <typename Fn>
void stage(const char* name, const std::string& digest, Fn&& fn) {
  try {
    fn();
  } catch (const PipelineError&) {
    throw;  // already annotated by an inner stage
  } catch (const std::exception& e) {
    throw PipelineError(name, digest, e.what());
  }
}

}  // namespace

PipelineResult run_pipeline(const PointCloud& p, const PointCloud& q,
                            const Model& model, const PipelineConfig& cfg,
                            const RigidTransform* t_gt,
                            const PointCloud* clean_p,
                            const PointCloud* clean_q) {
  const std::string digest = pair_digest(p, q);
  PipelineResult result;
  const Clock::time_point model_start = Clock::now();

  stage("downsample", digest, [&] {
    result.graph_p = build_graph(p, cfg.dense_voxel, cfg.super_voxel);
    result.graph_q = build_graph(q, cfg.dense_voxel, cfg.super_voxel);
  });

  Mat desc_dense_p, desc_super_p, desc_dense_q, desc_super_q;
  stage("features", digest, [&] {
    desc_dense_p = point_descriptors(result.graph_p.dense_points,
                                     cfg.dense_radius);
    desc_super_p = point_descriptors(result.graph_p.superpoints,
                                     cfg.super_radius);
    desc_dense_q = point_descriptors(result.graph_q.dense_points,
                                     cfg.dense_radius);
    desc_super_q = point_descriptors(result.graph_q.superpoints,
                                     cfg.super_radius);
  });

  stage("transformer", digest, [&] {
    // Detached bind: values are computed eagerly, nothing is recorded.
    const BoundModel bm = bind_model(nullptr, model);
    const Var super_p = matmul(constant(desc_super_p), bm.super_lift);
    const Var super_q = matmul(constant(desc_super_q), bm.super_lift);
    const auto [hp, hq] =
        run_transformer(bm, result.graph_p.superpoints, super_p,
                        result.graph_q.superpoints, super_q);
    result.graph_p.superpoint_features = hp.v;
    result.graph_q.superpoint_features = hq.v;
    result.graph_p.dense_features =
        matmul(constant(desc_dense_p), bm.dense_lift).v;
    result.graph_q.dense_features =
        matmul(constant(desc_dense_q), bm.dense_lift).v;
  });

  stage("superpoint_match", digest, [&] {
    result.supermatches = superpoint_match(
        result.graph_p.superpoint_features, result.graph_q.superpoint_features,
        cfg.num_correspondences, cfg.match_mode, cfg.match_threshold);
  });

  stage("point_match", digest, [&] {
    result.points =
        point_match(result.graph_p, result.graph_q, result.supermatches,
                    cfg.k_mutual, cfg.sinkhorn_iters, model.dustbin(0, 0));
  });
  result.model_seconds = seconds_since(model_start);

  const Clock::time_point pose_start = Clock::now();
  stage("estimate", digest, [&] {
    switch (cfg.estimator) {
      case Estimator::kLgr: {
        const LgrResult lgr =
            local_to_global(result.graph_p.dense_points,
                            result.graph_q.dense_points, result.points,
                            cfg.pose);
        result.transform = lgr.transform;
        result.lgr_rounds = lgr.inliers_per_round;
        break;
      }
      case Estimator::kRansac:
        result.transform =
            ransac_estimate(result.graph_p.dense_points,
                            result.graph_q.dense_points, result.points,
                            cfg.pose, cfg.seed);
        break;
      case Estimator::kSvd: {
        // Highest-confidence correspondences, weighted by their scores.
        std::vector<int> order(static_cast<std::size_t>(result.points.size()));
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
          const double sa = result.points.scores[static_cast<std::size_t>(a)];
          const double sb = result.points.scores[static_cast<std::size_t>(b)];
          if (sa != sb) return sa > sb;
          return result.points.pairs[static_cast<std::size_t>(a)] <
                 result.points.pairs[static_cast<std::size_t>(b)];
        });
        const int keep =
            std::min<int>(cfg.svd_top, static_cast<int>(order.size()));
        Mat pm(keep, 3), qm(keep, 3);
        Eigen::VectorXd w(keep);
        for (int r = 0; r < keep; ++r) {
          const auto& [ip, iq] =
              result.points.pairs[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])];
          pm.row(r) = result.graph_p.dense_points.row(ip);
          qm.row(r) = result.graph_q.dense_points.row(iq);
          w(r) = result.points.scores[static_cast<std::size_t>(
              order[static_cast<std::size_t>(r)])];
        }
        result.transform = weighted_svd(pm, qm, w);
        break;
      }
    }
  });
  result.pose_seconds = seconds_since(pose_start);
  result.total_seconds = result.model_seconds + result.pose_seconds;

  stage("metrics", digest, [&] {
    result.metrics = compute_metrics(result.points, result.supermatches,
                                     result.transform, t_gt, result.graph_p,
                                     result.graph_q, cfg.thresholds, clean_p,
                                     clean_q);
  });
  return result;
}

// --- Artifacts ----------------------------------------------------------------

namespace {

// Absent metrics are omitted from the object entirely rather than written
// as null, so consumers can test field presence.
void json_field(std::ostringstream& os, const char* name,
                const std::optional<double>& value, bool& first) {
  if (!value.has_value()) return;
  if (!first) os << ",";
  first = false;
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", *value);
  os << "\"" << name << "\":" << buf;
}

void json_field(std::ostringstream& os, const char* name,
                const std::optional<bool>& value, bool& first) {
  if (!value.has_value()) return;
  if (!first) os << ",";
  first = false;
  os << "\"" << name << "\":" << (*value ? "true" : "false");
}

}  // namespace

std::string metrics_json(const MetricsReport& report) {
  std::ostringstream os;
  os << "{";
  bool first = true;
  json_field(os, "ir", report.ir, first);
  json_field(os, "fmr", report.fmr, first);
  json_field(os, "rr", report.rr, first);
  json_field(os, "pir", report.pir, first);
  json_field(os, "rmse", report.rmse, first);
  json_field(os, "rre_deg", report.rre_deg, first);
  json_field(os, "rte", report.rte, first);
  json_field(os, "chamfer", report.chamfer, first);
  const MetricThresholds& t = report.thresholds;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "\"thresholds\":{\"inlier_radius\":%g,\"fmr_min_ir\":%g,"
                "\"rmse_max\":%g,\"rre_max_deg\":%g,\"rte_max\":%g,"
                "\"gt_radius\":%g,\"protocol\":\"%s\"}",
                t.inlier_radius, t.fmr_min_ir, t.rmse_max, t.rre_max_deg,
                t.rte_max, t.gt_radius,
                t.protocol == RecallProtocol::kScene ? "scene" : "odometry");
  if (!first) os << ",";
  os << buf << "}";
  return os.str();
}

void write_metrics_json(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << metrics_json(report) << "\n";
}

void write_result_csv(const PipelineResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "level,ip,iq,score,group\n";
  append_csv_rows(out, result.supermatches);
  append_csv_rows(out, result.points);
}

void write_timings_json(const PipelineResult& result,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "{\"model_seconds\":%.6f,\"pose_seconds\":%.6f,"
                "\"total_seconds\":%.6f}\n",
                result.model_seconds, result.pose_seconds,
                result.total_seconds);
  out << buf;
}

}  // namespace georeg
