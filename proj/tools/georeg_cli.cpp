// Command-line front end: synthetic pair generation, single-pair
// registration, batch benchmarking, toy training and weights inspection.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "georeg/attention.hpp"
#include "georeg/errors.hpp"
#include "georeg/features.hpp"
#include "georeg/matching.hpp"
#include "georeg/metrics.hpp"
#include "georeg/model.hpp"
#include "georeg/pipeline.hpp"
#include "georeg/registration.hpp"
#include "georeg/synth.hpp"
#include "georeg/training.hpp"
#include "georeg/weights_io.hpp"

namespace fs = std::filesystem;
using namespace georeg;

namespace {

// Options shared by the pipeline-driving subcommands; CLI values are applied
// after the config file so the precedence is CLI > file > defaults.
struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;  // raw key=value settings
  std::optional<std::uint64_t> seed;
  std::optional<std::string> estimator;
  std::optional<std::string> match_mode;
  std::optional<int> nc;
  std::string out_dir = ".";
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "key=value config file");
  cmd->add_option("--set", opts.overrides,
                  "extra key=value override (repeatable)");
  cmd->add_option("--seed", opts.seed, "master random seed");
  cmd->add_option("--estimator", opts.estimator, "pose estimator")
      ->check(CLI::IsMember({"lgr", "ransac", "svd"}));
  cmd->add_option("--mode", opts.match_mode, "superpoint match mode")
      ->check(CLI::IsMember({"topk", "threshold"}));
  cmd->add_option("--nc", opts.nc, "superpoint correspondence budget N_c");
  cmd->add_option("--out-dir", opts.out_dir, "output directory");
}

PipelineConfig build_config(const CommonOpts& opts) {
  PipelineConfig cfg;
  if (!opts.config_path.empty()) load_config_file(cfg, opts.config_path);
  for (const std::string& kv : opts.overrides) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.estimator) set_config_value(cfg, "estimator", *opts.estimator);
  if (opts.match_mode) set_config_value(cfg, "match_mode", *opts.match_mode);
  if (opts.nc) set_config_value(cfg, "nc", std::to_string(*opts.nc));
  return cfg;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

// Deterministic per-pair seeds derived from the master seed.
std::uint64_t derived_seed(std::uint64_t master, std::uint64_t salt) {
  std::uint64_t x = master + 0x9e3779b97f4a7c15ull * (salt + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  return x;
}

struct SynthOpts {
  std::string shape = "composite";
  int pairs = 1;
  double keep_ratio = 0.7;
  double max_rotation = 45.0;
  double noise_sigma = 0.01;
  int samples = 717;
  int model_points = 4096;
};

// Registers the generation parameters shared by synth/bench/train; the
// pair-count flag stays subcommand-specific (each gives it its own meaning).
void add_synth(CLI::App* cmd, SynthOpts& opts) {
  cmd->add_option("--shape", opts.shape, "sphere|box|composite|room")
      ->check(CLI::IsMember({"sphere", "box", "composite", "room"}));
  cmd->add_option("--keep-ratio", opts.keep_ratio, "crop keep fraction p");
  cmd->add_option("--max-rotation", opts.max_rotation,
                  "max pose rotation (degrees)");
  cmd->add_option("--noise-sigma", opts.noise_sigma, "jitter sigma (0 = off)");
  cmd->add_option("--samples", opts.samples, "points kept per cloud");
  cmd->add_option("--model-points", opts.model_points,
                  "points sampled on the complete shape");
}

SynthPair generate_pair(const SynthOpts& opts, std::uint64_t master,
                        int index) {
  const PointCloud shape =
      make_shape(parse_shape_kind(opts.shape), opts.model_points,
                 derived_seed(master, 2 * static_cast<std::uint64_t>(index)));
  SynthConfig cfg;
  cfg.keep_ratio = opts.keep_ratio;
  cfg.max_rotation_deg = opts.max_rotation;
  cfg.noise_sigma = opts.noise_sigma;
  cfg.sample_count = opts.samples;
  cfg.seed = derived_seed(master, 2 * static_cast<std::uint64_t>(index) + 1);
  return make_pair(shape, cfg);
}

Model make_or_load_model(const std::string& weights_path,
                         const PipelineConfig& cfg) {
  if (!weights_path.empty()) return load_model(weights_path);
  return init_model(cfg.model, cfg.seed);
}

void write_pair_artifacts(const PipelineResult& result,
                          const std::string& dir) {
  ensure_dir(dir);
  write_metrics_json(result.metrics, dir + "/metrics.json");
  write_result_csv(result, dir + "/corr.csv");
  write_transform(dir + "/pose.txt", result.transform);
  write_timings_json(result, dir + "/timings.json");
}

void print_summary(const PipelineResult& r) {
  std::printf("superpoint matches: %d, point matches: %d\n",
              r.supermatches.size(), r.points.size());
  if (r.metrics.ir)
    std::printf("IR %.3f  PIR %.3f  RRE %.3f deg  RTE %.4f  RR %s\n",
                *r.metrics.ir, r.metrics.pir.value_or(0.0),
                r.metrics.rre_deg.value_or(0.0), r.metrics.rte.value_or(0.0),
                r.metrics.rr.value_or(false) ? "yes" : "no");
  std::printf("model %.3fs  pose %.3fs  total %.3fs\n", r.model_seconds,
              r.pose_seconds, r.total_seconds);
}

// --- subcommand: synth ------------------------------------------------------

int run_synth(const CommonOpts& common, const SynthOpts& synth) {
  const PipelineConfig cfg = build_config(common);
  ensure_dir(common.out_dir);
  for (int i = 0; i < synth.pairs; ++i) {
    const SynthPair pair = generate_pair(synth, cfg.seed, i);
    const std::string stem = common.out_dir + "/pair_" + std::to_string(i);
    write_xyz(stem + "_p.xyz", pair.p);
    write_xyz(stem + "_q.xyz", pair.q);
    write_transform(stem + "_gt.txt", pair.t_gt);
    write_xyz(stem + "_clean_p.xyz", pair.clean_p);
    write_xyz(stem + "_clean_q.xyz", pair.clean_q);
  }
  std::printf("wrote %d pair(s) to %s\n", synth.pairs, common.out_dir.c_str());
  return 0;
}

// --- subcommand: register ---------------------------------------------------

int run_register(const CommonOpts& common, const std::string& p_path,
                 const std::string& q_path, const std::string& gt_path,
                 const std::string& clean_p_path,
                 const std::string& clean_q_path,
                 const std::string& weights_path) {
  const PipelineConfig cfg = build_config(common);
  const PointCloud p = read_cloud(p_path);
  const PointCloud q = read_cloud(q_path);

  std::optional<RigidTransform> t_gt;
  if (!gt_path.empty()) t_gt = read_transform(gt_path);
  std::optional<PointCloud> clean_p, clean_q;
  if (!clean_p_path.empty()) clean_p = read_cloud(clean_p_path);
  if (!clean_q_path.empty()) clean_q = read_cloud(clean_q_path);

  const Model model = make_or_load_model(weights_path, cfg);
  const PipelineResult result = run_pipeline(
      p, q, model, cfg, t_gt ? &*t_gt : nullptr,
      clean_p ? &*clean_p : nullptr, clean_q ? &*clean_q : nullptr);
  ensure_dir(common.out_dir);
  write_pair_artifacts(result, common.out_dir);
  print_summary(result);
  return 0;
}

// --- subcommand: bench ------------------------------------------------------

struct BenchInput {
  PointCloud p, q;
  std::optional<RigidTransform> t_gt;
  std::optional<PointCloud> clean_p, clean_q;
};

std::vector<BenchInput> collect_dir_pairs(const std::string& data_dir) {
  std::vector<BenchInput> inputs;
  for (int i = 0;; ++i) {
    const std::string stem = data_dir + "/pair_" + std::to_string(i);
    std::string p_path;
    for (const char* ext : {".xyz", ".txt", ".ply"})
      if (fs::exists(stem + "_p" + ext)) p_path = stem + "_p" + ext;
    if (p_path.empty()) break;
    const std::string ext = p_path.substr(p_path.rfind('.'));
    BenchInput in;
    in.p = read_cloud(p_path);
    in.q = read_cloud(stem + "_q" + ext);
    if (fs::exists(stem + "_gt.txt"))
      in.t_gt = read_transform(stem + "_gt.txt");
    if (fs::exists(stem + "_clean_p" + ext))
      in.clean_p = read_cloud(stem + "_clean_p" + ext);
    if (fs::exists(stem + "_clean_q" + ext))
      in.clean_q = read_cloud(stem + "_clean_q" + ext);
    inputs.push_back(std::move(in));
  }
  if (inputs.empty())
    throw DataError("no pair_<i>_p.{xyz,txt,ply} files found in " + data_dir);
  return inputs;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int run_bench(const CommonOpts& common, const SynthOpts& synth,
              const std::string& data_dir, int synth_pairs,
              const std::string& weights_path, int threads) {
  const PipelineConfig cfg = build_config(common);
  ensure_dir(common.out_dir);

  std::vector<BenchInput> inputs;
  if (!data_dir.empty()) {
    inputs = collect_dir_pairs(data_dir);
  } else {
    for (int i = 0; i < synth_pairs; ++i) {
      SynthPair pair = generate_pair(synth, cfg.seed, i);
      BenchInput in;
      in.p = std::move(pair.p);
      in.q = std::move(pair.q);
      in.t_gt = pair.t_gt;
      in.clean_p = std::move(pair.clean_p);
      in.clean_q = std::move(pair.clean_q);
      inputs.push_back(std::move(in));
    }
  }

  const Model model = make_or_load_model(weights_path, cfg);

  struct Slot {
    bool ok = false;
    std::string error;
    PipelineResult result;
  };
  std::vector<Slot> slots(inputs.size());
  std::atomic<std::size_t> cursor{0};
  auto worker = [&] {
    for (std::size_t i; (i = cursor.fetch_add(1)) < inputs.size();) {
      Slot& slot = slots[i];
      try {
        const BenchInput& in = inputs[i];
        slot.result = run_pipeline(
            in.p, in.q, model, cfg, in.t_gt ? &*in.t_gt : nullptr,
            in.clean_p ? &*in.clean_p : nullptr,
            in.clean_q ? &*in.clean_q : nullptr);
        slot.ok = true;
      } catch (const std::exception& e) {
        slot.error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const int nthreads = std::max(1, threads);
  for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  // Per-pair artifacts plus one aggregate report, reduced in pair order.
  int failed = 0;
  std::vector<double> irs, pirs, rres, rtes, chamfers, model_s, pose_s;
  int fmr_hits = 0, rr_hits = 0, with_gt = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i].ok) {
      ++failed;
      std::fprintf(stderr, "pair %zu failed: %s\n", i, slots[i].error.c_str());
      continue;
    }
    const PipelineResult& r = slots[i].result;
    write_pair_artifacts(r, common.out_dir + "/pair_" + std::to_string(i));
    model_s.push_back(r.model_seconds);
    pose_s.push_back(r.pose_seconds);
    if (r.metrics.ir) {
      ++with_gt;
      irs.push_back(*r.metrics.ir);
      pirs.push_back(r.metrics.pir.value_or(0.0));
      rres.push_back(r.metrics.rre_deg.value_or(0.0));
      rtes.push_back(r.metrics.rte.value_or(0.0));
      if (r.metrics.chamfer) chamfers.push_back(*r.metrics.chamfer);
      if (r.metrics.fmr.value_or(false)) ++fmr_hits;
      if (r.metrics.rr.value_or(false)) ++rr_hits;
    }
  }

  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0
                     : std::accumulate(v.begin(), v.end(), 0.0) /
                           static_cast<double>(v.size());
  };
  std::ofstream out(common.out_dir + "/bench.json");
  if (!out) throw DataError("cannot open bench.json for writing");
  char buf[640];
  std::snprintf(
      buf, sizeof(buf),
      "{\"pairs\":%zu,\"failed\":%d,\"with_gt\":%d,"
      "\"ir_mean\":%.6f,\"pir_mean\":%.6f,\"fmr\":%.6f,\"rr\":%.6f,"
      "\"rre_median_deg\":%.6f,\"rte_median\":%.6f,\"chamfer_mean\":%.8f,"
      "\"model_seconds_mean\":%.6f,\"pose_seconds_mean\":%.6f}\n",
      slots.size(), failed, with_gt, mean(irs), mean(pirs),
      with_gt > 0 ? static_cast<double>(fmr_hits) / with_gt : 0.0,
      with_gt > 0 ? static_cast<double>(rr_hits) / with_gt : 0.0,
      median(rres), median(rtes), mean(chamfers), mean(model_s),
      mean(pose_s));
  out << buf;
  std::printf("%s", buf);
  return failed == 0 ? 0 : 1;
}

// --- subcommand: train ------------------------------------------------------

int run_train(const CommonOpts& common, const SynthOpts& synth, int pairs,
              int steps, double lr, const std::string& attention,
              double tau, const std::string& weights_out,
              const std::string& log_path) {
  ensure_dir(common.out_dir);
  PipelineConfig cfg = build_config(common);
  if (!attention.empty())
    cfg.model.mode = attention_mode_from_name(attention);

  GraphConfig gcfg;
  gcfg.dense_voxel = cfg.dense_voxel;
  gcfg.super_voxel = cfg.super_voxel;
  gcfg.dense_feat_radius = cfg.dense_radius;
  gcfg.super_feat_radius = cfg.super_radius;

  std::vector<TrainItem> items;
  items.reserve(static_cast<std::size_t>(pairs));
  for (int i = 0; i < pairs; ++i) {
    const SynthPair pair = generate_pair(synth, cfg.seed, i);
    items.push_back(prepare_pair(pair.p, pair.q, pair.t_gt, gcfg, tau));
    if (items.back().table.positives.empty())
      throw TrainingError("generated pair " + std::to_string(i) +
                          " has no overlapping patches; increase keep-ratio");
  }

  Model model = init_model(cfg.model, cfg.seed);
  TrainConfig tcfg;
  tcfg.adam.lr = lr;
  tcfg.matching_radius = tau;
  tcfg.steps = steps;
  tcfg.seed = cfg.seed;

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw DataError("cannot open " + log_path + " for writing");
  }
  const std::vector<StepLosses> history =
      train_loop(model, items, tcfg, log.is_open() ? &log : nullptr);

  if (!history.empty())
    std::printf("step %d: loss_oc %.4f  loss_p %.4f\n", steps - 1,
                history.back().loss_oc, history.back().loss_p);
  if (!weights_out.empty()) {
    save_model(weights_out, model);
    std::printf("saved weights to %s\n", weights_out.c_str());
  }
  return 0;
}

// --- subcommand: eval-weights ------------------------------------------------

int run_eval_weights(const std::string& weights_path) {
  const Model model = load_model(weights_path);
  const ModelConfig& c = model.config;
  std::printf("mode: %s\n", attention_mode_name(c.mode).c_str());
  std::printf("d_model %d  heads %d  layers %d  dense_dim %d  super_dim %d\n",
              c.d_model, c.heads, c.num_layers, c.dense_dim, c.super_dim);
  std::printf("sigma_dist %g  sigma_angle_deg %g  angle_neighbors %d\n",
              c.sigma_dist, c.sigma_angle_deg, c.angle_neighbors);
  const auto params = enumerate_params(model);
  long scalars = 0;
  for (const auto& [name, mat] : params) {
    scalars += static_cast<long>(mat->size());
    std::printf("  %-22s %4ldx%-4ld |w| %.6f\n", name.c_str(),
                static_cast<long>(mat->rows()), static_cast<long>(mat->cols()),
                mat->norm());
  }
  std::printf("%zu tensors, %ld scalars\n", params.size(), scalars);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coarse-to-fine point cloud registration"};
  app.require_subcommand(1);

  CommonOpts common;
  SynthOpts synth;

  CLI::App* cmd_synth = app.add_subcommand("synth", "generate synthetic pairs");
  add_common(cmd_synth, common);
  add_synth(cmd_synth, synth);
  cmd_synth->add_option("--pairs", synth.pairs, "number of pairs");

  CLI::App* cmd_register =
      app.add_subcommand("register", "register one pair of clouds");
  add_common(cmd_register, common);
  std::string p_path, q_path, gt_path, clean_p_path, clean_q_path, weights;
  cmd_register->add_option("--p", p_path, "source cloud")->required();
  cmd_register->add_option("--q", q_path, "target cloud")->required();
  cmd_register->add_option("--gt", gt_path, "ground-truth transform file");
  cmd_register->add_option("--clean-p", clean_p_path,
                           "clean complete source cloud");
  cmd_register->add_option("--clean-q", clean_q_path,
                           "clean complete target cloud");
  cmd_register->add_option("--weights", weights, "model weights file");

  CLI::App* cmd_bench = app.add_subcommand("bench", "evaluate a pair set");
  add_common(cmd_bench, common);
  add_synth(cmd_bench, synth);
  std::string data_dir;
  int bench_pairs = 8;
  int threads = 1;
  cmd_bench->add_option("--data-dir", data_dir,
                        "directory of pair_<i>_{p,q}.* files");
  cmd_bench->add_option("--pairs", bench_pairs,
                        "synthetic pairs when no --data-dir")
      ->excludes("--data-dir");
  cmd_bench->add_option("--weights", weights, "model weights file");
  cmd_bench->add_option("--threads", threads, "worker pool size");

  CLI::App* cmd_train = app.add_subcommand("train", "toy-scale training");
  add_common(cmd_train, common);
  add_synth(cmd_train, synth);
  int train_pairs = 1;
  int steps = 200;
  double lr = 1e-3;
  double tau = 0.05;
  std::string attention, weights_out, log_path;
  cmd_train->add_option("--pairs", train_pairs, "training pairs");
  cmd_train->add_option("--steps", steps, "optimization steps");
  cmd_train->add_option("--lr", lr, "learning rate");
  cmd_train->add_option("--tau", tau, "ground-truth matching radius");
  cmd_train->add_option("--attention", attention,
                        "standard|shared|vanilla")
      ->check(CLI::IsMember({"standard", "shared", "vanilla"}));
  cmd_train->add_option("--weights-out", weights_out, "save weights here");
  cmd_train->add_option("--log", log_path, "JSONL loss log");

  CLI::App* cmd_eval =
      app.add_subcommand("eval-weights", "inspect a weights file");
  std::string eval_weights_path;
  cmd_eval->add_option("--weights", eval_weights_path, "weights file")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_synth->parsed()) return run_synth(common, synth);
    if (cmd_register->parsed())
      return run_register(common, p_path, q_path, gt_path, clean_p_path,
                          clean_q_path, weights);
    if (cmd_bench->parsed())
      return run_bench(common, synth, data_dir,
                       data_dir.empty() ? bench_pairs : 0, weights, threads);
    if (cmd_train->parsed())
      return run_train(common, synth, train_pairs, steps, lr, attention, tau,
                       weights_out, log_path);
    if (cmd_eval->parsed()) return run_eval_weights(eval_weights_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
