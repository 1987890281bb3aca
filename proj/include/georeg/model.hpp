#pragma once

#include <string>
#include <utility>
#include <vector>

#include "georeg/tensor.hpp"

namespace georeg {

/// Slope shared by every leaky-rectified nonlinearity in the model.
constexpr double kLeakySlope = 0.01;

/// How the pairwise geometric embedding enters self-attention scores.
///  - kStandard: each self-attention layer projects the embedding itself.
///  - kShared:   one global projection (with a leaky-rectified nonlinearity)
///               is computed once and reused by every layer.
///  - kVanilla:  no geometric term at all (ablation baseline).
enum class AttentionMode { kStandard, kShared, kVanilla };

std::string attention_mode_name(AttentionMode mode);
AttentionMode attention_mode_from_name(const std::string& name);

struct ModelConfig {
  AttentionMode mode = AttentionMode::kStandard;
  int d_model = 128;  // transformer width
  int heads = 4;
  int num_layers = 3;  // self/cross interleave count
  int dense_dim = 64;  // dense feature width
  int super_dim = 128; // superpoint feature width fed to the transformer
  // Geometric structure embedding.
  double sigma_dist = 0.2;        // distance scale (superpoint voxel size)
  double sigma_angle_deg = 15.0;  // angle scale
  int angle_neighbors = 3;        // reference neighbors per superpoint
};

/// One residual attention block: multi-head attention, then a two-layer
/// feed-forward with 2x expansion, each followed by add-and-layer-norm.
struct BlockParams {
  Mat wq, bq, wk, bk, wv, bv, wo, bo;
  Mat ln1_gain, ln1_offset;
  Mat ff_w1, ff_b1, ff_w2, ff_b2;
  Mat ln2_gain, ln2_offset;
  Mat wr;  // standard-mode self blocks only; empty otherwise
};

struct LayerParams {
  BlockParams self_block;   // shared by both clouds
  BlockParams cross_block;  // shared by both directions
};

struct Model {
  ModelConfig config;
  Mat dense_lift;  // kDescriptorWidth x dense_dim
  Mat super_lift;  // kDescriptorWidth x super_dim
  Mat input_proj;  // super_dim x d_model
  Mat embed_wd;    // d_model x d_model distance-embedding projection
  Mat embed_wa;    // d_model x d_model angular-embedding projection
  Mat shared_wr;   // d_model x d_model; shared mode only
  std::vector<LayerParams> layers;
  Mat dustbin;     // 1x1 slack score for the point-matching transport
};

/// Seeded uniform (Glorot-style) initialization; biases and layer-norm
/// offsets start at zero, gains at one, the dustbin at one.
Model init_model(const ModelConfig& config, std::uint64_t seed);

/// Deterministic "name -> matrix" enumeration.  Names follow
/// "layer{i}.{self|cross}.{role}" for per-layer parameters.
std::vector<std::pair<std::string, Mat*>> enumerate_params(Model& m);
std::vector<std::pair<std::string, const Mat*>> enumerate_params(
    const Model& m);

void save_model(const std::string& path, const Model& m);
Model load_model(const std::string& path);

/// Tape-attached mirror of the parameter set.  With a null tape the mirrors
/// are detached constants, which makes the same forward code serve both
/// training and inference.
struct BoundBlock {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
  Var ln1_gain, ln1_offset;
  Var ff_w1, ff_b1, ff_w2, ff_b2;
  Var ln2_gain, ln2_offset;
  Var wr;
};

struct BoundLayer {
  BoundBlock self_block;
  BoundBlock cross_block;
};

struct BoundModel {
  ModelConfig config;
  Var dense_lift, super_lift, input_proj, embed_wd, embed_wa, shared_wr;
  std::vector<BoundLayer> layers;
  Var dustbin;
};

BoundModel bind_model(Tape* tape, const Model& m);

/// Vars of the bound model in the same order as enumerate_params.
std::vector<std::pair<std::string, const Var*>> enumerate_bound(
    const BoundModel& m);

}  // namespace georeg
