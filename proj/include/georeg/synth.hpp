#pragma once

// Self-contained synthetic benchmark data: a small library of procedurally
// sampled surfaces and the partial-overlap pair protocol (unit-sphere
// normalization, random half-space crops, random pose, clipped Gaussian
// jitter, fixed-size subsampling).

#include <cstdint>
#include <string>

#include "georeg/cloud.hpp"

namespace georeg {

enum class ShapeKind { kSphere, kBox, kComposite, kRoom };

ShapeKind parse_shape_kind(const std::string& name);
const char* shape_kind_name(ShapeKind kind);

// `count` points sampled uniformly (area-weighted) on the surface.  kSphere
// and kBox are fixed geometry; kComposite (an asymmetric assembly of a body
// box, an offset sphere and a limb) and kRoom (floor, two walls, clutter
// boxes) draw their proportions from `seed`, so different seeds give
// different models.
PointCloud make_shape(ShapeKind kind, int count, std::uint64_t seed);

struct SynthConfig {
  double keep_ratio = 0.7;        // p, fraction retained by each crop
  double max_rotation_deg = 45.0; // r, pose rotation sampled in [0, r]
  double translation = 0.5;       // pose translation in [-0.5, 0.5]^3
  double noise_sigma = 0.01;      // per-coordinate Gaussian jitter (0 = off)
  double noise_clip = 0.05;       // jitter clipped to [-clip, clip]
  int sample_count = 717;         // points kept per cloud
  std::uint64_t seed = 0;
};

// One generated pair.  clean_p / clean_q are the complete, noise-free clouds
// in each side's frame (used by the modified Chamfer metric); t_gt maps P
// coordinates into Q's frame.
struct SynthPair {
  PointCloud p;
  PointCloud q;
  RigidTransform t_gt;
  PointCloud clean_p;
  PointCloud clean_q;
};

// Builds a partial-overlap pair from a complete shape cloud.  The shape is
// normalized into the unit sphere; each side is cropped by an independent
// random half-space retaining keep_ratio of the points; the source side gets
// a random rigid pose; both are jittered and subsampled to sample_count.
SynthPair make_pair(const PointCloud& shape, const SynthConfig& cfg);

}  // namespace georeg
