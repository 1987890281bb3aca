#include "georeg/synth.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "georeg/errors.hpp"

namespace georeg {

ShapeKind parse_shape_kind(const std::string& name) {
  if (name == "sphere") return ShapeKind::kSphere;
  if (name == "box") return ShapeKind::kBox;
  if (name == "composite") return ShapeKind::kComposite;
  if (name == "room") return ShapeKind::kRoom;
  throw ConfigError("unknown shape '" + name +
                    "' (expected sphere|box|composite|room)");
}

const char* shape_kind_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kSphere: return "sphere";
    case ShapeKind::kBox: return "box";
    case ShapeKind::kComposite: return "composite";
    case ShapeKind::kRoom: return "room";
  }
  return "?";
}

namespace {

using Rng = std::mt19937_64;

Eigen::Vector3d unit_direction(Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Vector3d v;
  do {
    v = Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
  } while (v.norm() < 1e-12);
  return v.normalized();
}

// A sampleable surface patch: either a rectangle (origin + two edge vectors)
// or a sphere (center + radius), with its surface area for weighting.
struct Panel {
  enum class Kind { kRect, kSphere } kind = Kind::kRect;
  Eigen::Vector3d origin;  // rect corner or sphere center
  Eigen::Vector3d edge_u, edge_v;
  double radius = 0.0;
  double area = 0.0;
};

Panel rect(const Eigen::Vector3d& origin, const Eigen::Vector3d& u,
           const Eigen::Vector3d& v) {
  Panel p;
  p.kind = Panel::Kind::kRect;
  p.origin = origin;
  p.edge_u = u;
  p.edge_v = v;
  p.area = u.cross(v).norm();
  return p;
}

Panel ball(const Eigen::Vector3d& center, double radius) {
  Panel p;
  p.kind = Panel::Kind::kSphere;
  p.origin = center;
  p.radius = radius;
  p.area = 4.0 * M_PI * radius * radius;
  return p;
}

// Six faces of an axis-aligned box given center and half extents.
void add_box(std::vector<Panel>& panels, const Eigen::Vector3d& c,
             const Eigen::Vector3d& h) {
  const Eigen::Vector3d ex(h.x(), 0, 0), ey(0, h.y(), 0), ez(0, 0, h.z());
  panels.push_back(rect(c - ex - ey - ez, 2 * ey, 2 * ez));  // -x face
  panels.push_back(rect(c + ex - ey - ez, 2 * ey, 2 * ez));  // +x face
  panels.push_back(rect(c - ex - ey - ez, 2 * ex, 2 * ez));  // -y face
  panels.push_back(rect(c - ex + ey - ez, 2 * ex, 2 * ez));  // +y face
  panels.push_back(rect(c - ex - ey - ez, 2 * ex, 2 * ey));  // -z face
  panels.push_back(rect(c - ex - ey + ez, 2 * ex, 2 * ey));  // +z face
}

PointCloud sample_panels(const std::vector<Panel>& panels, int count,
                         Rng& rng) {
  std::vector<double> cumulative;
  double total = 0.0;
  for (const Panel& p : panels) {
    total += p.area;
    cumulative.push_back(total);
  }
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  PointCloud out(count, 3);
  for (int i = 0; i < count; ++i) {
    const double pick = uni(rng) * total;
    const std::size_t sel = static_cast<std::size_t>(
        std::lower_bound(cumulative.begin(), cumulative.end(), pick) -
        cumulative.begin());
    const Panel& p = panels[std::min(sel, panels.size() - 1)];
    if (p.kind == Panel::Kind::kRect) {
      out.row(i) =
          (p.origin + uni(rng) * p.edge_u + uni(rng) * p.edge_v).transpose();
    } else {
      Eigen::Vector3d dir(gauss(rng), gauss(rng), gauss(rng));
      if (dir.norm() < 1e-12) dir = Eigen::Vector3d::UnitX();
      out.row(i) = (p.origin + p.radius * dir.normalized()).transpose();
    }
  }
  return out;
}

}  // namespace

PointCloud make_shape(ShapeKind kind, int count, std::uint64_t seed) {
  if (count < 1) throw ParameterError("make_shape: count must be >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Panel> panels;

  switch (kind) {
    case ShapeKind::kSphere:
      panels.push_back(ball(Eigen::Vector3d::Zero(), 1.0));
      break;
    case ShapeKind::kBox:
      add_box(panels, Eigen::Vector3d::Zero(),
              Eigen::Vector3d(0.9, 0.6, 0.45));
      break;
    case ShapeKind::kComposite: {
      // Body box, a sphere pushed toward one corner, and a thin limb box
      // sticking out of another: offsets are random so no two seeds share a
      // symmetry plane.
      const Eigen::Vector3d body(0.4 + 0.3 * uni(rng), 0.25 + 0.2 * uni(rng),
                                 0.15 + 0.15 * uni(rng));
      add_box(panels, Eigen::Vector3d::Zero(), body);
      const Eigen::Vector3d knob =
          body.cwiseProduct(Eigen::Vector3d(0.7 + 0.4 * uni(rng),
                                            0.5 + 0.6 * uni(rng),
                                            0.6 + 0.5 * uni(rng)));
      panels.push_back(ball(knob, 0.2 + 0.15 * uni(rng)));
      const double limb_len = 0.5 + 0.4 * uni(rng);
      const Eigen::Vector3d limb_center(
          -body.x() - limb_len / 2, (uni(rng) - 0.5) * body.y(),
          (uni(rng) - 0.5) * body.z());
      add_box(panels, limb_center,
              Eigen::Vector3d(limb_len / 2, 0.06 + 0.05 * uni(rng),
                              0.06 + 0.05 * uni(rng)));
      break;
    }
    case ShapeKind::kRoom: {
      // Floor and two walls meeting in a corner, plus two clutter boxes at
      // random spots on the floor.
      const double sx = 1.6 + 0.8 * uni(rng);
      const double sy = 1.6 + 0.8 * uni(rng);
      const double sz = 0.9 + 0.4 * uni(rng);
      panels.push_back(rect({0, 0, 0}, {sx, 0, 0}, {0, sy, 0}));  // floor
      panels.push_back(rect({0, 0, 0}, {sx, 0, 0}, {0, 0, sz}));  // wall y=0
      panels.push_back(rect({0, 0, 0}, {0, sy, 0}, {0, 0, sz}));  // wall x=0
      for (int b = 0; b < 2; ++b) {
        const Eigen::Vector3d half(0.1 + 0.15 * uni(rng),
                                   0.1 + 0.15 * uni(rng),
                                   0.1 + 0.2 * uni(rng));
        const Eigen::Vector3d center(0.2 + 0.6 * sx * uni(rng),
                                     0.2 + 0.6 * sy * uni(rng), half.z());
        add_box(panels, center, half);
      }
      break;
    }
  }
  return sample_panels(panels, count, rng);
}

namespace {

// Centers the cloud and scales the farthest point onto the unit sphere.
PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  const Eigen::RowVector3d centroid = cloud.colwise().mean();
  PointCloud out = cloud.rowwise() - centroid;
  const double top = out.rowwise().norm().maxCoeff();
  if (!(top > 0.0))
    throw DataError("make_pair: degenerate shape (all points coincide)");
  return out / top;
}

// Keeps the keep_ratio fraction of points with the smallest projection onto
// a random direction (a half-space crop through the matching quantile).
PointCloud halfspace_crop(const PointCloud& cloud, double keep_ratio,
                          Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    const Eigen::Vector3d dir = unit_direction(rng);
    const Eigen::VectorXd proj = cloud * dir;
    std::vector<int> order(static_cast<std::size_t>(cloud.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (proj(a) != proj(b)) return proj(a) < proj(b);
      return a < b;
    });
    const int keep = static_cast<int>(std::ceil(
        keep_ratio * static_cast<double>(cloud.rows())));
    if (keep < 1) continue;  // crop emptied the cloud: new direction
    // Restore original ordering among the kept rows so the crop does not
    // leak the direction through row order.
    std::vector<int> kept(order.begin(), order.begin() + keep);
    std::sort(kept.begin(), kept.end());
    PointCloud out(keep, 3);
    for (int r = 0; r < keep; ++r) out.row(r) = cloud.row(kept[static_cast<std::size_t>(r)]);
    return out;
  }
  throw DataError("make_pair: half-space crop left no points after 100 tries");
}

PointCloud subsample(const PointCloud& cloud, int count, Rng& rng) {
  if (cloud.rows() <= count) return cloud;
  std::vector<int> pool(static_cast<std::size_t>(cloud.rows()));
  std::iota(pool.begin(), pool.end(), 0);
  for (int r = 0; r < count; ++r) {
    std::uniform_int_distribution<int> pick(r, static_cast<int>(cloud.rows()) - 1);
    std::swap(pool[static_cast<std::size_t>(r)],
              pool[static_cast<std::size_t>(pick(rng))]);
  }
  std::vector<int> kept(pool.begin(), pool.begin() + count);
  std::sort(kept.begin(), kept.end());
  PointCloud out(count, 3);
  for (int r = 0; r < count; ++r) out.row(r) = cloud.row(kept[static_cast<std::size_t>(r)]);
  return out;
}

void add_noise(PointCloud& cloud, double sigma, double clip, Rng& rng) {
  if (!(sigma > 0.0)) return;
  std::normal_distribution<double> gauss(0.0, sigma);
  for (Eigen::Index i = 0; i < cloud.rows(); ++i)
    for (Eigen::Index c = 0; c < 3; ++c)
      cloud(i, c) += std::clamp(gauss(rng), -clip, clip);
}

}  // namespace

SynthPair make_pair(const PointCloud& shape, const SynthConfig& cfg) {
  if (!(cfg.keep_ratio > 0.0 && cfg.keep_ratio <= 1.0))
    throw ParameterError("make_pair: keep_ratio must be in (0, 1]");
  if (cfg.max_rotation_deg < 0.0)
    throw ParameterError("make_pair: max_rotation_deg must be >= 0");
  if (cfg.sample_count < 1)
    throw ParameterError("make_pair: sample_count must be >= 1");

  Rng rng(cfg.seed);
  const PointCloud ref = normalize_unit_sphere(shape);

  PointCloud p = halfspace_crop(ref, cfg.keep_ratio, rng);
  PointCloud q = halfspace_crop(ref, cfg.keep_ratio, rng);

  // Random pose applied to the source side.
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const Eigen::Vector3d axis = unit_direction(rng);
  const double angle =
      uni(rng) * cfg.max_rotation_deg * M_PI / 180.0;
  const Eigen::Matrix3d rot = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  const Eigen::Vector3d trans(cfg.translation * (2.0 * uni(rng) - 1.0),
                              cfg.translation * (2.0 * uni(rng) - 1.0),
                              cfg.translation * (2.0 * uni(rng) - 1.0));
  RigidTransform pose;
  pose.rotation = rot;
  pose.translation = trans;
  p = apply_transform(p, pose);

  add_noise(p, cfg.noise_sigma, cfg.noise_clip, rng);
  add_noise(q, cfg.noise_sigma, cfg.noise_clip, rng);

  SynthPair out;
  out.p = subsample(p, cfg.sample_count, rng);
  out.q = subsample(q, cfg.sample_count, rng);
  // Ground truth maps P back into Q's (reference) frame.
  out.t_gt = pose.inverse();
  out.clean_p = apply_transform(ref, pose);
  out.clean_q = ref;
  return out;
}

}  // namespace georeg
