#include "georeg/cloud.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "georeg/errors.hpp"

namespace georeg {

namespace {

void require_cloud(const PointCloud& c, const char* who) {
  if (c.rows() < 1)
    throw DataError(std::string(who) + ": cloud has no points");
  if (!c.allFinite())
    throw DataError(std::string(who) + ": cloud has non-finite coordinates");
}

}  // namespace

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(rotation.transpose() * translation);
  return inv;
}

Eigen::Matrix4d RigidTransform::homogeneous() const {
  Eigen::Matrix4d h = Eigen::Matrix4d::Identity();
  h.topLeftCorner<3, 3>() = rotation;
  h.topRightCorner<3, 1>() = translation;
  return h;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t) {
  require_cloud(cloud, "apply_transform");
  PointCloud out = cloud * t.rotation.transpose();
  out.rowwise() += t.translation.transpose();
  return out;
}

PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
  if (!(voxel > 0.0))
    throw ParameterError("voxel_downsample: voxel must be > 0");
  require_cloud(cloud, "voxel_downsample");
  using Key = std::array<long long, 3>;
  std::map<Key, std::pair<Eigen::Vector3d, long long>> cells;
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
    Key key;
    for (int a = 0; a < 3; ++a)
      key[a] = static_cast<long long>(std::floor(cloud(i, a) / voxel));
    auto [it, inserted] = cells.try_emplace(key, Eigen::Vector3d::Zero(), 0LL);
    it->second.first += cloud.row(i).transpose();
    it->second.second += 1;
  }
  PointCloud out(static_cast<Eigen::Index>(cells.size()), 3);
  Eigen::Index r = 0;
  for (const auto& [key, cell] : cells)
    out.row(r++) = (cell.first / static_cast<double>(cell.second)).transpose();
  return out;
}

// --- KdTree ----------------------------------------------------------------

namespace {
constexpr int kLeafSize = 8;
constexpr int kBruteForceBelow = 64;
}  // namespace

KdTree::KdTree(const PointCloud& pts) : pts_(pts) {
  perm_.resize(static_cast<std::size_t>(pts_.rows()));
  for (std::size_t i = 0; i < perm_.size(); ++i) perm_[i] = static_cast<int>(i);
  nodes_.reserve(perm_.size() / kLeafSize * 2 + 2);
  root_ = build(0, static_cast<int>(perm_.size()));
}

int KdTree::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  if (end - begin <= kLeafSize) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  Eigen::Vector3d lo = pts_.row(perm_[begin]);
  Eigen::Vector3d hi = lo;
  for (int i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(pts_.row(perm_[i]).transpose());
    hi = hi.cwiseMax(pts_.row(perm_[i]).transpose());
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(perm_.begin() + begin, perm_.begin() + mid,
                   perm_.begin() + end, [this, axis](int a, int b) {
                     return pts_(a, axis) < pts_(b, axis);
                   });
  const double split = pts_(perm_[mid], axis);
  // Recurse before touching nodes_[id]; child construction may reallocate.
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int node, const Eigen::Vector3d& q, int k,
                    std::vector<std::pair<double, int>>& heap) const {
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const int idx = perm_[static_cast<std::size_t>(i)];
      const double d2 = (pts_.row(idx).transpose() - q).squaredNorm();
      const std::pair<double, int> cand{d2, idx};
      if (static_cast<int>(heap.size()) < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end());
      } else if (cand < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    return;
  }
  const double dx = q(n.axis) - n.split;
  const int near = dx <= 0.0 ? n.left : n.right;
  const int far = dx <= 0.0 ? n.right : n.left;
  search(near, q, k, heap);
  // Equal plane distance must still be visited: a tied far-side point with a
  // lower index outranks the current heap worst.
  if (static_cast<int>(heap.size()) < k || dx * dx <= heap.front().first)
    search(far, q, k, heap);
}

void KdTree::knn(const Eigen::Vector3d& query, int k, std::vector<int>& indices,
                 std::vector<double>& distances) const {
  std::vector<std::pair<double, int>> heap;
  heap.reserve(static_cast<std::size_t>(k));
  search(root_, query, k, heap);
  std::sort(heap.begin(), heap.end());
  indices.resize(heap.size());
  distances.resize(heap.size());
  for (std::size_t i = 0; i < heap.size(); ++i) {
    indices[i] = heap[i].second;
    distances[i] = std::sqrt(heap[i].first);
  }
}

void KdTree::collect(int node, const Eigen::Vector3d& q, double r2,
                     std::vector<int>& out) const {
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const int idx = perm_[static_cast<std::size_t>(i)];
      if ((pts_.row(idx).transpose() - q).squaredNorm() <= r2)
        out.push_back(idx);
    }
    return;
  }
  const double dx = q(n.axis) - n.split;
  const int near = dx <= 0.0 ? n.left : n.right;
  const int far = dx <= 0.0 ? n.right : n.left;
  collect(near, q, r2, out);
  if (dx * dx <= r2) collect(far, q, r2, out);
}

std::vector<int> KdTree::radius(const Eigen::Vector3d& query, double r) const {
  std::vector<int> out;
  collect(root_, query, r * r, out);
  std::sort(out.begin(), out.end());
  return out;
}

KnnResult knn_search(const PointCloud& query, const PointCloud& base, int k) {
  require_cloud(query, "knn_search");
  require_cloud(base, "knn_search");
  if (k < 1) throw ParameterError("knn_search: k must be >= 1");
  if (k > base.rows())
    throw ParameterError("knn_search: k=" + std::to_string(k) +
                         " exceeds base size " + std::to_string(base.rows()));
  KnnResult out;
  out.indices.resize(query.rows(), k);
  out.distances.resize(query.rows(), k);
  if (base.rows() < kBruteForceBelow) {
    std::vector<std::pair<double, int>> cand(
        static_cast<std::size_t>(base.rows()));
    for (Eigen::Index qi = 0; qi < query.rows(); ++qi) {
      for (Eigen::Index bi = 0; bi < base.rows(); ++bi)
        cand[static_cast<std::size_t>(bi)] = {
            (base.row(bi) - query.row(qi)).squaredNorm(),
            static_cast<int>(bi)};
      std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
      for (int j = 0; j < k; ++j) {
        out.indices(qi, j) = cand[static_cast<std::size_t>(j)].second;
        out.distances(qi, j) = std::sqrt(cand[static_cast<std::size_t>(j)].first);
      }
    }
    return out;
  }
  KdTree tree(base);
  std::vector<int> idx;
  std::vector<double> dist;
  for (Eigen::Index qi = 0; qi < query.rows(); ++qi) {
    tree.knn(query.row(qi).transpose(), k, idx, dist);
    for (int j = 0; j < k; ++j) {
      out.indices(qi, j) = idx[static_cast<std::size_t>(j)];
      out.distances(qi, j) = dist[static_cast<std::size_t>(j)];
    }
  }
  return out;
}

SuperpointGraph group_points(const PointCloud& dense,
                             const PointCloud& superpoints) {
  require_cloud(dense, "group_points");
  require_cloud(superpoints, "group_points");
  const KnnResult nearest = knn_search(dense, superpoints, 1);

  std::vector<int> count(static_cast<std::size_t>(superpoints.rows()), 0);
  for (Eigen::Index i = 0; i < dense.rows(); ++i)
    ++count[static_cast<std::size_t>(nearest.indices(i, 0))];

  // Drop superpoints that attracted no dense point and compact the indexing.
  std::vector<int> remap(static_cast<std::size_t>(superpoints.rows()), -1);
  int kept = 0;
  for (std::size_t s = 0; s < count.size(); ++s)
    if (count[s] > 0) remap[s] = kept++;

  SuperpointGraph g;
  g.dense_points = dense;
  g.superpoints.resize(kept, 3);
  for (std::size_t s = 0; s < remap.size(); ++s)
    if (remap[s] >= 0)
      g.superpoints.row(remap[s]) = superpoints.row(static_cast<Eigen::Index>(s));
  g.patch_of.resize(static_cast<std::size_t>(dense.rows()));
  g.patches.resize(static_cast<std::size_t>(kept));
  for (Eigen::Index i = 0; i < dense.rows(); ++i) {
    const int s = remap[static_cast<std::size_t>(nearest.indices(i, 0))];
    g.patch_of[static_cast<std::size_t>(i)] = s;
    g.patches[static_cast<std::size_t>(s)].push_back(static_cast<int>(i));
  }
  return g;
}

SuperpointGraph build_graph(const PointCloud& cloud, double dense_voxel,
                            double super_voxel) {
  const PointCloud dense = voxel_downsample(cloud, dense_voxel);
  const PointCloud supers = voxel_downsample(dense, super_voxel);
  return group_points(dense, supers);
}

// --- File formats -----------------------------------------------------------

PointCloud read_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open cloud file: " + path);
  std::vector<Eigen::Vector3d> pts;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x >> y >> z))
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected 'x y z'");
    std::string extra;
    if (ss >> extra)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": unexpected trailing data '" + extra + "'");
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": non-finite coordinate");
    pts.emplace_back(x, y, z);
  }
  if (pts.empty()) throw DataError("empty cloud file: " + path);
  PointCloud out(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return out;
}

void write_xyz(const std::string& path, const PointCloud& cloud) {
  require_cloud(cloud, "write_xyz");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path);
  char buf[96];
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", cloud(i, 0),
                  cloud(i, 1), cloud(i, 2));
    out << buf;
  }
  if (!out) throw DataError("write failed: " + path);
}

namespace {

int ply_type_size(const std::string& type) {
  if (type == "char" || type == "int8" || type == "uchar" || type == "uint8")
    return 1;
  if (type == "short" || type == "int16" || type == "ushort" ||
      type == "uint16")
    return 2;
  if (type == "int" || type == "int32" || type == "uint" || type == "uint32" ||
      type == "float" || type == "float32")
    return 4;
  if (type == "double" || type == "float64") return 8;
  return -1;
}

float le_float(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i)
    bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

PointCloud read_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open cloud file: " + path);

  std::string line;
  if (!std::getline(in, line) || (line != "ply" && line != "ply\r"))
    throw DataError(path + ": not a PLY file");

  long long vertex_count = -1;
  int stride = 0;
  int off[3] = {-1, -1, -1};
  bool in_vertex = false, format_ok = false, header_done = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "comment" || tok.empty()) continue;
    if (tok == "format") {
      std::string fmt, ver;
      ss >> fmt >> ver;
      if (fmt != "binary_little_endian")
        throw DataError(path + ": unsupported PLY format '" + fmt + "'");
      format_ok = true;
    } else if (tok == "element") {
      std::string name;
      long long count;
      ss >> name >> count;
      if (name == "vertex") {
        vertex_count = count;
        in_vertex = true;
      } else {
        if (vertex_count < 0)
          throw DataError(path + ": element '" + name +
                          "' precedes vertex data");
        in_vertex = false;  // later elements follow the vertex payload
      }
    } else if (tok == "property") {
      if (!in_vertex) continue;
      std::string type, name;
      ss >> type;
      if (type == "list")
        throw DataError(path + ": list property in vertex element");
      ss >> name;
      const int size = ply_type_size(type);
      if (size < 0)
        throw DataError(path + ": unknown property type '" + type + "'");
      for (int a = 0; a < 3; ++a) {
        const char* want[3] = {"x", "y", "z"};
        if (name == want[a]) {
          if (type != "float" && type != "float32")
            throw DataError(path + ": vertex " + name +
                            " must be float32, got " + type);
          off[a] = stride;
        }
      }
      stride += size;
    } else if (tok == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) throw DataError(path + ": missing end_header");
  if (!format_ok) throw DataError(path + ": missing format line");
  if (vertex_count < 1) throw DataError(path + ": no vertices");
  if (off[0] < 0 || off[1] < 0 || off[2] < 0)
    throw DataError(path + ": vertex element lacks x/y/z");

  std::vector<unsigned char> row(static_cast<std::size_t>(stride));
  PointCloud out(static_cast<Eigen::Index>(vertex_count), 3);
  for (long long i = 0; i < vertex_count; ++i) {
    in.read(reinterpret_cast<char*>(row.data()), stride);
    if (!in) throw DataError(path + ": truncated vertex data");
    for (int a = 0; a < 3; ++a) {
      const double v = static_cast<double>(le_float(row.data() + off[a]));
      if (!std::isfinite(v))
        throw DataError(path + ": non-finite coordinate in vertex " +
                        std::to_string(i));
      out(static_cast<Eigen::Index>(i), a) = v;
    }
  }
  return out;
}

PointCloud read_cloud(const std::string& path) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".xyz" || ext == ".txt") return read_xyz(path);
  if (ext == ".ply") return read_ply(path);
  throw DataError("unsupported cloud extension '" + ext + "': " + path);
}

std::string transform_to_line(const RigidTransform& t) {
  const Eigen::Matrix4d h = t.homogeneous();
  std::string out;
  char buf[40];
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", h(i, j));
      if (i != 0 || j != 0) out += ' ';
      out += buf;
    }
  }
  return out;
}

RigidTransform transform_from_line(const std::string& line) {
  std::istringstream ss(line);
  Eigen::Matrix4d h;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (!(ss >> h(i, j)))
        throw DataError("transform line needs 16 reals: '" + line + "'");
  if ((h.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9)
    throw DataError("transform bottom row must be 0 0 0 1");
  RigidTransform t;
  t.rotation = h.topLeftCorner<3, 3>();
  t.translation = h.topRightCorner<3, 1>();
  const Eigen::Matrix3d rtr = t.rotation.transpose() * t.rotation;
  if ((rtr - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    throw DataError("transform rotation block is not orthonormal");
  return t;
}

void write_transform(const std::string& path, const RigidTransform& t) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << transform_to_line(t) << "\n";
  if (!out) throw DataError("write failed: " + path);
}

RigidTransform read_transform(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open transform file: " + path);
  std::string line;
  while (std::getline(in, line))
    if (line.find_first_not_of(" \t\r\n") != std::string::npos)
      return transform_from_line(line);
  throw DataError("no transform found in: " + path);
}

}  // namespace georeg
