#include "georeg/model.hpp"

#include <cmath>
#include <random>

#include "georeg/errors.hpp"
#include "georeg/features.hpp"
#include "georeg/weights_io.hpp"

namespace georeg {

std::string attention_mode_name(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::kStandard: return "standard";
    case AttentionMode::kShared: return "shared";
    case AttentionMode::kVanilla: return "vanilla";
  }
  throw ParameterError("unknown attention mode");
}

AttentionMode attention_mode_from_name(const std::string& name) {
  if (name == "standard") return AttentionMode::kStandard;
  if (name == "shared") return AttentionMode::kShared;
  if (name == "vanilla") return AttentionMode::kVanilla;
  throw ConfigError("unknown attention mode '" + name + "'");
}

namespace {

void validate_config(const ModelConfig& c) {
  if (c.d_model < 2 || c.d_model % 2 != 0)
    throw ConfigError("d_model must be even and >= 2");
  if (c.heads < 1 || c.d_model % c.heads != 0)
    throw ConfigError("head count " + std::to_string(c.heads) +
                      " does not divide d_model " + std::to_string(c.d_model));
  if (c.num_layers < 0) throw ConfigError("num_layers must be >= 0");
  if (c.dense_dim < 1 || c.super_dim < 1)
    throw ConfigError("feature widths must be >= 1");
  if (!(c.sigma_dist > 0.0)) throw ConfigError("sigma_dist must be > 0");
  if (!(c.sigma_angle_deg > 0.0))
    throw ConfigError("sigma_angle_deg must be > 0");
  if (c.angle_neighbors < 1) throw ConfigError("angle_neighbors must be >= 1");
}

// Single source of truth for parameter order and naming; works across the
// plain and tape-bound mirrors.
template <typename ModelT, typename Fn>
void for_each_param(ModelT& m, Fn&& fn) {
  fn("lift.dense", m.dense_lift);
  fn("lift.super", m.super_lift);
  fn("input_proj", m.input_proj);
  fn("embed.wd", m.embed_wd);
  fn("embed.wa", m.embed_wa);
  if (m.config.mode == AttentionMode::kShared) fn("shared.wr", m.shared_wr);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i) + ".";
    auto block = [&fn](const std::string& base, auto& b, bool with_wr) {
      fn(base + "wq", b.wq);
      fn(base + "bq", b.bq);
      fn(base + "wk", b.wk);
      fn(base + "bk", b.bk);
      fn(base + "wv", b.wv);
      fn(base + "bv", b.bv);
      fn(base + "wo", b.wo);
      fn(base + "bo", b.bo);
      fn(base + "ln1_gain", b.ln1_gain);
      fn(base + "ln1_offset", b.ln1_offset);
      fn(base + "ff_w1", b.ff_w1);
      fn(base + "ff_b1", b.ff_b1);
      fn(base + "ff_w2", b.ff_w2);
      fn(base + "ff_b2", b.ff_b2);
      fn(base + "ln2_gain", b.ln2_gain);
      fn(base + "ln2_offset", b.ln2_offset);
      if (with_wr) fn(base + "wr", b.wr);
    };
    const bool standard = m.config.mode == AttentionMode::kStandard;
    block(prefix + "self.", m.layers[i].self_block, standard);
    block(prefix + "cross.", m.layers[i].cross_block, false);
  }
  fn("dustbin", m.dustbin);
}

Mat glorot(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

BlockParams init_block(std::mt19937_64& rng, int d, bool with_wr) {
  BlockParams b;
  b.wq = glorot(rng, d, d);
  b.bq = Mat::Zero(1, d);
  b.wk = glorot(rng, d, d);
  b.bk = Mat::Zero(1, d);
  b.wv = glorot(rng, d, d);
  b.bv = Mat::Zero(1, d);
  b.wo = glorot(rng, d, d);
  b.bo = Mat::Zero(1, d);
  b.ln1_gain = Mat::Ones(1, d);
  b.ln1_offset = Mat::Zero(1, d);
  b.ff_w1 = glorot(rng, d, 2 * d);
  b.ff_b1 = Mat::Zero(1, 2 * d);
  b.ff_w2 = glorot(rng, 2 * d, d);
  b.ff_b2 = Mat::Zero(1, d);
  b.ln2_gain = Mat::Ones(1, d);
  b.ln2_offset = Mat::Zero(1, d);
  if (with_wr) b.wr = glorot(rng, d, d);
  return b;
}

}  // namespace

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  validate_config(config);
  std::mt19937_64 rng(seed);
  Model m;
  m.config = config;
  m.dense_lift = glorot(rng, kDescriptorWidth, config.dense_dim);
  m.super_lift = glorot(rng, kDescriptorWidth, config.super_dim);
  m.input_proj = glorot(rng, config.super_dim, config.d_model);
  m.embed_wd = glorot(rng, config.d_model, config.d_model);
  m.embed_wa = glorot(rng, config.d_model, config.d_model);
  if (config.mode == AttentionMode::kShared)
    m.shared_wr = glorot(rng, config.d_model, config.d_model);
  const bool standard = config.mode == AttentionMode::kStandard;
  for (int i = 0; i < config.num_layers; ++i) {
    LayerParams layer;
    layer.self_block = init_block(rng, config.d_model, standard);
    layer.cross_block = init_block(rng, config.d_model, false);
    m.layers.push_back(std::move(layer));
  }
  m.dustbin = Mat::Ones(1, 1);
  return m;
}

std::vector<std::pair<std::string, Mat*>> enumerate_params(Model& m) {
  std::vector<std::pair<std::string, Mat*>> out;
  for_each_param(m, [&out](const std::string& name, Mat& mat) {
    out.emplace_back(name, &mat);
  });
  return out;
}

std::vector<std::pair<std::string, const Mat*>> enumerate_params(
    const Model& m) {
  std::vector<std::pair<std::string, const Mat*>> out;
  for_each_param(m, [&out](const std::string& name, const Mat& mat) {
    out.emplace_back(name, &mat);
  });
  return out;
}

void save_model(const std::string& path, const Model& m) {
  std::vector<WeightsEntry> entries;
  WeightsEntry cfg;
  cfg.name = "config";
  cfg.extents = {9};
  cfg.data = {static_cast<double>(static_cast<int>(m.config.mode)),
              static_cast<double>(m.config.d_model),
              static_cast<double>(m.config.heads),
              static_cast<double>(m.config.num_layers),
              static_cast<double>(m.config.dense_dim),
              static_cast<double>(m.config.super_dim),
              m.config.sigma_dist,
              m.config.sigma_angle_deg,
              static_cast<double>(m.config.angle_neighbors)};
  entries.push_back(std::move(cfg));
  for (const auto& [name, mat] : enumerate_params(m))
    entries.push_back(make_entry(name, *mat));
  write_weights(path, entries);
}

Model load_model(const std::string& path) {
  const std::vector<WeightsEntry> entries = read_weights(path);
  const WeightsEntry* cfg = find_entry(entries, "config");
  if (cfg == nullptr || cfg->data.size() != 9)
    throw DataError(path + ": missing or malformed 'config' entry");
  ModelConfig config;
  const int mode = static_cast<int>(cfg->data[0]);
  if (mode < 0 || mode > 2)
    throw DataError(path + ": invalid attention mode in config");
  config.mode = static_cast<AttentionMode>(mode);
  config.d_model = static_cast<int>(cfg->data[1]);
  config.heads = static_cast<int>(cfg->data[2]);
  config.num_layers = static_cast<int>(cfg->data[3]);
  config.dense_dim = static_cast<int>(cfg->data[4]);
  config.super_dim = static_cast<int>(cfg->data[5]);
  config.sigma_dist = cfg->data[6];
  config.sigma_angle_deg = cfg->data[7];
  config.angle_neighbors = static_cast<int>(cfg->data[8]);

  Model m = init_model(config, 0);
  for (auto& [name, mat] : enumerate_params(m)) {
    const WeightsEntry* e = find_entry(entries, name);
    if (e == nullptr) throw DataError(path + ": missing entry '" + name + "'");
    const Mat loaded = entry_matrix(*e);
    if (loaded.rows() != mat->rows() || loaded.cols() != mat->cols())
      throw DataError(path + ": shape mismatch for entry '" + name + "'");
    *mat = loaded;
  }
  return m;
}

namespace {

Var bind_one(Tape* tape, const Mat& m) {
  if (m.size() == 0) return Var();
  return tape != nullptr ? tape->leaf(m) : constant(m);
}

}  // namespace

BoundModel bind_model(Tape* tape, const Model& m) {
  BoundModel b;
  b.config = m.config;
  b.layers.resize(m.layers.size());
  // The visitor pairs plain and bound fields by walking both in lockstep.
  std::vector<const Mat*> mats;
  for (const auto& [name, mat] : enumerate_params(m)) mats.push_back(mat);
  std::vector<Var*> slots;
  for_each_param(b, [&slots](const std::string&, Var& v) {
    slots.push_back(&v);
  });
  if (slots.size() != mats.size())
    throw ConfigError("bind_model: parameter enumeration mismatch");
  for (std::size_t i = 0; i < mats.size(); ++i)
    *slots[i] = bind_one(tape, *mats[i]);
  return b;
}

std::vector<std::pair<std::string, const Var*>> enumerate_bound(
    const BoundModel& m) {
  std::vector<std::pair<std::string, const Var*>> out;
  for_each_param(m, [&out](const std::string& name, const Var& v) {
    out.emplace_back(name, &v);
  });
  return out;
}

}  // namespace georeg
