#include "georeg/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "georeg/errors.hpp"

namespace georeg {

namespace {

constexpr char kMagic[4] = {'G', 'E', 'O', 'W'};

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i)
    buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(raw(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(raw(4)); }
  double f64() { return std::bit_cast<double>(raw(8)); }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(at_, n);
    at_ += n;
    return s;
  }

  bool done() const { return at_ == bytes_.size(); }

 private:
  std::uint64_t raw(std::size_t n) {
    need(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(bytes_[at_ + i]))
           << (8 * i);
    at_ += n;
    return v;
  }

  void need(std::size_t n) {
    if (at_ + n > bytes_.size())
      throw DataError("weights file truncated: " + path_);
  }

  const std::string& bytes_;
  std::string path_;
  std::size_t at_ = 0;
};

}  // namespace

void write_weights(const std::string& path,
                   const std::vector<WeightsEntry>& entries) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kWeightsVersion);
  put_u32(buf, static_cast<std::uint32_t>(entries.size()));
  for (const WeightsEntry& e : entries) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max())
      throw ParameterError("weights entry name too long: " + e.name);
    if (e.extents.size() > 255)
      throw ParameterError("weights entry rank too large: " + e.name);
    std::size_t count = 1;
    for (std::uint32_t ext : e.extents) {
      if (ext == 0) throw ParameterError("zero extent in entry: " + e.name);
      count *= ext;
    }
    if (count != e.data.size())
      throw ParameterError("payload size mismatch in entry: " + e.name);
    put_u16(buf, static_cast<std::uint16_t>(e.name.size()));
    buf.append(e.name);
    buf.push_back(static_cast<char>(e.extents.size()));
    for (std::uint32_t ext : e.extents) put_u32(buf, ext);
    for (double v : e.data) put_f64(buf, v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("write failed: " + path);
}

std::vector<WeightsEntry> read_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open weights file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  Reader r(bytes, path);
  if (r.str(4) != std::string(kMagic, 4))
    throw DataError("bad magic in weights file: " + path);
  const std::uint32_t version = r.u32();
  if (version != kWeightsVersion)
    throw DataError("unsupported weights version " + std::to_string(version) +
                    " in " + path);
  const std::uint32_t count = r.u32();
  std::vector<WeightsEntry> entries;
  entries.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    WeightsEntry e;
    e.name = r.str(r.u16());
    const auto rank = static_cast<std::size_t>(
        static_cast<unsigned char>(r.str(1)[0]));
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank; ++i) {
      e.extents.push_back(r.u32());
      if (e.extents.back() == 0)
        throw DataError("zero extent in entry '" + e.name + "': " + path);
      n *= e.extents.back();
    }
    e.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) e.data[i] = r.f64();
    entries.push_back(std::move(e));
  }
  if (!r.done()) throw DataError("trailing bytes in weights file: " + path);
  return entries;
}

WeightsEntry make_entry(const std::string& name, const Mat& m) {
  WeightsEntry e;
  e.name = name;
  e.extents = {static_cast<std::uint32_t>(m.rows()),
               static_cast<std::uint32_t>(m.cols())};
  e.data.resize(static_cast<std::size_t>(m.size()));
  std::size_t at = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) e.data[at++] = m(i, j);
  return e;
}

Mat entry_matrix(const WeightsEntry& e) {
  if (e.extents.empty()) throw DataError("rank-0 entry: " + e.name);
  Eigen::Index cols = e.extents.back();
  Eigen::Index rows = 1;
  for (std::size_t i = 0; i + 1 < e.extents.size(); ++i)
    rows *= e.extents[i];
  if (e.extents.size() == 1) {
    rows = e.extents[0];
    cols = 1;
  }
  Mat m(rows, cols);
  std::size_t at = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = e.data[at++];
  return m;
}

const WeightsEntry* find_entry(const std::vector<WeightsEntry>& entries,
                               const std::string& name) {
  for (const WeightsEntry& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

}  // namespace georeg
