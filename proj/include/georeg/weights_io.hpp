#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "georeg/tensor.hpp"

namespace georeg {

/// One named dense array in a weights file.  Payload is row-major 64-bit.
struct WeightsEntry {
  std::string name;
  std::vector<std::uint32_t> extents;
  std::vector<double> data;
};

/// Serializes entries to the little-endian "GEOW" container:
/// magic, version u32, entry count u32, then per entry a u16 name length,
/// the UTF-8 name, a u8 rank, u32 extents and the f64 payload.
void write_weights(const std::string& path,
                   const std::vector<WeightsEntry>& entries);

/// Parses a weights file; throws DataError on bad magic, unsupported
/// version, or truncated payloads.
std::vector<WeightsEntry> read_weights(const std::string& path);

/// Rank-2 entry from a matrix (row-major payload).
WeightsEntry make_entry(const std::string& name, const Mat& m);

/// Matrix view of an entry: rank-1 becomes n-by-1, rank-2 maps directly;
/// higher ranks flatten all leading extents into rows.
Mat entry_matrix(const WeightsEntry& e);

/// Pointer to the entry with `name`, or null when absent.
const WeightsEntry* find_entry(const std::vector<WeightsEntry>& entries,
                               const std::string& name);

constexpr std::uint32_t kWeightsVersion = 1;

}  // namespace georeg
