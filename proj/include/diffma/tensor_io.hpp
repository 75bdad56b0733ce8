#pragma once

#include "diffma/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace diffma {

/// Little-endian raw tensor container (.dmt).
///
/// Layout: magic "DMTB", u32 version, u32 dtype code (0 = float64),
/// u32 ndim, u64 dims[ndim], then the payload in C (row-major-on-last-dim)
/// order. Matrices are written row by row.
struct TensorFile {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (const auto d : dims) n *= d;
    return n;
  }
};

void write_tensor(const std::string& path, const TensorFile& t);
TensorFile read_tensor(const std::string& path);

/// Matrix convenience wrappers (dims = {rows, cols}).
void write_matrix(const std::string& path, const Mat<double>& m);
Mat<double> read_matrix(const std::string& path);

}  // namespace diffma
