#include "diffma/tensor_io.hpp"

#include <cstring>
#include <fstream>

namespace diffma {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'T', 'B'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF64 = 0;

template <typename T>
void put(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void write_tensor(const std::string& path, const TensorFile& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("tensor_io: cannot write " + path);
  f.write(kMagic, 4);
  put<std::uint32_t>(f, kVersion);
  put<std::uint32_t>(f, kDtypeF64);
  put<std::uint32_t>(f, static_cast<std::uint32_t>(t.dims.size()));
  for (const auto d : t.dims) put<std::uint64_t>(f, d);
  f.write(reinterpret_cast<const char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!f) throw std::runtime_error("tensor_io: short write to " + path);
}

TensorFile read_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("tensor_io: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("tensor_io: bad magic in " + path);
  const auto version = take<std::uint32_t>(f);
  if (version != kVersion)
    throw std::runtime_error("tensor_io: unsupported version in " + path);
  const auto dtype = take<std::uint32_t>(f);
  if (dtype != kDtypeF64)
    throw std::runtime_error("tensor_io: unsupported dtype in " + path);
  const auto ndim = take<std::uint32_t>(f);
  TensorFile t;
  t.dims.resize(ndim);
  for (auto& d : t.dims) d = take<std::uint64_t>(f);
  t.data.resize(t.element_count());
  f.read(reinterpret_cast<char*>(t.data.data()),
         static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!f) throw std::runtime_error("tensor_io: truncated payload in " + path);
  return t;
}

void write_matrix(const std::string& path, const Mat<double>& m) {
  TensorFile t;
  t.dims = {static_cast<std::uint64_t>(m.rows()),
            static_cast<std::uint64_t>(m.cols())};
  t.data.resize(t.element_count());
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      t.data[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  write_tensor(path, t);
}

Mat<double> read_matrix(const std::string& path) {
  const TensorFile t = read_tensor(path);
  if (t.dims.size() != 2)
    throw std::runtime_error("tensor_io: expected matrix in " + path);
  Mat<double> m(static_cast<Index>(t.dims[0]), static_cast<Index>(t.dims[1]));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      m(i, j) = t.data[static_cast<std::size_t>(i * m.cols() + j)];
  return m;
}

}  // namespace diffma
