#pragma once

#include "diffma/autodiff.hpp"
#include "diffma/kvconfig.hpp"
#include "diffma/rng.hpp"

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace diffma {

/// Dense layer y = x W + b. Weights follow the usual uniform fan-in init;
/// zero_init produces an exact-zero map (gates, output heads).
template <typename Scalar>
struct Linear {
  Param<Scalar> W;
  Param<Scalar> b;
  bool has_bias = true;

  Linear() = default;

  Linear(const std::string& name, Index in, Index out, RandomStream& rng,
         bool zero_init = false, bool bias = true)
      : has_bias(bias) {
    W.name = name + ".W";
    b.name = name + ".b";
    if (zero_init) {
      W.value = Mat<Scalar>::Zero(in, out);
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      W.value = rng.uniform_mat<Scalar>(in, out, -bound, bound);
    }
    if (has_bias) b.value = Mat<Scalar>::Zero(1, out);
  }

  typename Tape<Scalar>::Var forward(Tape<Scalar>& t,
                                     typename Tape<Scalar>::Var x) {
    auto y = t.matmul(x, t.param(W));
    if (has_bias) y = t.add_rowvec(y, t.param(b));
    return y;
  }

  void collect(ParamRefs<Scalar>& out) {
    out.push_back(&W);
    if (has_bias) out.push_back(&b);
  }
};

/// Per-row layer normalization with learnable gain and shift.
template <typename Scalar>
struct LayerNorm {
  Param<Scalar> gamma;
  Param<Scalar> beta;

  LayerNorm() = default;

  LayerNorm(const std::string& name, Index dim) {
    gamma.name = name + ".gamma";
    beta.name = name + ".beta";
    gamma.value = Mat<Scalar>::Ones(1, dim);
    beta.value = Mat<Scalar>::Zero(1, dim);
  }

  typename Tape<Scalar>::Var forward(Tape<Scalar>& t,
                                     typename Tape<Scalar>::Var x) {
    auto n = t.layernorm_rows(x);
    return t.add_rowvec(t.cmul_rowvec(n, t.param(gamma)), t.param(beta));
  }

  void collect(ParamRefs<Scalar>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

template <typename Scalar>
Index total_param_count(const ParamRefs<Scalar>& params) {
  Index n = 0;
  for (const auto* p : params) n += p->count();
  return n;
}

template <typename Scalar>
void zero_all_grads(const ParamRefs<Scalar>& params) {
  for (auto* p : params) p->zero_grad();
}

// ---- checkpoint container --------------------------------------------------
//
// Binary layout: magic "DMCK", u32 version, u64 meta length, meta (a KvConfig
// text blob carrying the config snapshot and fingerprints), u64 tensor count,
// then per tensor: u32 name length, name, u64 rows, u64 cols, f64 payload.

namespace ckpt {

constexpr char kMagic[4] = {'D', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename Scalar>
void save(const std::string& path, const KvConfig& meta,
          const ParamRefs<Scalar>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f.write(kMagic, 4);
  const std::uint32_t version = kVersion;
  f.write(reinterpret_cast<const char*>(&version), 4);
  const std::string meta_text = meta.serialize();
  const std::uint64_t meta_len = meta_text.size();
  f.write(reinterpret_cast<const char*>(&meta_len), 8);
  f.write(meta_text.data(), static_cast<std::streamsize>(meta_len));
  const std::uint64_t count = params.size();
  f.write(reinterpret_cast<const char*>(&count), 8);
  for (const auto* p : params) {
    const std::uint32_t nlen = static_cast<std::uint32_t>(p->name.size());
    f.write(reinterpret_cast<const char*>(&nlen), 4);
    f.write(p->name.data(), nlen);
    const std::uint64_t rows = p->value.rows(), cols = p->value.cols();
    f.write(reinterpret_cast<const char*>(&rows), 8);
    f.write(reinterpret_cast<const char*>(&cols), 8);
    for (Index i = 0; i < p->value.rows(); ++i)
      for (Index j = 0; j < p->value.cols(); ++j) {
        const double v = static_cast<double>(p->value(i, j));
        f.write(reinterpret_cast<const char*>(&v), 8);
      }
  }
  if (!f) throw std::runtime_error("checkpoint: short write to " + path);
}

/// Reads the meta block only.
inline KvConfig peek_meta(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  std::uint64_t meta_len = 0;
  f.read(reinterpret_cast<char*>(&meta_len), 8);
  std::string meta_text(meta_len, '\0');
  f.read(meta_text.data(), static_cast<std::streamsize>(meta_len));
  if (!f) throw std::runtime_error("checkpoint: truncated meta in " + path);
  return KvConfig::parse(meta_text);
}

/// Loads tensors into an already-constructed parameter set; names and shapes
/// must match exactly.
template <typename Scalar>
KvConfig load(const std::string& path, const ParamRefs<Scalar>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  std::uint64_t meta_len = 0;
  f.read(reinterpret_cast<char*>(&meta_len), 8);
  std::string meta_text(meta_len, '\0');
  f.read(meta_text.data(), static_cast<std::streamsize>(meta_len));
  const KvConfig meta = KvConfig::parse(meta_text);

  std::uint64_t count = 0;
  f.read(reinterpret_cast<char*>(&count), 8);
  if (count != params.size())
    throw std::runtime_error("checkpoint: tensor count mismatch in " + path);
  for (auto* p : params) {
    std::uint32_t nlen = 0;
    f.read(reinterpret_cast<char*>(&nlen), 4);
    std::string name(nlen, '\0');
    f.read(name.data(), nlen);
    if (name != p->name)
      throw std::runtime_error("checkpoint: expected tensor '" + p->name +
                               "', found '" + name + "' in " + path);
    std::uint64_t rows = 0, cols = 0;
    f.read(reinterpret_cast<char*>(&rows), 8);
    f.read(reinterpret_cast<char*>(&cols), 8);
    if (rows != static_cast<std::uint64_t>(p->value.rows()) ||
        cols != static_cast<std::uint64_t>(p->value.cols()))
      throw std::runtime_error("checkpoint: shape mismatch for '" + p->name +
                               "' in " + path);
    for (Index i = 0; i < p->value.rows(); ++i)
      for (Index j = 0; j < p->value.cols(); ++j) {
        double v = 0;
        f.read(reinterpret_cast<char*>(&v), 8);
        p->value(i, j) = static_cast<Scalar>(v);
      }
  }
  if (!f) throw std::runtime_error("checkpoint: truncated payload in " + path);
  return meta;
}

}  // namespace ckpt

}  // namespace diffma
