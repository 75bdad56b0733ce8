#pragma once

#include "diffma/codec.hpp"
#include "diffma/kvconfig.hpp"
#include "diffma/rng.hpp"
#include "diffma/tensor_io.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace diffma {

/// A paired sample: both sides share one geometry field; the source carries a
/// monotone contrast map plus ring artifacts, the target a bell-shaped
/// contrast map plus fine texture. The bell map deliberately decorrelates raw
/// intensities, so copying the source is a weak baseline for the target.
template <typename Scalar>
struct SyntheticPair {
  Image<Scalar> source;
  Image<Scalar> target;
  std::uint64_t geometry_seed = 0;
};

struct SyntheticOptions {
  int resolution = 128;   // divisible by 8
  int blobs = 5;
  double ring_amplitude = 0.03;
  double texture_amplitude = 0.02;
};

namespace synth_detail {

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

inline double source_map(double g) { return std::pow(g, 0.75); }

// Bell-shaped transfer peaking at mid-high geometry: bright tissue rims,
// darkened cores. Decorrelates raw intensities from the source map while
// keeping a positive structural correlation.
inline double target_map(double g) {
  constexpr double peak = 0.5;
  return 0.05 + 0.9 * std::max(0.0, g * (2.0 * peak - g)) / (peak * peak);
}

}  // namespace synth_detail

/// Deterministic generator for item `index` of a dataset seeded by `seed`.
template <typename Scalar>
SyntheticPair<Scalar> make_synthetic_pair(std::uint64_t seed, std::uint64_t index,
                                          const SyntheticOptions& opts = {}) {
  require(opts.resolution % 8 == 0, "resolution must be divisible by 8");
  const int res = opts.resolution;
  RandomStream rng(RandomStream::derive(seed, index));

  struct Blob {
    double cx, cy, sx, sy, angle, weight;
  };
  std::vector<Blob> blobs;
  for (int k = 0; k < opts.blobs; ++k) {
    blobs.push_back({rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                     rng.uniform(0.08, 0.3), rng.uniform(0.08, 0.3),
                     rng.uniform(0.0, 3.14159), rng.uniform(0.4, 1.0)});
  }
  // one body-like envelope per item; its center and radius jitter so that
  // unrelated items do not correlate through a common disk
  const double body_r = rng.uniform(0.26, 0.42);
  const double body_cx = rng.uniform(0.38, 0.62);
  const double body_cy = rng.uniform(0.38, 0.62);

  Mat<double> geometry(res, res);
  double gmin = 1e9, gmax = -1e9;
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const double u = (x + 0.5) / res, v = (y + 0.5) / res;
      double g = 0.0;
      for (const auto& bl : blobs) {
        const double dx = u - bl.cx, dy = v - bl.cy;
        const double ca = std::cos(bl.angle), sa = std::sin(bl.angle);
        const double rx = (ca * dx + sa * dy) / bl.sx;
        const double ry = (-sa * dx + ca * dy) / bl.sy;
        g += bl.weight * std::exp(-0.5 * (rx * rx + ry * ry));
      }
      const double dc = std::hypot(u - body_cx, v - body_cy);
      const double envelope = 1.0 / (1.0 + std::exp((dc - body_r) * 30.0));
      g *= envelope;
      geometry(y, x) = g;
      gmin = std::min(gmin, g);
      gmax = std::max(gmax, g);
    }
  const double span = std::max(1e-9, gmax - gmin);
  geometry = ((geometry.array() - gmin) / span).matrix();

  SyntheticPair<Scalar> pair;
  pair.geometry_seed = RandomStream::derive(seed, index);
  pair.source = Image<Scalar>::zero(1, res, res);
  pair.target = Image<Scalar>::zero(1, res, res);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const double g = geometry(y, x);
      const double u = (x + 0.5) / res, v = (y + 0.5) / res;
      const double r = std::hypot(u - 0.5, v - 0.5);
      const double ring =
          opts.ring_amplitude * std::sin(2.0 * 3.14159265358979 * r / 0.05);
      const double texture = opts.texture_amplitude * (rng.uniform() - 0.5);
      pair.source.at(0, y, x) = static_cast<Scalar>(
          synth_detail::clamp01(synth_detail::source_map(g) + ring));
      pair.target.at(0, y, x) = static_cast<Scalar>(
          synth_detail::clamp01(synth_detail::target_map(g) + texture));
    }
  return pair;
}

/// Replicates a single-channel image across three channels (codec input
/// convention).
template <typename Scalar>
Image<Scalar> to_three_channels(const Image<Scalar>& img) {
  if (img.channels == 3) return img;
  Image<Scalar> out = Image<Scalar>::zero(3, img.height, img.width);
  for (int c = 0; c < 3; ++c) out.data.row(c) = img.data.row(0);
  return out;
}

// ---- on-disk dataset --------------------------------------------------------

inline std::string pair_path(const std::string& dir, std::uint64_t index,
                             bool source) {
  char name[64];
  std::snprintf(name, sizeof(name), "pair_%05llu_%s.dmt",
                static_cast<unsigned long long>(index), source ? "src" : "tgt");
  return (std::filesystem::path(dir) / "pairs" / name).string();
}

template <typename Scalar>
void write_image_tensor(const std::string& path, const Image<Scalar>& img) {
  TensorFile t;
  t.dims = {static_cast<std::uint64_t>(img.channels),
            static_cast<std::uint64_t>(img.height),
            static_cast<std::uint64_t>(img.width)};
  t.data.resize(t.element_count());
  std::size_t k = 0;
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t.data[k++] = static_cast<double>(img.at(c, y, x));
  write_tensor(path, t);
}

template <typename Scalar>
Image<Scalar> read_image_tensor(const std::string& path) {
  const TensorFile t = read_tensor(path);
  require(t.dims.size() == 3, "image tensor must have dims {c, h, w}");
  Image<Scalar> img = Image<Scalar>::zero(static_cast<int>(t.dims[0]),
                                          static_cast<int>(t.dims[1]),
                                          static_cast<int>(t.dims[2]));
  std::size_t k = 0;
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        img.at(c, y, x) = static_cast<Scalar>(t.data[k++]);
  return img;
}

/// Writes n pairs plus a manifest. Items derive independent seeds, so the
/// layout is order-independent and reproducible.
template <typename Scalar>
KvConfig generate_synthetic_dataset(const std::string& dir, std::uint64_t n,
                                    std::uint64_t seed,
                                    const SyntheticOptions& opts = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "pairs");
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto pair = make_synthetic_pair<Scalar>(seed, i, opts);
    write_image_tensor(pair_path(dir, i, true), pair.source);
    write_image_tensor(pair_path(dir, i, false), pair.target);
  }
  KvConfig manifest;
  manifest.set_int("dataset.schema_version", 1);
  manifest.set_int("dataset.count", static_cast<long long>(n));
  manifest.set_int("dataset.seed", static_cast<long long>(seed));
  manifest.set_int("dataset.resolution", opts.resolution);
  manifest.set_int("dataset.blobs", opts.blobs);
  manifest.set_double("dataset.ring_amplitude", opts.ring_amplitude);
  manifest.set_double("dataset.texture_amplitude", opts.texture_amplitude);
  manifest.set("dataset.source_contrast", "pow075_rings");
  manifest.set("dataset.target_contrast", "bell_texture");
  manifest.save((fs::path(dir) / "manifest.kv").string());
  return manifest;
}

template <typename Scalar>
std::vector<SyntheticPair<Scalar>> load_synthetic_dataset(
    const std::string& dir, std::uint64_t limit = 0) {
  const KvConfig manifest =
      KvConfig::load((std::filesystem::path(dir) / "manifest.kv").string());
  const std::uint64_t count =
      static_cast<std::uint64_t>(manifest.get_int("dataset.count"));
  const std::uint64_t n = limit == 0 ? count : std::min(limit, count);
  std::vector<SyntheticPair<Scalar>> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    SyntheticPair<Scalar> p;
    p.source = read_image_tensor<Scalar>(pair_path(dir, i, true));
    p.target = read_image_tensor<Scalar>(pair_path(dir, i, false));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace diffma
