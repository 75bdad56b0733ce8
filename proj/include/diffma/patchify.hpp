#pragma once

#include "diffma/codec.hpp"
#include "diffma/common.hpp"

#include <cmath>

namespace diffma {

/// Number of patch tokens of a (h x w) grid under square patches of size p.
inline Index patch_count(int h, int w, int p) {
  require(p >= 1, "patch size must be >= 1");
  require(h % p == 0 && w % p == 0,
          "latent spatial size must be divisible by the patch size");
  return static_cast<Index>(h / p) * (w / p);
}

/// Extracts non-overlapping patches: row l holds patch l (scanning the patch
/// grid row-major) flattened channel-major, then y, then x.
template <typename Scalar>
Mat<Scalar> patch_extract(const LatentImage<Scalar>& z, int p) {
  const Index L = patch_count(z.height, z.width, p);
  const int gw = z.width / p;
  Mat<Scalar> out(L, static_cast<Index>(z.channels) * p * p);
  for (Index l = 0; l < L; ++l) {
    const int gy = static_cast<int>(l) / gw, gx = static_cast<int>(l) % gw;
    Index k = 0;
    for (int c = 0; c < z.channels; ++c)
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          out(l, k++) = z.at(c, gy * p + dy, gx * p + dx);
  }
  return out;
}

/// Inverse of patch_extract for the same geometry.
template <typename Scalar>
LatentImage<Scalar> patch_fold(const Mat<Scalar>& tokens, int channels, int h,
                               int w, int p) {
  require(tokens.rows() == patch_count(h, w, p),
          "patch_fold: token count does not match the grid");
  require(tokens.cols() == static_cast<Index>(channels) * p * p,
          "patch_fold: token width does not match channels*p*p");
  LatentImage<Scalar> z = LatentImage<Scalar>::zero(channels, h, w);
  const int gw = w / p;
  for (Index l = 0; l < tokens.rows(); ++l) {
    const int gy = static_cast<int>(l) / gw, gx = static_cast<int>(l) % gw;
    Index k = 0;
    for (int c = 0; c < channels; ++c)
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          z.at(c, gy * p + dy, gx * p + dx) = tokens(l, k++);
  }
  return z;
}

/// Fixed 2D sinusoidal positional table for a gh x gw patch grid: half the
/// channels encode the row coordinate, half the column, each as interleaved
/// sin/cos over log-spaced frequencies.
template <typename Scalar>
Mat<Scalar> sinusoidal_position_table(int gh, int gw, Index dim) {
  require(dim % 4 == 0, "positional dimension must be a multiple of 4");
  const Index quarter = dim / 4;
  Mat<Scalar> table(static_cast<Index>(gh) * gw, dim);
  for (int y = 0; y < gh; ++y)
    for (int x = 0; x < gw; ++x) {
      const Index row = static_cast<Index>(y) * gw + x;
      for (Index k = 0; k < quarter; ++k) {
        const double freq =
            std::pow(10000.0, -static_cast<double>(k) / quarter);
        table(row, 4 * k + 0) = static_cast<Scalar>(std::sin(y * freq));
        table(row, 4 * k + 1) = static_cast<Scalar>(std::cos(y * freq));
        table(row, 4 * k + 2) = static_cast<Scalar>(std::sin(x * freq));
        table(row, 4 * k + 3) = static_cast<Scalar>(std::cos(x * freq));
      }
    }
  return table;
}

/// Sinusoidal embedding of integer timesteps, one row per batch entry.
template <typename Scalar>
Mat<Scalar> sinusoidal_timestep_table(const std::vector<int>& t, Index dim) {
  require(dim % 2 == 0, "timestep embedding dimension must be even");
  const Index half = dim / 2;
  Mat<Scalar> out(static_cast<Index>(t.size()), dim);
  for (Index b = 0; b < out.rows(); ++b) {
    for (Index k = 0; k < half; ++k) {
      const double freq = std::pow(10000.0, -static_cast<double>(k) / half);
      out(b, 2 * k + 0) = static_cast<Scalar>(std::sin(t[b] * freq));
      out(b, 2 * k + 1) = static_cast<Scalar>(std::cos(t[b] * freq));
    }
  }
  return out;
}

}  // namespace diffma
