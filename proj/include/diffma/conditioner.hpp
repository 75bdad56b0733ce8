#pragma once

#include "diffma/codec.hpp"
#include "diffma/common.hpp"
#include "diffma/rng.hpp"

namespace diffma {

/// Deterministic stand-in for a frozen external vision-language encoder. It
/// carves the source image into a fixed 14x14 grid (K = 196 tokens), computes
/// small per-cell statistics, and projects them through a constant
/// pseudo-random matrix to the requested dimension. No trainable state; only
/// the output shape matters to the architecture.
template <typename Scalar>
class HashedConditioner {
 public:
  explicit HashedConditioner(Index dim, std::uint64_t salt = 0x9d2c5680u)
      : dim_(dim) {
    RandomStream rng(salt);
    projection_ = rng.normal_mat<Scalar>(kStats, dim_,
                                         1.0 / std::sqrt(double(kStats)));
  }

  static constexpr int kGrid = 14;
  static constexpr Index kTokens = kGrid * kGrid;  // K = 196
  static constexpr Index kStats = 4;

  Index dim() const { return dim_; }

  /// Returns [K x dim] features for one image.
  Mat<Scalar> encode(const Image<Scalar>& img) const {
    require(img.height >= kGrid && img.width >= kGrid,
            "conditioner: image smaller than the feature grid");
    Mat<Scalar> stats(kTokens, kStats);
    for (int gy = 0; gy < kGrid; ++gy)
      for (int gx = 0; gx < kGrid; ++gx) {
        const int y0 = gy * img.height / kGrid, y1 = (gy + 1) * img.height / kGrid;
        const int x0 = gx * img.width / kGrid, x1 = (gx + 1) * img.width / kGrid;
        double sum = 0.0, sq = 0.0, gradx = 0.0, grady = 0.0;
        int n = 0;
        for (int c = 0; c < img.channels; ++c)
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
              const double v = img.at(c, y, x);
              sum += v;
              sq += v * v;
              if (x + 1 < img.width) gradx += img.at(c, y, x + 1) - v;
              if (y + 1 < img.height) grady += img.at(c, y + 1, x) - v;
              ++n;
            }
        const Index row = static_cast<Index>(gy) * kGrid + gx;
        stats(row, 0) = static_cast<Scalar>(sum / n);
        stats(row, 1) = static_cast<Scalar>(std::sqrt(std::max(0.0, sq / n)));
        stats(row, 2) = static_cast<Scalar>(gradx / n);
        stats(row, 3) = static_cast<Scalar>(grady / n);
      }
    return stats * projection_;
  }

  /// Mean over the token axis -> one row per image.
  Mat<Scalar> encode_pooled(const std::vector<Image<Scalar>>& batch) const {
    Mat<Scalar> out(static_cast<Index>(batch.size()), dim_);
    for (Index b = 0; b < out.rows(); ++b)
      out.row(b) = encode(batch[static_cast<std::size_t>(b)]).colwise().mean();
    return out;
  }

 private:
  Index dim_;
  Mat<Scalar> projection_;
};

}  // namespace diffma
