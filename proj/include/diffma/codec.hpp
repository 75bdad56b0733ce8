#pragma once

#include "diffma/common.hpp"

#include <string>
#include <vector>

namespace diffma {

/// Planar image: data is [channels x (height*width)] with row-major pixels.
template <typename Scalar>
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  Mat<Scalar> data;

  static Image zero(int c, int h, int w) {
    return {c, h, w, Mat<Scalar>::Zero(c, static_cast<Index>(h) * w)};
  }

  Scalar& at(int c, int y, int x) { return data(c, static_cast<Index>(y) * width + x); }
  Scalar at(int c, int y, int x) const {
    return data(c, static_cast<Index>(y) * width + x);
  }
};

enum class LatentProvenance { kEncoded, kSyntheticDirect };

/// Compressed spatial representation consumed by the diffusion model.
template <typename Scalar>
struct LatentImage {
  int channels = 0;
  int height = 0;
  int width = 0;
  Mat<Scalar> data;  // [channels x (height*width)]
  LatentProvenance provenance = LatentProvenance::kEncoded;

  static LatentImage zero(int c, int h, int w) {
    return {c, h, w, Mat<Scalar>::Zero(c, static_cast<Index>(h) * w),
            LatentProvenance::kEncoded};
  }

  Scalar& at(int c, int y, int x) { return data(c, static_cast<Index>(y) * width + x); }
  Scalar at(int c, int y, int x) const {
    return data(c, static_cast<Index>(y) * width + x);
  }
};

/// Pluggable image <-> latent codec. The default desk-scale implementation
/// below stands in for a heavy pretrained autoencoder.
template <typename Scalar>
class LatentCodec {
 public:
  virtual ~LatentCodec() = default;
  virtual LatentImage<Scalar> encode(const Image<Scalar>& img) const = 0;
  virtual Image<Scalar> decode(const LatentImage<Scalar>& z) const = 0;
  virtual int downsample_factor() const = 0;
  virtual int latent_channels() const = 0;
};

/// Space-to-depth average pooling codec: each 8x8 image block becomes one
/// latent pixel with 4 channels, one per 4x4 quadrant of the block (averaged
/// over the image channels). Decoding expands each quadrant back by nearest
/// neighbor, so constants round-trip exactly.
template <typename Scalar>
class PoolingCodec final : public LatentCodec<Scalar> {
 public:
  int downsample_factor() const override { return 8; }
  int latent_channels() const override { return 4; }

  LatentImage<Scalar> encode(const Image<Scalar>& img) const override {
    require(img.height % 8 == 0 && img.width % 8 == 0,
            "codec: image spatial dims must be divisible by 8");
    require(img.channels >= 1, "codec: image needs at least one channel");
    const int h = img.height / 8, w = img.width / 8;
    LatentImage<Scalar> z = LatentImage<Scalar>::zero(4, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int q = 0; q < 4; ++q) {
          const int qy = (q / 2) * 4, qx = (q % 2) * 4;
          double acc = 0.0;
          for (int c = 0; c < img.channels; ++c)
            for (int dy = 0; dy < 4; ++dy)
              for (int dx = 0; dx < 4; ++dx)
                acc += img.at(c, 8 * y + qy + dy, 8 * x + qx + dx);
          z.at(q, y, x) =
              static_cast<Scalar>(acc / (16.0 * img.channels));
        }
    z.provenance = LatentProvenance::kEncoded;
    return z;
  }

  Image<Scalar> decode(const LatentImage<Scalar>& z) const override {
    require(z.channels == 4, "codec: latent must have 4 channels");
    Image<Scalar> img = Image<Scalar>::zero(3, z.height * 8, z.width * 8);
    for (int y = 0; y < z.height; ++y)
      for (int x = 0; x < z.width; ++x)
        for (int q = 0; q < 4; ++q) {
          const int qy = (q / 2) * 4, qx = (q % 2) * 4;
          for (int c = 0; c < 3; ++c)
            for (int dy = 0; dy < 4; ++dy)
              for (int dx = 0; dx < 4; ++dx)
                img.at(c, 8 * y + qy + dy, 8 * x + qx + dx) = z.at(q, y, x);
        }
    return img;
  }
};

}  // namespace diffma
