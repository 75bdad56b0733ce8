#pragma once

#include "diffma/codec.hpp"
#include "diffma/common.hpp"

#include <cmath>
#include <vector>

namespace diffma {

/// Aggregate image-quality report. Conventions: pixels live in [0, 1]; SSIM
/// is reported as a percentage, PSNR against peak 1.0 (capped at 100 dB for
/// identical images), MSE on the 0-255 scale.
struct MetricReport {
  double ssim_pct = 0.0;
  double psnr_db = 0.0;
  double mse_255 = 0.0;
  int count = 0;
};

namespace metric_detail {

inline std::vector<double> gaussian_window(int radius, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    w[static_cast<std::size_t>(i + radius)] =
        std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += w[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Separable valid-mode Gaussian filter over a [h x w] plane.
inline Mat<double> gaussian_filter_valid(const Mat<double>& plane, int radius,
                                         double sigma) {
  const std::vector<double> w = gaussian_window(radius, sigma);
  const Index h = plane.rows(), wd = plane.cols();
  Mat<double> tmp(h, wd - 2 * radius);
  for (Index y = 0; y < h; ++y)
    for (Index x = radius; x < wd - radius; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += w[static_cast<std::size_t>(k + radius)] * plane(y, x + k);
      tmp(y, x - radius) = acc;
    }
  Mat<double> out(h - 2 * radius, wd - 2 * radius);
  for (Index y = radius; y < h - radius; ++y)
    for (Index x = 0; x < tmp.cols(); ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += w[static_cast<std::size_t>(k + radius)] * tmp(y + k, x);
      out(y - radius, x) = acc;
    }
  return out;
}

template <typename Scalar>
Mat<double> channel_mean_plane(const Image<Scalar>& img) {
  Mat<double> plane(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double acc = 0.0;
      for (int c = 0; c < img.channels; ++c) acc += img.at(c, y, x);
      plane(y, x) = acc / img.channels;
    }
  return plane;
}

}  // namespace metric_detail

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5) and the
/// standard stabilization constants, on the channel-mean plane. Returns the
/// raw index in [-1, 1].
template <typename Scalar>
double ssim(const Image<Scalar>& a, const Image<Scalar>& b) {
  require(a.channels == b.channels && a.height == b.height &&
              a.width == b.width,
          "ssim: image shapes must match");
  require(a.height >= 11 && a.width >= 11,
          "ssim: images must be at least 11x11");
  constexpr int kRadius = 5;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;  // (K1 * range)^2, range = 1
  constexpr double kC2 = 0.03 * 0.03;

  using namespace metric_detail;
  const Mat<double> pa = channel_mean_plane(a);
  const Mat<double> pb = channel_mean_plane(b);
  const Mat<double> mu_a = gaussian_filter_valid(pa, kRadius, kSigma);
  const Mat<double> mu_b = gaussian_filter_valid(pb, kRadius, kSigma);
  const Mat<double> aa =
      gaussian_filter_valid((pa.array() * pa.array()).matrix(), kRadius, kSigma);
  const Mat<double> bb =
      gaussian_filter_valid((pb.array() * pb.array()).matrix(), kRadius, kSigma);
  const Mat<double> ab =
      gaussian_filter_valid((pa.array() * pb.array()).matrix(), kRadius, kSigma);

  double total = 0.0;
  for (Index y = 0; y < mu_a.rows(); ++y)
    for (Index x = 0; x < mu_a.cols(); ++x) {
      const double ma = mu_a(y, x), mb = mu_b(y, x);
      const double va = aa(y, x) - ma * ma;
      const double vb = bb(y, x) - mb * mb;
      const double cov = ab(y, x) - ma * mb;
      total += ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
               ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
    }
  return total / (mu_a.rows() * mu_a.cols());
}

template <typename Scalar>
double mse_255(const Image<Scalar>& a, const Image<Scalar>& b) {
  require(a.channels == b.channels && a.height == b.height &&
              a.width == b.width,
          "mse: image shapes must match");
  const Mat<double> diff =
      (a.data.template cast<double>() - b.data.template cast<double>()) * 255.0;
  return diff.array().square().mean();
}

template <typename Scalar>
double psnr_db(const Image<Scalar>& a, const Image<Scalar>& b) {
  const double m = mse_255(a, b) / (255.0 * 255.0);  // back to unit range
  if (m <= 0.0) return 100.0;  // identical images: report the cap
  return std::min(100.0, 10.0 * std::log10(1.0 / m));
}

template <typename Scalar>
void check_pixel_range(const Image<Scalar>& img, const char* which) {
  const double lo = img.data.minCoeff();
  const double hi = img.data.maxCoeff();
  require(lo >= -1e-9 && hi <= 1.0 + 1e-9,
          std::string("compute_metrics: ") + which +
              " pixels outside the documented [0, 1] range");
}

template <typename Scalar>
MetricReport compute_metrics(const std::vector<Image<Scalar>>& generated,
                             const std::vector<Image<Scalar>>& reference) {
  require(generated.size() == reference.size() && !generated.empty(),
          "compute_metrics: batches must be non-empty and equally sized");
  MetricReport r;
  r.count = static_cast<int>(generated.size());
  for (std::size_t i = 0; i < generated.size(); ++i) {
    check_pixel_range(generated[i], "generated");
    check_pixel_range(reference[i], "reference");
    r.ssim_pct += 100.0 * ssim(generated[i], reference[i]);
    r.psnr_db += psnr_db(generated[i], reference[i]);
    r.mse_255 += mse_255(generated[i], reference[i]);
  }
  r.ssim_pct /= r.count;
  r.psnr_db /= r.count;
  r.mse_255 /= r.count;
  return r;
}

template <typename Scalar>
Image<Scalar> clamp_image(Image<Scalar> img, Scalar lo = 0, Scalar hi = 1) {
  img.data = img.data.cwiseMax(lo).cwiseMin(hi);
  return img;
}

}  // namespace diffma
