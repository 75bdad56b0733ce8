#include "diffma/metrics.hpp"

#include <doctest.h>

#include <cmath>

#include "diffma/rng.hpp"

using namespace diffma;

namespace {

Image<double> random_image(RandomStream& rng, int h = 32, int w = 32) {
  Image<double> img = Image<double>::zero(1, h, w);
  img.data = rng.uniform_mat<double>(1, static_cast<Index>(h) * w, 0.0, 1.0);
  return img;
}

// Brute-force SSIM oracle: direct per-window accumulation with its own
// Gaussian weights, no shared filtering code.
double naive_ssim(const Image<double>& a, const Image<double>& b) {
  const int radius = 5;
  const double sigma = 1.5;
  double wsum = 0.0;
  double w[11][11];
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      w[dy + radius][dx + radius] =
          std::exp(-0.5 * (dy * dy + dx * dx) / (sigma * sigma));
      wsum += w[dy + radius][dx + radius];
    }
  for (auto& row : w)
    for (auto& v : row) v /= wsum;

  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  int count = 0;
  for (int y = radius; y < a.height - radius; ++y)
    for (int x = radius; x < a.width - radius; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const double wa = w[dy + radius][dx + radius];
          const double va = a.at(0, y + dy, x + dx);
          const double vb = b.at(0, y + dy, x + dx);
          ma += wa * va;
          mb += wa * vb;
          saa += wa * va * va;
          sbb += wa * vb * vb;
          sab += wa * va * vb;
        }
      const double var_a = saa - ma * ma, var_b = sbb - mb * mb;
      const double cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      ++count;
    }
  return total / count;
}

}  // namespace

TEST_CASE("identical batches score perfectly") {
  RandomStream rng(1);
  const auto img = random_image(rng);
  const auto r = compute_metrics<double>({img, img}, {img, img});
  CHECK(r.ssim_pct == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(r.mse_255 == 0.0);
  CHECK(r.psnr_db == 100.0);
  CHECK(r.count == 2);
}

TEST_CASE("constant offset has the closed-form mse") {
  Image<double> a = Image<double>::zero(1, 16, 16);
  a.data.setConstant(0.3);
  Image<double> b = a;
  b.data.setConstant(0.4);
  // (0.1 * 255)^2 = 650.25 on the 0-255 scale
  CHECK(mse_255(a, b) == doctest::Approx(650.25).epsilon(1e-12));
}

TEST_CASE("psnr pairs with the 255-scale mse convention") {
  // An MSE of 71.90 on the 0-255 scale corresponds to ~29.56 dB; published
  // translation systems report these two numbers together at this magnitude,
  // which pins down the pixel-scale convention.
  const double mse = 71.90;
  const double psnr = 10.0 * std::log10(255.0 * 255.0 / mse);
  CHECK(psnr == doctest::Approx(29.56).epsilon(0.01));
}

TEST_CASE("metrics are symmetric") {
  RandomStream rng(2);
  const auto a = random_image(rng);
  const auto b = random_image(rng);
  CHECK(mse_255(a, b) == mse_255(b, a));
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
}

TEST_CASE("ssim matches the brute-force oracle") {
  RandomStream rng(3);
  for (int rep = 0; rep < 3; ++rep) {
    const auto a = random_image(rng, 24, 24);
    Image<double> b = a;
    b.data += rng.uniform_mat<double>(1, b.data.cols(), -0.1, 0.1);
    b.data = b.data.cwiseMax(0.0).cwiseMin(1.0);
    CHECK(ssim(a, b) == doctest::Approx(naive_ssim(a, b)).epsilon(1e-9));
  }
}

TEST_CASE("shape and range violations are rejected") {
  RandomStream rng(4);
  const auto a = random_image(rng, 32, 32);
  const auto b = random_image(rng, 32, 16);
  CHECK_THROWS_AS(ssim(a, b), std::invalid_argument);
  CHECK_THROWS_AS(mse_255(a, b), std::invalid_argument);

  auto out_of_range = a;
  out_of_range.data(0, 0) = 1.5;
  CHECK_THROWS_AS(compute_metrics<double>({out_of_range}, {a}),
                  std::invalid_argument);

  const auto tiny = random_image(rng, 8, 8);
  CHECK_THROWS_AS(ssim(tiny, tiny), std::invalid_argument);
}

TEST_CASE("clamp helper maps decoded output into metric range") {
  Image<double> img = Image<double>::zero(1, 16, 16);
  img.data.setConstant(-0.5);
  img.data(0, 0) = 2.0;
  const auto c = clamp_image(img);
  CHECK(c.data.minCoeff() == 0.0);
  CHECK(c.data.maxCoeff() == 1.0);
}
