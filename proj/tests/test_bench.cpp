#include "diffma/bench.hpp"

#include <doctest.h>

using namespace diffma;

TEST_CASE("flops closed forms") {
  SUBCASE("unit substitution") {
    const auto f = flops_estimate(1, 1, 1);
    CHECK(f.attention == 6);
    CHECK(f.spiral_scan == 16);
  }

  SUBCASE("hand-evaluated spot values") {
    // attention: 4*L*D^2 + 2*L^2*D ; scan: 12*L*D*N + 4*L*D*N^2
    struct Spot {
      long long L, D, N, attention, scan;
    };
    const Spot spots[] = {
        {1, 1, 1, 6, 16},
        {2, 1, 1, 16, 32},
        {1, 2, 1, 20, 32},
        {1, 1, 2, 6, 40},
        {16, 512, 16, 17039360, 9961472},
        {49, 512, 16, 53838848, 30507008},
        {196, 512, 16, 244858880, 122028032},
        {64, 64, 16, 1572864, 4980736},
        {1024, 64, 8, 150994944, 23068672},
        {4096, 512, 16, 21474836480LL, 2550136832LL},
    };
    for (const auto& s : spots) {
      const auto f = flops_estimate(s.L, s.D, s.N);
      CHECK(f.attention == s.attention);
      CHECK(f.spiral_scan == s.scan);
    }
  }

  SUBCASE("scan cost is exactly linear in L") {
    for (const long long L : {3, 17, 220}) {
      const auto f1 = flops_estimate(L, 96, 16);
      const auto f2 = flops_estimate(2 * L, 96, 16);
      CHECK(f2.spiral_scan == 2 * f1.spiral_scan);
    }
  }

  SUBCASE("attention cost is superlinear in L") {
    const auto f1 = flops_estimate(64, 96, 16);
    const auto f2 = flops_estimate(128, 96, 16);
    CHECK(f2.attention > 2 * f1.attention);
  }

  SUBCASE("non-positive arguments rejected") {
    CHECK_THROWS_AS(flops_estimate(0, 1, 1), std::invalid_argument);
  }
}

TEST_CASE("scaling benchmark produces a sane report on a reduced grid") {
  BenchOptions opts;
  opts.grid = {32, 64, 128, 256, 512};
  opts.dim = 32;
  opts.repeats = 3;
  const BenchReport report = scaling_benchmark(opts);

  CHECK(report.scan_points.size() == opts.grid.size());
  CHECK(report.attention_points.size() == opts.grid.size());
  // loose sanity bounds; the acceptance suite runs the full-size grid with
  // the real thresholds
  CHECK(report.scan_slope > 0.3);
  CHECK(report.scan_slope < 1.7);
  CHECK(report.attention_slope > 1.2);
  // doubling D should roughly double the scan time; allow one remeasure to
  // ride out scheduling noise
  double ratio = report.scan_dim_ratio;
  if (ratio < 1.4 || ratio > 2.6) ratio = scaling_benchmark(opts).scan_dim_ratio;
  CHECK(ratio >= 1.4);
  CHECK(ratio <= 2.6);

  const KvConfig kv = report.describe();
  CHECK(kv.has("bench.scan_slope"));
  CHECK(kv.has("bench.attention_slope"));
  CHECK(kv.has("bench.scan.L512"));
}

TEST_CASE("a benchmark grid must span a wide range") {
  BenchOptions opts;
  opts.grid = {64, 128};
  CHECK_THROWS_AS(scaling_benchmark(opts), std::invalid_argument);
}
