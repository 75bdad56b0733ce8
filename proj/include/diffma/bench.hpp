#pragma once

#include "diffma/kvconfig.hpp"
#include "diffma/rng.hpp"
#include "diffma/ssm.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <iostream>
#include <vector>

namespace diffma {

/// Closed-form operation counts for one token mixer over an [L x D] sequence
/// with state size N:
///   dense self-attention: 4 L D^2 + 2 L^2 D
///   serialized dual scan: 2 [3 L (2D) N + L (2D) N^2]
struct FlopsEstimate {
  long long attention = 0;
  long long spiral_scan = 0;
};

inline FlopsEstimate flops_estimate(long long L, long long D, long long N) {
  require(L > 0 && D > 0 && N > 0, "flops_estimate: arguments must be positive");
  FlopsEstimate f;
  f.attention = 4 * L * D * D + 2 * L * L * D;
  f.spiral_scan = 2 * (3 * L * (2 * D) * N + L * (2 * D) * N * N);
  return f;
}

struct BenchPoint {
  Index L = 0;
  double median_seconds = 0.0;
  bool dropped = false;  // below timer resolution
};

struct BenchReport {
  std::vector<BenchPoint> scan_points;
  std::vector<BenchPoint> attention_points;
  double scan_slope = 0.0;            // log-log least squares, full grid
  double attention_slope = 0.0;       // upper half of the grid
  double scan_dim_ratio = 0.0;        // time(2D) / time(D) at fixed L
  Index dim = 64;
  Index state = 16;
  int repeats = 5;

  KvConfig describe() const {
    KvConfig kv;
    kv.set_int("bench.dim", dim);
    kv.set_int("bench.state", state);
    kv.set_int("bench.repeats", repeats);
    kv.set_double("bench.scan_slope", scan_slope);
    kv.set_double("bench.attention_slope", attention_slope);
    kv.set_double("bench.scan_dim_ratio", scan_dim_ratio);
    for (std::size_t i = 0; i < scan_points.size(); ++i) {
      const auto& p = scan_points[i];
      kv.set_double("bench.scan.L" + std::to_string(p.L), p.median_seconds);
    }
    for (std::size_t i = 0; i < attention_points.size(); ++i) {
      const auto& p = attention_points[i];
      kv.set_double("bench.attention.L" + std::to_string(p.L),
                    p.median_seconds);
    }
    return kv;
  }
};

namespace bench_detail {

using Clock = std::chrono::steady_clock;

inline double timer_resolution_seconds() {
  double best = 1.0;
  for (int i = 0; i < 64; ++i) {
    const auto a = Clock::now();
    auto b = Clock::now();
    while (b == a) b = Clock::now();
    best = std::min(best,
                    std::chrono::duration<double>(b - a).count());
  }
  return best;
}

template <typename Fn>
double median_runtime(Fn&& fn, int repeats, int warmup = 2) {
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(repeats));
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = Clock::now();
    fn();
    const auto t1 = Clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

inline double loglog_slope(const std::vector<BenchPoint>& pts) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (const auto& p : pts) {
    if (p.dropped) continue;
    const double x = std::log(static_cast<double>(p.L));
    const double y = std::log(p.median_seconds);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  require(n >= 2, "benchmark: not enough valid points for a slope fit");
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// Time-invariant scan fixture; parameters built outside the timed region.
template <typename Scalar>
double time_scan(Index L, Index D, Index N, int repeats, RandomStream& rng) {
  SsmParams<Scalar> p;
  p.A_diag = (-rng.uniform_mat<Scalar>(D, N, 0.1, 2.0).array()).matrix();
  p.B = rng.normal_mat<Scalar>(D, N);
  p.C = rng.normal_mat<Scalar>(D, N);
  p.delta = rng.uniform_mat<Scalar>(1, D, 0.1, 1.0).replicate(L, 1);
  const auto d = discretize_zoh(p);
  const Mat<Scalar> x = rng.normal_mat<Scalar>(L, D);
  volatile Scalar sink = 0;
  return median_runtime(
      [&]() {
        const Mat<Scalar> y = recurrent_scan(d, x);
        sink = sink + y(L - 1, 0);
      },
      repeats);
}

template <typename Scalar>
double time_attention(Index L, Index D, int repeats, RandomStream& rng) {
  const Mat<Scalar> q = rng.normal_mat<Scalar>(L, D);
  const Mat<Scalar> k = rng.normal_mat<Scalar>(L, D);
  const Mat<Scalar> v = rng.normal_mat<Scalar>(L, D);
  volatile Scalar sink = 0;
  return median_runtime(
      [&]() {
        Mat<Scalar> s = q * k.transpose() / std::sqrt(Scalar(D));
        for (Index r = 0; r < s.rows(); ++r) {
          const Scalar mx = s.row(r).maxCoeff();
          s.row(r) = (s.row(r).array() - mx).exp().matrix();
          s.row(r) /= s.row(r).sum();
        }
        const Mat<Scalar> o = s * v;
        sink = sink + o(L - 1, 0);
      },
      repeats);
}

}  // namespace bench_detail

struct BenchOptions {
  std::vector<Index> grid{64, 128, 256, 512, 1024, 2048, 4096};
  Index dim = 64;
  Index state = 16;
  int repeats = 5;
  std::uint64_t seed = 7;
  std::ostream* warnings = nullptr;
};

/// Times the serialized scan and a dense-attention baseline across the L
/// grid, fits log-log slopes (attention on the upper half of the grid, where
/// the quadratic term dominates), and measures the scan's scaling in D.
inline BenchReport scaling_benchmark(const BenchOptions& opts = {}) {
  using namespace bench_detail;
  require(opts.grid.size() >= 2, "benchmark: grid needs at least two sizes");
  require(opts.grid.back() / opts.grid.front() >= 16,
          "benchmark: grid must span at least a 16x range");
  BenchReport report;
  report.dim = opts.dim;
  report.state = opts.state;
  report.repeats = opts.repeats;
  RandomStream rng(opts.seed);

  const double resolution = timer_resolution_seconds();
  const double floor_s = std::max(resolution * 50.0, 1e-7);

  for (const Index L : opts.grid) {
    BenchPoint p;
    p.L = L;
    p.median_seconds =
        time_scan<float>(L, opts.dim, opts.state, opts.repeats, rng);
    if (p.median_seconds < floor_s) {
      p.dropped = true;
      if (opts.warnings != nullptr)
        (*opts.warnings) << "warning: scan point L=" << L
                         << " below timer resolution, dropped\n";
    }
    report.scan_points.push_back(p);
  }
  for (const Index L : opts.grid) {
    BenchPoint p;
    p.L = L;
    p.median_seconds = time_attention<float>(L, opts.dim, opts.repeats, rng);
    if (p.median_seconds < floor_s) {
      p.dropped = true;
      if (opts.warnings != nullptr)
        (*opts.warnings) << "warning: attention point L=" << L
                         << " below timer resolution, dropped\n";
    }
    report.attention_points.push_back(p);
  }

  report.scan_slope = loglog_slope(report.scan_points);
  std::vector<BenchPoint> upper(
      report.attention_points.begin() +
          static_cast<std::ptrdiff_t>(report.attention_points.size() / 2),
      report.attention_points.end());
  report.attention_slope = loglog_slope(upper);

  // dim scaling: median ratio over three sequence lengths to damp cache and
  // scheduling noise on small machines
  std::vector<double> ratios;
  for (const Index L : {opts.grid[opts.grid.size() / 3],
                        opts.grid[opts.grid.size() / 2],
                        opts.grid[2 * opts.grid.size() / 3]}) {
    const double t1 = time_scan<float>(L, opts.dim, opts.state, opts.repeats, rng);
    const double t2 =
        time_scan<float>(L, 2 * opts.dim, opts.state, opts.repeats, rng);
    ratios.push_back(t2 / t1);
  }
  std::sort(ratios.begin(), ratios.end());
  report.scan_dim_ratio = ratios[ratios.size() / 2];
  return report;
}

}  // namespace diffma
