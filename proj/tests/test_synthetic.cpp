#include "diffma/synthetic.hpp"

#include <doctest.h>

#include <filesystem>

#include "diffma/metrics.hpp"

using namespace diffma;
namespace fs = std::filesystem;

TEST_CASE("generation is deterministic in the seed") {
  const auto a = make_synthetic_pair<double>(42, 3);
  const auto b = make_synthetic_pair<double>(42, 3);
  CHECK(a.source.data == b.source.data);
  CHECK(a.target.data == b.target.data);

  const auto c = make_synthetic_pair<double>(43, 3);
  CHECK(a.source.data != c.source.data);
}

TEST_CASE("pairs share geometry: matched targets beat shuffled ones") {
  SyntheticOptions opts;
  opts.resolution = 64;
  double matched = 0.0, shuffled = 0.0;
  const int n = 40;
  for (int i = 0; i < n; ++i) {
    const auto p = make_synthetic_pair<double>(7, static_cast<std::uint64_t>(i),
                                               opts);
    const auto q = make_synthetic_pair<double>(
        7, static_cast<std::uint64_t>((i + 1) % n), opts);
    matched += ssim(p.source, p.target);
    shuffled += ssim(p.source, q.target);
  }
  CHECK(matched / n > shuffled / n);
}

TEST_CASE("pixel ranges stay in the unit interval") {
  for (int i = 0; i < 5; ++i) {
    const auto p = make_synthetic_pair<double>(11, static_cast<std::uint64_t>(i));
    CHECK(p.source.data.minCoeff() >= 0.0);
    CHECK(p.source.data.maxCoeff() <= 1.0);
    CHECK(p.target.data.minCoeff() >= 0.0);
    CHECK(p.target.data.maxCoeff() <= 1.0);
  }
}

TEST_CASE("indivisible resolution is rejected") {
  SyntheticOptions opts;
  opts.resolution = 60;
  CHECK_THROWS_AS(make_synthetic_pair<double>(1, 0, opts),
                  std::invalid_argument);
}

TEST_CASE("dataset round trip on disk") {
  const std::string dir = "/tmp/diffma_test_dataset";
  fs::remove_all(dir);
  SyntheticOptions opts;
  opts.resolution = 64;
  const KvConfig manifest = generate_synthetic_dataset<double>(dir, 4, 99, opts);
  CHECK(manifest.get_int("dataset.count") == 4);
  CHECK(manifest.get_int("dataset.seed") == 99);
  CHECK(manifest.get_int("dataset.resolution") == 64);

  const auto pairs = load_synthetic_dataset<double>(dir);
  REQUIRE(pairs.size() == 4);
  const auto regen = make_synthetic_pair<double>(99, 2, opts);
  CHECK(pairs[2].source.data == regen.source.data);
  CHECK(pairs[2].target.data == regen.target.data);

  SUBCASE("empty dataset is valid") {
    const std::string dir0 = "/tmp/diffma_test_dataset_empty";
    fs::remove_all(dir0);
    generate_synthetic_dataset<double>(dir0, 0, 1, opts);
    const auto none = load_synthetic_dataset<double>(dir0);
    CHECK(none.empty());
  }
}

TEST_CASE("three-channel replication for the codec") {
  const auto p = make_synthetic_pair<double>(5, 0);
  const auto rgb = to_three_channels(p.source);
  CHECK(rgb.channels == 3);
  CHECK(rgb.data.row(0) == rgb.data.row(2));
  CHECK(rgb.data.row(0) == p.source.data.row(0));
}
