#include "diffma/ssm.hpp"

#include <doctest.h>

#include <cmath>

#include "diffma/rng.hpp"

using namespace diffma;

namespace {

// Brute-force oracle: the recurrence written as plain scalar loops, no Eigen
// expressions shared with the implementation.
template <typename Scalar>
Mat<Scalar> naive_scan(const DiscretizedSsm<Scalar>& d, const Mat<Scalar>& x) {
  const Index L = d.length(), D = d.channels(), N = d.state_size();
  std::vector<std::vector<double>> h(D, std::vector<double>(N, 0.0));
  Mat<Scalar> y(L, D);
  for (Index l = 0; l < L; ++l) {
    for (Index i = 0; i < D; ++i) {
      double yi = 0.0;
      for (Index n = 0; n < N; ++n) {
        h[i][n] = static_cast<double>(d.A_bar[l](i, n)) * h[i][n] +
                  static_cast<double>(d.B_bar[l](i, n)) *
                      static_cast<double>(x(l, i));
        yi += static_cast<double>(d.C_bar[l](i, n)) * h[i][n];
      }
      y(l, i) = static_cast<Scalar>(yi);
    }
  }
  return y;
}

template <typename Scalar>
SsmParams<Scalar> random_stable_params(RandomStream& rng, Index L, Index D,
                                       Index N) {
  SsmParams<Scalar> p;
  p.A_diag = (-rng.uniform_mat<Scalar>(D, N, 0.1, 3.0).array()).matrix();
  p.B = rng.normal_mat<Scalar>(D, N);
  p.C = rng.normal_mat<Scalar>(D, N);
  p.delta = rng.uniform_mat<Scalar>(1, D, 0.05, 1.0).replicate(L, 1);
  p.binding = ParamBinding::kPerChannel;
  return p;
}

}  // namespace

TEST_CASE("zoh discretization closed forms") {
  SsmParams<double> p;
  p.A_diag = Mat<double>::Constant(1, 1, -1.0);
  p.B = Mat<double>::Constant(1, 1, 1.0);
  p.C = Mat<double>::Constant(1, 1, 1.0);
  p.delta = Mat<double>::Constant(1, 1, std::log(2.0));
  const auto d = discretize_zoh(p);
  CHECK(d.A_bar[0](0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(d.B_bar[0](0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(d.C_bar[0](0, 0) == 1.0);

  SUBCASE("zero delta freezes the state") {
    p.delta.setZero();
    p.A_diag.setConstant(-7.3);
    const auto dz = discretize_zoh(p);
    CHECK(dz.A_bar[0](0, 0) == 1.0);
    CHECK(dz.B_bar[0](0, 0) == 0.0);
  }

  SUBCASE("zero state matrix") {
    p.A_diag.setZero();
    p.delta.setConstant(0.3);
    const auto dz = discretize_zoh(p);
    CHECK(dz.A_bar[0](0, 0) == 1.0);
    CHECK(dz.B_bar[0](0, 0) == doctest::Approx(0.3).epsilon(1e-15));
  }
}

TEST_CASE("non-finite inputs are rejected with the field name") {
  SsmParams<double> p;
  p.A_diag = Mat<double>::Constant(1, 1, -1.0);
  p.B = Mat<double>::Constant(1, 1, 1.0);
  p.C = Mat<double>::Constant(1, 1, 1.0);
  p.delta = Mat<double>::Constant(1, 1, std::nan(""));
  CHECK_THROWS_WITH_AS(discretize_zoh(p),
                       doctest::Contains("field 'delta'"),
                       std::invalid_argument);
  p.delta.setConstant(0.5);
  p.B.setConstant(std::numeric_limits<double>::infinity());
  CHECK_THROWS_WITH_AS(discretize_zoh(p), doctest::Contains("field 'B'"),
                       std::invalid_argument);
}

TEST_CASE("selective parameterization") {
  const Index L = 5, D = 3, N = 4;
  RandomStream rng(41);
  SelectiveProjections<double> proj;
  proj.A_diag = (-rng.uniform_mat<double>(D, N, 0.5, 2.0).array()).matrix();
  proj.W_B = Mat<double>::Zero(D, N);
  proj.W_C = Mat<double>::Zero(D, N);
  proj.w_delta = Mat<double>::Zero(D, 1);
  proj.delta_bias = Vec<double>::Zero(D);

  SUBCASE("zero projection and bias gives softplus(0) = ln 2") {
    const Mat<double> x = rng.normal_mat<double>(L, D);
    const auto p = selective_params(x, proj);
    CHECK(p.delta.minCoeff() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(p.delta.maxCoeff() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("large bias approaches the softplus asymptote") {
    proj.delta_bias.setConstant(20.0);
    const Mat<double> x = Mat<double>::Zero(L, D);
    const auto p = selective_params(x, proj);
    CHECK(std::abs(p.delta(0, 0) - 20.0) < 1e-6);
  }

  SUBCASE("zero input with zero maps yields zero B and C") {
    const Mat<double> x = Mat<double>::Zero(L, D);
    const auto p = selective_params(x, proj);
    CHECK(p.B.cwiseAbs().maxCoeff() == 0.0);
    CHECK(p.C.cwiseAbs().maxCoeff() == 0.0);
    CHECK(p.binding == ParamBinding::kPerToken);
  }

  SUBCASE("delta stays strictly positive for random finite inputs") {
    proj.w_delta = rng.normal_mat<double>(D, 1);
    proj.delta_bias = rng.normal_mat<double>(D, 1).col(0) * 5.0;
    for (int rep = 0; rep < 50; ++rep) {
      const Mat<double> x = rng.normal_mat<double>(L, D, 10.0);
      const auto p = selective_params(x, proj);
      CHECK(p.delta.minCoeff() > 0.0);
    }
  }

  SUBCASE("shape mismatches are rejected") {
    proj.W_B = Mat<double>::Zero(D + 1, N);
    const Mat<double> x = Mat<double>::Zero(L, D);
    CHECK_THROWS_AS(selective_params(x, proj), std::invalid_argument);
  }
}

TEST_CASE("recurrent scan degenerate forms") {
  const Index L = 6, D = 2, N = 3;
  RandomStream rng(7);

  SUBCASE("A_bar = 0 collapses to a memoryless map") {
    SsmParams<double> p;
    p.A_diag = Mat<double>::Constant(D, N, -1e9);  // exp(delta*A) == 0
    p.B = rng.normal_mat<double>(D, N);
    p.C = rng.normal_mat<double>(D, N);
    p.delta = Mat<double>::Constant(L, D, 1.0);
    const auto d = discretize_zoh(p);
    const Mat<double> x = rng.normal_mat<double>(L, D);
    const Mat<double> y = recurrent_scan(d, x);
    for (Index l = 0; l < L; ++l)
      for (Index i = 0; i < D; ++i) {
        const double expect =
            (p.C.row(i).array() * p.B.row(i).array()).sum() * x(l, i);
        CHECK(y(l, i) == doctest::Approx(expect).epsilon(1e-12));
      }
  }

  SUBCASE("unit parameters give a running prefix sum") {
    DiscretizedSsm<double> d;
    for (Index l = 0; l < L; ++l) {
      d.A_bar.push_back(Mat<double>::Ones(1, 1));
      d.B_bar.push_back(Mat<double>::Ones(1, 1));
      d.C_bar.push_back(Mat<double>::Ones(1, 1));
    }
    d.time_invariant = true;
    const Mat<double> x = rng.normal_mat<double>(L, 1);
    const Mat<double> y = recurrent_scan(d, x);
    double run = 0.0;
    for (Index l = 0; l < L; ++l) {
      run += x(l, 0);
      CHECK(y(l, 0) == doctest::Approx(run).epsilon(1e-12));
    }
  }
}

TEST_CASE("recurrent scan matches the naive double-loop oracle") {
  RandomStream rng(1234);
  const auto p = random_stable_params<double>(rng, 16, 3, 4);
  const auto d = discretize_zoh(p);
  const Mat<double> x = rng.normal_mat<double>(16, 3);
  const Mat<double> got = recurrent_scan(d, x);
  const Mat<double> want = naive_scan(d, x);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("kernel closed forms") {
  SsmParams<double> p;
  p.A_diag = Mat<double>::Constant(1, 1, std::log(0.5));  // A_bar = 0.5 at delta 1
  p.B = Mat<double>::Ones(1, 1);
  p.C = Mat<double>::Ones(1, 1);
  p.delta = Mat<double>::Ones(3, 1);
  const auto d = discretize_zoh(p);
  const auto k = build_kernel(d, 3);
  CHECK(k.K(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(k.K(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(k.K(2, 0) == doctest::Approx(0.25).epsilon(1e-12));

  SUBCASE("unit impulse reproduces the kernel") {
    Mat<double> x = Mat<double>::Zero(3, 1);
    x(0, 0) = 1.0;
    const Mat<double> y = kernel_scan(k, x);
    CHECK((y - k.K).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("A_bar = 0 makes the kernel a single tap") {
    SsmParams<double> pz = p;
    pz.A_diag.setConstant(-1e9);
    const auto kz = build_kernel(discretize_zoh(pz), 3);
    CHECK(kz.K(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(kz.K(1, 0) == 0.0);
    CHECK(kz.K(2, 0) == 0.0);
  }
}

TEST_CASE("kernel path rejects time-varying systems") {
  RandomStream rng(5);
  auto p = random_stable_params<double>(rng, 8, 2, 3);
  p.delta(3, 1) *= 2.0;  // break time invariance
  const auto d = discretize_zoh(p);
  CHECK_FALSE(d.time_invariant);
  CHECK_THROWS_AS(build_kernel(d, 8), std::invalid_argument);
}

TEST_CASE("recurrent and kernel scans agree on time-invariant systems") {
  SUBCASE("high precision (double), 1e-10") {
    RandomStream rng(99);
    for (int rep = 0; rep < 40; ++rep) {
      const Index N = 1 + rng.uniform_int(0, 7);
      const Index L = 2 + rng.uniform_int(0, 62);
      const Index D = 1 + rng.uniform_int(0, 3);
      const auto p = random_stable_params<double>(rng, L, D, N);
      const auto d = discretize_zoh(p);
      REQUIRE(d.time_invariant);
      const Mat<double> x = rng.normal_mat<double>(L, D);
      const Mat<double> a = recurrent_scan(d, x);
      const Mat<double> b = kernel_scan(build_kernel(d, L), x);
      CHECK((a - b).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  SUBCASE("standard precision (float), 1e-5") {
    RandomStream rng(100);
    for (int rep = 0; rep < 40; ++rep) {
      const Index N = 1 + rng.uniform_int(0, 7);
      const Index L = 2 + rng.uniform_int(0, 62);
      const auto p = random_stable_params<float>(rng, L, 2, N);
      const auto d = discretize_zoh(p);
      const Mat<float> x = rng.normal_mat<float>(L, 2);
      const Mat<float> a = recurrent_scan(d, x);
      const Mat<float> b = kernel_scan(build_kernel(d, L), x);
      CHECK((a - b).cwiseAbs().maxCoeff() < 1e-5f);
    }
  }
}

TEST_CASE("stable systems stay bounded over long sequences") {
  RandomStream rng(2024);
  const Index L = 4096, D = 2, N = 4;
  const auto p = random_stable_params<double>(rng, L, D, N);
  const auto d = discretize_zoh(p);
  const Mat<double> x = rng.uniform_mat<double>(L, D, -1.0, 1.0);

  double max_abar = 0.0, max_bbar = 0.0;
  for (const auto& a : d.A_bar) max_abar = std::max(max_abar, a.maxCoeff());
  for (const auto& b : d.B_bar)
    max_bbar = std::max(max_bbar, b.cwiseAbs().maxCoeff());
  REQUIRE(max_abar < 1.0);

  ScanTrace trace;
  const Mat<double> y = recurrent_scan(d, x, &trace);
  CHECK(y.allFinite());
  CHECK(trace.max_abs_state <= N * max_bbar / (1.0 - max_abar));
}

TEST_CASE("scan shape mismatches are rejected") {
  RandomStream rng(3);
  const auto p = random_stable_params<double>(rng, 4, 2, 2);
  const auto d = discretize_zoh(p);
  const Mat<double> bad_cols = Mat<double>::Zero(4, 3);
  const Mat<double> bad_rows = Mat<double>::Zero(5, 2);
  CHECK_THROWS_AS(recurrent_scan(d, bad_cols), std::invalid_argument);
  CHECK_THROWS_AS(recurrent_scan(d, bad_rows), std::invalid_argument);
  const auto k = build_kernel(d, 4);
  const Mat<double> short_seq = Mat<double>::Zero(3, 2);
  CHECK_THROWS_AS(kernel_scan(k, short_seq), std::invalid_argument);
}
