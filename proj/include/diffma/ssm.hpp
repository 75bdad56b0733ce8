#pragma once

#include "diffma/common.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace diffma {

/// How the rows of the B / C projections bind to the sequence:
///   kPerChannel — one row per channel d (time-invariant system, shape D x N)
///   kPerToken   — one row per token l (input-dependent system, shape L x N,
///                 shared across channels)
enum class ParamBinding { kPerChannel, kPerToken };

/// Continuous state-space parameters for one scan head.
///
/// The state matrix is diagonal and stored as one length-N row per channel.
/// delta is the per-token, per-channel timescale (strictly positive outside
/// of test fixtures).
template <typename Scalar>
struct SsmParams {
  Mat<Scalar> A_diag;  // [D x N], entries <= 0 for stable scans
  Mat<Scalar> B;       // [D x N] per-channel or [L x N] per-token
  Mat<Scalar> C;       // same binding as B
  Mat<Scalar> delta;   // [L x D], > 0
  ParamBinding binding = ParamBinding::kPerChannel;

  Index channels() const { return A_diag.rows(); }
  Index state_size() const { return A_diag.cols(); }
  Index length() const { return delta.rows(); }
};

/// Zero-order-hold discretization, materialized per token: entry l holds the
/// [D x N] matrices applied at sequence position l.
template <typename Scalar>
struct DiscretizedSsm {
  std::vector<Mat<Scalar>> A_bar;  // exp(delta * A), in (0, 1] for A <= 0
  std::vector<Mat<Scalar>> B_bar;  // delta * B (first-order ZOH simplification)
  std::vector<Mat<Scalar>> C_bar;  // C, unchanged
  bool time_invariant = false;

  Index length() const { return static_cast<Index>(A_bar.size()); }
  Index channels() const { return A_bar.empty() ? 0 : A_bar[0].rows(); }
  Index state_size() const { return A_bar.empty() ? 0 : A_bar[0].cols(); }
};

/// Convolution kernel of a time-invariant scan; column d holds channel d's
/// kernel (C.A^i.B summed over the state dimension).
template <typename Scalar>
struct ScanKernel {
  Mat<Scalar> K;  // [L x D]
};

/// Optional instrumentation captured during a recurrent scan.
struct ScanTrace {
  double max_abs_state = 0.0;
};

template <typename Scalar>
DiscretizedSsm<Scalar> discretize_zoh(const SsmParams<Scalar>& p) {
  require_finite(p.A_diag, "A_diag");
  require_finite(p.B, "B");
  require_finite(p.C, "C");
  require_finite(p.delta, "delta");

  const Index L = p.length();
  const Index D = p.channels();
  const Index N = p.state_size();
  require(p.delta.cols() == D, "delta channel count must match A_diag rows");
  if (p.binding == ParamBinding::kPerChannel) {
    require(p.B.rows() == D && p.B.cols() == N, "B must be D x N (per-channel)");
    require(p.C.rows() == D && p.C.cols() == N, "C must be D x N (per-channel)");
  } else {
    require(p.B.rows() == L && p.B.cols() == N, "B must be L x N (per-token)");
    require(p.C.rows() == L && p.C.cols() == N, "C must be L x N (per-token)");
  }

  DiscretizedSsm<Scalar> d;
  d.A_bar.reserve(L);
  d.B_bar.reserve(L);
  d.C_bar.reserve(L);
  for (Index l = 0; l < L; ++l) {
    const auto delta_col = p.delta.row(l).transpose();  // [D x 1]
    Mat<Scalar> a = (p.A_diag.array().colwise() * delta_col.array()).exp().matrix();
    Mat<Scalar> b(D, N);
    Mat<Scalar> c(D, N);
    if (p.binding == ParamBinding::kPerChannel) {
      b = (p.B.array().colwise() * delta_col.array()).matrix();
      c = p.C;
    } else {
      b = delta_col * p.B.row(l);  // outer product, [D x N]
      c = p.C.row(l).replicate(D, 1);
    }
    d.A_bar.push_back(std::move(a));
    d.B_bar.push_back(std::move(b));
    d.C_bar.push_back(std::move(c));
  }

  bool invariant = true;
  for (Index l = 1; l < L && invariant; ++l) {
    invariant = d.A_bar[l] == d.A_bar[0] && d.B_bar[l] == d.B_bar[0] &&
                d.C_bar[l] == d.C_bar[0];
  }
  d.time_invariant = invariant && L > 0;
  return d;
}

/// The learned maps that make the scan parameters input-dependent. f_B and
/// f_C are per-token linear projections to the state dimension; f_delta is a
/// scalar projection broadcast over channels and shifted by delta_bias before
/// the softplus.
template <typename Scalar>
struct SelectiveProjections {
  Mat<Scalar> A_diag;      // [D x N]
  Mat<Scalar> W_B;         // [D x N]
  Mat<Scalar> W_C;         // [D x N]
  Mat<Scalar> w_delta;     // [D x 1]
  Vec<Scalar> delta_bias;  // [D]
};

template <typename Scalar>
Scalar softplus(Scalar x) {
  if (x > Scalar(30)) return x;
  return std::log1p(std::exp(static_cast<double>(x)));
}

template <typename Scalar>
SsmParams<Scalar> selective_params(const Mat<Scalar>& x,
                                   const SelectiveProjections<Scalar>& proj) {
  const Index L = x.rows();
  const Index D = x.cols();
  require(proj.A_diag.rows() == D, "A_diag rows must match token dimension");
  require(proj.W_B.rows() == D, "W_B rows must match token dimension");
  require(proj.W_C.rows() == D, "W_C rows must match token dimension");
  require(proj.W_B.cols() == proj.A_diag.cols() &&
              proj.W_C.cols() == proj.A_diag.cols(),
          "projection state size must match A_diag");
  require(proj.w_delta.rows() == D && proj.w_delta.cols() == 1,
          "w_delta must be D x 1");
  require(proj.delta_bias.size() == D, "delta_bias must have one entry per channel");
  require_finite(x, "x");

  SsmParams<Scalar> p;
  p.binding = ParamBinding::kPerToken;
  p.A_diag = proj.A_diag;
  p.B = x * proj.W_B;  // [L x N]
  p.C = x * proj.W_C;
  const Vec<Scalar> raw = x * proj.w_delta;  // [L x 1], broadcast over channels
  p.delta.resize(L, D);
  for (Index l = 0; l < L; ++l)
    for (Index d = 0; d < D; ++d)
      p.delta(l, d) = softplus<Scalar>(proj.delta_bias(d) + raw(l));
  return p;
}

/// Exact left-to-right recurrence h(t) = A_bar h(t-1) + B_bar x(t),
/// y(t) = sum_n C_bar h(t). State accumulation runs in double regardless of
/// the storage scalar; long products of A_bar amplify rounding otherwise.
template <typename Scalar>
Mat<Scalar> recurrent_scan(const DiscretizedSsm<Scalar>& d, const Mat<Scalar>& x,
                           const Mat<Scalar>* h0 = nullptr,
                           ScanTrace* trace = nullptr) {
  const Index L = d.length();
  const Index D = d.channels();
  const Index N = d.state_size();
  require(x.rows() == L && x.cols() == D,
          "input must be L x D and match the discretized system");

  Mat<double> h = Mat<double>::Zero(D, N);
  if (h0 != nullptr) {
    require(h0->rows() == D && h0->cols() == N, "h0 must be D x N");
    h = h0->template cast<double>();
  }

  Mat<Scalar> y(L, D);
  for (Index l = 0; l < L; ++l) {
    const Mat<double> a = d.A_bar[l].template cast<double>();
    const Mat<double> b = d.B_bar[l].template cast<double>();
    const Vec<double> xi = x.row(l).transpose().template cast<double>();
    h = (a.array() * h.array()).matrix() + (b.array().colwise() * xi.array()).matrix();
    if (trace != nullptr)
      trace->max_abs_state = std::max(trace->max_abs_state,
                                      h.cwiseAbs().maxCoeff());
    const Mat<double> c = d.C_bar[l].template cast<double>();
    y.row(l) = (c.array() * h.array()).rowwise().sum().matrix().transpose()
                   .template cast<Scalar>();
  }
  return y;
}

template <typename Scalar>
Mat<Scalar> recurrent_scan(const DiscretizedSsm<Scalar>& d, const Mat<Scalar>& x,
                           ScanTrace* trace) {
  return recurrent_scan<Scalar>(d, x, nullptr, trace);
}

/// Kernel of the global-convolution form, valid only for time-invariant
/// systems: K[i, d] = sum_n C[d,n] A[d,n]^i B[d,n].
template <typename Scalar>
ScanKernel<Scalar> build_kernel(const DiscretizedSsm<Scalar>& d, Index L) {
  require(d.length() > 0, "cannot build a kernel from an empty system");
  require(d.time_invariant,
          "kernel form requires time-invariant parameters; use recurrent_scan");
  const Index D = d.channels();
  const Index N = d.state_size();

  ScanKernel<Scalar> k;
  k.K.resize(L, D);
  Mat<double> a_pow = Mat<double>::Ones(D, N);
  const Mat<double> a = d.A_bar[0].template cast<double>();
  const Mat<double> cb =
      (d.C_bar[0].array() * d.B_bar[0].array()).matrix().template cast<double>();
  for (Index i = 0; i < L; ++i) {
    k.K.row(i) = (cb.array() * a_pow.array())
                     .rowwise().sum().matrix().transpose().template cast<Scalar>();
    a_pow = (a_pow.array() * a.array()).matrix();
  }
  return k;
}

/// Causal per-channel convolution y(t) = sum_{i<=t} K[i] x(t-i).
template <typename Scalar>
Mat<Scalar> kernel_scan(const ScanKernel<Scalar>& k, const Mat<Scalar>& x) {
  const Index L = x.rows();
  const Index D = x.cols();
  require(k.K.rows() == L && k.K.cols() == D,
          "kernel shape must match the input sequence");

  Mat<Scalar> y(L, D);
  for (Index t = 0; t < L; ++t) {
    Vec<double> acc = Vec<double>::Zero(D);
    for (Index i = 0; i <= t; ++i) {
      acc += (k.K.row(i).transpose().template cast<double>().array() *
              x.row(t - i).transpose().template cast<double>().array())
                 .matrix();
    }
    y.row(t) = acc.transpose().template cast<Scalar>();
  }
  return y;
}

}  // namespace diffma
