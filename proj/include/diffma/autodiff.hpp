#pragma once

#include "diffma/common.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace diffma {

/// A named trainable tensor. Gradients accumulate across backward passes
/// until zero_grad(); optimizer state lives elsewhere.
template <typename Scalar>
struct Param {
  std::string name;
  Mat<Scalar> value;
  Mat<Scalar> grad;

  void zero_grad() {
    if (grad.size() != 0) grad.setZero();
  }

  void accumulate(const Mat<Scalar>& g) {
    if (grad.size() == 0) grad = Mat<Scalar>::Zero(value.rows(), value.cols());
    grad += g;
  }

  Index count() const { return value.size(); }
};

template <typename Scalar>
using ParamRefs = std::vector<Param<Scalar>*>;

/// Dynamic reverse-mode tape over dense Eigen matrices. A fresh tape is built
/// per forward pass; backward() walks the recorded nodes in reverse creation
/// order, which is a valid topological order.
template <typename Scalar>
class Tape {
 public:
  using M = Mat<Scalar>;

  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  const M& value(Var v) const { return nodes_[v.id].value; }

  /// Gradient of the last backward() target with respect to `v`. Zero matrix
  /// if the node did not participate.
  M gradient(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0)
      return M::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  // ---- leaves ------------------------------------------------------------

  Var constant(M v) { return push(std::move(v), false, {}); }

  /// Leaf whose gradient is wanted (inputs under test, frozen features whose
  /// sensitivity is probed, ...).
  Var input(M v) { return push(std::move(v), grad_enabled_, {}); }

  Var param(Param<Scalar>& p) {
    Var v = push(p.value, grad_enabled_, {});
    if (grad_enabled_) bound_.push_back({v.id, &p});
    return v;
  }

  // ---- arithmetic --------------------------------------------------------

  Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    M out = value(a) + value(b);
    return record(std::move(out), {a, b}, [this, a, b](const M& g) {
      accumulate(a, g);
      accumulate(b, g);
    });
  }

  Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    M out = value(a) - value(b);
    return record(std::move(out), {a, b}, [this, a, b](const M& g) {
      accumulate(a, g);
      accumulate(b, (-g).eval());
    });
  }

  Var cmul(Var a, Var b) {
    check_same_shape(a, b, "cmul");
    M out = value(a).cwiseProduct(value(b));
    return record(std::move(out), {a, b}, [this, a, b](const M& g) {
      accumulate(a, g.cwiseProduct(value(b)));
      accumulate(b, g.cwiseProduct(value(a)));
    });
  }

  Var scale(Var a, Scalar c) {
    M out = value(a) * c;
    return record(std::move(out), {a}, [this, a, c](const M& g) {
      accumulate(a, (g * c).eval());
    });
  }

  Var add_const(Var a, Scalar c) {
    M out = (value(a).array() + c).matrix();
    return record(std::move(out), {a}, [this, a](const M& g) {
      accumulate(a, g);
    });
  }

  Var matmul(Var a, Var b) {
    require(value(a).cols() == value(b).rows(), "matmul: inner dims mismatch");
    M out = value(a) * value(b);
    return record(std::move(out), {a, b}, [this, a, b](const M& g) {
      accumulate(a, g * value(b).transpose());
      accumulate(b, value(a).transpose() * g);
    });
  }

  Var transpose(Var a) {
    M out = value(a).transpose();
    return record(std::move(out), {a}, [this, a](const M& g) {
      accumulate(a, g.transpose().eval());
    });
  }

  /// Adds a [1 x C] row vector to every row.
  Var add_rowvec(Var a, Var row) {
    require(value(row).rows() == 1 && value(row).cols() == value(a).cols(),
            "add_rowvec: row must be 1 x cols(a)");
    M out = value(a).rowwise() + value(row).row(0);
    return record(std::move(out), {a, row}, [this, a, row](const M& g) {
      accumulate(a, g);
      accumulate(row, g.colwise().sum().eval());
    });
  }

  /// Multiplies every row element-wise by a [1 x C] row vector.
  Var cmul_rowvec(Var a, Var row) {
    require(value(row).rows() == 1 && value(row).cols() == value(a).cols(),
            "cmul_rowvec: row must be 1 x cols(a)");
    M out = (value(a).array().rowwise() * value(row).row(0).array()).matrix();
    return record(std::move(out), {a, row}, [this, a, row](const M& g) {
      accumulate(a, (g.array().rowwise() * value(row).row(0).array()).matrix());
      accumulate(row, (g.array() * value(a).array()).colwise().sum().matrix());
    });
  }

  /// Multiplies every column element-wise by an [R x 1] column vector.
  Var cmul_colvec(Var a, Var col) {
    require(value(col).cols() == 1 && value(col).rows() == value(a).rows(),
            "cmul_colvec: col must be rows(a) x 1");
    M out = (value(a).array().colwise() * value(col).col(0).array()).matrix();
    return record(std::move(out), {a, col}, [this, a, col](const M& g) {
      accumulate(a, (g.array().colwise() * value(col).col(0).array()).matrix());
      accumulate(col, (g.array() * value(a).array()).rowwise().sum().matrix());
    });
  }

  /// Adds an [R x 1] column vector to every column.
  Var add_colvec(Var a, Var col) {
    require(value(col).cols() == 1 && value(col).rows() == value(a).rows(),
            "add_colvec: col must be rows(a) x 1");
    M out = (value(a).array().colwise() + value(col).col(0).array()).matrix();
    return record(std::move(out), {a, col}, [this, a, col](const M& g) {
      accumulate(a, g);
      accumulate(col, g.rowwise().sum().eval());
    });
  }

  /// Multiplies by a scalar held in a 1 x 1 node.
  Var mul_by_scalar(Var a, Var s) {
    require(value(s).rows() == 1 && value(s).cols() == 1,
            "mul_by_scalar: factor must be 1 x 1");
    const Scalar sv = value(s)(0, 0);
    M out = value(a) * sv;
    return record(std::move(out), {a, s}, [this, a, s, sv](const M& g) {
      accumulate(a, (g * sv).eval());
      M gs(1, 1);
      gs(0, 0) = (g.array() * value(a).array()).sum();
      accumulate(s, gs);
    });
  }

  /// Adds a scalar held in a 1 x 1 node to every entry.
  Var add_scalar_node(Var a, Var s) {
    require(value(s).rows() == 1 && value(s).cols() == 1,
            "add_scalar_node: term must be 1 x 1");
    M out = (value(a).array() + value(s)(0, 0)).matrix();
    return record(std::move(out), {a, s}, [this, a, s](const M& g) {
      accumulate(a, g);
      M gs(1, 1);
      gs(0, 0) = g.sum();
      accumulate(s, gs);
    });
  }

  /// Divides by a scalar held in a 1 x 1 node (learnable temperature etc.).
  Var div_by_scalar(Var a, Var s) {
    require(value(s).rows() == 1 && value(s).cols() == 1,
            "div_by_scalar: divisor must be 1 x 1");
    const Scalar sv = value(s)(0, 0);
    M out = value(a) / sv;
    return record(std::move(out), {a, s}, [this, a, s, sv](const M& g) {
      accumulate(a, (g / sv).eval());
      M gs(1, 1);
      gs(0, 0) = -(g.array() * value(a).array()).sum() / (sv * sv);
      accumulate(s, gs);
    });
  }

  // ---- nonlinearities ----------------------------------------------------

  Var sigmoid(Var a) {
    M out = value(a).unaryExpr([](Scalar x) {
      return x >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-x))
                            : std::exp(x) / (Scalar(1) + std::exp(x));
    });
    Var r = record_with_saved(std::move(out), {a});
    set_backprop(r, [this, a, r](const M& g) {
      const M& y = value(r);
      accumulate(a, (g.array() * y.array() * (Scalar(1) - y.array())).matrix());
    });
    return r;
  }

  Var silu(Var a) {
    const M& x = value(a);
    M sig = x.unaryExpr([](Scalar v) {
      return v >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-v))
                            : std::exp(v) / (Scalar(1) + std::exp(v));
    });
    M out = x.cwiseProduct(sig);
    auto saved = std::make_shared<M>(std::move(sig));
    return record(std::move(out), {a}, [this, a, saved](const M& g) {
      const M& s = *saved;
      const M& x2 = value(a);
      accumulate(
          a, (g.array() * (s.array() + x2.array() * s.array() *
                                           (Scalar(1) - s.array()))).matrix());
    });
  }

  Var relu(Var a) {
    M out = value(a).cwiseMax(Scalar(0));
    return record(std::move(out), {a}, [this, a](const M& g) {
      const M mask =
          (value(a).array() > Scalar(0)).template cast<Scalar>().matrix();
      accumulate(a, g.cwiseProduct(mask));
    });
  }

  Var softplus(Var a) {
    M out = value(a).unaryExpr([](Scalar x) {
      if (x > Scalar(30)) return x;
      return static_cast<Scalar>(std::log1p(std::exp(static_cast<double>(x))));
    });
    return record(std::move(out), {a}, [this, a](const M& g) {
      const M sig = value(a).unaryExpr([](Scalar x) {
        return x >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-x))
                              : std::exp(x) / (Scalar(1) + std::exp(x));
      });
      accumulate(a, g.cwiseProduct(sig));
    });
  }

  Var exp(Var a) {
    M out = value(a).array().exp().matrix();
    Var r = record_with_saved(std::move(out), {a});
    set_backprop(r, [this, a, r](const M& g) {
      accumulate(a, g.cwiseProduct(value(r)));
    });
    return r;
  }

  // ---- normalization -----------------------------------------------------

  /// Per-row layer normalization without affine terms.
  Var layernorm_rows(Var a, Scalar eps = Scalar(1e-6)) {
    const M& x = value(a);
    const Index C = x.cols();
    Vec<Scalar> mean = x.rowwise().mean();
    M centered = x.colwise() - mean;
    Vec<Scalar> var = centered.array().square().rowwise().mean().matrix();
    Vec<Scalar> inv_std = (var.array() + eps).rsqrt().matrix();
    M out = (centered.array().colwise() * inv_std.array()).matrix();
    auto saved_y = std::make_shared<M>(out);
    auto saved_inv = std::make_shared<Vec<Scalar>>(std::move(inv_std));
    return record(std::move(out), {a}, [this, a, saved_y, saved_inv, C](const M& g) {
      const M& y = *saved_y;
      const Vec<Scalar>& inv = *saved_inv;
      Vec<Scalar> g_mean = g.rowwise().mean();
      Vec<Scalar> gy_mean = (g.array() * y.array()).rowwise().mean().matrix();
      M dx = ((g.array().colwise() - g_mean.array()) -
              (y.array().colwise() * gy_mean.array()))
                 .matrix();
      dx = (dx.array().colwise() * inv.array()).matrix();
      accumulate(a, dx);
      (void)C;
    });
  }

  /// Per-row L2 normalization; rejects zero-norm rows.
  Var normalize_rows(Var a) {
    const M& x = value(a);
    Vec<Scalar> norms = x.rowwise().norm();
    for (Index i = 0; i < norms.size(); ++i)
      require(norms(i) > Scalar(0),
              "normalize_rows: zero-norm sample at row " + std::to_string(i));
    M out = (x.array().colwise() / norms.array()).matrix();
    auto saved_y = std::make_shared<M>(out);
    auto saved_n = std::make_shared<Vec<Scalar>>(std::move(norms));
    return record(std::move(out), {a}, [this, a, saved_y, saved_n](const M& g) {
      const M& y = *saved_y;
      const Vec<Scalar>& n = *saved_n;
      Vec<Scalar> dot = (g.array() * y.array()).rowwise().sum().matrix();
      M dx = (g.array() - (y.array().colwise() * dot.array())).matrix();
      dx = (dx.array().colwise() / n.array()).matrix();
      accumulate(a, dx);
    });
  }

  // ---- reductions & shape ------------------------------------------------

  Var mean_all(Var a) {
    M out(1, 1);
    out(0, 0) = value(a).mean();
    const Scalar inv_n = Scalar(1) / static_cast<Scalar>(value(a).size());
    return record(std::move(out), {a}, [this, a, inv_n](const M& g) {
      accumulate(a, M::Constant(value(a).rows(), value(a).cols(),
                                g(0, 0) * inv_n));
    });
  }

  Var sum_all(Var a) {
    M out(1, 1);
    out(0, 0) = value(a).sum();
    return record(std::move(out), {a}, [this, a](const M& g) {
      accumulate(a, M::Constant(value(a).rows(), value(a).cols(), g(0, 0)));
    });
  }

  /// Mean over the columns of each row -> [R x 1].
  Var mean_cols(Var a) {
    M out = value(a).rowwise().mean();
    const Scalar inv_c = Scalar(1) / static_cast<Scalar>(value(a).cols());
    return record(std::move(out), {a}, [this, a, inv_c](const M& g) {
      accumulate(a, (g * inv_c).replicate(1, value(a).cols()).eval());
    });
  }

  /// Row-major reshape: element order (row by row) is preserved.
  Var reshape(Var a, Index rows, Index cols) {
    const M& x = value(a);
    require(rows * cols == x.size(), "reshape: element count mismatch");
    M out(rows, cols);
    reshape_copy(x, out);
    const Index r0 = x.rows(), c0 = x.cols();
    return record(std::move(out), {a}, [this, a, r0, c0](const M& g) {
      M gx(r0, c0);
      reshape_copy(g, gx);
      accumulate(a, gx);
    });
  }

  /// Gathers rows: out.row(i) = a.row(idx[i]). idx entries may repeat.
  Var rows_gather(Var a, std::vector<Index> idx) {
    const M& x = value(a);
    M out(static_cast<Index>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      require(idx[i] >= 0 && idx[i] < x.rows(), "rows_gather: index out of range");
      out.row(static_cast<Index>(i)) = x.row(idx[i]);
    }
    auto saved = std::make_shared<std::vector<Index>>(std::move(idx));
    return record(std::move(out), {a}, [this, a, saved](const M& g) {
      M gx = M::Zero(value(a).rows(), value(a).cols());
      for (std::size_t i = 0; i < saved->size(); ++i)
        gx.row((*saved)[i]) += g.row(static_cast<Index>(i));
      accumulate(a, gx);
    });
  }

  /// Repeats each row `times` consecutive times: [B x D] -> [B*times x D].
  Var repeat_rows(Var a, Index times) {
    const M& x = value(a);
    M out(x.rows() * times, x.cols());
    for (Index b = 0; b < x.rows(); ++b)
      out.middleRows(b * times, times) = x.row(b).replicate(times, 1);
    return record(std::move(out), {a}, [this, a, times](const M& g) {
      M gx(value(a).rows(), value(a).cols());
      for (Index b = 0; b < gx.rows(); ++b)
        gx.row(b) = g.middleRows(b * times, times).colwise().sum();
      accumulate(a, gx);
    });
  }

  /// Means each group of `group` consecutive rows: [B*group x D] -> [B x D].
  Var group_mean_rows(Var a, Index group) {
    const M& x = value(a);
    require(x.rows() % group == 0, "group_mean_rows: rows not divisible");
    const Index B = x.rows() / group;
    M out(B, x.cols());
    for (Index b = 0; b < B; ++b)
      out.row(b) = x.middleRows(b * group, group).colwise().mean();
    const Scalar inv = Scalar(1) / static_cast<Scalar>(group);
    return record(std::move(out), {a}, [this, a, group, inv](const M& g) {
      M gx(value(a).rows(), value(a).cols());
      const Index B2 = gx.rows() / group;
      for (Index b = 0; b < B2; ++b)
        gx.middleRows(b * group, group) = (g.row(b) * inv).replicate(group, 1);
      accumulate(a, gx);
    });
  }

  Var concat_cols(Var a, Var b) {
    require(value(a).rows() == value(b).rows(), "concat_cols: row mismatch");
    M out(value(a).rows(), value(a).cols() + value(b).cols());
    out << value(a), value(b);
    const Index ca = value(a).cols();
    return record(std::move(out), {a, b}, [this, a, b, ca](const M& g) {
      accumulate(a, g.leftCols(ca).eval());
      accumulate(b, g.rightCols(g.cols() - ca).eval());
    });
  }

  Var block_cols(Var a, Index col0, Index ncols) {
    require(col0 >= 0 && col0 + ncols <= value(a).cols(),
            "block_cols: range out of bounds");
    M out = value(a).middleCols(col0, ncols);
    return record(std::move(out), {a}, [this, a, col0, ncols](const M& g) {
      M gx = M::Zero(value(a).rows(), value(a).cols());
      gx.middleCols(col0, ncols) = g;
      accumulate(a, gx);
    });
  }

  Var diag(Var a) {
    require(value(a).rows() == value(a).cols(), "diag: matrix must be square");
    M out = value(a).diagonal();
    return record(std::move(out), {a}, [this, a](const M& g) {
      M gx = M::Zero(value(a).rows(), value(a).cols());
      gx.diagonal() = g.col(0);
      accumulate(a, gx);
    });
  }

  /// Numerically stable per-row log-sum-exp -> [R x 1].
  Var logsumexp_rows(Var a) {
    const M& x = value(a);
    Vec<Scalar> mx = x.rowwise().maxCoeff();
    M shifted = x.colwise() - mx;
    Vec<Scalar> sums = shifted.array().exp().rowwise().sum().matrix();
    M out = (sums.array().log() + mx.array()).matrix();
    auto softmax = std::make_shared<M>(
        (shifted.array().exp().colwise() / sums.array()).matrix());
    return record(std::move(out), {a}, [this, a, softmax](const M& g) {
      accumulate(a, (softmax->array().colwise() * g.col(0).array()).matrix());
    });
  }

  // ---- fused selective scan ---------------------------------------------

  /// Input-dependent SSM recurrence over `batch` independent sequences of
  /// length `len` stacked along the rows.
  ///   u      [batch*len x D]   scan input
  ///   delta  [batch*len x D]   positive timescales
  ///   Bp, Cp [batch*len x N]   per-token input/output projections
  ///   A_diag [D x N]           diagonal continuous state matrix
  /// Output: [batch*len x D] with y = sum_n C h, h advanced per token.
  Var selective_scan(Var u, Var delta, Var Bp, Var Cp, Var A_diag, Index batch,
                     Index len) {
    const M& uv = value(u);
    const M& dv = value(delta);
    const M& bv = value(Bp);
    const M& cv = value(Cp);
    const M& av = value(A_diag);
    const Index R = uv.rows();
    const Index D = uv.cols();
    const Index N = av.cols();
    require(R == batch * len, "selective_scan: rows must equal batch*len");
    require(dv.rows() == R && dv.cols() == D, "selective_scan: delta shape");
    require(bv.rows() == R && bv.cols() == N, "selective_scan: B shape");
    require(cv.rows() == R && cv.cols() == N, "selective_scan: C shape");
    require(av.rows() == D, "selective_scan: A_diag rows must match D");

    M y(R, D);
    // Saved states: h after each token, flattened [R x D*N]; plus exp(delta*A).
    auto h_hist = std::make_shared<M>(R, D * N);
    auto da_hist = std::make_shared<M>(R, D * N);
    Mat<Scalar> h(D, N);
    for (Index b = 0; b < batch; ++b) {
      h.setZero();
      for (Index l = 0; l < len; ++l) {
        const Index r = b * len + l;
        const auto d_col = dv.row(r).transpose();
        const Mat<Scalar> da =
            (av.array().colwise() * d_col.array()).exp().matrix();
        const Vec<Scalar> du = d_col.cwiseProduct(uv.row(r).transpose());
        h = da.cwiseProduct(h) + du * bv.row(r);
        y.row(r) = (h * cv.row(r).transpose()).transpose();
        for (Index i = 0; i < D; ++i)
          for (Index n = 0; n < N; ++n) {
            (*h_hist)(r, i * N + n) = h(i, n);
            (*da_hist)(r, i * N + n) = da(i, n);
          }
      }
    }

    return record(std::move(y), {u, delta, Bp, Cp, A_diag},
                  [this, u, delta, Bp, Cp, A_diag, batch, len, h_hist,
                   da_hist](const M& g) {
      const M& uv2 = value(u);
      const M& dv2 = value(delta);
      const M& bv2 = value(Bp);
      const M& cv2 = value(Cp);
      const M& av2 = value(A_diag);
      const Index D = uv2.cols();
      const Index N = av2.cols();

      M gu = M::Zero(uv2.rows(), uv2.cols());
      M gdelta = M::Zero(dv2.rows(), dv2.cols());
      M gB = M::Zero(bv2.rows(), bv2.cols());
      M gC = M::Zero(cv2.rows(), cv2.cols());
      M gA = M::Zero(av2.rows(), av2.cols());

      Mat<Scalar> gh(D, N), da(D, N), h_prev(D, N), h_cur(D, N);
      for (Index b = 0; b < batch; ++b) {
        gh.setZero();
        for (Index l = len - 1; l >= 0; --l) {
          const Index r = b * len + l;
          for (Index i = 0; i < D; ++i)
            for (Index n = 0; n < N; ++n) {
              da(i, n) = (*da_hist)(r, i * N + n);
              h_cur(i, n) = (*h_hist)(r, i * N + n);
            }
          if (l > 0) {
            for (Index i = 0; i < D; ++i)
              for (Index n = 0; n < N; ++n)
                h_prev(i, n) = (*h_hist)(r - 1, i * N + n);
          } else {
            h_prev.setZero();
          }

          // y(r) = h * C(r)^T : gradient into C and h.
          gC.row(r) += g.row(r) * h_cur;
          gh += g.row(r).transpose() * cv2.row(r);

          // h = da .* h_prev + (delta .* u) B(r)
          const Mat<Scalar> g_da = gh.cwiseProduct(h_prev);
          gA += (g_da.cwiseProduct(da).array().colwise() *
                 dv2.row(r).transpose().array()).matrix();
          Vec<Scalar> gdelta_row =
              (g_da.cwiseProduct(da).cwiseProduct(av2)).rowwise().sum();
          const Vec<Scalar> ghB = gh * bv2.row(r).transpose();  // [D x 1]
          gdelta_row += ghB.cwiseProduct(uv2.row(r).transpose());
          gdelta.row(r) += gdelta_row.transpose();
          gu.row(r) += ghB.cwiseProduct(dv2.row(r).transpose()).transpose();
          const Vec<Scalar> du =
              dv2.row(r).transpose().cwiseProduct(uv2.row(r).transpose());
          gB.row(r) += du.transpose() * gh;

          // propagate to h_{l-1}
          gh = gh.cwiseProduct(da);
        }
      }
      accumulate(u, gu);
      accumulate(delta, gdelta);
      accumulate(Bp, gB);
      accumulate(Cp, gC);
      accumulate(A_diag, gA);
    });
  }

  // ---- backward ----------------------------------------------------------

  /// Seeds d(target)/d(target) = 1 and propagates. Target must be 1 x 1.
  void backward(Var target) {
    require(grad_enabled_, "backward() on a no-grad tape");
    require(value(target).size() == 1, "backward target must be scalar");
    Node& t = nodes_[target.id];
    t.grad = M::Constant(1, 1, Scalar(1));
    for (int id = target.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad.size() == 0 || !n.backprop) continue;
      n.backprop(n.grad);
    }
    for (const auto& [id, p] : bound_) {
      if (nodes_[id].grad.size() != 0) p->accumulate(nodes_[id].grad);
    }
  }

 private:
  struct Node {
    M value;
    M grad;
    bool needs_grad = false;
    std::function<void(const M&)> backprop;
  };

  static void reshape_copy(const M& src, M& dst) {
    Index k = 0;
    for (Index i = 0; i < src.rows(); ++i)
      for (Index j = 0; j < src.cols(); ++j) {
        dst(k / dst.cols(), k % dst.cols()) = src(i, j);
        ++k;
      }
  }

  Var push(M v, bool needs_grad, std::initializer_list<Var> parents) {
    (void)parents;
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool any_needs_grad(std::initializer_list<Var> parents) const {
    for (const Var p : parents)
      if (nodes_[p.id].needs_grad) return true;
    return false;
  }

  Var record(M out, std::initializer_list<Var> parents,
             std::function<void(const M&)> backprop) {
    const bool ng = grad_enabled_ && any_needs_grad(parents);
    Var v = push(std::move(out), ng, parents);
    if (ng) nodes_[v.id].backprop = std::move(backprop);
    return v;
  }

  Var record_with_saved(M out, std::initializer_list<Var> parents) {
    const bool ng = grad_enabled_ && any_needs_grad(parents);
    return push(std::move(out), ng, parents);
  }

  void set_backprop(Var v, std::function<void(const M&)> backprop) {
    if (nodes_[v.id].needs_grad) nodes_[v.id].backprop = std::move(backprop);
  }

  void accumulate(Var v, const M& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = M::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
  }

  void check_same_shape(Var a, Var b, const char* op) const {
    require(value(a).rows() == value(b).rows() &&
                value(a).cols() == value(b).cols(),
            std::string(op) + ": shape mismatch");
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<std::pair<int, Param<Scalar>*>> bound_;
};

}  // namespace diffma
