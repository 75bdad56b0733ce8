#pragma once

#include "diffma/autodiff.hpp"

#include <cmath>
#include <vector>

namespace diffma {

/// AdamW with decoupled weight decay. Defaults follow the training recipe
/// used throughout: lr 1e-4, no weight decay.
template <typename Scalar>
class AdamW {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW(ParamRefs<Scalar> params, Options opts = {})
      : params_(std::move(params)), opts_(opts) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto* p : params_) {
      m_.push_back(Mat<Scalar>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, t_);
    const double bc2 = 1.0 - std::pow(opts_.beta2, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Param<Scalar>* p = params_[k];
      if (p->grad.size() == 0) continue;
      m_[k] = opts_.beta1 * m_[k] + (1.0 - opts_.beta1) * p->grad;
      v_[k] = (opts_.beta2 * v_[k].array() +
               (1.0 - opts_.beta2) * p->grad.array().square())
                  .matrix();
      const Mat<Scalar> m_hat = m_[k] / static_cast<Scalar>(bc1);
      const Mat<Scalar> v_hat = v_[k] / static_cast<Scalar>(bc2);
      if (opts_.weight_decay != 0.0)
        p->value -= static_cast<Scalar>(opts_.lr * opts_.weight_decay) * p->value;
      p->value -= (opts_.lr * m_hat.array() /
                   (v_hat.array().sqrt() + opts_.eps))
                      .matrix()
                      .template cast<Scalar>();
    }
  }

  void zero_grad() { zero_all_grads(params_); }

  const Options& options() const { return opts_; }

 private:
  ParamRefs<Scalar> params_;
  Options opts_;
  std::vector<Mat<Scalar>> m_, v_;
  long t_ = 0;
};

/// Exponential moving average of a parameter set. The shadow starts as a copy
/// of the initial weights and contracts toward the live weights with ratio
/// `decay` per update.
template <typename Scalar>
class EmaState {
 public:
  EmaState() = default;

  EmaState(const ParamRefs<Scalar>& params, double decay)
      : decay_(decay) {
    shadow_.reserve(params.size());
    for (const auto* p : params) shadow_.push_back(p->value);
  }

  double decay() const { return decay_; }
  std::size_t size() const { return shadow_.size(); }
  const Mat<Scalar>& shadow(std::size_t k) const { return shadow_[k]; }

  void update(const ParamRefs<Scalar>& params) {
    require(params.size() == shadow_.size(), "ema: parameter count mismatch");
    for (std::size_t k = 0; k < shadow_.size(); ++k) {
      require(params[k]->value.rows() == shadow_[k].rows() &&
                  params[k]->value.cols() == shadow_[k].cols(),
              "ema: shape mismatch for " + params[k]->name);
      shadow_[k] = static_cast<Scalar>(decay_) * shadow_[k] +
                   static_cast<Scalar>(1.0 - decay_) * params[k]->value;
    }
  }

  /// Swaps shadow and live weights (call once to sample with the EMA model,
  /// once more to restore training weights).
  void swap_with(const ParamRefs<Scalar>& params) {
    require(params.size() == shadow_.size(), "ema: parameter count mismatch");
    for (std::size_t k = 0; k < shadow_.size(); ++k)
      params[k]->value.swap(shadow_[k]);
  }

 private:
  double decay_ = 0.9999;
  std::vector<Mat<Scalar>> shadow_;
};

}  // namespace diffma
