#pragma once

#include "diffma/codec.hpp"
#include "diffma/kvconfig.hpp"
#include "diffma/model.hpp"
#include "diffma/rng.hpp"

#include <cmath>
#include <vector>

namespace diffma {

/// Linear-beta noise schedule over timesteps t in [1, T]. Tables are stored
/// 0-based; accessors take 1-based t.
struct NoiseSchedule {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  std::vector<double> beta;       // beta_t
  std::vector<double> alpha;      // 1 - beta_t
  std::vector<double> alpha_bar;  // prod_{i<=t} alpha_i

  double beta_at(int t) const { return beta[check(t)]; }
  double alpha_at(int t) const { return alpha[check(t)]; }
  double alpha_bar_at(int t) const { return alpha_bar[check(t)]; }

  KvConfig describe() const {
    KvConfig kv;
    kv.set_int("schedule.T", T);
    kv.set_double("schedule.beta_start", beta_start);
    kv.set_double("schedule.beta_end", beta_end);
    return kv;
  }
  std::uint64_t fingerprint() const { return describe().fingerprint(); }

 private:
  std::size_t check(int t) const {
    require(t >= 1 && t <= T, "timestep must lie in [1, T]");
    return static_cast<std::size_t>(t - 1);
  }
};

inline NoiseSchedule make_schedule(int T, double beta_start = 1e-4,
                                   double beta_end = 2e-2) {
  require(T >= 1, "schedule needs at least one step");
  require(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0,
          "schedule endpoints must satisfy 0 < beta_start < beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.resize(T);
  s.alpha.resize(T);
  s.alpha_bar.resize(T);
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    s.beta[i] = T == 1 ? beta_start
                       : beta_start + (beta_end - beta_start) * i / (T - 1);
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

/// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps.
template <typename Scalar>
LatentImage<Scalar> forward_noising(const NoiseSchedule& s,
                                    const LatentImage<Scalar>& z0, int t,
                                    const Mat<Scalar>& eps) {
  require(eps.rows() == z0.data.rows() && eps.cols() == z0.data.cols(),
          "forward_noising: noise shape mismatch");
  const double ab = s.alpha_bar_at(t);
  LatentImage<Scalar> zt = z0;
  zt.data = static_cast<Scalar>(std::sqrt(ab)) * z0.data +
            static_cast<Scalar>(std::sqrt(1.0 - ab)) * eps;
  return zt;
}

/// Greater context for one training step: per-sample timesteps and the exact
/// noise that was mixed in (the regression target).
template <typename Scalar>
struct NoisingDraw {
  std::vector<int> t;
  Mat<Scalar> eps_rows;      // [B*L x C*p*p], patch-row layout
  Mat<Scalar> noisy_rows;    // same layout
};

template <typename Scalar>
NoisingDraw<Scalar> draw_training_noise(const NoiseSchedule& s,
                                        const std::vector<LatentImage<Scalar>>& z0,
                                        const ModelConfig& cfg,
                                        RandomStream& rng) {
  const Index B = static_cast<Index>(z0.size());
  const Index L = cfg.tokens();
  NoisingDraw<Scalar> draw;
  draw.t.resize(static_cast<std::size_t>(B));
  draw.eps_rows.resize(B * L, cfg.patch_values());
  draw.noisy_rows.resize(B * L, cfg.patch_values());
  for (Index b = 0; b < B; ++b) {
    const int t = static_cast<int>(rng.uniform_int(1, s.T));
    draw.t[static_cast<std::size_t>(b)] = t;
    const auto& z = z0[static_cast<std::size_t>(b)];
    const Mat<Scalar> eps =
        rng.normal_mat<Scalar>(z.data.rows(), z.data.cols());
    const LatentImage<Scalar> zt = forward_noising(s, z, t, eps);
    LatentImage<Scalar> eps_img = z;
    eps_img.data = eps;
    draw.eps_rows.middleRows(b * L, L) = patch_extract(eps_img, cfg.patch_size);
    draw.noisy_rows.middleRows(b * L, L) = patch_extract(zt, cfg.patch_size);
  }
  return draw;
}

/// Mean squared error between the model's noise prediction and the drawn
/// noise, averaged over every element. Differentiable; propagates the
/// model's non-finite aborts.
template <typename Scalar>
typename Tape<Scalar>::Var diffusion_loss_graph(
    Tape<Scalar>& t, DiffMaModel<Scalar>& model, const NoisingDraw<Scalar>& draw,
    const Condition<Scalar>& cond, const Mat<Scalar>& mask, Index batch) {
  auto pred = model.forward_graph(t, draw.noisy_rows, cond, mask, batch);
  auto diff = t.sub(pred, t.constant(draw.eps_rows));
  return t.mean_all(t.cmul(diff, diff));
}

/// Deterministic probability-flow sampler (DDIM update with zero
/// stochasticity). Walks a strided descending timestep ladder from T to 1;
/// the final step jumps to the clean estimate.
struct SamplerSettings {
  int steps = 50;
  std::uint64_t seed = 0;
};

inline std::vector<int> sample_timesteps(int T, int steps) {
  require(steps >= 1, "sampler needs at least one step");
  require(steps <= T, "sampler steps cannot exceed the schedule length");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    // evenly spaced in [1, T], descending, always starting at T
    const int t = 1 + static_cast<int>(
        std::llround(static_cast<double>(T - 1) * (steps - 1 - k) /
                     std::max(1, steps - 1)));
    if (out.empty() || out.back() != t) out.push_back(t);
  }
  if (steps == 1) out = {T};
  return out;
}

/// One reverse update from t_cur to t_prev (t_prev = 0 means the clean end).
template <typename Scalar>
Mat<Scalar> ddim_update(const NoiseSchedule& s, const Mat<Scalar>& z,
                        const Mat<Scalar>& eps_hat, int t_cur, int t_prev) {
  const double ab_cur = s.alpha_bar_at(t_cur);
  const double ab_prev = t_prev == 0 ? 1.0 : s.alpha_bar_at(t_prev);
  const Mat<Scalar> x0 =
      (z - static_cast<Scalar>(std::sqrt(1.0 - ab_cur)) * eps_hat) /
      static_cast<Scalar>(std::sqrt(ab_cur));
  return static_cast<Scalar>(std::sqrt(ab_prev)) * x0 +
         static_cast<Scalar>(std::sqrt(1.0 - ab_prev)) * eps_hat;
}

/// Samples one batch of latents given per-sample conditions. Deterministic in
/// (seed, model weights, condition, steps).
template <typename Scalar>
std::vector<LatentImage<Scalar>> ode_sample(
    DiffMaModel<Scalar>& model, const NoiseSchedule& schedule,
    const Condition<Scalar>& cond, const Mat<Scalar>& mask,
    const SamplerSettings& settings) {
  const ModelConfig& cfg = model.config();
  const Index B = cond.batch;
  RandomStream rng(settings.seed);

  std::vector<LatentImage<Scalar>> z;
  z.reserve(static_cast<std::size_t>(B));
  for (Index b = 0; b < B; ++b) {
    auto zi = LatentImage<Scalar>::zero(cfg.latent_channels, cfg.latent_height,
                                        cfg.latent_width);
    zi.data = rng.normal_mat<Scalar>(zi.data.rows(), zi.data.cols());
    zi.provenance = LatentProvenance::kSyntheticDirect;
    z.push_back(std::move(zi));
  }

  const std::vector<int> ladder = sample_timesteps(schedule.T, settings.steps);
  for (std::size_t k = 0; k < ladder.size(); ++k) {
    const int t_cur = ladder[k];
    const int t_prev = k + 1 < ladder.size() ? ladder[k + 1] : 0;
    Condition<Scalar> step_cond = cond;
    step_cond.t.assign(static_cast<std::size_t>(B), t_cur);
    step_cond.timestep_emb =
        sinusoidal_timestep_table<Scalar>(step_cond.t, cond.timestep_emb.cols());
    const auto eps_hat = model.predict_noise(z, step_cond, mask);
    for (Index b = 0; b < B; ++b) {
      auto& zb = z[static_cast<std::size_t>(b)];
      zb.data = ddim_update(schedule, zb.data,
                            eps_hat[static_cast<std::size_t>(b)].data, t_cur,
                            t_prev);
    }
  }
  return z;
}

}  // namespace diffma
