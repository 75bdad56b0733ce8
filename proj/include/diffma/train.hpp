#pragma once

#include "diffma/conditioner.hpp"
#include "diffma/diffusion.hpp"
#include "diffma/embedder.hpp"
#include "diffma/metrics.hpp"
#include "diffma/model.hpp"
#include "diffma/optim.hpp"
#include "diffma/rundir.hpp"
#include "diffma/synthetic.hpp"

#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

namespace diffma {

using Real = double;

/// Stages of the training data pipeline, in order. Exposed so tests can
/// assert that no augmentation stage ever enters the pipeline.
inline const std::vector<std::string>& training_pipeline_stages() {
  static const std::vector<std::string> stages{
      "load_pairs", "encode_latents", "embed_source", "external_features",
      "draw_noise"};
  return stages;
}

/// Frozen per-item features computed once before the training loop: the
/// embedder and the external conditioner are fixed, so their outputs are
/// pure functions of the dataset.
struct ItemFeatures {
  LatentImage<Real> source_latent;
  LatentImage<Real> target_latent;
  Mat<Real> e_ve;       // [L x D]
  Mat<Real> mask_row;   // [1 x L]
  Mat<Real> e_ext;      // [K x D]
};

struct PreparedData {
  std::vector<ItemFeatures> items;
  Index tokens_per_item = 0;
  Index dim = 0;
};

template <typename Codec>
PreparedData prepare_training_features(
    const std::vector<SyntheticPair<Real>>& pairs, const Codec& codec,
    VisionEmbedder<Real>& embedder, const HashedConditioner<Real>& conditioner) {
  PreparedData out;
  out.tokens_per_item = embedder.config().tokens_per_item();
  out.dim = embedder.config().dim;
  out.items.reserve(pairs.size());
  for (const auto& p : pairs) {
    ItemFeatures it;
    it.source_latent = codec.encode(to_three_channels(p.source));
    it.target_latent = codec.encode(to_three_channels(p.target));
    const auto emb = embedder.embed_latent({it.source_latent});
    it.e_ve = emb.tokens;
    it.mask_row = emb.mask;
    it.e_ext = conditioner.encode(to_three_channels(p.source));
    out.items.push_back(std::move(it));
  }
  return out;
}

/// Assembles the condition and mask for a batch of prepared items.
struct BatchCondition {
  Condition<Real> cond;
  Mat<Real> mask;  // [B x L]
};

inline BatchCondition assemble_condition(const PreparedData& data,
                                         const std::vector<std::size_t>& idx,
                                         const std::vector<int>& t,
                                         Index t_embed_dim) {
  const Index B = static_cast<Index>(idx.size());
  const Index L = data.tokens_per_item;
  Mat<Real> e_ve(B * L, data.dim);
  Mat<Real> mask(B, L);
  std::vector<Mat<Real>> e_ext;
  e_ext.reserve(idx.size());
  for (Index b = 0; b < B; ++b) {
    const ItemFeatures& it = data.items[idx[static_cast<std::size_t>(b)]];
    e_ve.middleRows(b * L, L) = it.e_ve;
    mask.row(b) = it.mask_row.row(0);
    e_ext.push_back(it.e_ext);
  }
  return {build_condition(e_ve, mask, e_ext, t, t_embed_dim), std::move(mask)};
}

// ---- embedder pretraining run ----------------------------------------------

struct PretrainOptions {
  EmbedderConfig embedder;
  int steps = 300;
  Index batch = 8;
  double lr = 1e-4;
  std::uint64_t seed = 0;
};

struct PretrainRunResult {
  PretrainReport report;
  std::string checkpoint_path;
  std::uint64_t fingerprint = 0;
};

template <typename Codec>
PretrainRunResult run_pretrain_embedder(
    const std::vector<SyntheticPair<Real>>& pairs, const Codec& codec,
    const PretrainOptions& opts, const std::string& checkpoint_path,
    std::ostream* log = nullptr) {
  RandomStream rng(opts.seed);
  VisionEmbedder<Real> embedder(opts.embedder, rng);

  std::vector<LatentImage<Real>> latents;
  latents.reserve(pairs.size());
  for (const auto& p : pairs)
    latents.push_back(codec.encode(to_three_channels(p.source)));

  PretrainRunResult result;
  result.report = pretrain_embedder(embedder, latents, opts.steps, opts.batch,
                                    opts.lr, rng,
                                    log == nullptr ? &std::cerr : log);
  if (log != nullptr)
    (*log) << "pretrain: initial loss " << result.report.initial_loss
           << ", final loss " << result.report.final_loss << "\n";

  KvConfig meta = opts.embedder.describe();
  meta.set_int("embedder.fingerprint",
               static_cast<long long>(opts.embedder.fingerprint()));
  meta.set_double("embedder.tau", embedder.tau());
  ckpt::save(checkpoint_path, meta, embedder.parameters());
  result.checkpoint_path = checkpoint_path;
  result.fingerprint = opts.embedder.fingerprint();
  return result;
}

/// Loads a frozen embedder; refuses a checkpoint whose patch grid does not
/// match the diffusion model's.
inline VisionEmbedder<Real> load_embedder_checked(const std::string& path,
                                                  const ModelConfig& model_cfg) {
  const KvConfig meta = ckpt::peek_meta(path);
  EmbedderConfig cfg;
  cfg.latent_channels = static_cast<int>(meta.get_int("embedder.latent_channels"));
  cfg.latent_height = static_cast<int>(meta.get_int("embedder.latent_height"));
  cfg.latent_width = static_cast<int>(meta.get_int("embedder.latent_width"));
  cfg.patch_size = static_cast<int>(meta.get_int("embedder.patch_size"));
  cfg.dim = meta.get_int("embedder.dim");
  require(static_cast<std::uint64_t>(meta.get_int("embedder.fingerprint")) ==
              cfg.fingerprint(),
          "embedder checkpoint fingerprint does not match its own config");
  require(cfg.latent_channels == model_cfg.latent_channels &&
              cfg.latent_height == model_cfg.latent_height &&
              cfg.latent_width == model_cfg.latent_width &&
              cfg.patch_size == model_cfg.patch_size &&
              cfg.dim == model_cfg.dim,
          "embedder checkpoint patch grid does not match the model config");
  RandomStream rng(0);
  VisionEmbedder<Real> embedder(cfg, rng);
  ckpt::load(path, embedder.parameters());
  return embedder;
}

// ---- diffusion training run -------------------------------------------------

struct TrainOptions {
  ModelConfig model;
  int steps = 2000;
  Index batch = 8;
  double lr = 1e-4;
  double weight_decay = 0.0;
  double ema_decay = 0.9999;
  std::uint64_t seed = 0;
  int log_every = 100;
};

struct TrainResult {
  std::vector<double> losses;
  std::string model_path;
  std::string ema_path;
};

inline KvConfig model_checkpoint_meta(const ModelConfig& cfg,
                                      std::uint64_t embedder_fp,
                                      const NoiseSchedule& schedule) {
  KvConfig meta = cfg.describe();
  meta.set_int("model.fingerprint", static_cast<long long>(cfg.fingerprint()));
  meta.set_int("model.embedder_fingerprint",
               static_cast<long long>(embedder_fp));
  meta.set_int("model.schedule_fingerprint",
               static_cast<long long>(schedule.fingerprint()));
  return meta;
}

inline TrainResult run_train_diffusion(
    const PreparedData& data, std::size_t train_count,
    VisionEmbedder<Real>& embedder, const NoiseSchedule& schedule,
    const TrainOptions& opts, const std::string& model_path,
    const std::string& ema_path, std::ostream* log = nullptr,
    const std::function<void(int, double)>& on_step = {}) {
  require(!data.items.empty(), "training needs a non-empty dataset");
  const std::size_t n =
      train_count == 0 ? data.items.size()
                       : std::min(train_count, data.items.size());

  RandomStream rng(opts.seed);
  DiffMaModel<Real> model(opts.model, rng);
  auto params = model.parameters();
  typename AdamW<Real>::Options adam;
  adam.lr = opts.lr;
  adam.weight_decay = opts.weight_decay;
  AdamW<Real> opt(params, adam);
  EmaState<Real> ema(params, opts.ema_decay);

  const Index L = opts.model.tokens();
  TrainResult result;
  result.losses.reserve(static_cast<std::size_t>(opts.steps));

  for (int step = 0; step < opts.steps; ++step) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(opts.batch));
    std::vector<int> t(static_cast<std::size_t>(opts.batch));
    std::vector<LatentImage<Real>> z0;
    z0.reserve(idx.size());
    for (auto& i : idx)
      i = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    for (auto& ti : t) ti = static_cast<int>(rng.uniform_int(1, schedule.T));
    for (const auto i : idx) z0.push_back(data.items[i].target_latent);

    NoisingDraw<Real> draw;
    draw.t = t;
    draw.eps_rows.resize(opts.batch * L, opts.model.patch_values());
    draw.noisy_rows.resize(opts.batch * L, opts.model.patch_values());
    for (Index b = 0; b < opts.batch; ++b) {
      const auto& z = z0[static_cast<std::size_t>(b)];
      const Mat<Real> eps = rng.normal_mat<Real>(z.data.rows(), z.data.cols());
      const auto zt = forward_noising(schedule, z, t[static_cast<std::size_t>(b)], eps);
      LatentImage<Real> eps_img = z;
      eps_img.data = eps;
      draw.eps_rows.middleRows(b * L, L) =
          patch_extract(eps_img, opts.model.patch_size);
      draw.noisy_rows.middleRows(b * L, L) =
          patch_extract(zt, opts.model.patch_size);
    }

    const BatchCondition bc =
        assemble_condition(data, idx, t, opts.model.t_embed_dim);

    Tape<Real> tape;
    auto loss = diffusion_loss_graph(tape, model, draw, bc.cond, bc.mask,
                                     opts.batch);
    const double loss_v = tape.value(loss)(0, 0);
    result.losses.push_back(loss_v);

    opt.zero_grad();
    tape.backward(loss);
    opt.step();
    ema.update(params);

    if (on_step) on_step(step, loss_v);
    if (log != nullptr && (step % opts.log_every == 0 || step + 1 == opts.steps))
      (*log) << "step " << step << " loss " << loss_v << "\n";
  }

  const KvConfig meta =
      model_checkpoint_meta(opts.model, embedder.config().fingerprint(),
                            schedule);
  ckpt::save(model_path, meta, params);
  ema.swap_with(params);
  ckpt::save(ema_path, meta, params);
  ema.swap_with(params);  // restore training weights
  result.model_path = model_path;
  result.ema_path = ema_path;
  return result;
}

/// Loads a model checkpoint; fails loudly when the embedder or schedule
/// fingerprints recorded at save time do not match the ones supplied now.
inline DiffMaModel<Real> load_model_checked(const std::string& path,
                                            const ModelConfig& cfg,
                                            std::uint64_t embedder_fp,
                                            const NoiseSchedule& schedule) {
  const KvConfig meta = ckpt::peek_meta(path);
  require(static_cast<std::uint64_t>(meta.get_int("model.fingerprint")) ==
              cfg.fingerprint(),
          "model checkpoint fingerprint does not match the requested config");
  require(static_cast<std::uint64_t>(
              meta.get_int("model.embedder_fingerprint")) == embedder_fp,
          "model checkpoint was trained against a different embedder");
  require(static_cast<std::uint64_t>(
              meta.get_int("model.schedule_fingerprint")) ==
              schedule.fingerprint(),
          "model checkpoint was trained against a different noise schedule");
  RandomStream rng(0);
  DiffMaModel<Real> model(cfg, rng);
  ckpt::load(path, model.parameters());
  return model;
}

// ---- sampling ---------------------------------------------------------------

struct SampleRunResult {
  std::vector<LatentImage<Real>> latents;
  std::vector<Image<Real>> images;  // decoded, clamped to [0, 1]
};

/// Samples one latent per prepared item in `idx` and decodes it.
template <typename Codec>
SampleRunResult sample_items(DiffMaModel<Real>& model,
                             const NoiseSchedule& schedule,
                             const PreparedData& data,
                             const std::vector<std::size_t>& idx,
                             const Codec& codec, const SamplerSettings& settings,
                             Index max_batch = 8) {
  SampleRunResult out;
  for (std::size_t pos = 0; pos < idx.size();) {
    const std::size_t take =
        std::min<std::size_t>(static_cast<std::size_t>(max_batch),
                              idx.size() - pos);
    const std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                                         idx.begin() + static_cast<std::ptrdiff_t>(pos + take));
    const std::vector<int> t(chunk.size(), schedule.T);
    const BatchCondition bc =
        assemble_condition(data, chunk, t, model.config().t_embed_dim);
    SamplerSettings chunk_settings = settings;
    chunk_settings.seed = RandomStream::derive(settings.seed, pos);
    auto latents =
        ode_sample(model, schedule, bc.cond, bc.mask, chunk_settings);
    for (auto& z : latents) {
      out.images.push_back(clamp_image(codec.decode(z)));
      out.latents.push_back(std::move(z));
    }
    pos += take;
  }
  return out;
}

// ---- evaluation -------------------------------------------------------------

/// Loads every .dmt image in a directory, sorted by filename.
inline std::vector<Image<Real>> load_image_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".dmt") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  std::vector<Image<Real>> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_image_tensor<Real>(f));
  return out;
}

inline MetricReport evaluate_dirs(const std::string& generated_dir,
                                  const std::string& reference_dir) {
  const auto gen = load_image_dir(generated_dir);
  const auto ref = load_image_dir(reference_dir);
  require(gen.size() == ref.size() && !gen.empty(),
          "evaluation needs equally sized, non-empty image sets");
  return compute_metrics(gen, ref);
}

inline void write_metric_report(const MetricReport& r, const std::string& path) {
  KvConfig kv;
  kv.set_double("metrics.ssim_pct", r.ssim_pct);
  kv.set_double("metrics.psnr_db", r.psnr_db);
  kv.set_double("metrics.mse_255", r.mse_255);
  kv.set_int("metrics.count", r.count);
  kv.save(path);
}

}  // namespace diffma
