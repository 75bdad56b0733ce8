#pragma once

#include "diffma/autodiff.hpp"
#include "diffma/kvconfig.hpp"
#include "diffma/nn.hpp"
#include "diffma/optim.hpp"
#include "diffma/patchify.hpp"

#include <functional>
#include <iostream>
#include <string>
#include <vector>

namespace diffma {

template <typename Scalar>
struct EmbedderOutput {
  Mat<Scalar> tokens;  // [B*L x D], no positional or temporal embedding
  Mat<Scalar> mask;    // [B x L], entries strictly in (0, 1)
  Index batch = 0;
  Index tokens_per_item = 0;
};

struct EmbedderConfig {
  int latent_channels = 4;
  int latent_height = 28;
  int latent_width = 28;
  int patch_size = 2;
  Index dim = 512;
  double tau_init = 0.07;

  Index tokens_per_item() const {
    return patch_count(latent_height, latent_width, patch_size);
  }

  KvConfig describe() const {
    KvConfig kv;
    kv.set_int("embedder.latent_channels", latent_channels);
    kv.set_int("embedder.latent_height", latent_height);
    kv.set_int("embedder.latent_width", latent_width);
    kv.set_int("embedder.patch_size", patch_size);
    kv.set_int("embedder.dim", dim);
    return kv;
  }

  std::uint64_t fingerprint() const { return describe().fingerprint(); }
};

/// Maps source-side latents to patch tokens and per-token soft masks.
///
/// Patch embedding is a single strided convolution (realized as a dense map
/// over flattened patches) followed by layer normalization. The mask head is
/// a squeeze-excite gate over the token axis: token descriptors (channel
/// means of the raw projections) are squeezed through an L/4 bottleneck into
/// a global context, and each token's gate combines its own descriptor with
/// that context through weights shared across positions. The shared weights
/// make the head permutation-equivariant, so a constant latent always yields
/// a constant mask.
template <typename Scalar>
class VisionEmbedder {
 public:
  using T = Tape<Scalar>;

  VisionEmbedder(const EmbedderConfig& cfg, RandomStream& rng) : cfg_(cfg) {
    const Index in = static_cast<Index>(cfg.latent_channels) * cfg.patch_size *
                     cfg.patch_size;
    const Index L = cfg.tokens_per_item();
    const Index hidden = std::max<Index>(1, L / 4);
    patch_proj_ = Linear<Scalar>("embedder.patch_proj", in, cfg.dim, rng);
    norm_ = LayerNorm<Scalar>("embedder.norm", cfg.dim);
    se_squeeze_ = Linear<Scalar>("embedder.se_squeeze", 1, hidden, rng);
    se_excite_ = Linear<Scalar>("embedder.se_excite", hidden, 1, rng);
    // per-token gate gain; descriptors are small, so a conservative gain
    // would pin every mask near 1/2
    gate_gain_.name = "embedder.gate_gain";
    gate_gain_.value = Mat<Scalar>::Constant(1, 1, Scalar(8));
    gate_bias_.name = "embedder.gate_bias";
    gate_bias_.value = Mat<Scalar>::Zero(1, 1);
    tau_.name = "embedder.tau";
    tau_.value = Mat<Scalar>::Constant(1, 1, static_cast<Scalar>(cfg.tau_init));
  }

  const EmbedderConfig& config() const { return cfg_; }

  ParamRefs<Scalar> parameters() {
    ParamRefs<Scalar> out;
    patch_proj_.collect(out);
    norm_.collect(out);
    se_squeeze_.collect(out);
    se_excite_.collect(out);
    out.push_back(&gate_gain_);
    out.push_back(&gate_bias_);
    out.push_back(&tau_);
    return out;
  }

  /// Differentiable forward over a batch of pre-extracted patch rows.
  struct GraphOutput {
    typename T::Var tokens;    // [B*L x D]
    typename T::Var mask_col;  // [B*L x 1]
    typename T::Var mask;      // [B x L]
  };

  GraphOutput forward(T& t, typename T::Var patches, Index batch) {
    const Index L = cfg_.tokens_per_item();
    auto projected = patch_proj_.forward(t, patches);
    auto tokens = norm_.forward(t, projected);
    // descriptors pool the raw projections: normalization zero-centers every
    // token row, which would starve the pool of amplitude
    auto descriptor = t.reshape(t.mean_cols(projected), batch, L);  // [B x L]
    auto squeezed = t.mean_cols(descriptor);                        // [B x 1]
    auto context = se_excite_.forward(
        t, t.relu(se_squeeze_.forward(t, squeezed)));               // [B x 1]
    auto logits = t.add_scalar_node(
        t.add_colvec(t.mul_by_scalar(descriptor, t.param(gate_gain_)), context),
        t.param(gate_bias_));
    auto mask = t.sigmoid(logits);                                  // [B x L]
    auto mask_col = t.reshape(mask, batch * L, 1);
    return {tokens, mask_col, mask};
  }

  /// Frozen-path inference. Deterministic in the weights and input.
  EmbedderOutput<Scalar> embed_latent(
      const std::vector<LatentImage<Scalar>>& latents) {
    require(!latents.empty(), "embed_latent: empty batch");
    const Index L = cfg_.tokens_per_item();
    const Index B = static_cast<Index>(latents.size());
    Mat<Scalar> patches(B * L, patch_proj_.W.value.rows());
    for (Index b = 0; b < B; ++b) {
      const auto& z = latents[b];
      require(z.channels == cfg_.latent_channels &&
                  z.height == cfg_.latent_height &&
                  z.width == cfg_.latent_width,
              "embed_latent: latent shape does not match the embedder config");
      patches.middleRows(b * L, L) = patch_extract(z, cfg_.patch_size);
    }
    T t(false);
    const GraphOutput g = forward(t, t.constant(patches), B);
    return {t.value(g.tokens), t.value(g.mask), B, L};
  }

  Scalar tau() const { return tau_.value(0, 0); }
  Param<Scalar>& tau_param() { return tau_; }

  /// Clamp applied after every optimizer step; keeps the temperature in a
  /// sane range without entering the gradient path.
  void clamp_tau() {
    tau_.value(0, 0) = std::min<Scalar>(Scalar(10),
                                        std::max<Scalar>(Scalar(1e-3), tau_.value(0, 0)));
  }

 private:
  EmbedderConfig cfg_;
  Linear<Scalar> patch_proj_;
  LayerNorm<Scalar> norm_;
  Linear<Scalar> se_squeeze_;
  Linear<Scalar> se_excite_;
  Param<Scalar> gate_gain_;
  Param<Scalar> gate_bias_;
  Param<Scalar> tau_;
};

/// Similarity of L2-normalized per-sample rows, scaled by 1/tau.
template <typename Scalar>
struct SimilarityMatrix {
  Mat<Scalar> S;
  Scalar tau;
};

/// Each row of `flat` is one sample's flattened token block. Rows are
/// normalized independently before the Gram matrix is formed.
template <typename Scalar>
SimilarityMatrix<Scalar> similarity_matrix(const Mat<Scalar>& flat, Scalar tau) {
  require(flat.rows() >= 1, "similarity_matrix: need at least one sample");
  require(tau > Scalar(0), "similarity_matrix: tau must be positive");
  Tape<Scalar> t(false);
  auto hat = t.normalize_rows(t.constant(flat));
  Mat<Scalar> S = t.value(hat) * t.value(hat).transpose() / tau;
  return {std::move(S), tau};
}

/// Cross-sample InfoNCE: -(1/B) sum_k log softmax(S)_kk. Non-negative, equal
/// to log B when every entry of S is identical.
template <typename Scalar>
Scalar infonce_loss(const Mat<Scalar>& S) {
  require(S.rows() == S.cols(), "infonce_loss: similarity matrix must be square");
  Tape<Scalar> t(false);
  auto s = t.constant(S);
  auto loss = t.mean_all(t.sub(t.logsumexp_rows(s), t.diag(s)));
  return t.value(loss)(0, 0);
}

/// In-graph InfoNCE over normalized flattened tokens and a learnable tau.
template <typename Scalar>
typename Tape<Scalar>::Var infonce_graph(Tape<Scalar>& t,
                                         typename Tape<Scalar>::Var flat,
                                         typename Tape<Scalar>::Var tau) {
  auto hat = t.normalize_rows(flat);
  auto S = t.div_by_scalar(t.matmul(hat, t.transpose(hat)), tau);
  return t.mean_all(t.sub(t.logsumexp_rows(S), t.diag(S)));
}

struct PretrainReport {
  std::vector<double> loss_trace;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// Contrastive pretraining of the embedder on source-side latents. The soft
/// mask scales the tokens entering the loss, so the mask head learns to
/// up-weight the patches that tell samples apart. Weights are frozen by the
/// caller afterwards (checkpointed, never updated again).
template <typename Scalar>
PretrainReport pretrain_embedder(VisionEmbedder<Scalar>& embedder,
                                 const std::vector<LatentImage<Scalar>>& data,
                                 int steps, Index batch, double lr,
                                 RandomStream& rng,
                                 std::ostream* warnings = nullptr) {
  require(!data.empty(), "pretrain_embedder: empty dataset");
  if (batch < 2 && warnings != nullptr) {
    (*warnings) << "warning: contrastive pretraining with batch < 2 "
                   "degenerates to a zero loss\n";
  }
  const EmbedderConfig& cfg = embedder.config();
  const Index L = cfg.tokens_per_item();
  typename AdamW<Scalar>::Options opts;
  opts.lr = lr;
  AdamW<Scalar> opt(embedder.parameters(), opts);

  PretrainReport report;
  std::vector<std::size_t> pool(data.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  const Index draw = std::min<Index>(batch, static_cast<Index>(data.size()));

  for (int step = 0; step < steps; ++step) {
    // contrastive batches are drawn without replacement; duplicate items
    // would put a second 1/tau entry in their rows of S
    for (Index b = 0; b < draw; ++b) {
      const auto j = static_cast<std::size_t>(
          rng.uniform_int(b, static_cast<std::int64_t>(pool.size()) - 1));
      std::swap(pool[static_cast<std::size_t>(b)], pool[j]);
    }
    Mat<Scalar> patches(draw * L, static_cast<Index>(cfg.latent_channels) *
                                      cfg.patch_size * cfg.patch_size);
    for (Index b = 0; b < draw; ++b) {
      const auto& z = data[pool[static_cast<std::size_t>(b)]];
      patches.middleRows(b * L, L) = patch_extract(z, cfg.patch_size);
    }

    Tape<Scalar> t;
    auto g = embedder.forward(t, t.constant(patches), draw);
    auto adjusted = t.cmul_colvec(g.tokens, g.mask_col);
    auto flat = t.reshape(adjusted, draw, L * cfg.dim);
    auto loss = infonce_graph(t, flat, t.param(embedder.tau_param()));
    const double loss_v = t.value(loss)(0, 0);
    report.loss_trace.push_back(loss_v);
    if (step == 0) report.initial_loss = loss_v;

    opt.zero_grad();
    t.backward(loss);
    opt.step();
    embedder.clamp_tau();
  }
  report.final_loss = report.loss_trace.empty() ? 0.0 : report.loss_trace.back();
  return report;
}

}  // namespace diffma
