#pragma once

#include "diffma/autodiff.hpp"
#include "diffma/conditioner.hpp"
#include "diffma/embedder.hpp"
#include "diffma/nn.hpp"
#include "diffma/patchify.hpp"
#include "diffma/spiral.hpp"

#include <memory>
#include <string>
#include <vector>

namespace diffma {

enum class ModelPreset { kS, kB, kL, kXL, kXXL, kTiny };

struct ModelConfig {
  int layers = 8;
  int patch_size = 4;
  Index dim = 512;
  Index state_size = 16;
  int latent_channels = 4;
  int latent_height = 28;
  int latent_width = 28;
  Index t_embed_dim = 256;

  int grid_h() const { return latent_height / patch_size; }
  int grid_w() const { return latent_width / patch_size; }
  Index tokens() const {
    return patch_count(latent_height, latent_width, patch_size);
  }
  Index dt_rank() const { return std::max<Index>(1, dim / 16); }
  Index patch_values() const {
    return static_cast<Index>(latent_channels) * patch_size * patch_size;
  }

  void validate() const {
    require(layers >= 0, "layers must be non-negative");
    require(patch_size >= 1, "patch size must be positive");
    require(latent_height % patch_size == 0 && latent_width % patch_size == 0,
            "latent spatial size must be divisible by the patch size");
    require(dim % 4 == 0, "token dimension must be a multiple of 4");
    require(state_size >= 1, "state size must be positive");
  }

  static ModelConfig preset(ModelPreset p, int patch = 4) {
    ModelConfig c;
    c.patch_size = patch;
    switch (p) {
      case ModelPreset::kS: c.layers = 4; break;
      case ModelPreset::kB: c.layers = 8; break;
      case ModelPreset::kL: c.layers = 16; break;
      case ModelPreset::kXL: c.layers = 28; break;
      case ModelPreset::kXXL: c.layers = 56; break;
      case ModelPreset::kTiny:
        c.layers = 2;
        c.dim = 64;
        c.patch_size = 2;
        c.latent_height = 16;
        c.latent_width = 16;
        break;
    }
    return c;
  }

  KvConfig describe() const {
    KvConfig kv;
    kv.set_int("model.layers", layers);
    kv.set_int("model.patch_size", patch_size);
    kv.set_int("model.dim", dim);
    kv.set_int("model.state_size", state_size);
    kv.set_int("model.latent_channels", latent_channels);
    kv.set_int("model.latent_height", latent_height);
    kv.set_int("model.latent_width", latent_width);
    return kv;
  }

  std::uint64_t fingerprint() const { return describe().fingerprint(); }
};

/// Conditioning bundle fed to every block: the mask-adjusted source tokens
/// with the pooled external embedding appended as one extra token, their mean
/// as the AdaLN conditioning vector, and the raw timestep embedding.
template <typename Scalar>
struct Condition {
  Mat<Scalar> tokens;        // [B*(L+1) x D]
  Mat<Scalar> pooled;        // [B x D], mean over the token axis
  Mat<Scalar> timestep_emb;  // [B x t_embed_dim], sinusoidal
  std::vector<int> t;
  Index batch = 0;
  Index tokens_per_item = 0;  // L + 1
};

/// Assembles the condition from frozen features. The soft mask scales the
/// embedder tokens (all-ones mask passes them through unchanged); the
/// external embedding contributes its token mean as one appended token.
template <typename Scalar>
Condition<Scalar> build_condition(const Mat<Scalar>& e_ve, const Mat<Scalar>& mask,
                                  const std::vector<Mat<Scalar>>& e_ext,
                                  const std::vector<int>& t, Index t_embed_dim) {
  const Index B = mask.rows();
  const Index L = mask.cols();
  const Index D = e_ve.cols();
  require(e_ve.rows() == B * L, "build_condition: token rows must be B*L");
  require(static_cast<Index>(e_ext.size()) == B,
          "build_condition: external embedding batch mismatch");
  require(static_cast<Index>(t.size()) == B,
          "build_condition: timestep batch mismatch");
  for (const auto& e : e_ext)
    require(e.cols() == D,
            "build_condition: external embedding dimension mismatch");

  Condition<Scalar> cond;
  cond.batch = B;
  cond.tokens_per_item = L + 1;
  cond.t = t;
  cond.tokens.resize(B * (L + 1), D);
  for (Index b = 0; b < B; ++b) {
    for (Index l = 0; l < L; ++l)
      cond.tokens.row(b * (L + 1) + l) =
          e_ve.row(b * L + l) * mask(b, l);
    cond.tokens.row(b * (L + 1) + L) =
        e_ext[static_cast<std::size_t>(b)].colwise().mean();
  }
  cond.pooled.resize(B, D);
  for (Index b = 0; b < B; ++b)
    cond.pooled.row(b) = cond.tokens.middleRows(b * (L + 1), L + 1).colwise().mean();
  cond.timestep_emb = sinusoidal_timestep_table<Scalar>(t, t_embed_dim);
  return cond;
}

/// CBAM-style fusion of two branch outputs: a per-token gate computed from
/// channel-pooled statistics of both inputs blends them convexly.
template <typename Scalar>
typename Tape<Scalar>::Var spatial_attention_fuse(Tape<Scalar>& t,
                                                  typename Tape<Scalar>::Var a,
                                                  typename Tape<Scalar>::Var b,
                                                  Linear<Scalar>& gate_head) {
  require(t.value(a).rows() == t.value(b).rows() &&
              t.value(a).cols() == t.value(b).cols(),
          "spatial_attention_fuse: shape mismatch");
  auto feats = t.concat_cols(t.mean_cols(a), t.mean_cols(b));
  auto gate = t.sigmoid(gate_head.forward(t, feats));  // [R x 1]
  return t.add(b, t.cmul_colvec(t.sub(a, b), gate));
}

/// One DiffMa block: AdaLN modulation per branch, soft-mask scaling, dual
/// spiral scans in opposite modes, spatial-attention fusion, gated residual.
template <typename Scalar>
class MambaBlock {
 public:
  using T = Tape<Scalar>;
  using Var = typename T::Var;

  MambaBlock() = default;

  MambaBlock(const std::string& name, const ModelConfig& cfg, int block_index,
             RandomStream& rng)
      : index_(block_index), dim_(cfg.dim), state_(cfg.state_size),
        dt_rank_(cfg.dt_rank()) {
    schemes_ = scheme_for_block(block_index);
    perm_fwd_ = &cached_spiral(cfg.grid_h(), cfg.grid_w(), schemes_.forward);
    perm_rev_ = &cached_spiral(cfg.grid_h(), cfg.grid_w(), schemes_.reverse);

    adaln_ = Linear<Scalar>(name + ".adaln", dim_, 6 * dim_, rng, /*zero=*/true);
    in_proj_ = Linear<Scalar>(name + ".in_proj", dim_, dim_, rng);
    out_proj_ = Linear<Scalar>(name + ".out_proj", dim_, dim_, rng);
    fuse_gate_ = Linear<Scalar>(name + ".fuse_gate", 2, 1, rng, /*zero=*/true);
    for (int br = 0; br < 2; ++br) {
      auto& h = heads_[br];
      const std::string hn = name + (br == 0 ? ".fwd" : ".rev");
      h.x_proj = Linear<Scalar>(hn + ".x_proj", dim_, dt_rank_ + 2 * state_,
                                rng, false, /*bias=*/false);
      h.dt_proj = Linear<Scalar>(hn + ".dt_proj", dt_rank_, dim_, rng);
      // timescale bias: softplus(bias) lands log-uniformly in [1e-3, 1e-1]
      for (Index d = 0; d < dim_; ++d) {
        const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
        h.dt_proj.b.value(0, d) =
            static_cast<Scalar>(std::log(std::expm1(dt)));
      }
      h.A_log.name = hn + ".A_log";
      h.A_log.value.resize(dim_, state_);
      for (Index d = 0; d < dim_; ++d)
        for (Index n = 0; n < state_; ++n)
          h.A_log.value(d, n) = static_cast<Scalar>(std::log(double(n + 1)));
      h.D_skip.name = hn + ".D_skip";
      h.D_skip.value = Mat<Scalar>::Ones(1, dim_);
    }
  }

  const SchemePair& schemes() const { return schemes_; }
  int index() const { return index_; }

  ParamRefs<Scalar> parameters() {
    ParamRefs<Scalar> out;
    adaln_.collect(out);
    in_proj_.collect(out);
    for (auto& h : heads_) {
      h.x_proj.collect(out);
      h.dt_proj.collect(out);
      out.push_back(&h.A_log);
      out.push_back(&h.D_skip);
    }
    out_proj_.collect(out);
    fuse_gate_.collect(out);
    return out;
  }

  /// x: [B*L x D] tokens; c_act: silu of the conditioning vector [B x D];
  /// mask_plus1: [B*L x 1] holding (1 + m).
  Var forward(T& t, Var x, Var c_act, Var mask_plus1, Index batch) {
    const Index L = static_cast<Index>(perm_fwd_->size());
    require(t.value(x).rows() == batch * L, "mamba_block: token count mismatch");
    require(t.value(mask_plus1).rows() == batch * L,
            "mamba_block: mask length mismatch");

    auto ada = adaln_.forward(t, c_act);  // [B x 6D], zero at init
    const auto piece = [&](Index k) { return t.block_cols(ada, k * dim_, dim_); };
    auto norm = t.layernorm_rows(x);

    auto run_branch = [&](Var shift, Var scale, int br,
                          const Permutation& perm) {
      auto mod = t.add(
          t.cmul(norm, t.add_const(t.repeat_rows(scale, L), Scalar(1))),
          t.repeat_rows(shift, L));
      auto masked = t.cmul_colvec(mod, mask_plus1);
      auto permuted = t.rows_gather(masked, expand_order(perm.order, batch, L));
      auto u = t.silu(in_proj_.forward(t, permuted));
      auto& h = heads_[br];
      auto xp = h.x_proj.forward(t, u);
      auto dt = t.softplus(
          h.dt_proj.forward(t, t.block_cols(xp, 0, dt_rank_)));
      auto Bv = t.block_cols(xp, dt_rank_, state_);
      auto Cv = t.block_cols(xp, dt_rank_ + state_, state_);
      auto A = t.scale(t.exp(t.param(h.A_log)), Scalar(-1));
      auto y = t.selective_scan(u, dt, Bv, Cv, A, batch, L);
      y = t.add(y, t.cmul_rowvec(u, t.param(h.D_skip)));
      return t.rows_gather(y, expand_order(perm.inverse, batch, L));
    };

    auto ya = run_branch(piece(0), piece(1), 0, *perm_fwd_);
    auto yb = run_branch(piece(3), piece(4), 1, *perm_rev_);
    auto gated_a = t.cmul(ya, t.repeat_rows(piece(2), L));
    auto gated_b = t.cmul(yb, t.repeat_rows(piece(5), L));
    auto fused = spatial_attention_fuse(t, gated_a, gated_b, fuse_gate_);
    return t.add(x, out_proj_.forward(t, fused));
  }

  Linear<Scalar>& fuse_gate() { return fuse_gate_; }
  Linear<Scalar>& adaln() { return adaln_; }

  static std::vector<Index> expand_order(const std::vector<int>& order,
                                         Index batch, Index L) {
    std::vector<Index> idx(static_cast<std::size_t>(batch * L));
    for (Index b = 0; b < batch; ++b)
      for (Index l = 0; l < L; ++l)
        idx[static_cast<std::size_t>(b * L + l)] = b * L + order[static_cast<std::size_t>(l)];
    return idx;
  }

 private:
  struct ScanHead {
    Linear<Scalar> x_proj;
    Linear<Scalar> dt_proj;
    Param<Scalar> A_log;
    Param<Scalar> D_skip;
  };

  int index_ = 0;
  Index dim_ = 0, state_ = 0, dt_rank_ = 0;
  SchemePair schemes_;
  const Permutation* perm_fwd_ = nullptr;
  const Permutation* perm_rev_ = nullptr;
  Linear<Scalar> adaln_;
  Linear<Scalar> in_proj_;
  Linear<Scalar> out_proj_;
  Linear<Scalar> fuse_gate_;
  ScanHead heads_[2];
};

/// Analytic parameter and scan-cost footprint of a configuration. The
/// parameter count enumerates exactly the tensors the constructed model
/// registers (anchored by tests); the flops figure is the serialized-scan
/// cost of the block stack, 2 x [3 L (2D) N + L (2D) N^2] per block.
struct ModelFootprint {
  long long params = 0;
  long long scan_flops = 0;
};

inline ModelFootprint count_params(const ModelConfig& cfg) {
  cfg.validate();
  const long long D = cfg.dim, N = cfg.state_size, R = cfg.dt_rank();
  const long long L = cfg.tokens(), pv = cfg.patch_values();
  ModelFootprint f;
  f.params += pv * D + D;                    // patch embedding
  f.params += cfg.t_embed_dim * D + D;       // timestep MLP, first layer
  f.params += D * D + D;                     // timestep MLP, second layer
  f.params += D * D + D;                     // pooled-condition projection
  const long long per_branch = D * (R + 2 * N)  // x_proj
                               + R * D + D      // dt_proj
                               + D * N          // A_log
                               + D;             // D_skip
  const long long per_block = D * 6 * D + 6 * D   // adaln
                              + D * D + D          // in_proj
                              + 2 * per_branch
                              + D * D + D          // out_proj
                              + 3;                 // fuse gate
  f.params += per_block * cfg.layers;
  f.params += (2 * D * D + D) * (cfg.layers / 2);  // long-skip projections
  f.params += D * 2 * D + 2 * D;             // final modulation
  f.params += D * pv + pv;                   // final projection
  f.scan_flops =
      2LL * (3 * L * (2 * D) * N + L * (2 * D) * N * N) * cfg.layers;
  return f;
}

/// The denoising network. Patch embedding with fixed sinusoidal positions, a
/// stack of Mamba blocks with rotating spiral schemes and U-shaped long skip
/// connections, and a zero-initialized output head (exact zero prediction at
/// initialization).
template <typename Scalar>
class DiffMaModel {
 public:
  using T = Tape<Scalar>;
  using Var = typename T::Var;

  DiffMaModel(const ModelConfig& cfg, RandomStream& rng) : cfg_(cfg) {
    cfg_.validate();
    const Index D = cfg_.dim;
    patch_embed_ = Linear<Scalar>("model.patch_embed", cfg_.patch_values(), D, rng);
    pos_table_ = sinusoidal_position_table<Scalar>(cfg_.grid_h(), cfg_.grid_w(), D);
    t_mlp1_ = Linear<Scalar>("model.t_mlp1", cfg_.t_embed_dim, D, rng);
    t_mlp2_ = Linear<Scalar>("model.t_mlp2", D, D, rng);
    cond_proj_ = Linear<Scalar>("model.cond_proj", D, D, rng);
    blocks_.reserve(cfg_.layers);
    for (int i = 0; i < cfg_.layers; ++i)
      blocks_.emplace_back("model.block" + std::to_string(i), cfg_, i, rng);
    const int skips = cfg_.layers / 2;
    skip_projs_.reserve(skips);
    for (int i = 0; i < skips; ++i)
      skip_projs_.emplace_back("model.skip_proj" + std::to_string(i), 2 * D, D,
                               rng);
    final_mod_ = Linear<Scalar>("model.final_mod", D, 2 * D, rng, /*zero=*/true);
    final_out_ = Linear<Scalar>("model.final_out", D, cfg_.patch_values(), rng,
                                /*zero=*/true);
  }

  const ModelConfig& config() const { return cfg_; }
  const SchemePair& block_scheme(int i) const { return blocks_[i].schemes(); }
  MambaBlock<Scalar>& block(int i) { return blocks_[static_cast<std::size_t>(i)]; }

  ParamRefs<Scalar> parameters() {
    ParamRefs<Scalar> out;
    patch_embed_.collect(out);
    t_mlp1_.collect(out);
    t_mlp2_.collect(out);
    cond_proj_.collect(out);
    for (auto& b : blocks_) {
      auto bp = b.parameters();
      out.insert(out.end(), bp.begin(), bp.end());
    }
    for (auto& s : skip_projs_) s.collect(out);
    final_mod_.collect(out);
    final_out_.collect(out);
    return out;
  }

  Index parameter_count() { return total_param_count<Scalar>(parameters()); }

  /// Differentiable forward over pre-extracted noisy patch rows.
  /// Returns predicted noise in patch-row form [B*L x C*p*p].
  Var forward_graph(T& t, const Mat<Scalar>& patch_rows,
                    const Condition<Scalar>& cond, const Mat<Scalar>& mask,
                    Index batch) {
    const Index L = cfg_.tokens();
    const Index D = cfg_.dim;
    require(patch_rows.rows() == batch * L &&
                patch_rows.cols() == cfg_.patch_values(),
            "model: patch rows shape mismatch");
    require(cond.batch == batch, "model: condition batch mismatch");
    require(cond.pooled.cols() == D, "model: condition dimension mismatch");
    require(mask.rows() == batch && mask.cols() == L,
            "model: mask shape must be batch x tokens");

    // conditioning vector: projected pooled condition + timestep MLP
    auto t_emb = t_mlp2_.forward(
        t, t.silu(t_mlp1_.forward(t, t.constant(cond.timestep_emb))));
    auto c_vec = t.add(cond_proj_.forward(t, t.constant(cond.pooled)), t_emb);
    auto c_act = t.silu(c_vec);

    Mat<Scalar> mask_p1(batch * L, 1);
    for (Index b = 0; b < batch; ++b)
      for (Index l = 0; l < L; ++l)
        mask_p1(b * L + l, 0) = Scalar(1) + mask(b, l);
    auto mask_plus1 = t.constant(mask_p1);

    auto x = t.add_rowvec(t.matmul(t.constant(patch_rows),
                                   t.param(patch_embed_.W)),
                          t.param(patch_embed_.b));
    x = t.add(x, t.constant(pos_table_.replicate(batch, 1)));

    const int K = cfg_.layers;
    const int push_until = K / 2;        // blocks [0, K/2) store outputs
    const int pop_from = K - K / 2;      // blocks [K - K/2, K) consume them
    std::vector<Var> skip_stack;
    for (int i = 0; i < K; ++i) {
      if (i >= pop_from) {
        Var skip = skip_stack.back();
        skip_stack.pop_back();
        x = skip_projs_[static_cast<std::size_t>(K - 1 - i)].forward(
            t, t.concat_cols(x, skip));
      }
      x = blocks_[static_cast<std::size_t>(i)].forward(t, x, c_act, mask_plus1,
                                                       batch);
      if (!t.value(x).allFinite())
        throw NanAbort(i, "non-finite activation after block " +
                              std::to_string(i));
      if (i < push_until) skip_stack.push_back(x);
    }

    auto fm = final_mod_.forward(t, c_act);  // [B x 2D], zero at init
    auto shift = t.block_cols(fm, 0, D);
    auto scale = t.block_cols(fm, D, D);
    auto xn = t.layernorm_rows(x);
    auto modulated = t.add(
        t.cmul(xn, t.add_const(t.repeat_rows(scale, L), Scalar(1))),
        t.repeat_rows(shift, L));
    auto out = final_out_.forward(t, modulated);
    if (!t.value(out).allFinite())
      throw NanAbort(K, "non-finite activation in the output head");
    return out;
  }

  /// Pure inference: predicted noise with the shape of the input latents.
  std::vector<LatentImage<Scalar>> predict_noise(
      const std::vector<LatentImage<Scalar>>& z_t,
      const Condition<Scalar>& cond, const Mat<Scalar>& mask) {
    const Index B = static_cast<Index>(z_t.size());
    const Index L = cfg_.tokens();
    Mat<Scalar> rows(B * L, cfg_.patch_values());
    for (Index b = 0; b < B; ++b) {
      const auto& z = z_t[static_cast<std::size_t>(b)];
      require(z.channels == cfg_.latent_channels &&
                  z.height == cfg_.latent_height && z.width == cfg_.latent_width,
              "model: latent shape does not match the configuration");
      rows.middleRows(b * L, L) = patch_extract(z, cfg_.patch_size);
    }
    T t(false);
    const Mat<Scalar> out = t.value(forward_graph(t, rows, cond, mask, B));
    std::vector<LatentImage<Scalar>> eps;
    eps.reserve(static_cast<std::size_t>(B));
    for (Index b = 0; b < B; ++b) {
      eps.push_back(patch_fold<Scalar>(out.middleRows(b * L, L),
                                       cfg_.latent_channels, cfg_.latent_height,
                                       cfg_.latent_width, cfg_.patch_size));
      eps.back().provenance = z_t[static_cast<std::size_t>(b)].provenance;
    }
    return eps;
  }

  Linear<Scalar>& final_out() { return final_out_; }

 private:
  ModelConfig cfg_;
  Linear<Scalar> patch_embed_;
  Mat<Scalar> pos_table_;
  Linear<Scalar> t_mlp1_, t_mlp2_;
  Linear<Scalar> cond_proj_;
  std::vector<MambaBlock<Scalar>> blocks_;
  std::vector<Linear<Scalar>> skip_projs_;
  Linear<Scalar> final_mod_;
  Linear<Scalar> final_out_;
};

}  // namespace diffma
