#include "diffma/train.hpp"

#include <doctest.h>

#include <filesystem>

using namespace diffma;
namespace fs = std::filesystem;

namespace {

struct SmokeSetup {
  std::vector<SyntheticPair<Real>> pairs;
  PoolingCodec<Real> codec;
  EmbedderConfig ecfg;
  ModelConfig mcfg;

  SmokeSetup() {
    SyntheticOptions opts;
    opts.resolution = 128;
    for (int i = 0; i < 12; ++i)
      pairs.push_back(make_synthetic_pair<Real>(5, static_cast<std::uint64_t>(i),
                                                opts));
    mcfg = ModelConfig::preset(ModelPreset::kTiny);
    ecfg.latent_channels = mcfg.latent_channels;
    ecfg.latent_height = mcfg.latent_height;
    ecfg.latent_width = mcfg.latent_width;
    ecfg.patch_size = mcfg.patch_size;
    ecfg.dim = mcfg.dim;
  }
};

}  // namespace

TEST_CASE("training pipeline declares no augmentation stages") {
  for (const auto& stage : training_pipeline_stages()) {
    CHECK(stage.find("augment") == std::string::npos);
    CHECK(stage.find("flip") == std::string::npos);
    CHECK(stage.find("crop") == std::string::npos);
    CHECK(stage.find("jitter") == std::string::npos);
  }
  CHECK(training_pipeline_stages().size() == 5);
}

TEST_CASE("training is deterministic in the seed") {
  SmokeSetup s;
  PretrainOptions popts;
  popts.embedder = s.ecfg;
  popts.steps = 10;
  popts.batch = 4;
  popts.seed = 3;
  const std::string edir = "/tmp/diffma_train_test";
  fs::create_directories(edir);
  const auto pre = run_pretrain_embedder(s.pairs, s.codec, popts,
                                         edir + "/embedder.ckpt");
  auto embedder = load_embedder_checked(pre.checkpoint_path, s.mcfg);

  HashedConditioner<Real> conditioner(s.mcfg.dim);
  const auto data =
      prepare_training_features(s.pairs, s.codec, embedder, conditioner);
  const auto schedule = make_schedule(1000);

  TrainOptions topts;
  topts.model = s.mcfg;
  topts.steps = 8;
  topts.batch = 2;
  topts.seed = 17;
  topts.log_every = 1000;

  const auto r1 = run_train_diffusion(data, 0, embedder, schedule, topts,
                                      edir + "/m1.ckpt", edir + "/m1e.ckpt");
  const auto r2 = run_train_diffusion(data, 0, embedder, schedule, topts,
                                      edir + "/m2.ckpt", edir + "/m2e.ckpt");
  REQUIRE(r1.losses.size() == r2.losses.size());
  for (std::size_t i = 0; i < r1.losses.size(); ++i)
    CHECK(r1.losses[i] == r2.losses[i]);  // bitwise-identical trajectories

  SUBCASE("fingerprint guards fail loudly") {
    // wrong schedule
    const auto other_schedule = make_schedule(500);
    CHECK_THROWS_WITH_AS(
        load_model_checked(edir + "/m1.ckpt", s.mcfg,
                           embedder.config().fingerprint(), other_schedule),
        doctest::Contains("schedule"), std::invalid_argument);
    // wrong embedder fingerprint
    CHECK_THROWS_WITH_AS(
        load_model_checked(edir + "/m1.ckpt", s.mcfg, 12345, schedule),
        doctest::Contains("embedder"), std::invalid_argument);
    // wrong model config
    ModelConfig other = s.mcfg;
    other.layers = 3;
    CHECK_THROWS_WITH_AS(
        load_model_checked(edir + "/m1.ckpt", other,
                           embedder.config().fingerprint(), schedule),
        doctest::Contains("fingerprint"), std::invalid_argument);
    // mismatched embedder grid refused at load
    ModelConfig wide = s.mcfg;
    wide.patch_size = 4;
    CHECK_THROWS_WITH_AS(load_embedder_checked(pre.checkpoint_path, wide),
                         doctest::Contains("patch grid"),
                         std::invalid_argument);
  }

  SUBCASE("checkpoint reload reproduces the trained model bitwise") {
    auto model = load_model_checked(edir + "/m1.ckpt", s.mcfg,
                                    embedder.config().fingerprint(), schedule);
    auto again = load_model_checked(edir + "/m2.ckpt", s.mcfg,
                                    embedder.config().fingerprint(), schedule);
    auto pa = model.parameters();
    auto pb = again.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i)
      CHECK(pa[i]->value == pb[i]->value);
  }
}

TEST_CASE("sampling and evaluation round trip through run directories") {
  SmokeSetup s;
  const std::string root = "/tmp/diffma_sample_test";
  fs::remove_all(root);

  PretrainOptions popts;
  popts.embedder = s.ecfg;
  popts.steps = 5;
  popts.batch = 4;
  fs::create_directories(root);
  const auto pre = run_pretrain_embedder(s.pairs, s.codec, popts,
                                         root + "/embedder.ckpt");
  auto embedder = load_embedder_checked(pre.checkpoint_path, s.mcfg);
  HashedConditioner<Real> conditioner(s.mcfg.dim);
  const auto data =
      prepare_training_features(s.pairs, s.codec, embedder, conditioner);
  const auto schedule = make_schedule(100);

  RandomStream rng(1);
  DiffMaModel<Real> model(s.mcfg, rng);

  SamplerSettings st;
  st.steps = 4;
  st.seed = 9;
  const std::vector<std::size_t> idx{0, 1, 2};
  const auto out = sample_items(model, schedule, data, idx, s.codec, st);
  REQUIRE(out.images.size() == 3);
  for (const auto& img : out.images) {
    CHECK(img.height == 128);
    CHECK(img.data.minCoeff() >= 0.0);
    CHECK(img.data.maxCoeff() <= 1.0);
  }

  // identical generated/reference folders score perfectly
  const std::string gdir = root + "/gen";
  const std::string rdir = root + "/ref";
  fs::create_directories(gdir);
  fs::create_directories(rdir);
  for (std::size_t i = 0; i < out.images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03zu.dmt", i);
    write_image_tensor(gdir + "/" + name, out.images[i]);
    write_image_tensor(rdir + "/" + name, out.images[i]);
  }
  const MetricReport r = evaluate_dirs(gdir, rdir);
  CHECK(r.ssim_pct == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(r.mse_255 == 0.0);
  CHECK(r.psnr_db == 100.0);

  write_metric_report(r, root + "/report.kv");
  const KvConfig kv = KvConfig::load(root + "/report.kv");
  CHECK(kv.get_double("metrics.ssim_pct") == doctest::Approx(100.0));
  CHECK(kv.has("metrics.psnr_db"));
  CHECK(kv.has("metrics.mse_255"));
}

TEST_CASE("run directories are lock-protected") {
  const std::string root = "/tmp/diffma_rundir_test";
  fs::remove_all(root);
  {
    RunDir a(root, "run1");
    a.write_config(KvConfig::parse("a.b = 1\n"));
    a.log("hello");
    CHECK(fs::exists(a.file("config.kv")));
    CHECK_THROWS_WITH_AS(RunDir(root, "run1"), doctest::Contains("locked"),
                         std::runtime_error);
  }
  // lock released on destruction
  RunDir again(root, "run1");
  CHECK(fs::exists(again.file("config.kv")));
}
