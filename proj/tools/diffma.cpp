// Command-line entry point for the full workflow: synthetic data generation,
// embedder pretraining, diffusion training, sampling, evaluation, the scan
// benchmark, and scheme visualization.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "diffma/bench.hpp"
#include "diffma/train.hpp"

namespace fs = std::filesystem;
using namespace diffma;

namespace {

// Exit codes: 0 success, 1 usage/config errors, 2 missing artifact
// dependencies, 3 runtime failures.
constexpr int kExitUsage = 1;
constexpr int kExitMissingDependency = 2;
constexpr int kExitRuntime = 3;

KvConfig load_config_file(const std::string& path) {
  if (path.empty()) return {};
  return KvConfig::load(path);
}

ModelConfig model_from_config(const KvConfig& kv) {
  ModelConfig cfg = ModelConfig::preset(ModelPreset::kTiny);
  const std::string preset = kv.get_or("model.preset", "tiny");
  if (preset == "S") cfg = ModelConfig::preset(ModelPreset::kS);
  else if (preset == "B") cfg = ModelConfig::preset(ModelPreset::kB);
  else if (preset == "L") cfg = ModelConfig::preset(ModelPreset::kL);
  else if (preset == "XL") cfg = ModelConfig::preset(ModelPreset::kXL);
  else if (preset == "XXL") cfg = ModelConfig::preset(ModelPreset::kXXL);
  else if (preset != "tiny")
    throw std::invalid_argument("unknown model preset: " + preset);
  cfg.layers = static_cast<int>(kv.get_int_or("model.layers", cfg.layers));
  cfg.patch_size =
      static_cast<int>(kv.get_int_or("model.patch_size", cfg.patch_size));
  cfg.dim = kv.get_int_or("model.dim", cfg.dim);
  cfg.state_size = kv.get_int_or("model.state_size", cfg.state_size);
  cfg.latent_channels = static_cast<int>(
      kv.get_int_or("model.latent_channels", cfg.latent_channels));
  cfg.latent_height =
      static_cast<int>(kv.get_int_or("model.latent_height", cfg.latent_height));
  cfg.latent_width =
      static_cast<int>(kv.get_int_or("model.latent_width", cfg.latent_width));
  cfg.validate();
  return cfg;
}

EmbedderConfig embedder_from_model(const ModelConfig& m) {
  EmbedderConfig e;
  e.latent_channels = m.latent_channels;
  e.latent_height = m.latent_height;
  e.latent_width = m.latent_width;
  e.patch_size = m.patch_size;
  e.dim = m.dim;
  return e;
}

NoiseSchedule schedule_from_config(const KvConfig& kv) {
  return make_schedule(
      static_cast<int>(kv.get_int_or("schedule.T", 1000)),
      kv.get_double_or("schedule.beta_start", 1e-4),
      kv.get_double_or("schedule.beta_end", 2e-2));
}

void require_artifact(const std::string& path, const std::string& what) {
  if (path.empty() || !fs::exists(path)) {
    std::cerr << "error: missing dependency: " << what << " ('" << path
              << "' not found)\n";
    std::exit(kExitMissingDependency);
  }
}

KvConfig snapshot_model(const ModelConfig& cfg, KvConfig kv) {
  kv.merge(cfg.describe());
  return kv;
}

// flags override config-file values: a config entry applies only when the
// flag was not explicitly passed
template <typename T>
void config_fallback(const CLI::App* cmd, const std::string& flag,
                     const KvConfig& kv, const std::string& key, T& value) {
  if (cmd->count(flag) == 0 && kv.has(key)) {
    if constexpr (std::is_floating_point_v<T>) {
      value = static_cast<T>(kv.get_double(key));
    } else {
      value = static_cast<T>(kv.get_int(key));
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DiffMa: spiral-scan state-space latent diffusion, desk scale"};
  app.require_subcommand(1);

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic paired dataset");
  std::string gen_out;
  std::uint64_t gen_n = 512, gen_seed = 0;
  int gen_res = 128;
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--n", gen_n, "number of pairs");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--resolution", gen_res, "image resolution (divisible by 8)");

  // ---- pretrain-embedder ----
  auto* pre = app.add_subcommand("pretrain-embedder",
                                 "contrastive pretraining of the vision embedder");
  std::string pre_data, pre_run = "pretrain", pre_cfg_file,
              pre_root = default_run_root();
  int pre_steps = 300;
  std::uint64_t pre_seed = 0;
  long long pre_batch = 8;
  double pre_lr = 1e-4;
  pre->add_option("--data", pre_data, "dataset directory")->required();
  pre->add_option("--run", pre_run, "run directory name");
  pre->add_option("--run-root", pre_root, "run root directory");
  pre->add_option("--config", pre_cfg_file, "config file (kv format)");
  pre->add_option("--steps", pre_steps, "training steps");
  pre->add_option("--batch", pre_batch, "contrastive batch size");
  pre->add_option("--lr", pre_lr, "learning rate");
  pre->add_option("--seed", pre_seed, "seed");

  // ---- train ----
  auto* train = app.add_subcommand("train", "train the diffusion model");
  std::string train_data, train_embedder, train_run = "train", train_cfg_file,
              train_root = default_run_root();
  int train_steps = 2000, train_count = 0;
  std::uint64_t train_seed = 0;
  long long train_batch = 8;
  double train_lr = 1e-4, train_ema = 0.9999;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--embedder", train_embedder,
                    "pretrained embedder checkpoint");
  train->add_option("--run", train_run, "run directory name");
  train->add_option("--run-root", train_root, "run root directory");
  train->add_option("--config", train_cfg_file, "config file (kv format)");
  train->add_option("--steps", train_steps, "training steps");
  train->add_option("--batch", train_batch, "batch size");
  train->add_option("--lr", train_lr, "learning rate");
  train->add_option("--ema-decay", train_ema, "EMA decay rate");
  train->add_option("--train-count", train_count,
                    "use only the first N items (0 = all)");
  train->add_option("--seed", train_seed, "seed");

  // ---- sample ----
  auto* sample = app.add_subcommand("sample", "draw samples with a trained model");
  std::string sample_model, sample_embedder, sample_data,
      sample_run = "sample", sample_cfg_file, sample_root = default_run_root();
  int sample_steps = 50, sample_skip = 0, sample_count = 8;
  std::uint64_t sample_seed = 0;
  sample->add_option("--model", sample_model, "model checkpoint (EMA)")
      ->required();
  sample->add_option("--embedder", sample_embedder, "embedder checkpoint");
  sample->add_option("--data", sample_data, "dataset directory for conditions")
      ->required();
  sample->add_option("--run", sample_run, "run directory name");
  sample->add_option("--run-root", sample_root, "run root directory");
  sample->add_option("--config", sample_cfg_file, "config file (kv format)");
  sample->add_option("--steps", sample_steps, "sampler steps");
  sample->add_option("--skip", sample_skip, "skip the first N dataset items");
  sample->add_option("--count", sample_count, "number of items to sample");
  sample->add_option("--seed", sample_seed, "sampler seed");

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "image-quality metrics over two folders");
  std::string eval_gen, eval_ref, eval_out;
  eval->add_option("--generated", eval_gen, "folder of generated .dmt images")
      ->required();
  eval->add_option("--reference", eval_ref, "folder of reference .dmt images")
      ->required();
  eval->add_option("--out", eval_out, "write the report to this file");

  // ---- bench ----
  auto* bench = app.add_subcommand("bench", "scan-vs-attention scaling benchmark");
  std::string bench_out;
  long long bench_dim = 64;
  int bench_repeats = 5;
  bench->add_option("--out", bench_out, "write the report to this file");
  bench->add_option("--dim", bench_dim, "token dimension");
  bench->add_option("--repeats", bench_repeats, "timing repeats per point");

  // ---- show-scan ----
  auto* show = app.add_subcommand("show-scan", "print a scheme's visit ranks");
  int show_scheme = 0;
  std::string show_grid = "6x6", show_mode = "forward";
  show->add_option("--scheme", show_scheme, "scheme id in [0, 7]");
  show->add_option("--grid", show_grid, "grid size HxW");
  show->add_option("--mode", show_mode, "forward or reverse");

  // ---- params ----
  auto* params = app.add_subcommand("params",
                                    "parameter counts and flops per preset");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      SyntheticOptions opts;
      opts.resolution = gen_res;
      generate_synthetic_dataset<Real>(gen_out, gen_n, gen_seed, opts);
      std::cout << "wrote " << gen_n << " pairs to " << gen_out << "\n";
      return 0;
    }

    if (*show) {
      const auto x = show_grid.find('x');
      if (x == std::string::npos) {
        std::cerr << "error: --grid must look like 6x6\n";
        return kExitUsage;
      }
      const int h = std::stoi(show_grid.substr(0, x));
      const int w = std::stoi(show_grid.substr(x + 1));
      const ScanMode mode =
          show_mode == "reverse" ? ScanMode::kReverse : ScanMode::kForward;
      const ScanScheme scheme = ScanScheme::from_id(show_scheme, mode);
      const Permutation p = build_spiral(h, w, scheme);
      std::cout << scheme.describe() << " on " << h << "x" << w << ":\n"
                << render_scan_grid(p);
      return 0;
    }

    if (*params) {
      std::printf("%-6s %-6s %-12s %-12s\n", "preset", "patch", "params",
                  "scan-gflops");
      for (const auto& [name, preset] :
           {std::pair<const char*, ModelPreset>{"S", ModelPreset::kS},
            {"B", ModelPreset::kB},
            {"L", ModelPreset::kL},
            {"XL", ModelPreset::kXL},
            {"XXL", ModelPreset::kXXL}}) {
        for (const int patch : {7, 4, 2}) {
          const auto f = count_params(ModelConfig::preset(preset, patch));
          std::printf("%-6s %-6d %-12lld %-12.3f\n", name, patch, f.params,
                      f.scan_flops / 1e9);
        }
      }
      return 0;
    }

    if (*bench) {
      BenchOptions opts;
      opts.dim = bench_dim;
      opts.repeats = bench_repeats;
      opts.warnings = &std::cerr;
      const BenchReport report = scaling_benchmark(opts);
      const KvConfig kv = report.describe();
      std::cout << kv.serialize();
      if (!bench_out.empty()) kv.save(bench_out);
      return 0;
    }

    if (*eval) {
      require_artifact(eval_gen, "generated image folder");
      require_artifact(eval_ref, "reference image folder");
      const MetricReport r = evaluate_dirs(eval_gen, eval_ref);
      std::printf("ssim_pct = %.4f\npsnr_db = %.4f\nmse_255 = %.4f\ncount = %d\n",
                  r.ssim_pct, r.psnr_db, r.mse_255, r.count);
      if (!eval_out.empty()) write_metric_report(r, eval_out);
      return 0;
    }

    if (*pre) {
      require_artifact(pre_data, "dataset");
      KvConfig kv = load_config_file(pre_cfg_file);
      const ModelConfig mcfg = model_from_config(kv);
      RunDir run(pre_root, pre_run);
      config_fallback(pre, "--steps", kv, "pretrain.steps", pre_steps);
      config_fallback(pre, "--batch", kv, "pretrain.batch", pre_batch);
      config_fallback(pre, "--lr", kv, "optim.lr", pre_lr);
      config_fallback(pre, "--seed", kv, "run.seed", pre_seed);
      PretrainOptions opts;
      opts.embedder = embedder_from_model(mcfg);
      opts.steps = pre_steps;
      opts.batch = pre_batch;
      opts.lr = pre_lr;
      opts.seed = pre_seed;

      KvConfig snap = snapshot_model(mcfg, kv);
      snap.set("run.command", "pretrain-embedder");
      snap.set_int("pretrain.steps", opts.steps);
      snap.set_int("pretrain.batch", opts.batch);
      snap.set_double("optim.lr", opts.lr);
      snap.set_double("optim.weight_decay", 0.0);
      snap.set_int("run.seed", static_cast<long long>(opts.seed));
      snap.set("data.dir", pre_data);
      run.write_config(snap);

      const auto pairs = load_synthetic_dataset<Real>(pre_data);
      PoolingCodec<Real> codec;
      const std::string ck = run.subdir("checkpoints") + "/embedder.ckpt";
      std::ofstream log_stream(run.subdir("logs") + "/pretrain_log.txt");
      const auto result =
          run_pretrain_embedder(pairs, codec, opts, ck, &log_stream);
      run.log("pretrain finished, final loss " +
              std::to_string(result.report.final_loss));
      std::cout << "embedder checkpoint: " << ck << "\n";
      return 0;
    }

    if (*train) {
      require_artifact(train_data, "dataset");
      require_artifact(train_embedder, "pretrained embedder checkpoint");
      KvConfig kv = load_config_file(train_cfg_file);
      const ModelConfig mcfg = model_from_config(kv);
      RunDir run(train_root, train_run);

      config_fallback(train, "--steps", kv, "train.steps", train_steps);
      config_fallback(train, "--batch", kv, "train.batch", train_batch);
      config_fallback(train, "--lr", kv, "optim.lr", train_lr);
      config_fallback(train, "--ema-decay", kv, "ema.decay", train_ema);
      config_fallback(train, "--train-count", kv, "train.count", train_count);
      config_fallback(train, "--seed", kv, "run.seed", train_seed);
      TrainOptions opts;
      opts.model = mcfg;
      opts.steps = train_steps;
      opts.batch = train_batch;
      opts.lr = train_lr;
      opts.weight_decay = kv.get_double_or("optim.weight_decay", 0.0);
      opts.ema_decay = train_ema;
      opts.seed = train_seed;
      const NoiseSchedule schedule = schedule_from_config(kv);

      KvConfig snap = snapshot_model(mcfg, kv);
      snap.set("run.command", "train");
      snap.merge(schedule.describe());
      snap.set_int("train.steps", opts.steps);
      snap.set_int("train.batch", opts.batch);
      snap.set_int("train.count", train_count);
      snap.set_double("optim.lr", opts.lr);
      snap.set_double("optim.weight_decay", opts.weight_decay);
      snap.set_double("ema.decay", opts.ema_decay);
      snap.set_int("run.seed", static_cast<long long>(opts.seed));
      snap.set("data.dir", train_data);
      snap.set("embedder.checkpoint", train_embedder);
      run.write_config(snap);

      auto embedder = load_embedder_checked(train_embedder, mcfg);
      const auto pairs = load_synthetic_dataset<Real>(train_data);
      PoolingCodec<Real> codec;
      HashedConditioner<Real> conditioner(mcfg.dim);
      const auto data =
          prepare_training_features(pairs, codec, embedder, conditioner);

      const std::string cdir = run.subdir("checkpoints");
      std::ofstream log_stream(run.subdir("logs") + "/train_log.txt");
      const auto result = run_train_diffusion(
          data, static_cast<std::size_t>(train_count), embedder, schedule, opts,
          cdir + "/model.ckpt", cdir + "/model_ema.ckpt", &log_stream);
      run.log("train finished, last loss " +
              std::to_string(result.losses.back()));
      std::cout << "model checkpoint: " << result.model_path << "\n"
                << "ema checkpoint:   " << result.ema_path << "\n";
      return 0;
    }

    if (*sample) {
      require_artifact(sample_data, "dataset");
      require_artifact(sample_model, "model checkpoint");
      require_artifact(sample_embedder, "embedder checkpoint");
      KvConfig kv = load_config_file(sample_cfg_file);
      const ModelConfig mcfg = model_from_config(kv);
      const NoiseSchedule schedule = schedule_from_config(kv);
      RunDir run(sample_root, sample_run);

      auto embedder = load_embedder_checked(sample_embedder, mcfg);
      auto model = load_model_checked(
          sample_model, mcfg, embedder.config().fingerprint(), schedule);
      const auto pairs = load_synthetic_dataset<Real>(sample_data);
      require(static_cast<std::size_t>(sample_skip + sample_count) <=
                  pairs.size(),
              "sample: skip + count exceeds the dataset size");
      PoolingCodec<Real> codec;
      HashedConditioner<Real> conditioner(mcfg.dim);
      const auto data =
          prepare_training_features(pairs, codec, embedder, conditioner);

      std::vector<std::size_t> idx;
      for (int i = 0; i < sample_count; ++i)
        idx.push_back(static_cast<std::size_t>(sample_skip + i));
      config_fallback(sample, "--steps", kv, "sampler.steps", sample_steps);
      config_fallback(sample, "--seed", kv, "sampler.seed", sample_seed);
      config_fallback(sample, "--skip", kv, "sample.skip", sample_skip);
      config_fallback(sample, "--count", kv, "sample.count", sample_count);
      SamplerSettings st;
      st.steps = sample_steps;
      st.seed = sample_seed;
      const auto out = sample_items(model, schedule, data, idx, codec, st);

      const std::string sdir = run.subdir("samples");
      const std::string ldir = run.subdir("samples/latents");
      const std::string rdir = run.subdir("refs");
      for (std::size_t i = 0; i < out.images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "gen_%05zu.dmt", i);
        write_image_tensor(sdir + "/" + name, out.images[i]);
        TensorFile lt;
        const auto& z = out.latents[i];
        lt.dims = {static_cast<std::uint64_t>(z.channels),
                   static_cast<std::uint64_t>(z.height),
                   static_cast<std::uint64_t>(z.width)};
        lt.data.assign(z.data.data(), z.data.data() + z.data.size());
        write_tensor(ldir + "/" + name, lt);
        char rname[32];
        std::snprintf(rname, sizeof(rname), "ref_%05zu.dmt", i);
        write_image_tensor(rdir + "/" + rname,
                           to_three_channels(pairs[idx[i]].target));
      }
      KvConfig manifest;
      manifest.set_int("sample.seed", static_cast<long long>(st.seed));
      manifest.set_int("sample.steps", st.steps);
      manifest.set_int("sample.skip", sample_skip);
      manifest.set_int("sample.count", sample_count);
      manifest.set_int("sample.schedule_fingerprint",
                       static_cast<long long>(schedule.fingerprint()));
      manifest.set_int("sample.checkpoint_fingerprint",
                       static_cast<long long>(
                           ckpt::peek_meta(sample_model).fingerprint()));
      manifest.save(sdir + "/manifest.kv");

      KvConfig snap = snapshot_model(mcfg, kv);
      snap.set("run.command", "sample");
      snap.merge(schedule.describe());
      snap.set_int("sampler.steps", st.steps);
      snap.set_int("sampler.seed", static_cast<long long>(st.seed));
      run.write_config(snap);
      std::cout << "samples: " << sdir << "\nreferences: " << rdir << "\n";
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: invalid configuration: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
