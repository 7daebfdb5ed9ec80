#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "depthformer/bin_head.hpp"
#include "depthformer/config.hpp"
#include "depthformer/data.hpp"
#include "depthformer/error.hpp"
#include "depthformer/image_io.hpp"
#include "depthformer/kernels.hpp"
#include "depthformer/metrics.hpp"
#include "depthformer/model.hpp"
#include "depthformer/threading.hpp"
#include "depthformer/train.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNan = 3;
constexpr int kExitGradTol = 4;

struct ConfigArgs {
  std::string config_path;
  std::string preset_name;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("--preset", args.preset_name, "named preset: paper|tiny");
  cmd->add_option("--set", args.overrides, "key=value override, applied after file load");
}

df::FullConfig resolve_config(const ConfigArgs& args) {
  df::FullConfig cfg;
  if (!args.config_path.empty()) {
    if (!std::filesystem::exists(args.config_path))
      throw df::ConfigError("config file not found: " + args.config_path);
    cfg = df::load_config_file(args.config_path);
  } else if (!args.preset_name.empty()) {
    cfg.model = df::preset(args.preset_name);
    cfg.train = df::train_preset(args.preset_name);
  } else {
    throw df::ConfigError("either --config or --preset is required");
  }
  for (const std::string& kv : args.overrides) df::apply_override(cfg, kv);
  return cfg;
}

void require_valid(const df::FullConfig& cfg, int h, int w) {
  auto errs = df::validate(cfg.model, h, w);
  const auto terrs = df::validate_train(cfg.train);
  errs.insert(errs.end(), terrs.begin(), terrs.end());
  if (!errs.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw df::ConfigError(msg);
  }
}

int parse_synth_count(const std::string& spec) {
  if (spec.rfind("n=", 0) != 0) throw df::ConfigError("--synthetic expects n=<count>");
  const int n = std::stoi(spec.substr(2));
  if (n <= 0) throw df::ConfigError("--synthetic count must be positive");
  return n;
}

df::ParamStore<float> load_model_params(const df::ModelConfig& cfg, const std::string& path) {
  if (!std::filesystem::exists(path))
    throw df::DataError("checkpoint not found: " + path);
  df::ParamStore<float> params = df::init_depthformer_params<float>(cfg, 0);
  df::load_params_into(path, params);
  return params;
}

// Shared by eval/infer: pads to /32 if allowed, runs the model, crops back.
df::Tensor<float> predict_depth(const df::ModelConfig& cfg, const df::ParamStore<float>& params,
                                const df::Tensor<float>& image, bool allow_pad) {
  const int64_t h = image.shape[2], w = image.shape[3];
  if (h % 32 == 0 && w % 32 == 0) return df::infer_depth(cfg, params, image);
  if (!allow_pad)
    throw df::ConfigError("input " + std::to_string(h) + "x" + std::to_string(w) +
                          " is not divisible by 32; pass --pad to pad and crop back");
  const df::Tensor<float> padded = df::pad_image_to_multiple(image, 32);
  df::Tensor<float> full = df::infer_depth(cfg, params, padded);
  df::Tensor<float> out({image.shape[0], 1, h, w});
  for (int64_t b = 0; b < image.shape[0]; ++b)
    for (int64_t y = 0; y < h; ++y)
      std::copy_n(full.ptr() + (b * full.shape[2] + y) * full.shape[3], w,
                  out.ptr() + (b * h + y) * w);
  return out;
}

int cmd_train(const ConfigArgs& cargs, const std::string& synthetic,
              const std::string& manifest, int64_t steps_override, const std::string& out_dir,
              int64_t seed_override, bool has_seed, double depth_scale) {
  df::FullConfig cfg = resolve_config(cargs);
  if (steps_override >= 0) cfg.train.total_steps = steps_override;
  if (has_seed) cfg.train.seed = static_cast<uint64_t>(seed_override);
  require_valid(cfg, cfg.train.crop_h, cfg.train.crop_w);

  std::vector<df::Sample> dataset;
  if (!synthetic.empty()) {
    const int n = parse_synth_count(synthetic);
    dataset = df::make_synthetic_dataset(n, cfg.train.crop_h, cfg.train.crop_w, cfg.model.d_min,
                                         cfg.model.d_max, cfg.train.seed);
  } else if (!manifest.empty()) {
    for (const auto& [img, dep] : df::load_manifest(manifest))
      dataset.push_back(df::load_sample(img, dep, depth_scale, cfg.model.d_max));
  } else {
    throw df::ConfigError("train needs --synthetic n=<N> or --manifest <path>");
  }
  if (dataset.empty()) throw df::DataError("training dataset is empty");

  const df::FitResult result = df::fit(cfg.model, cfg.train, dataset, out_dir);
  if (!result.log.empty()) {
    const df::LogRow& last = result.log.back();
    std::printf("final step %lld: silog=%.6f chamfer=%.6f total=%.6f (lr=%.3g)\n",
                static_cast<long long>(last.step), last.silog, last.chamfer, last.total,
                last.lr);
  } else {
    std::printf("no steps run (total_steps=0)\n");
  }
  if (!result.checkpoint_path.empty())
    std::printf("checkpoint: %s\n", result.checkpoint_path.c_str());
  if (result.nan_abort) {
    std::fprintf(stderr, "aborted: non-finite loss; last good checkpoint retained\n");
    return kExitNan;
  }
  return 0;
}

int cmd_eval(const ConfigArgs& cargs, const std::string& checkpoint, const std::string& manifest,
             const std::string& synthetic, const std::string& crop_name, double cap_override,
             const std::string& out_dir, int64_t seed_override, bool has_seed,
             double depth_scale) {
  df::FullConfig cfg = resolve_config(cargs);
  if (has_seed) cfg.train.seed = static_cast<uint64_t>(seed_override);
  require_valid(cfg, 64, 64);
  const df::ParamStore<float> params = load_model_params(cfg.model, checkpoint);

  std::vector<df::Sample> dataset;
  if (!synthetic.empty()) {
    const int n = parse_synth_count(synthetic);
    dataset = df::make_synthetic_dataset(n, cfg.train.crop_h, cfg.train.crop_w, cfg.model.d_min,
                                         cfg.model.d_max, cfg.train.seed);
  } else if (!manifest.empty()) {
    const auto pairs = df::load_manifest(manifest);
    if (pairs.empty()) throw df::DataError("manifest is empty: " + manifest);
    const double cap = cap_override > 0 ? cap_override : cfg.model.d_max;
    for (const auto& [img, dep] : pairs)
      dataset.push_back(df::load_sample(img, dep, depth_scale, cap));
  } else {
    throw df::ConfigError("eval needs --manifest or --synthetic n=<N>");
  }
  if (dataset.empty()) throw df::DataError("evaluation dataset is empty");

  std::vector<df::MetricReport> reports;
  std::vector<std::string> ids;
  for (const df::Sample& s : dataset) {
    df::Tensor<float> image({1, 3, s.h, s.w});
    std::copy(s.image.begin(), s.image.end(), image.data.begin());
    const df::Tensor<float> depth = predict_depth(cfg.model, params, image, true);

    std::vector<float> pred(depth.data.begin(), depth.data.end());
    df::DepthMap gt = s.depth;
    if (cap_override > 0) {
      gt.cap = static_cast<float>(cap_override);
      for (size_t i = 0; i < gt.data.size(); ++i)
        if (gt.valid[i] && gt.data[i] > gt.cap) {
          gt.valid[i] = 0;
          gt.data[i] = 0.0f;
        }
    }
    if (crop_name == "garg") {
      const df::EvalCrop crop = df::garg_crop(s.h, s.w);
      pred = df::crop_plane(std::span<const float>(pred), s.h, s.w, crop);
      gt = df::crop_depth(gt, crop);
    } else if (crop_name == "eigen") {
      const df::EvalCrop crop = df::eigen_crop_nyu();
      pred = df::crop_plane(std::span<const float>(pred), s.h, s.w, crop);
      gt = df::crop_depth(gt, crop);
    } else if (crop_name != "none") {
      throw df::ConfigError("unknown --crop: " + crop_name);
    }
    reports.push_back(df::compute_metrics(std::span<const float>(pred), gt));
    ids.push_back(s.source_id);
  }
  const df::MetricReport agg = df::aggregate_mean(std::span<const df::MetricReport>(reports));

  std::printf("%-28s %10s %10s %8s %8s %8s %10s\n", "image", "rmse", "rel", "d1", "d2", "d3",
              "pixels");
  for (size_t i = 0; i < reports.size(); ++i) {
    const df::MetricReport& r = reports[i];
    std::printf("%-28s %10.4f %10.4f %8.4f %8.4f %8.4f %10lld\n", ids[i].c_str(), r.rmse, r.rel,
                r.delta1, r.delta2, r.delta3, static_cast<long long>(r.n_pixels));
  }
  std::printf("%-28s %10.4f %10.4f %8.4f %8.4f %8.4f %10lld\n", "aggregate", agg.rmse, agg.rel,
              agg.delta1, agg.delta2, agg.delta3, static_cast<long long>(agg.n_pixels));

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream csv(out_dir + "/eval.csv");
    csv << "image,rmse,rel,delta1,delta2,delta3,n_pixels\n";
    csv.precision(10);
    for (size_t i = 0; i < reports.size(); ++i) {
      const df::MetricReport& r = reports[i];
      csv << ids[i] << "," << r.rmse << "," << r.rel << "," << r.delta1 << "," << r.delta2 << ","
          << r.delta3 << "," << r.n_pixels << "\n";
    }
    csv << "aggregate," << agg.rmse << "," << agg.rel << "," << agg.delta1 << "," << agg.delta2
        << "," << agg.delta3 << "," << agg.n_pixels << "\n";
  }
  return 0;
}

int cmd_infer(const ConfigArgs& cargs, const std::string& checkpoint,
              const std::vector<std::string>& images, const std::string& out_dir, bool pad,
              bool pfm, bool preview, double png_scale) {
  df::FullConfig cfg = resolve_config(cargs);
  require_valid(cfg, 64, 64);
  const df::ParamStore<float> params = load_model_params(cfg.model, checkpoint);
  if (images.empty()) throw df::DataError("infer needs at least one image");
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  for (const std::string& path : images) {
    const df::ImageU8 img = df::read_png8_rgb(path);
    const df::Tensor<float> image = df::image_to_tensor(img);
    const df::Tensor<float> depth = predict_depth(cfg.model, params, image, pad);

    const std::string stem =
        (out_dir.empty() ? std::filesystem::path(path).parent_path() / ""
                         : std::filesystem::path(out_dir) / "")
            .string() +
        std::filesystem::path(path).stem().string();

    df::DepthMap dm;
    dm.h = img.h;
    dm.w = img.w;
    dm.cap = static_cast<float>(cfg.model.d_max);
    dm.data.assign(depth.data.begin(), depth.data.end());
    dm.valid.assign(dm.data.size(), 1);
    df::write_depth_png16(stem + "_depth.png", dm, png_scale);
    if (pfm) df::write_pfm(stem + "_depth.pfm", img.h, img.w, dm.data.data());
    if (preview)
      df::write_png8_rgb(stem + "_preview.png",
                         df::colorize_depth(std::span<const float>(dm.data), img.h, img.w,
                                            cfg.model.d_min, cfg.model.d_max));
    std::printf("%s -> %s_depth.png\n", path.c_str(), stem.c_str());
  }
  return 0;
}

int cmd_gradcheck(const ConfigArgs& cargs, int samples, double step_h, double tol,
                  int64_t seed) {
  df::FullConfig cfg = resolve_config(cargs);
  require_valid(cfg, 32, 32);
  const df::GradCheckReport r =
      df::grad_check(cfg.model, samples, step_h, static_cast<uint64_t>(seed));
  std::printf("gradcheck: max_rel_err=%.3e checked=%d skipped=%d", r.max_rel_err, r.n_checked,
              r.n_skipped);
  if (!r.worst_path.empty()) std::printf(" worst=%s", r.worst_path.c_str());
  std::printf(" tol=%.1e -> %s\n", tol, r.max_rel_err < tol ? "pass" : "FAIL");
  return r.max_rel_err < tol ? 0 : kExitGradTol;
}

int cmd_bench(const std::vector<std::string>& names, int iters, const std::string& hw) {
  if (iters <= 0) throw df::ConfigError("--iters must be positive");
  int h = 64, w = 64;
  if (!hw.empty()) {
    if (std::sscanf(hw.c_str(), "%dx%d", &h, &w) != 2)
      throw df::ConfigError("--hw expects <H>x<W>");
  }
  std::printf("kernels: %s, threads: %d\n", df::kern::active().name, df::max_threads());
  for (const std::string& name : names) {
    df::FullConfig full;
    full.model = df::preset(name);
    full.train = df::train_preset(name);
    require_valid(full, h, w);
    const df::ModelConfig& cfg = full.model;
    const df::ParamStore<float> params = df::init_depthformer_params<float>(cfg, 0);
    const df::Sample scene = df::synth_scene(0, h, w, cfg.d_min, cfg.d_max);
    df::Tensor<float> image({1, 3, h, w});
    std::copy(scene.image.begin(), scene.image.end(), image.data.begin());

    (void)df::infer_depth(cfg, params, image);  // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) (void)df::infer_depth(cfg, params, image);
    const auto t1 = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
    std::printf("%-8s params=%lld forward(%dx%d)=%.1f ms\n", name.c_str(),
                static_cast<long long>(params.total_params()), h, w, ms);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depthformer: multiscale-transformer monocular depth estimation"};
  app.require_subcommand(1);

  int threads = 0;
  app.add_option("--threads", threads, "cap internal threads (DEPTHFORMER_THREADS also works)");

  ConfigArgs train_cfg, eval_cfg, infer_cfg, grad_cfg;
  std::string train_synth, train_manifest, train_out = "run";
  int64_t train_steps = -1, train_seed = 0;
  bool train_has_seed = false;
  double train_depth_scale = 256.0;
  CLI::App* train = app.add_subcommand("train", "optimize a model");
  add_config_options(train, train_cfg);
  train->add_option("--synthetic", train_synth, "use n=<N> generated scenes");
  train->add_option("--manifest", train_manifest, "image<TAB>depth manifest");
  train->add_option("--steps", train_steps, "override total_steps");
  train->add_option("--out", train_out, "output directory");
  train->add_option("--depth-scale", train_depth_scale, "PNG depth divisor (256 KITTI, 1000 NYU)");
  auto* tseed = train->add_option("--seed", train_seed, "RNG seed");

  std::string eval_ckpt, eval_manifest, eval_synth, eval_crop = "none", eval_out;
  double eval_cap = -1.0, eval_depth_scale = 256.0;
  int64_t eval_seed = 0;
  CLI::App* eval = app.add_subcommand("eval", "compute metrics over a dataset");
  add_config_options(eval, eval_cfg);
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  eval->add_option("--manifest", eval_manifest, "image<TAB>depth manifest");
  eval->add_option("--synthetic", eval_synth, "use n=<N> generated scenes");
  eval->add_option("--crop", eval_crop, "evaluation crop: garg|eigen|none");
  eval->add_option("--cap", eval_cap, "depth cap in meters");
  eval->add_option("--out", eval_out, "directory for eval.csv");
  eval->add_option("--depth-scale", eval_depth_scale, "PNG depth divisor");
  auto* eseed = eval->add_option("--seed", eval_seed, "RNG seed");

  std::string infer_ckpt, infer_out;
  std::vector<std::string> infer_images;
  bool infer_pad = false, infer_pfm = false, infer_preview = false;
  double infer_png_scale = 256.0;
  CLI::App* infer = app.add_subcommand("infer", "predict depth for images");
  add_config_options(infer, infer_cfg);
  infer->add_option("--checkpoint", infer_ckpt, "trained checkpoint")->required();
  infer->add_option("images", infer_images, "input PNG images");
  infer->add_option("--out", infer_out, "output directory");
  infer->add_flag("--pad", infer_pad, "pad inputs to /32 and crop the output back");
  infer->add_flag("--pfm", infer_pfm, "also write little-endian PFM");
  infer->add_flag("--preview", infer_preview, "also write a colorized preview PNG");
  infer->add_option("--png-scale", infer_png_scale, "raw = depth * scale for the 16-bit PNG");

  int grad_samples = 50;
  double grad_h = 1e-5, grad_tol = 1e-3;
  int64_t grad_seed = 0;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_config_options(gradcheck, grad_cfg);
  gradcheck->add_option("--samples", grad_samples, "parameters to sample");
  gradcheck->add_option("--step-h", grad_h, "central-difference step");
  gradcheck->add_option("--tol", grad_tol, "max relative error to pass");
  gradcheck->add_option("--seed", grad_seed, "RNG seed");

  std::vector<std::string> bench_presets{"tiny", "paper"};
  int bench_iters = 3;
  std::string bench_hw = "64x64";
  CLI::App* bench = app.add_subcommand("bench", "parameter counts and forward latency");
  bench->add_option("--preset", bench_presets, "presets to benchmark");
  bench->add_option("--iters", bench_iters, "timing iterations");
  bench->add_option("--hw", bench_hw, "input size <H>x<W>");

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) df::set_max_threads(threads);

  try {
    if (train->parsed())
      return cmd_train(train_cfg, train_synth, train_manifest, train_steps, train_out,
                       train_seed, !tseed->empty(), train_depth_scale);
    if (eval->parsed())
      return cmd_eval(eval_cfg, eval_ckpt, eval_manifest, eval_synth, eval_crop, eval_cap,
                      eval_out, eval_seed, !eseed->empty(), eval_depth_scale);
    if (infer->parsed())
      return cmd_infer(infer_cfg, infer_ckpt, infer_images, infer_out, infer_pad, infer_pfm,
                       infer_preview, infer_png_scale);
    if (gradcheck->parsed())
      return cmd_gradcheck(grad_cfg, grad_samples, grad_h, grad_tol, grad_seed);
    if (bench->parsed()) return cmd_bench(bench_presets, bench_iters, bench_hw);
  } catch (const df::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const df::ShapeError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return kExitConfig;
  } catch (const df::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const df::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return 0;
}
