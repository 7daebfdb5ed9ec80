// Acceptance suite: prints one pass/fail line per criterion and exits nonzero
// if any requested criterion fails. Usage: acceptance [N ...] (default: all).
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "depthformer/bin_head.hpp"
#include "depthformer/config.hpp"
#include "depthformer/data.hpp"
#include "depthformer/decoder.hpp"
#include "depthformer/image_io.hpp"
#include "depthformer/losses.hpp"
#include "depthformer/metrics.hpp"
#include "depthformer/model.hpp"
#include "depthformer/optim.hpp"
#include "depthformer/ops.hpp"
#include "depthformer/train.hpp"

using namespace df;

namespace {

struct Outcome {
  int criterion;
  bool pass;
  std::string detail;
  double seconds;
};

std::vector<Outcome> g_outcomes;

template <typename Fn>
void run_criterion(int n, const std::set<int>& wanted, Fn&& fn) {
  if (!wanted.count(n)) return;
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out{n, false, "", 0.0};
  try {
    std::pair<bool, std::string> r = fn();
    out.pass = r.first;
    out.detail = r.second;
  } catch (const std::exception& e) {
    out.pass = false;
    out.detail = std::string("exception: ") + e.what();
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  g_outcomes.push_back(out);
  std::printf("[%s] criterion %d: %s (%.1fs)\n", out.pass ? "PASS" : "FAIL", n,
              out.detail.c_str(), out.seconds);
  std::fflush(stdout);
}

Tensor<float> random_image(int64_t h, int64_t w, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({1, 3, h, w});
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return t;
}

// ---- criterion 1: shape suite ------------------------------------------------

std::pair<bool, std::string> shape_suite() {
  struct Case {
    const char* preset_name;
    int h, w;
  };
  const Case cases[] = {{"tiny", 64, 64}, {"tiny", 96, 128}, {"paper", 448, 576}};
  for (const Case& c : cases) {
    const ModelConfig cfg = preset(c.preset_name);
    const ParamStore<float> store = init_depthformer_params<float>(cfg, 0);
    const Tensor<float> image = random_image(c.h, c.w, 1);

    const auto pyramid = encoder_pyramid_infer(cfg, store, image);
    for (int i = 0; i < 4; ++i) {
      const int div = 4 << i;
      const std::vector<int64_t> want{1, cfg.stage_channels[static_cast<size_t>(i)], c.h / div,
                                      c.w / div};
      if (pyramid[static_cast<size_t>(i)].shape != want)
        return {false, std::string(c.preset_name) + " E" + std::to_string(i + 1) + " is " +
                           shape_str(pyramid[static_cast<size_t>(i)].shape) + ", want " +
                           shape_str(want)};
    }
    Graph<float> g;
    BoundParams<float> params(g, store, false);
    std::array<VarId, 4> ids{};
    for (int i = 0; i < 4; ++i)
      ids[static_cast<size_t>(i)] = g.leaf(pyramid[static_cast<size_t>(i)], false);
    const Tensor<float>& f_out = g.val(decoder_forward(g, ids, cfg, params));
    const std::vector<int64_t> want{1, cfg.decoder_channels, c.h / 2, c.w / 2};
    if (f_out.shape != want)
      return {false, std::string(c.preset_name) + " F_out is " + shape_str(f_out.shape) +
                         ", want " + shape_str(want)};
  }
  return {true, "pyramid at 1/4..1/32 and F_out at (H/2,W/2,C) for 64x64/96x128/448x576"};
}

// ---- criterion 2: gradient check ---------------------------------------------

std::pair<bool, std::string> gradient_check() {
  // 32x32 input: the smallest size the 4-stage encoder admits (spec's 16x16
  // violates the divisible-by-32 precondition; see the decisions ledger).
  const GradCheckReport r = grad_check(preset("tiny"), 50, 1e-5, 0);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "max_rel_err=%.3e over %d checked (%d kink-skipped), tol 1e-3, worst %s",
                r.max_rel_err, r.n_checked, r.n_skipped, r.worst_path.c_str());
  return {r.max_rel_err < 1e-3 && r.n_checked + r.n_skipped == 50, buf};
}

// ---- criterion 3: loss oracles -----------------------------------------------

std::pair<bool, std::string> loss_oracles() {
  DepthMap gt;
  gt.h = 1;
  gt.w = 5;
  gt.cap = 100.0f;
  gt.data = {1.0f, 2.0f, 3.0f, 4.0f, 5.0f};
  gt.valid.assign(5, 1);

  std::vector<float> pred(5);
  for (size_t i = 0; i < 5; ++i)
    pred[i] = static_cast<float>(gt.data[i] * 2.718281828459045);
  const double silog_e = silog_loss(std::span<const float>(pred), gt, 10.0, 0.85);
  if (std::abs(silog_e - 3.872983) > 1e-5)
    return {false, "silog(e*gt) = " + std::to_string(silog_e) + ", want 3.872983 +/- 1e-5"};

  for (double c : {0.5, 2.0, 10.0}) {
    std::vector<float> scaled(5);
    for (size_t i = 0; i < 5; ++i) scaled[i] = static_cast<float>(c * gt.data[i]);
    const double v = silog_loss(std::span<const float>(scaled), gt, 10.0, 1.0);
    if (!(v < 1e-6))
      return {false, "silog(c*gt, lambda=1) = " + std::to_string(v) + " at c=" +
                         std::to_string(c)};
  }

  DepthMap gt2;
  gt2.h = 1;
  gt2.w = 2;
  gt2.cap = 100.0f;
  gt2.data = {1.0f, 3.0f};
  gt2.valid.assign(2, 1);
  BinPartition bins;
  bins.centers = {2.0};
  const double cham = chamfer_loss(bins, gt2, 2048, 0);
  if (std::abs(cham - 2.0) > 1e-9)
    return {false, "chamfer({1,3},{2}) = " + std::to_string(cham) + ", want 2.0 +/- 1e-9"};

  TotalLossParams params;
  const LossBreakdown b = total_loss(std::span<const float>(pred.data(), 2), gt2, bins, params);
  if (b.total != b.silog + 0.1 * b.chamfer)
    return {false, "total != silog + 0.1*chamfer through the same arithmetic"};

  return {true, "silog(e*gt)=3.872983, scale invariance at lambda=1, chamfer=2.0, exact total"};
}

// ---- criterion 4: bin-partition invariants -----------------------------------

std::pair<bool, std::string> bin_invariants() {
  Rng rng(4);
  const double d_min = 1.0, d_max = 10.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + static_cast<int>(rng.uniform_int(63));
    std::vector<double> raw(static_cast<size_t>(k));
    for (auto& v : raw) v = rng.uniform(0.0, 4.0);
    const auto widths = normalize_widths_host(raw, kWidthEps);
    double sum = 0.0;
    for (double w : widths) sum += w;
    if (std::abs(sum - 1.0) > 1e-5)
      return {false, "width sum " + std::to_string(sum) + " at trial " + std::to_string(trial)};
    const BinPartition part = make_partition(widths, d_min, d_max);
    for (size_t i = 1; i < part.centers.size(); ++i)
      if (!(part.centers[i] > part.centers[i - 1]))
        return {false, "centers not strictly increasing at trial " + std::to_string(trial)};

    // composed depth from random per-pixel distributions stays in range
    Tensor<float> probs({1, k, 2, 2});
    for (int64_t i = 0; i < 4; ++i) {
      double s = 0.0;
      std::vector<double> row(static_cast<size_t>(k));
      for (auto& v : row) {
        v = rng.uniform(0.0, 1.0);
        s += v;
      }
      for (int64_t c = 0; c < k; ++c)
        probs.data[static_cast<size_t>(c * 4 + i)] =
            static_cast<float>(row[static_cast<size_t>(c)] / s);
    }
    Tensor<float> centers({1, k});
    for (int64_t c = 0; c < k; ++c)
      centers.data[static_cast<size_t>(c)] =
          static_cast<float>(part.centers[static_cast<size_t>(c)]);
    Graph<float> g;
    VarId depth = compose_depth(g, g.leaf(probs, false), g.leaf(centers, false), 4, 4);
    for (float v : g.val(depth).data)
      if (v < d_min || v > d_max)
        return {false, "composed depth " + std::to_string(v) + " outside [d_min,d_max]"};
  }
  return {true, "1000 random partitions: sums 1 +/- 1e-5, increasing centers, depth in range"};
}

// ---- criterion 5: metric oracle equivalence ----------------------------------

std::pair<bool, std::string> metric_oracle() {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> pred(64), gt(64);
    std::vector<uint8_t> mask(64, 1);
    for (size_t i = 0; i < 64; ++i) {
      pred[i] = static_cast<float>(rng.uniform(0.1, 12.0));
      gt[i] = static_cast<float>(rng.uniform(0.1, 12.0));
    }
    const MetricReport lib = compute_metrics(std::span<const float>(pred),
                                             std::span<const float>(gt),
                                             std::span<const uint8_t>(mask));
    // naive double-loop reference
    double se = 0, rel = 0;
    long long n = 0, a1 = 0, a2 = 0, a3 = 0;
    for (size_t i = 0; i < 64; ++i) {
      const double d = pred[i], g = gt[i];
      se += (d - g) * (d - g);
      rel += std::fabs(d - g) / g;
      double r = d / g > g / d ? d / g : g / d;
      if (r < 1.25) ++a1;
      if (r < 1.25 * 1.25) ++a2;
      if (r < 1.25 * 1.25 * 1.25) ++a3;
      ++n;
    }
    const double rmse = std::sqrt(se / n);
    if (std::abs(lib.rmse - rmse) > 1e-10 || std::abs(lib.rel - rel / n) > 1e-10 ||
        std::abs(lib.delta1 - double(a1) / n) > 1e-10 ||
        std::abs(lib.delta2 - double(a2) / n) > 1e-10 ||
        std::abs(lib.delta3 - double(a3) / n) > 1e-10)
      return {false, "library metrics deviate from the naive reference at trial " +
                         std::to_string(trial)};
  }
  // hand cases reproduce exactly
  std::vector<float> p1{2.0f}, g1{1.0f};
  std::vector<uint8_t> m1{1};
  const MetricReport r1 = compute_metrics(std::span<const float>(p1), std::span<const float>(g1),
                                          std::span<const uint8_t>(m1));
  if (r1.rmse != 1.0 || r1.rel != 1.0 || r1.delta1 != 0.0 || r1.delta3 != 0.0)
    return {false, "hand case pred=2 gt=1 deviates"};
  std::vector<float> p2{1.2f};
  const MetricReport r2 = compute_metrics(std::span<const float>(p2), std::span<const float>(g1),
                                          std::span<const uint8_t>(m1));
  // 1.2 is not exactly representable in f32; compare at the f32 quantum.
  if (std::abs(r2.rmse - 0.2) > 1e-6 || std::abs(r2.rel - 0.2) > 1e-6 || r2.delta1 != 1.0)
    return {false, "hand case pred=1.2 gt=1 deviates"};
  return {true, "100 random 8x8 pairs match the double-loop reference to 1e-10; hand cases exact"};
}

// ---- criterion 6: schedule ----------------------------------------------------

std::pair<bool, std::string> schedule() {
  const double m = 1e-4;
  const int64_t T = 1000;
  if (one_cycle_lr(0, m, T) != 0.3 * m) return {false, "lr(0) != 0.3*max_lr exactly"};
  if (one_cycle_lr(T / 2, m, T) != m) return {false, "lr(T/2) != max_lr exactly"};
  if (std::abs(one_cycle_lr(T, m, T) - 0.3 * m) > 1e-19)
    return {false, "lr(T) != 0.3*max_lr"};
  if (std::abs(one_cycle_lr(T / 4, m, T) - 0.65 * m) > 1e-12)
    return {false, "lr(T/4) != 0.65*max_lr +/- 1e-12"};
  return {true, "lr(0)=lr(T)=0.3m, lr(T/2)=m, lr(T/4)=0.65m +/- 1e-12"};
}

// ---- criteria 7/8: overfit smoke test and ablation direction ------------------

struct TrainedRun {
  MetricReport train_metrics;
  bool nan_abort = false;
  double seconds = 0.0;
};

TrainedRun train_and_eval(const ModelConfig& cfg, const std::vector<Sample>& dataset) {
  TrainConfig tcfg = train_preset("tiny");
  tcfg.total_steps = 2000;
  tcfg.batch_size = 4;
  tcfg.seed = 0;
  tcfg.crop_h = tcfg.crop_w = 64;

  const auto t0 = std::chrono::steady_clock::now();
  const FitResult r = fit(cfg, tcfg, dataset, "");
  TrainedRun out;
  out.nan_abort = r.nan_abort;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (r.nan_abort) return out;

  std::vector<MetricReport> reports;
  for (const Sample& s : dataset) {
    Tensor<float> image({1, 3, s.h, s.w});
    std::copy(s.image.begin(), s.image.end(), image.data.begin());
    const Tensor<float> depth = infer_depth(cfg, r.state.params, image);
    std::vector<float> pred(depth.data.begin(), depth.data.end());
    reports.push_back(compute_metrics(std::span<const float>(pred), s.depth));
  }
  out.train_metrics = aggregate_mean(std::span<const MetricReport>(reports));
  return out;
}

// Shared across criteria 7 and 8 so the transbins run happens once.
bool g_have_transbins_run = false;
TrainedRun g_transbins_run;

const TrainedRun& transbins_run() {
  if (!g_have_transbins_run) {
    const ModelConfig cfg = preset("tiny");
    const auto dataset = make_synthetic_dataset(16, 64, 64, cfg.d_min, cfg.d_max, 0);
    g_transbins_run = train_and_eval(cfg, dataset);
    g_have_transbins_run = true;
  }
  return g_transbins_run;
}

std::pair<bool, std::string> overfit_smoke() {
  const TrainedRun& run = transbins_run();
  if (run.nan_abort) return {false, "training aborted on non-finite loss"};
  const double span = 10.0 - 1.0;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "2000 steps in %.0fs; train-set d1=%.4f (need >0.95), rmse=%.4f (need <%.3f)",
                run.seconds, run.train_metrics.delta1, run.train_metrics.rmse, 0.05 * span);
  const bool pass = run.train_metrics.delta1 > 0.95 && run.train_metrics.rmse < 0.05 * span &&
                    run.seconds < 1800.0;
  return {pass, buf};
}

std::pair<bool, std::string> ablation_direction() {
  const ModelConfig base = preset("tiny");
  const auto dataset = make_synthetic_dataset(16, 64, 64, base.d_min, base.d_max, 0);

  const TrainedRun& tb = transbins_run();
  if (tb.nan_abort) return {false, "transbins training aborted"};

  ModelConfig gap_cfg = base;
  gap_cfg.head_kind = HeadKind::kGap;
  const TrainedRun gap = train_and_eval(gap_cfg, dataset);
  if (gap.nan_abort) return {false, "gap-head training aborted"};

  ModelConfig mlp_cfg = base;
  mlp_cfg.decoder_kind = DecoderKind::kAllMlp;
  const TrainedRun mlp = train_and_eval(mlp_cfg, dataset);
  if (mlp.nan_abort) return {false, "all-mlp training aborted"};

  char buf[320];
  std::snprintf(buf, sizeof(buf),
                "matched 2000-step budgets: transbins d1=%.4f, gap d1=%.4f (both need >0.9); "
                "all-mlp decoder rmse=%.4f d1=%.4f (reported, no ordering asserted)",
                tb.train_metrics.delta1, gap.train_metrics.delta1, mlp.train_metrics.rmse,
                mlp.train_metrics.delta1);
  return {tb.train_metrics.delta1 > 0.9 && gap.train_metrics.delta1 > 0.9, buf};
}

// ---- criterion 9: i/o bit-exactness -------------------------------------------

std::pair<bool, std::string> io_bit_exactness() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "df_acceptance_io";
  fs::create_directories(dir);

  // 16-bit PNG depth round trip over the representable band.
  Rng rng(9);
  ImageU16 img;
  img.h = 37;
  img.w = 53;
  img.pix.resize(static_cast<size_t>(img.h) * img.w);
  for (auto& p : img.pix) p = static_cast<uint16_t>(rng.uniform_int(80 * 256 + 1));
  const std::string png = (dir / "depth.png").string();
  write_png16_gray(png, img);
  const DepthMap dm = load_kitti_depth_png(png);
  const std::string png2 = (dir / "depth2.png").string();
  write_kitti_depth_png(png2, dm);
  if (read_png16_gray(png2).pix != img.pix)
    return {false, "16-bit depth PNG round trip is not bit-identical"};

  // Checkpoint save/load/resume: one further step is bitwise identical.
  const ModelConfig cfg = preset("tiny");
  TrainConfig tcfg = train_preset("tiny");
  tcfg.total_steps = 3;
  tcfg.batch_size = 2;
  tcfg.crop_h = tcfg.crop_w = 32;
  tcfg.checkpoint_every = 0;
  const auto dataset = make_synthetic_dataset(4, 32, 32, cfg.d_min, cfg.d_max, 3);
  const FitResult full = fit(cfg, tcfg, dataset, "");
  const FitResult part = fit(cfg, tcfg, dataset, (dir / "run").string(), nullptr, 2);
  const TrainState loaded = load_train_state(part.checkpoint_path, cfg);
  const FitResult resumed = fit(cfg, tcfg, dataset, "", &loaded);

  const auto& ea = resumed.state.params.entries();
  const auto& eb = full.state.params.entries();
  for (size_t i = 0; i < ea.size(); ++i) {
    if (std::memcmp(ea[i].value.ptr(), eb[i].value.ptr(),
                    ea[i].value.data.size() * sizeof(float)) != 0 ||
        std::memcmp(resumed.state.opt.m[i].ptr(), full.state.opt.m[i].ptr(),
                    full.state.opt.m[i].data.size() * sizeof(float)) != 0 ||
        std::memcmp(resumed.state.opt.v[i].ptr(), full.state.opt.v[i].ptr(),
                    full.state.opt.v[i].data.size() * sizeof(float)) != 0)
      return {false, "resumed state differs bitwise from the uninterrupted run at " +
                         ea[i].name};
  }
  fs::remove_all(dir);
  return {true, "PNG depth round trip bit-identical; save/load/resume bitwise after one step"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  run_criterion(1, wanted, shape_suite);
  run_criterion(2, wanted, gradient_check);
  run_criterion(3, wanted, loss_oracles);
  run_criterion(4, wanted, bin_invariants);
  run_criterion(5, wanted, metric_oracle);
  run_criterion(6, wanted, schedule);
  run_criterion(7, wanted, overfit_smoke);
  run_criterion(8, wanted, ablation_direction);
  run_criterion(9, wanted, io_bit_exactness);

  int failures = 0;
  for (const Outcome& o : g_outcomes)
    if (!o.pass) ++failures;
  std::printf("%zu criteria run, %d failed\n", g_outcomes.size(), failures);
  return failures == 0 ? 0 : 1;
}
