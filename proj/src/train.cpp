#include "depthformer/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "depthformer/checkpoint.hpp"
#include "depthformer/error.hpp"
#include "depthformer/model.hpp"
#include "depthformer/ops.hpp"

namespace df {

namespace {

// Stream ids for the per-step RNG streams (mixed with the step index).
constexpr uint64_t kStreamBatch = 0x01ull << 56;
constexpr uint64_t kStreamChamfer = 0x02ull << 56;

template <typename T>
std::vector<std::vector<T>> chamfer_sets_for_batch(const Batch& batch, int sample_cap,
                                                   uint64_t seed, int64_t step) {
  const int64_t B = batch.depth.shape[0];
  const int64_t hw = batch.depth.shape[1] * batch.depth.shape[2];
  std::vector<std::vector<T>> sets(static_cast<size_t>(B));
  for (int64_t b = 0; b < B; ++b) {
    std::span<const float> gt(batch.depth.ptr() + b * hw, static_cast<size_t>(hw));
    std::span<const uint8_t> mask(batch.valid.data() + b * hw, static_cast<size_t>(hw));
    const uint64_t sample_seed = seed ^ (kStreamChamfer | (static_cast<uint64_t>(step) << 8) |
                                         static_cast<uint64_t>(b));
    std::vector<float> vals = sample_depth_values(gt, mask, sample_cap, sample_seed);
    auto& dst = sets[static_cast<size_t>(b)];
    dst.reserve(vals.size());
    for (float v : vals) dst.push_back(static_cast<T>(v));
  }
  return sets;
}

struct StepOutcome {
  LogRow row;
  bool finite = true;
  std::vector<Tensor<float>> grads;
};

StepOutcome run_step(const ModelConfig& cfg, const TrainConfig& tcfg,
                     const std::vector<Sample>& dataset, ParamStore<float>& params,
                     int64_t step) {
  Rng rng = Rng::stream(tcfg.seed, kStreamBatch | static_cast<uint64_t>(step));
  std::vector<Sample> picked;
  picked.reserve(static_cast<size_t>(tcfg.batch_size));
  for (int i = 0; i < tcfg.batch_size; ++i) {
    const Sample& s = dataset[static_cast<size_t>(rng.uniform_int(
        static_cast<int64_t>(dataset.size())))];
    picked.push_back(random_crop_pair(s, tcfg.crop_h, tcfg.crop_w, rng, tcfg.hflip));
  }
  Batch batch = make_batch(picked);

  Graph<float> g;
  BoundParams<float> bound(g, params, true);
  VarId image = g.leaf(batch.images, false);
  ModelOutputs<float> outs = model_forward(g, image, cfg, bound);

  auto silog_parts = ops::silog(g, outs.depth_full, batch.depth, batch.valid,
                                static_cast<float>(tcfg.silog_alpha),
                                static_cast<float>(tcfg.silog_lambda));
  auto gt_sets =
      chamfer_sets_for_batch<float>(batch, tcfg.chamfer_sample_cap, tcfg.seed, step);
  VarId cham = ops::chamfer(g, outs.centers, gt_sets);
  VarId total = ops::add_scaled(g, silog_parts.loss, cham, static_cast<float>(tcfg.gamma));

  StepOutcome out;
  out.row.step = step;
  out.row.silog = static_cast<double>(g.val(silog_parts.loss).data[0]);
  out.row.chamfer = static_cast<double>(g.val(cham).data[0]);
  out.row.total = static_cast<double>(g.val(total).data[0]);
  if (!std::isfinite(out.row.total)) {
    out.finite = false;
    return out;
  }

  g.backward(total);
  out.grads.reserve(params.size());
  for (const auto& entry : params.entries()) {
    const auto& ids = bound.ids();
    auto it = ids.find(entry.name);
    if (it != ids.end() && g.has_grad(it->second)) {
      out.grads.push_back(g.grad(it->second));
    } else {
      out.grads.emplace_back(entry.value.shape);  // parameter unused this step
    }
  }
  return out;
}

}  // namespace

FitResult fit(const ModelConfig& cfg, const TrainConfig& tcfg,
              const std::vector<Sample>& dataset, const std::string& out_dir,
              const TrainState* resume, int64_t stop_after) {
  {
    auto errs = validate(cfg, tcfg.crop_h, tcfg.crop_w);
    const auto terrs = validate_train(tcfg);
    errs.insert(errs.end(), terrs.begin(), terrs.end());
    if (!errs.empty()) throw ConfigError("invalid config: " + errs.front());
  }
  if (dataset.empty()) throw DataError("fit: empty dataset");

  FitResult result;
  if (resume) {
    result.state = *resume;
  } else {
    result.state.params = init_depthformer_params<float>(cfg, tcfg.seed);
    result.state.opt = init_opt_state(result.state.params);
    result.state.step = 0;
    result.state.seed = tcfg.seed;
  }

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  const std::string ckpt_path =
      out_dir.empty() ? std::string() : out_dir + "/checkpoint.dfcp";

  const int64_t stop = stop_after >= 0 ? std::min(stop_after, tcfg.total_steps)
                                       : tcfg.total_steps;
  for (int64_t t = result.state.step; t < stop; ++t) {
    StepOutcome step = run_step(cfg, tcfg, dataset, result.state.params, t);
    const double lr = one_cycle_lr(t, tcfg.max_lr, tcfg.total_steps);
    step.row.lr = lr;

    if (!step.finite) {
      result.log.push_back(step.row);
      result.nan_abort = true;
      break;  // last good checkpoint (if any) stays on disk
    }
    std::string bad;
    if (!adamw_step(result.state.params, step.grads, result.state.opt, t + 1, lr,
                    tcfg.weight_decay, AdamWParams{}, &bad)) {
      result.log.push_back(step.row);
      result.nan_abort = true;
      break;
    }
    result.state.step = t + 1;
    result.log.push_back(step.row);

    const bool last = t + 1 == stop;
    if (!ckpt_path.empty() &&
        (last || (tcfg.checkpoint_every > 0 && (t + 1) % tcfg.checkpoint_every == 0))) {
      save_train_state(ckpt_path, result.state);
      result.checkpoint_path = ckpt_path;
    }
  }
  if (!out_dir.empty()) write_train_log_csv(out_dir + "/train_log.csv", result.log);
  return result;
}

void write_train_log_csv(const std::string& path, const std::vector<LogRow>& log) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open log for writing: " + path);
  out << "step,lr,silog,chamfer,total\n";
  out.precision(10);
  for (const LogRow& r : log)
    out << r.step << "," << r.lr << "," << r.silog << "," << r.chamfer << "," << r.total << "\n";
}

void save_train_state(const std::string& path, const TrainState& state) {
  CheckpointEntries entries;
  for (const auto& e : state.params.entries()) entries.emplace_back(e.name, e.value);
  const auto& params = state.params.entries();
  for (size_t p = 0; p < params.size(); ++p) {
    entries.emplace_back("optim.m." + params[p].name, state.opt.m[p]);
    entries.emplace_back("optim.v." + params[p].name, state.opt.v[p]);
  }
  entries.emplace_back("meta.step", pack_u64(static_cast<uint64_t>(state.step)));
  entries.emplace_back("meta.seed", pack_u64(state.seed));
  Tensor<float> best({1});
  best.data[0] = static_cast<float>(state.best_metric);
  entries.emplace_back("meta.best_metric", best);
  save_checkpoint(path, entries);
}

void save_params(const std::string& path, const ParamStore<float>& params) {
  CheckpointEntries entries;
  for (const auto& e : params.entries()) entries.emplace_back(e.name, e.value);
  save_checkpoint(path, entries);
}

namespace {

const Tensor<float>* find_entry(const CheckpointEntries& entries, const std::string& name) {
  for (const auto& [n, t] : entries)
    if (n == name) return &t;
  return nullptr;
}

void fill_params_from(const CheckpointEntries& entries, ParamStore<float>& params) {
  for (auto& e : params.entries()) {
    const Tensor<float>* t = find_entry(entries, e.name);
    if (!t) throw ConfigError("checkpoint is missing parameter " + e.name);
    if (t->shape != e.value.shape)
      throw ConfigError("checkpoint shape mismatch for " + e.name + ": " + shape_str(t->shape) +
                        " vs " + shape_str(e.value.shape));
    e.value = *t;
  }
}

}  // namespace

void load_params_into(const std::string& path, ParamStore<float>& params) {
  fill_params_from(load_checkpoint(path), params);
}

TrainState load_train_state(const std::string& path, const ModelConfig& cfg) {
  const CheckpointEntries entries = load_checkpoint(path);
  TrainState state;
  state.params = init_depthformer_params<float>(cfg, 0);
  fill_params_from(entries, state.params);
  state.opt = init_opt_state(state.params);
  const auto& params = state.params.entries();
  for (size_t p = 0; p < params.size(); ++p) {
    const Tensor<float>* m = find_entry(entries, "optim.m." + params[p].name);
    const Tensor<float>* v = find_entry(entries, "optim.v." + params[p].name);
    if (!m || !v) throw ConfigError("checkpoint is missing optimizer state for " +
                                    params[p].name);
    if (m->shape != params[p].value.shape || v->shape != params[p].value.shape)
      throw ConfigError("checkpoint optimizer shape mismatch for " + params[p].name);
    state.opt.m[p] = *m;
    state.opt.v[p] = *v;
  }
  const Tensor<float>* step = find_entry(entries, "meta.step");
  const Tensor<float>* seed = find_entry(entries, "meta.seed");
  const Tensor<float>* best = find_entry(entries, "meta.best_metric");
  if (!step || !seed || !best) throw ConfigError("checkpoint is missing meta entries");
  state.step = static_cast<int64_t>(unpack_u64(*step));
  state.seed = unpack_u64(*seed);
  state.best_metric = static_cast<double>(best->data[0]);
  return state;
}

GradCheckReport grad_check(const ModelConfig& cfg, int n_samples, double step_h, uint64_t seed,
                           int input_h, int input_w) {
  ParamStore<double> params = init_depthformer_params<double>(cfg, seed);
  // Evaluate at weight std 0.1 rather than the training init: at std 0.02 the
  // deepest gradients fall below the central-difference roundoff floor
  // (|loss|*eps/2h), and the check would measure noise instead of gradients.
  for (auto& e : params.entries())
    if (e.decay)
      for (auto& v : e.value.data) v *= 5.0;
  const Sample sample = synth_scene(seed + 1, input_h, input_w, cfg.d_min, cfg.d_max);
  Batch batch = make_batch(std::span<const Sample>(&sample, 1));
  const Tensor<double> image = batch.images.cast<double>();
  const Tensor<double> gt = batch.depth.cast<double>();
  std::vector<std::vector<double>> gt_sets(1);
  for (size_t i = 0; i < batch.valid.size(); ++i)
    if (batch.valid[i]) gt_sets[0].push_back(static_cast<double>(batch.depth.data[i]));

  constexpr double kAlpha = 10.0, kLambda = 0.85, kGamma = 0.1;

  struct Eval {
    double loss;
    uint64_t digest;
  };
  auto evaluate = [&](bool want_grads,
                      std::vector<Tensor<double>>* grads) -> Eval {
    Graph<double> g;
    BoundParams<double> bound(g, params, want_grads);
    VarId img = g.leaf(image, false);
    ModelOutputs<double> outs = model_forward(g, img, cfg, bound);
    auto silog_parts = ops::silog(g, outs.depth_full, gt, batch.valid, kAlpha, kLambda);
    VarId cham = ops::chamfer(g, outs.centers, gt_sets);
    VarId total = ops::add_scaled(g, silog_parts.loss, cham, kGamma);
    if (want_grads) {
      g.backward(total);
      grads->clear();
      grads->reserve(params.size());
      for (const auto& entry : params.entries()) {
        auto it = bound.ids().find(entry.name);
        if (it != bound.ids().end() && g.has_grad(it->second))
          grads->push_back(g.grad(it->second));
        else
          grads->emplace_back(entry.value.shape);
      }
    }
    return Eval{static_cast<double>(g.val(total).data[0]), g.kink_digest()};
  };

  std::vector<Tensor<double>> analytic;
  evaluate(true, &analytic);

  const int64_t total_entries = params.total_params();
  Rng rng = Rng::stream(seed, 0x6c4d);
  GradCheckReport report;
  for (int s = 0; s < n_samples; ++s) {
    int64_t flat = rng.uniform_int(total_entries);
    size_t pi = 0;
    while (flat >= params.entries()[pi].value.numel()) {
      flat -= params.entries()[pi].value.numel();
      ++pi;
    }
    auto& slot = params.entries()[pi].value.data[static_cast<size_t>(flat)];
    const double saved = slot;

    slot = saved + step_h;
    const Eval plus = evaluate(false, nullptr);
    slot = saved - step_h;
    const Eval minus = evaluate(false, nullptr);
    slot = saved;

    if (plus.digest != minus.digest) {
      ++report.n_skipped;
      continue;
    }
    const double numeric = (plus.loss - minus.loss) / (2.0 * step_h);
    const double a = analytic[pi].data[static_cast<size_t>(flat)];
    const double rel =
        std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    ++report.n_checked;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_path =
          params.entries()[pi].name + "[" + std::to_string(flat) + "]";
    }
  }
  return report;
}

}  // namespace df
