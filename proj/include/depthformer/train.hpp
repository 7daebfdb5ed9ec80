#pragma once

#include <limits>
#include <string>
#include <vector>

#include "depthformer/config.hpp"
#include "depthformer/data.hpp"
#include "depthformer/losses.hpp"
#include "depthformer/optim.hpp"
#include "depthformer/params.hpp"

namespace df {

struct TrainState {
  ParamStore<float> params;
  OptState opt;
  int64_t step = 0;
  uint64_t seed = 0;
  double best_metric = std::numeric_limits<double>::infinity();
};

struct LogRow {
  int64_t step = 0;
  double lr = 0.0;
  double silog = 0.0;
  double chamfer = 0.0;
  double total = 0.0;
};

struct FitResult {
  TrainState state;
  std::vector<LogRow> log;
  bool nan_abort = false;
  std::string checkpoint_path;  // last checkpoint written, if any
};

// Runs the optimization loop: forward, composite loss, backward, AdamW at the
// 1-cycle rate. Every random choice is a pure function of (seed, step), so a
// resumed run continues bit-identically. out_dir may be empty (no
// checkpoints/logs written). resume, when given, supplies the starting state.
// stop_after >= 0 interrupts the run at that step without shortening the
// schedule (a checkpoint is written at the stop).
FitResult fit(const ModelConfig& cfg, const TrainConfig& tcfg,
              const std::vector<Sample>& dataset, const std::string& out_dir,
              const TrainState* resume = nullptr, int64_t stop_after = -1);

void write_train_log_csv(const std::string& path, const std::vector<LogRow>& log);

// Full training state (params + optimizer moments + counters) in the shared
// checkpoint container. Round-trips bitwise.
void save_train_state(const std::string& path, const TrainState& state);
TrainState load_train_state(const std::string& path, const ModelConfig& cfg);

// Model parameters only.
void save_params(const std::string& path, const ParamStore<float>& params);
// Validates that names and shapes match the store built from the config.
void load_params_into(const std::string& path, ParamStore<float>& params);

struct GradCheckReport {
  double max_rel_err = 0.0;
  int n_checked = 0;
  int n_skipped = 0;
  std::string worst_path;
};

// Central-difference check of the full-model composite loss against the
// analytic gradients, in 64-bit. Parameters whose +/-h evaluations cross a
// ReLU/clamp/argmin kink are skipped and counted.
GradCheckReport grad_check(const ModelConfig& cfg, int n_samples, double step_h, uint64_t seed,
                           int input_h = 32, int input_w = 32);

}  // namespace df
