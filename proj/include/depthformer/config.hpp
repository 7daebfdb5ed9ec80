#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace df {

enum class HeadKind { kTransbins, kGap };
enum class DecoderKind { kIterativeFusion, kAllMlp };

std::string to_string(HeadKind k);
std::string to_string(DecoderKind k);
HeadKind head_kind_from_string(const std::string& s);
DecoderKind decoder_kind_from_string(const std::string& s);

// Every architecture constant. Stage arrays are indexed 0..3 for stages 1..4.
struct ModelConfig {
  std::array<int, 4> stage_channels{};
  std::array<int, 4> stage_depths{};
  std::array<int, 4> reduction_ratios{};
  std::array<int, 4> stage_heads{};
  std::array<int, 4> patch_kernels{};
  std::array<int, 4> patch_strides{};
  std::array<int, 4> patch_paddings{};
  int mlp_ratio = 4;
  int decoder_channels = 128;
  int n_bins = 256;
  double d_min = 1e-3;
  double d_max = 10.0;
  HeadKind head_kind = HeadKind::kTransbins;
  DecoderKind decoder_kind = DecoderKind::kIterativeFusion;
  // Width-prediction head internals.
  int head_patch = 16;
  int head_dim = 128;
  int head_layers = 4;
  int head_heads = 4;

  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  double max_lr = 1e-4;
  double weight_decay = 0.1;
  int64_t total_steps = 1000;
  int batch_size = 4;
  double gamma = 0.1;
  double silog_lambda = 0.85;
  double silog_alpha = 10.0;
  uint64_t seed = 0;
  int crop_h = 64;
  int crop_w = 64;
  bool hflip = false;
  int64_t checkpoint_every = 500;
  int chamfer_sample_cap = 2048;

  bool operator==(const TrainConfig&) const = default;
};

// Named presets: "paper" (full-scale constants) and "tiny" (desk-scale).
// Throws ConfigError on unknown names.
ModelConfig preset(std::string_view name);
TrainConfig train_preset(std::string_view name);

// Returns every violated rule; empty means the config is valid for inputs of
// the given size. Never throws.
std::vector<std::string> validate(const ModelConfig& cfg, int input_h, int input_w);
std::vector<std::string> validate_train(const TrainConfig& cfg);

// JSON config file: one flat object holding ModelConfig and TrainConfig fields,
// optionally with a "preset" base. Unknown keys are rejected.
struct FullConfig {
  ModelConfig model;
  TrainConfig train;
};
FullConfig parse_config_json(const std::string& text);
FullConfig load_config_file(const std::string& path);
std::string config_to_json(const FullConfig& cfg);
// Applies one "key=value" override; throws ConfigError on unknown key/bad value.
void apply_override(FullConfig& cfg, const std::string& kv);

}  // namespace df
