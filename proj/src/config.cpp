#include "depthformer/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "depthformer/error.hpp"

namespace df {

using nlohmann::json;

std::string to_string(HeadKind k) {
  return k == HeadKind::kTransbins ? "transbins" : "gap";
}

std::string to_string(DecoderKind k) {
  return k == DecoderKind::kIterativeFusion ? "iterative_fusion" : "all_mlp";
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "transbins") return HeadKind::kTransbins;
  if (s == "gap") return HeadKind::kGap;
  throw ConfigError("unknown head_kind: " + s);
}

DecoderKind decoder_kind_from_string(const std::string& s) {
  if (s == "iterative_fusion") return DecoderKind::kIterativeFusion;
  if (s == "all_mlp") return DecoderKind::kAllMlp;
  throw ConfigError("unknown decoder_kind: " + s);
}

ModelConfig preset(std::string_view name) {
  ModelConfig cfg;
  if (name == "paper") {
    cfg.stage_channels = {64, 128, 320, 512};
    cfg.stage_depths = {3, 8, 27, 3};
    cfg.reduction_ratios = {8, 4, 2, 1};
    cfg.stage_heads = {1, 2, 5, 8};
    cfg.patch_kernels = {7, 3, 3, 3};
    cfg.patch_strides = {4, 2, 2, 2};
    cfg.patch_paddings = {3, 1, 1, 1};
    cfg.mlp_ratio = 4;
    cfg.decoder_channels = 128;
    cfg.n_bins = 256;
    cfg.d_min = 1e-3;
    cfg.d_max = 10.0;
    cfg.head_kind = HeadKind::kTransbins;
    cfg.decoder_kind = DecoderKind::kIterativeFusion;
    cfg.head_patch = 16;
    cfg.head_dim = 128;
    cfg.head_layers = 4;
    cfg.head_heads = 4;
    return cfg;
  }
  if (name == "tiny") {
    cfg.stage_channels = {16, 32, 64, 128};
    cfg.stage_depths = {1, 1, 2, 1};
    cfg.reduction_ratios = {8, 4, 2, 1};
    cfg.stage_heads = {1, 2, 4, 8};
    cfg.patch_kernels = {7, 3, 3, 3};
    cfg.patch_strides = {4, 2, 2, 2};
    cfg.patch_paddings = {3, 1, 1, 1};
    cfg.mlp_ratio = 4;
    cfg.decoder_channels = 32;
    cfg.n_bins = 32;
    cfg.d_min = 1.0;
    cfg.d_max = 10.0;
    cfg.head_kind = HeadKind::kTransbins;
    cfg.decoder_kind = DecoderKind::kIterativeFusion;
    cfg.head_patch = 16;
    cfg.head_dim = 64;
    cfg.head_layers = 2;
    cfg.head_heads = 4;
    return cfg;
  }
  throw ConfigError("unknown preset: " + std::string(name));
}

TrainConfig train_preset(std::string_view name) {
  TrainConfig t;
  if (name == "paper") {
    t.max_lr = 1e-4;
    t.weight_decay = 0.1;
    t.batch_size = 16;
    t.crop_h = 448;
    t.crop_w = 576;
    return t;
  }
  if (name == "tiny") {
    t.max_lr = 3e-4;
    t.weight_decay = 0.1;
    t.batch_size = 4;
    t.crop_h = 64;
    t.crop_w = 64;
    return t;
  }
  throw ConfigError("unknown preset: " + std::string(name));
}

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

std::vector<std::string> validate(const ModelConfig& cfg, int input_h, int input_w) {
  std::vector<std::string> errs;
  for (int i = 0; i < 4; ++i) {
    if (cfg.stage_channels[i] <= 0) errs.push_back("stage_channels must be positive");
    if (cfg.stage_depths[i] <= 0) errs.push_back("stage_depths must be positive");
    if (cfg.stage_heads[i] <= 0) errs.push_back("stage_heads must be positive");
    if (cfg.patch_kernels[i] <= 0 || cfg.patch_strides[i] <= 0 || cfg.patch_paddings[i] < 0)
      errs.push_back("patch kernel/stride/padding out of range");
    if (cfg.stage_heads[i] > 0 && cfg.stage_channels[i] % cfg.stage_heads[i] != 0)
      errs.push_back("stage_channels[" + std::to_string(i) + "] not divisible by stage_heads[" +
                     std::to_string(i) + "]");
    if (!is_pow2(cfg.reduction_ratios[i]))
      errs.push_back("reduction_ratios must be powers of two");
    if (i > 0 && cfg.reduction_ratios[i] > cfg.reduction_ratios[i - 1])
      errs.push_back("reduction_ratios must be weakly decreasing");
  }
  if (cfg.mlp_ratio < 1) errs.push_back("mlp_ratio must be >= 1");
  if (cfg.decoder_channels <= 0) errs.push_back("decoder_channels must be positive");
  if (cfg.n_bins < 2) errs.push_back("n_bins >= 2 violated");
  if (!(cfg.d_min > 0)) errs.push_back("d_min must be positive");
  if (!(cfg.d_min < cfg.d_max)) errs.push_back("d_min < d_max violated");
  if (cfg.head_patch <= 0) errs.push_back("head_patch must be positive");
  if (cfg.head_dim <= 0 || cfg.head_heads <= 0 || cfg.head_dim % cfg.head_heads != 0)
    errs.push_back("head_dim not divisible by head_heads");
  if (cfg.head_layers < 1) errs.push_back("head_layers must be >= 1");
  if (input_h <= 0 || input_h % 32 != 0) errs.push_back("height not divisible by 32");
  if (input_w <= 0 || input_w % 32 != 0) errs.push_back("width not divisible by 32");
  return errs;
}

std::vector<std::string> validate_train(const TrainConfig& cfg) {
  std::vector<std::string> errs;
  if (!(cfg.max_lr > 0)) errs.push_back("max_lr must be positive");
  if (cfg.total_steps < 0) errs.push_back("total_steps must be nonnegative");
  if (cfg.batch_size <= 0) errs.push_back("batch_size must be positive");
  if (!(cfg.silog_lambda > 0 && cfg.silog_lambda <= 1))
    errs.push_back("0 < silog_lambda <= 1 violated");
  if (cfg.gamma < 0) errs.push_back("gamma >= 0 violated");
  if (cfg.silog_alpha <= 0) errs.push_back("silog_alpha must be positive");
  if (cfg.crop_h <= 0 || cfg.crop_w <= 0) errs.push_back("crop dims must be positive");
  if (cfg.chamfer_sample_cap <= 0) errs.push_back("chamfer_sample_cap must be positive");
  return errs;
}

namespace {

template <typename T, size_t N>
void read_array(const json& j, const char* key, std::array<T, N>& out) {
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != N)
    throw ConfigError(std::string(key) + " must be an array of " + std::to_string(N));
  for (size_t i = 0; i < N; ++i) out[i] = v[i].get<T>();
}

const char* kModelKeys[] = {"stage_channels", "stage_depths", "reduction_ratios",
                            "stage_heads",    "patch_kernels", "patch_strides",
                            "patch_paddings", "mlp_ratio",     "decoder_channels",
                            "n_bins",         "d_min",         "d_max",
                            "head_kind",      "decoder_kind",  "head_patch",
                            "head_dim",       "head_layers",   "head_heads"};
const char* kTrainKeys[] = {"max_lr",      "weight_decay",     "total_steps",
                            "batch_size",  "gamma",            "silog_lambda",
                            "silog_alpha", "seed",             "crop_h",
                            "crop_w",      "hflip",            "checkpoint_every",
                            "chamfer_sample_cap"};

void apply_model_key(ModelConfig& m, const std::string& key, const json& v) {
  if (key == "stage_channels" || key == "stage_depths" || key == "reduction_ratios" ||
      key == "stage_heads" || key == "patch_kernels" || key == "patch_strides" ||
      key == "patch_paddings") {
    json holder = {{key, v}};
    if (key == "stage_channels") read_array(holder, key.c_str(), m.stage_channels);
    else if (key == "stage_depths") read_array(holder, key.c_str(), m.stage_depths);
    else if (key == "reduction_ratios") read_array(holder, key.c_str(), m.reduction_ratios);
    else if (key == "stage_heads") read_array(holder, key.c_str(), m.stage_heads);
    else if (key == "patch_kernels") read_array(holder, key.c_str(), m.patch_kernels);
    else if (key == "patch_strides") read_array(holder, key.c_str(), m.patch_strides);
    else read_array(holder, key.c_str(), m.patch_paddings);
  } else if (key == "mlp_ratio") m.mlp_ratio = v.get<int>();
  else if (key == "decoder_channels") m.decoder_channels = v.get<int>();
  else if (key == "n_bins") m.n_bins = v.get<int>();
  else if (key == "d_min") m.d_min = v.get<double>();
  else if (key == "d_max") m.d_max = v.get<double>();
  else if (key == "head_kind") m.head_kind = head_kind_from_string(v.get<std::string>());
  else if (key == "decoder_kind") m.decoder_kind = decoder_kind_from_string(v.get<std::string>());
  else if (key == "head_patch") m.head_patch = v.get<int>();
  else if (key == "head_dim") m.head_dim = v.get<int>();
  else if (key == "head_layers") m.head_layers = v.get<int>();
  else if (key == "head_heads") m.head_heads = v.get<int>();
  else throw ConfigError("unknown model key: " + key);
}

void apply_train_key(TrainConfig& t, const std::string& key, const json& v) {
  if (key == "max_lr") t.max_lr = v.get<double>();
  else if (key == "weight_decay") t.weight_decay = v.get<double>();
  else if (key == "total_steps") t.total_steps = v.get<int64_t>();
  else if (key == "batch_size") t.batch_size = v.get<int>();
  else if (key == "gamma") t.gamma = v.get<double>();
  else if (key == "silog_lambda") t.silog_lambda = v.get<double>();
  else if (key == "silog_alpha") t.silog_alpha = v.get<double>();
  else if (key == "seed") t.seed = v.get<uint64_t>();
  else if (key == "crop_h") t.crop_h = v.get<int>();
  else if (key == "crop_w") t.crop_w = v.get<int>();
  else if (key == "hflip") t.hflip = v.get<bool>();
  else if (key == "checkpoint_every") t.checkpoint_every = v.get<int64_t>();
  else if (key == "chamfer_sample_cap") t.chamfer_sample_cap = v.get<int>();
  else throw ConfigError("unknown train key: " + key);
}

bool is_model_key(const std::string& k) {
  for (const char* s : kModelKeys)
    if (k == s) return true;
  return false;
}

bool is_train_key(const std::string& k) {
  for (const char* s : kTrainKeys)
    if (k == s) return true;
  return false;
}

}  // namespace

FullConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse failure: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  FullConfig cfg;
  if (j.contains("preset")) {
    const std::string name = j.at("preset").get<std::string>();
    cfg.model = preset(name);
    cfg.train = train_preset(name);
  }
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      if (key == "preset") continue;
      if (is_model_key(key)) apply_model_key(cfg.model, key, it.value());
      else if (is_train_key(key)) apply_train_key(cfg.train, key, it.value());
      else throw ConfigError("unknown config key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field error: ") + e.what());
  }
  return cfg;
}

FullConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_json(ss.str());
}

std::string config_to_json(const FullConfig& cfg) {
  const ModelConfig& m = cfg.model;
  const TrainConfig& t = cfg.train;
  json j;
  j["stage_channels"] = m.stage_channels;
  j["stage_depths"] = m.stage_depths;
  j["reduction_ratios"] = m.reduction_ratios;
  j["stage_heads"] = m.stage_heads;
  j["patch_kernels"] = m.patch_kernels;
  j["patch_strides"] = m.patch_strides;
  j["patch_paddings"] = m.patch_paddings;
  j["mlp_ratio"] = m.mlp_ratio;
  j["decoder_channels"] = m.decoder_channels;
  j["n_bins"] = m.n_bins;
  j["d_min"] = m.d_min;
  j["d_max"] = m.d_max;
  j["head_kind"] = to_string(m.head_kind);
  j["decoder_kind"] = to_string(m.decoder_kind);
  j["head_patch"] = m.head_patch;
  j["head_dim"] = m.head_dim;
  j["head_layers"] = m.head_layers;
  j["head_heads"] = m.head_heads;
  j["max_lr"] = t.max_lr;
  j["weight_decay"] = t.weight_decay;
  j["total_steps"] = t.total_steps;
  j["batch_size"] = t.batch_size;
  j["gamma"] = t.gamma;
  j["silog_lambda"] = t.silog_lambda;
  j["silog_alpha"] = t.silog_alpha;
  j["seed"] = t.seed;
  j["crop_h"] = t.crop_h;
  j["crop_w"] = t.crop_w;
  j["hflip"] = t.hflip;
  j["checkpoint_every"] = t.checkpoint_every;
  j["chamfer_sample_cap"] = t.chamfer_sample_cap;
  return j.dump(2);
}

void apply_override(FullConfig& cfg, const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("override must be key=value: " + kv);
  const std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);

  json v;
  if (is_model_key(key) || is_train_key(key)) {
    if (key == "head_kind" || key == "decoder_kind") {
      v = raw;
    } else if (raw.find(',') != std::string::npos) {
      // Comma list for the stage arrays.
      v = json::array();
      std::istringstream ss(raw);
      std::string item;
      while (std::getline(ss, item, ',')) v.push_back(std::stoi(item));
    } else if (key == "hflip") {
      v = (raw == "true" || raw == "1");
    } else {
      try {
        if (raw.find('.') != std::string::npos || raw.find('e') != std::string::npos ||
            raw.find('E') != std::string::npos)
          v = std::stod(raw);
        else
          v = static_cast<int64_t>(std::stoll(raw));
      } catch (const std::exception&) {
        throw ConfigError("bad value for " + key + ": " + raw);
      }
    }
    if (is_model_key(key)) apply_model_key(cfg.model, key, v);
    else apply_train_key(cfg.train, key, v);
    return;
  }
  throw ConfigError("unknown config key: " + key);
}

}  // namespace df
