#include "depthformer/params.hpp"

#include "depthformer/rng.hpp"

namespace df {

namespace {

// Truncated normal (std 0.02, cut at 2 std) for weights, zeros for biases,
// ones/zeros for norm scale/shift.
constexpr double kInitStd = 0.02;

template <typename T>
Tensor<T> weight_init(Rng& rng, std::vector<int64_t> shape) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data)
    v = static_cast<T>(rng.trunc_normal(kInitStd, -2.0 * kInitStd, 2.0 * kInitStd));
  return t;
}

template <typename T>
struct Builder {
  ParamStore<T> store;
  Rng rng;

  explicit Builder(uint64_t seed) : rng(Rng::stream(seed, 0x9a7a)) {}

  void weight(const std::string& name, std::vector<int64_t> shape) {
    store.add(name, weight_init<T>(rng, std::move(shape)), true);
  }
  void bias(const std::string& name, int64_t n) {
    store.add(name, Tensor<T>({n}, T(0)), false);
  }
  void norm(const std::string& prefix, int64_t n) {
    store.add(prefix + ".gamma", Tensor<T>({n}, T(1)), false);
    store.add(prefix + ".beta", Tensor<T>({n}, T(0)), false);
  }
  void linear(const std::string& prefix, int64_t in, int64_t out) {
    weight(prefix + ".weight", {in, out});
    bias(prefix + ".bias", out);
  }
  void conv(const std::string& prefix, int64_t co, int64_t ci, int64_t k) {
    weight(prefix + ".weight", {co, ci, k, k});
    bias(prefix + ".bias", co);
  }
  void tconv(const std::string& prefix, int64_t ci, int64_t co) {
    weight(prefix + ".weight", {ci, co, 2, 2});
    bias(prefix + ".bias", co);
  }
  // Pre-norm transformer block; reduction conv present only when ratio > 1.
  void block(const std::string& prefix, int64_t dim, int ratio, int mlp_ratio) {
    norm(prefix + ".norm1", dim);
    linear(prefix + ".attn.q", dim, dim);
    linear(prefix + ".attn.k", dim, dim);
    linear(prefix + ".attn.v", dim, dim);
    linear(prefix + ".attn.proj", dim, dim);
    if (ratio > 1) {
      conv(prefix + ".attn.sr", dim, dim, ratio);
      norm(prefix + ".attn.srnorm", dim);
    }
    norm(prefix + ".norm2", dim);
    linear(prefix + ".mlp.fc1", dim, dim * mlp_ratio);
    linear(prefix + ".mlp.fc2", dim * mlp_ratio, dim);
  }
};

}  // namespace

template <typename T>
ParamStore<T> init_depthformer_params(const ModelConfig& cfg, uint64_t seed) {
  Builder<T> b(seed);

  int64_t in_ch = 3;
  for (int i = 0; i < 4; ++i) {
    const std::string sp = "stage" + std::to_string(i + 1);
    const int64_t dim = cfg.stage_channels[static_cast<size_t>(i)];
    b.conv(sp + ".patch", dim, in_ch, cfg.patch_kernels[static_cast<size_t>(i)]);
    for (int j = 0; j < cfg.stage_depths[static_cast<size_t>(i)]; ++j)
      b.block(sp + ".block" + std::to_string(j), dim,
              cfg.reduction_ratios[static_cast<size_t>(i)], cfg.mlp_ratio);
    b.norm(sp + ".norm", dim);
    in_ch = dim;
  }

  const int64_t C = cfg.decoder_channels;
  if (cfg.decoder_kind == DecoderKind::kIterativeFusion) {
    b.conv("decoder.d4", C, cfg.stage_channels[3], 3);
    for (int i = 3; i >= 1; --i) {
      b.tconv("decoder.up" + std::to_string(i), C, C);
      b.conv("decoder.fuse" + std::to_string(i), C,
             C + cfg.stage_channels[static_cast<size_t>(i - 1)], 3);
    }
    b.tconv("decoder.final_up", C, C);
    b.conv("decoder.out", C, C, 3);
  } else {
    for (int i = 1; i <= 4; ++i)
      b.conv("decoder.proj" + std::to_string(i), C,
             cfg.stage_channels[static_cast<size_t>(i - 1)], 1);
    b.conv("decoder.fuse", C, 4 * C, 1);
  }

  if (cfg.head_kind == HeadKind::kTransbins) {
    const int64_t E = cfg.head_dim;
    b.conv("head.patch", E, C, cfg.head_patch);
    for (int l = 0; l < cfg.head_layers; ++l)
      b.block("head.layer" + std::to_string(l), E, 1, 4);
    b.linear("head.readout.fc1", E, 2 * E);
    b.linear("head.readout.fc2", 2 * E, cfg.n_bins);
  } else {
    b.linear("head.readout.fc1", C, 2 * C);
    b.linear("head.readout.fc2", 2 * C, cfg.n_bins);
  }
  b.conv("head.prob", cfg.n_bins, C, 1);

  return std::move(b.store);
}

template ParamStore<float> init_depthformer_params<float>(const ModelConfig&, uint64_t);
template ParamStore<double> init_depthformer_params<double>(const ModelConfig&, uint64_t);
template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace df
