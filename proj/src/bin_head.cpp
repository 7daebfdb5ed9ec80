#include "depthformer/bin_head.hpp"

#include "depthformer/encoder.hpp"
#include "depthformer/error.hpp"
#include "depthformer/ops.hpp"

namespace df {

std::vector<double> normalize_widths_host(const std::vector<double>& raw, double eps) {
  if (eps <= 0) throw DomainError("normalize_widths: eps must be positive");
  if (raw.empty()) throw DomainError("normalize_widths: empty input");
  double sum = 0.0;
  for (double v : raw) {
    if (v < 0) throw DomainError("normalize_widths: negative raw width");
    sum += v + eps;
  }
  std::vector<double> out(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] + eps) / sum;
  return out;
}

BinPartition make_partition(const std::vector<double>& widths, double d_min, double d_max) {
  if (!(d_min < d_max)) throw DomainError("make_partition: d_min < d_max violated");
  BinPartition p;
  p.widths = widths;
  p.d_min = d_min;
  p.d_max = d_max;
  p.centers.resize(widths.size());
  const double span = d_max - d_min;
  double cum = 0.0;
  for (size_t k = 0; k < widths.size(); ++k) {
    if (widths[k] <= 0) throw DomainError("make_partition: widths must be positive");
    p.centers[k] = d_min + span * (widths[k] / 2.0 + cum);
    cum += widths[k];
  }
  return p;
}

template <typename T>
VarId transbins_widths(Graph<T>& g, VarId f_out, const ModelConfig& cfg, BoundParams<T>& params) {
  const Tensor<T>& fv = g.val(f_out);
  if (fv.ndim() != 4) throw ShapeError("transbins_widths: expected [B,C,H,W]");
  const int p = cfg.head_patch;
  if (fv.shape[2] % p != 0 || fv.shape[3] % p != 0)
    throw ShapeError("transbins_widths: spatial dims " + shape_str(fv.shape) +
                     " not divisible by patch size " + std::to_string(p));

  VarId emb = ops::conv2d(g, f_out, params("head.patch.weight"), params("head.patch.bias"), p, 0);
  const Tensor<T>& ev = g.val(emb);
  const int oh = static_cast<int>(ev.shape[2]);
  const int ow = static_cast<int>(ev.shape[3]);
  VarId tokens = ops::map_to_tokens(g, emb);

  StageSpec spec{p, p, 0, cfg.head_dim, cfg.head_heads, 1, 4};
  for (int l = 0; l < cfg.head_layers; ++l)
    tokens = transformer_block(g, tokens, oh, ow, spec, params,
                               "head.layer" + std::to_string(l));

  VarId first = ops::take_token(g, tokens, 0);
  VarId h = ops::linear(g, first, params("head.readout.fc1.weight"),
                        params("head.readout.fc1.bias"));
  h = ops::gelu(g, h);
  h = ops::linear(g, h, params("head.readout.fc2.weight"), params("head.readout.fc2.bias"));
  return ops::relu(g, h);
}

template <typename T>
VarId gap_widths(Graph<T>& g, VarId f_out, const ModelConfig& cfg, BoundParams<T>& params) {
  const Tensor<T>& fv = g.val(f_out);
  if (fv.ndim() != 4) throw ShapeError("gap_widths: expected [B,C,H,W]");
  (void)cfg;
  VarId pooled = ops::global_avg_pool(g, f_out);
  VarId h = ops::linear(g, pooled, params("head.readout.fc1.weight"),
                        params("head.readout.fc1.bias"));
  h = ops::gelu(g, h);
  h = ops::linear(g, h, params("head.readout.fc2.weight"), params("head.readout.fc2.bias"));
  return ops::relu(g, h);
}

template <typename T>
VarId head_widths(Graph<T>& g, VarId f_out, const ModelConfig& cfg, BoundParams<T>& params) {
  return cfg.head_kind == HeadKind::kTransbins ? transbins_widths(g, f_out, cfg, params)
                                               : gap_widths(g, f_out, cfg, params);
}

template <typename T>
VarId prob_head(Graph<T>& g, VarId f_out, const ModelConfig& cfg, BoundParams<T>& params) {
  (void)cfg;
  VarId logits =
      ops::conv2d(g, f_out, params("head.prob.weight"), params("head.prob.bias"), 1, 0);
  return ops::softmax_channels(g, logits);
}

template <typename T>
VarId compose_depth(Graph<T>& g, VarId probs, VarId centers, int64_t full_h, int64_t full_w) {
  VarId half = ops::bin_expectation(g, probs, centers);
  const Tensor<T>& hv = g.val(half);
  if (hv.shape[2] == full_h && hv.shape[3] == full_w) return half;
  return ops::bilinear_upsample(g, half, full_h, full_w);
}

#define DF_INSTANTIATE_BIN_HEAD(T)                                                          \
  template VarId transbins_widths<T>(Graph<T>&, VarId, const ModelConfig&, BoundParams<T>&); \
  template VarId gap_widths<T>(Graph<T>&, VarId, const ModelConfig&, BoundParams<T>&);      \
  template VarId head_widths<T>(Graph<T>&, VarId, const ModelConfig&, BoundParams<T>&);     \
  template VarId prob_head<T>(Graph<T>&, VarId, const ModelConfig&, BoundParams<T>&);       \
  template VarId compose_depth<T>(Graph<T>&, VarId, VarId, int64_t, int64_t);

DF_INSTANTIATE_BIN_HEAD(float)
DF_INSTANTIATE_BIN_HEAD(double)

}  // namespace df
