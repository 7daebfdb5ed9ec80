#include "depthformer/encoder.hpp"

#include <cmath>

#include "depthformer/error.hpp"
#include "depthformer/ops.hpp"

namespace df {

int64_t sra_reduced_tokens(int origin_h, int origin_w, int ratio) {
  if (ratio <= 1) return static_cast<int64_t>(origin_h) * origin_w;
  return static_cast<int64_t>(origin_h / ratio) * (origin_w / ratio);
}

StageSpec stage_spec(const ModelConfig& cfg, int stage_index) {
  const auto i = static_cast<size_t>(stage_index);
  return StageSpec{cfg.patch_kernels[i], cfg.patch_strides[i],   cfg.patch_paddings[i],
                   cfg.stage_channels[i], cfg.stage_heads[i],    cfg.reduction_ratios[i],
                   cfg.mlp_ratio};
}

template <typename T>
TokenBatch patch_embed(Graph<T>& g, VarId x, const StageSpec& spec, BoundParams<T>& params,
                       const std::string& prefix) {
  const Tensor<T>& xv = g.val(x);
  if (xv.ndim() != 4) throw ShapeError("patch_embed: input must be [B,C,H,W]");
  const int64_t H = xv.shape[2], W = xv.shape[3];
  if (H % spec.stride != 0 || W % spec.stride != 0)
    throw ShapeError("patch_embed: spatial dims " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by stride " + std::to_string(spec.stride));
  VarId conv = ops::conv2d(g, x, params(prefix + ".weight"), params(prefix + ".bias"),
                           spec.stride, spec.pad);
  const Tensor<T>& cv = g.val(conv);
  TokenBatch tb;
  tb.origin_h = static_cast<int>(cv.shape[2]);
  tb.origin_w = static_cast<int>(cv.shape[3]);
  tb.tokens = ops::map_to_tokens(g, conv);
  return tb;
}

template <typename T>
VarId sra_attention(Graph<T>& g, VarId tokens, int origin_h, int origin_w, int ratio, int heads,
                    BoundParams<T>& params, const std::string& prefix, AttnStats* stats) {
  const Tensor<T>& tv = g.val(tokens);
  if (tv.ndim() != 3) throw ShapeError("sra_attention: tokens must be [B,N,C]");
  const int64_t dim = tv.shape[2];
  if (dim % heads != 0) throw ShapeError("sra_attention: dim not divisible by heads");

  VarId q = ops::linear(g, tokens, params(prefix + ".q.weight"), params(prefix + ".q.bias"));

  VarId kv_src = tokens;
  if (ratio > 1) {
    if (origin_h % ratio != 0 || origin_w % ratio != 0)
      throw ShapeError("sra_attention: grid " + std::to_string(origin_h) + "x" +
                       std::to_string(origin_w) + " not divisible by reduction ratio " +
                       std::to_string(ratio));
    VarId map = ops::tokens_to_map(g, tokens, origin_h, origin_w);
    VarId red = ops::conv2d(g, map, params(prefix + ".sr.weight"), params(prefix + ".sr.bias"),
                            ratio, 0);
    VarId rtok = ops::map_to_tokens(g, red);
    kv_src = ops::layernorm(g, rtok, params(prefix + ".srnorm.gamma"),
                            params(prefix + ".srnorm.beta"));
  }
  VarId k = ops::linear(g, kv_src, params(prefix + ".k.weight"), params(prefix + ".k.bias"));
  VarId v = ops::linear(g, kv_src, params(prefix + ".v.weight"), params(prefix + ".v.bias"));

  const int64_t head_dim = dim / heads;
  VarId qh = ops::split_heads(g, q, heads);
  VarId kh = ops::split_heads(g, k, heads);
  VarId vh = ops::split_heads(g, v, heads);
  VarId logits = ops::scale(g, ops::bmm_nt(g, qh, kh),
                            static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim))));
  VarId attn = ops::softmax_lastdim(g, logits);

  if (stats) {
    const Tensor<T>& av = g.val(attn);
    const int64_t m = av.shape[2];
    const int64_t rows = av.numel() / m;
    for (int64_t r = 0; r < rows; ++r) {
      double s = 0.0;
      const T* row = av.ptr() + r * m;
      for (int64_t i = 0; i < m; ++i) s += static_cast<double>(row[i]);
      stats->min_row_sum = std::min(stats->min_row_sum, s);
      stats->max_row_sum = std::max(stats->max_row_sum, s);
    }
    stats->rows += rows;
    stats->kv_count = m;
  }

  VarId merged = ops::merge_heads(g, ops::bmm(g, attn, vh), heads);
  return ops::linear(g, merged, params(prefix + ".proj.weight"), params(prefix + ".proj.bias"));
}

template <typename T>
VarId transformer_block(Graph<T>& g, VarId tokens, int origin_h, int origin_w,
                        const StageSpec& spec, BoundParams<T>& params, const std::string& prefix,
                        AttnStats* stats) {
  VarId normed = ops::layernorm(g, tokens, params(prefix + ".norm1.gamma"),
                                params(prefix + ".norm1.beta"));
  VarId attended = sra_attention(g, normed, origin_h, origin_w, spec.ratio, spec.heads, params,
                                 prefix + ".attn", stats);
  VarId x1 = ops::add(g, tokens, attended);

  VarId normed2 =
      ops::layernorm(g, x1, params(prefix + ".norm2.gamma"), params(prefix + ".norm2.beta"));
  VarId h = ops::linear(g, normed2, params(prefix + ".mlp.fc1.weight"),
                        params(prefix + ".mlp.fc1.bias"));
  h = ops::gelu(g, h);
  h = ops::linear(g, h, params(prefix + ".mlp.fc2.weight"), params(prefix + ".mlp.fc2.bias"));
  return ops::add(g, x1, h);
}

template <typename T>
std::array<VarId, 4> encoder_forward(Graph<T>& g, VarId image, const ModelConfig& cfg,
                                     BoundParams<T>& params, AttnStats* stats) {
  const Tensor<T>& iv = g.val(image);
  if (iv.ndim() != 4 || iv.shape[1] != 3)
    throw ShapeError("encoder_forward: input must be [B,3,H,W]");
  if (iv.shape[2] % 32 != 0 || iv.shape[3] % 32 != 0)
    throw ShapeError("encoder_forward: input spatial dims must be divisible by 32");

  std::array<VarId, 4> pyramid{kNoVar, kNoVar, kNoVar, kNoVar};
  VarId cur = image;
  for (int i = 0; i < 4; ++i) {
    const std::string sp = "stage" + std::to_string(i + 1);
    const StageSpec spec = stage_spec(cfg, i);
    TokenBatch tb = patch_embed(g, cur, spec, params, sp + ".patch");
    VarId tokens = tb.tokens;
    for (int j = 0; j < cfg.stage_depths[static_cast<size_t>(i)]; ++j)
      tokens = transformer_block(g, tokens, tb.origin_h, tb.origin_w, spec, params,
                                 sp + ".block" + std::to_string(j), stats);
    tokens = ops::layernorm(g, tokens, params(sp + ".norm.gamma"), params(sp + ".norm.beta"));
    pyramid[static_cast<size_t>(i)] = ops::tokens_to_map(g, tokens, tb.origin_h, tb.origin_w);
    cur = pyramid[static_cast<size_t>(i)];
  }
  return pyramid;
}

#define DF_INSTANTIATE_ENCODER(T)                                                           \
  template TokenBatch patch_embed<T>(Graph<T>&, VarId, const StageSpec&, BoundParams<T>&,   \
                                     const std::string&);                                   \
  template VarId sra_attention<T>(Graph<T>&, VarId, int, int, int, int, BoundParams<T>&,    \
                                  const std::string&, AttnStats*);                          \
  template VarId transformer_block<T>(Graph<T>&, VarId, int, int, const StageSpec&,         \
                                      BoundParams<T>&, const std::string&, AttnStats*);     \
  template std::array<VarId, 4> encoder_forward<T>(Graph<T>&, VarId, const ModelConfig&,    \
                                                   BoundParams<T>&, AttnStats*);

DF_INSTANTIATE_ENCODER(float)
DF_INSTANTIATE_ENCODER(double)

}  // namespace df
