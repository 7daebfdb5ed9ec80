#include "depthformer/model.hpp"

#include "depthformer/bin_head.hpp"
#include "depthformer/decoder.hpp"
#include "depthformer/error.hpp"
#include "depthformer/ops.hpp"

namespace df {

template <typename T>
ModelOutputs<T> model_forward(Graph<T>& g, VarId image, const ModelConfig& cfg,
                              BoundParams<T>& params, AttnStats* stats) {
  const Tensor<T>& iv = g.val(image);
  if (iv.ndim() != 4) throw ShapeError("model_forward: image must be [B,3,H,W]");
  const int64_t full_h = iv.shape[2], full_w = iv.shape[3];

  std::array<VarId, 4> pyramid = encoder_forward(g, image, cfg, params, stats);
  ModelOutputs<T> out;
  out.f_out = cfg.decoder_kind == DecoderKind::kIterativeFusion
                  ? decoder_forward(g, pyramid, cfg, params)
                  : all_mlp_decoder_forward(g, pyramid, cfg, params);

  VarId raw = head_widths(g, out.f_out, cfg, params);
  out.widths = ops::normalize_widths(g, raw, static_cast<T>(kWidthEps));
  out.centers =
      ops::bin_centers(g, out.widths, static_cast<T>(cfg.d_min), static_cast<T>(cfg.d_max));
  out.probs = prob_head(g, out.f_out, cfg, params);
  out.depth_grid = ops::bin_expectation(g, out.probs, out.centers);
  const Tensor<T>& dv = g.val(out.depth_grid);
  out.depth_full = (dv.shape[2] == full_h && dv.shape[3] == full_w)
                       ? out.depth_grid
                       : ops::bilinear_upsample(g, out.depth_grid, full_h, full_w);
  return out;
}

namespace {

// Runs one closure in a throwaway graph and returns the value of the id it
// produces.
template <typename Fn>
Tensor<float> scoped(const ParamStore<float>& store, Fn&& fn) {
  Graph<float> g;
  BoundParams<float> params(g, store, false);
  VarId id = fn(g, params);
  return g.val(id);
}

}  // namespace

std::array<Tensor<float>, 4> encoder_pyramid_infer(const ModelConfig& cfg,
                                                   const ParamStore<float>& store,
                                                   const Tensor<float>& image) {
  if (image.ndim() != 4 || image.shape[1] != 3)
    throw ShapeError("encoder_pyramid_infer: image must be [B,3,H,W]");
  if (image.shape[2] % 32 != 0 || image.shape[3] % 32 != 0)
    throw ShapeError("encoder_pyramid_infer: input spatial dims must be divisible by 32");

  std::array<Tensor<float>, 4> pyramid;
  Tensor<float> cur = image;
  for (int i = 0; i < 4; ++i) {
    const std::string sp = "stage" + std::to_string(i + 1);
    const StageSpec spec = stage_spec(cfg, i);

    int oh = 0, ow = 0;
    Tensor<float> tokens = scoped(store, [&](Graph<float>& g, BoundParams<float>& p) {
      TokenBatch tb = patch_embed(g, g.leaf(cur, false), spec, p, sp + ".patch");
      oh = tb.origin_h;
      ow = tb.origin_w;
      return tb.tokens;
    });
    for (int j = 0; j < cfg.stage_depths[static_cast<size_t>(i)]; ++j) {
      tokens = scoped(store, [&](Graph<float>& g, BoundParams<float>& p) {
        return transformer_block(g, g.leaf(tokens, false), oh, ow, spec, p,
                                 sp + ".block" + std::to_string(j));
      });
    }
    pyramid[static_cast<size_t>(i)] = scoped(store, [&](Graph<float>& g, BoundParams<float>& p) {
      VarId t = ops::layernorm(g, g.leaf(tokens, false), p(sp + ".norm.gamma"),
                               p(sp + ".norm.beta"));
      return ops::tokens_to_map(g, t, oh, ow);
    });
    cur = pyramid[static_cast<size_t>(i)];
  }
  return pyramid;
}

Tensor<float> infer_depth(const ModelConfig& cfg, const ParamStore<float>& store,
                          const Tensor<float>& image) {
  const std::array<Tensor<float>, 4> pyramid = encoder_pyramid_infer(cfg, store, image);
  const int64_t full_h = image.shape[2], full_w = image.shape[3];
  return scoped(store, [&](Graph<float>& g, BoundParams<float>& p) {
    std::array<VarId, 4> ids{};
    for (int i = 0; i < 4; ++i)
      ids[static_cast<size_t>(i)] = g.leaf(pyramid[static_cast<size_t>(i)], false);
    VarId f_out = cfg.decoder_kind == DecoderKind::kIterativeFusion
                      ? decoder_forward(g, ids, cfg, p)
                      : all_mlp_decoder_forward(g, ids, cfg, p);
    VarId widths = ops::normalize_widths(g, head_widths(g, f_out, cfg, p),
                                         static_cast<float>(kWidthEps));
    VarId centers = ops::bin_centers(g, widths, static_cast<float>(cfg.d_min),
                                     static_cast<float>(cfg.d_max));
    VarId probs = prob_head(g, f_out, cfg, p);
    return compose_depth(g, probs, centers, full_h, full_w);
  });
}

template ModelOutputs<float> model_forward<float>(Graph<float>&, VarId, const ModelConfig&,
                                                  BoundParams<float>&, AttnStats*);
template ModelOutputs<double> model_forward<double>(Graph<double>&, VarId, const ModelConfig&,
                                                    BoundParams<double>&, AttnStats*);

}  // namespace df
