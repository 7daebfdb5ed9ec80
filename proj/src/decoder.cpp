#include "depthformer/decoder.hpp"

#include "depthformer/error.hpp"
#include "depthformer/ops.hpp"

namespace df {

namespace {
constexpr float kLeakySlope = 0.01f;
}

template <typename T>
VarId fuse_step(Graph<T>& g, VarId d_above, VarId e_skip, BoundParams<T>& params, int level) {
  const Tensor<T>& dv = g.val(d_above);
  const Tensor<T>& ev = g.val(e_skip);
  if (dv.ndim() != 4 || ev.ndim() != 4) throw ShapeError("fuse_step: expected [B,C,H,W] inputs");
  if (ev.shape[2] != 2 * dv.shape[2] || ev.shape[3] != 2 * dv.shape[3])
    throw ShapeError("fuse_step: skip spatial size " + shape_str(ev.shape) +
                     " must be exactly twice " + shape_str(dv.shape));
  const std::string up = "decoder.up" + std::to_string(level);
  const std::string fuse = "decoder.fuse" + std::to_string(level);
  VarId upsampled =
      ops::conv_transpose2x2(g, d_above, params(up + ".weight"), params(up + ".bias"));
  const std::array<VarId, 2> parts{upsampled, e_skip};
  VarId cat = ops::concat_channels(g, std::span<const VarId>(parts));
  VarId fused = ops::conv2d(g, cat, params(fuse + ".weight"), params(fuse + ".bias"), 1, 1);
  return ops::leaky_relu(g, fused, static_cast<T>(kLeakySlope));
}

template <typename T>
VarId decoder_forward(Graph<T>& g, const std::array<VarId, 4>& pyramid, const ModelConfig& cfg,
                      BoundParams<T>& params, std::array<VarId, 4>* d_maps) {
  for (int i = 0; i < 4; ++i) {
    const Tensor<T>& ev = g.val(pyramid[static_cast<size_t>(i)]);
    if (ev.ndim() != 4 || ev.shape[1] != cfg.stage_channels[static_cast<size_t>(i)])
      throw ShapeError("decoder_forward: pyramid level " + std::to_string(i + 1) +
                       " has wrong channel count");
    if (i > 0) {
      const Tensor<T>& prev = g.val(pyramid[static_cast<size_t>(i - 1)]);
      if (prev.shape[2] != 2 * ev.shape[2] || prev.shape[3] != 2 * ev.shape[3])
        throw ShapeError("decoder_forward: pyramid levels are not a /2 chain");
    }
  }

  // Base case: the coarsest level has no decoded map above it.
  VarId d = ops::conv2d(g, pyramid[3], params("decoder.d4.weight"), params("decoder.d4.bias"), 1,
                        1);
  d = ops::leaky_relu(g, d, static_cast<T>(kLeakySlope));
  if (d_maps) (*d_maps)[3] = d;
  for (int level = 3; level >= 1; --level) {
    d = fuse_step(g, d, pyramid[static_cast<size_t>(level - 1)], params, level);
    if (d_maps) (*d_maps)[static_cast<size_t>(level - 1)] = d;
  }
  // One more learned upsample past the finest skip to reach half resolution.
  VarId up = ops::conv_transpose2x2(g, d, params("decoder.final_up.weight"),
                                    params("decoder.final_up.bias"));
  return ops::conv2d(g, up, params("decoder.out.weight"), params("decoder.out.bias"), 1, 1);
}

template <typename T>
VarId all_mlp_decoder_forward(Graph<T>& g, const std::array<VarId, 4>& pyramid,
                              const ModelConfig& cfg, BoundParams<T>& params) {
  const Tensor<T>& e1 = g.val(pyramid[0]);
  if (e1.ndim() != 4) throw ShapeError("all_mlp_decoder: expected [B,C,H,W] pyramid");
  const int64_t oh = e1.shape[2], ow = e1.shape[3];
  std::array<VarId, 4> ups{};
  for (int i = 0; i < 4; ++i) {
    const std::string p = "decoder.proj" + std::to_string(i + 1);
    VarId proj = ops::conv2d(g, pyramid[static_cast<size_t>(i)], params(p + ".weight"),
                             params(p + ".bias"), 1, 0);
    ups[static_cast<size_t>(i)] =
        i == 0 ? proj : ops::bilinear_upsample(g, proj, oh, ow);
  }
  VarId cat = ops::concat_channels(g, std::span<const VarId>(ups));
  (void)cfg;
  return ops::conv2d(g, cat, params("decoder.fuse.weight"), params("decoder.fuse.bias"), 1, 0);
}

#define DF_INSTANTIATE_DECODER(T)                                                             \
  template VarId fuse_step<T>(Graph<T>&, VarId, VarId, BoundParams<T>&, int);                 \
  template VarId decoder_forward<T>(Graph<T>&, const std::array<VarId, 4>&,                   \
                                    const ModelConfig&, BoundParams<T>&,                      \
                                    std::array<VarId, 4>*);                                   \
  template VarId all_mlp_decoder_forward<T>(Graph<T>&, const std::array<VarId, 4>&,           \
                                            const ModelConfig&, BoundParams<T>&);

DF_INSTANTIATE_DECODER(float)
DF_INSTANTIATE_DECODER(double)

}  // namespace df
