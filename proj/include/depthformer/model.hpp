#pragma once

#include <array>

#include "depthformer/config.hpp"
#include "depthformer/encoder.hpp"
#include "depthformer/params.hpp"

namespace df {

template <typename T>
struct ModelOutputs {
  VarId depth_full = kNoVar;  // [B,1,H,W], every value inside [d_min,d_max]
  VarId depth_grid = kNoVar;  // [B,1,h,w] on the decoder grid
  VarId probs = kNoVar;       // [B,n_bins,h,w]
  VarId widths = kNoVar;      // [B,n_bins], normalized
  VarId centers = kNoVar;     // [B,n_bins]
  VarId f_out = kNoVar;       // [B,C,h,w]
};

// Single-graph forward of the full pipeline (encoder, decoder, bin head,
// depth composition). Differentiable end to end.
template <typename T>
ModelOutputs<T> model_forward(Graph<T>& g, VarId image, const ModelConfig& cfg,
                              BoundParams<T>& params, AttnStats* stats = nullptr);

// Forward-only drivers that run block-by-block in throwaway graphs so peak
// memory stays bounded at full-scale input sizes. Numerically identical to
// the single-graph path.
std::array<Tensor<float>, 4> encoder_pyramid_infer(const ModelConfig& cfg,
                                                   const ParamStore<float>& store,
                                                   const Tensor<float>& image);
Tensor<float> infer_depth(const ModelConfig& cfg, const ParamStore<float>& store,
                          const Tensor<float>& image);

}  // namespace df
