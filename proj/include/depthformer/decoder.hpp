#pragma once

#include <array>

#include "depthformer/config.hpp"
#include "depthformer/params.hpp"

namespace df {

// One fusion step: upsample the coarser decoded map by a learned 2x2/stride-2
// transposed conv, concatenate the encoder skip, fuse with a 3x3 conv.
// level selects the parameter set (3, 2 or 1 for skips E3, E2, E1).
template <typename T>
VarId fuse_step(Graph<T>& g, VarId d_above, VarId e_skip, BoundParams<T>& params, int level);

// Coarse-to-fine fusion decoder. Output is at half the input resolution with
// decoder_channels channels. When d_maps is non-null the intermediate decoded
// maps D4..D1 are written to it (index i-1 holds D_i).
template <typename T>
VarId decoder_forward(Graph<T>& g, const std::array<VarId, 4>& pyramid, const ModelConfig& cfg,
                      BoundParams<T>& params, std::array<VarId, 4>* d_maps = nullptr);

// Ablation decoder: per-level 1x1 projections to C channels, bilinear
// upsampling of every level to the 1/4 grid, concat, 1x1 fusion.
template <typename T>
VarId all_mlp_decoder_forward(Graph<T>& g, const std::array<VarId, 4>& pyramid,
                              const ModelConfig& cfg, BoundParams<T>& params);

}  // namespace df
