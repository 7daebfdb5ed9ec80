#pragma once

#include <array>
#include <string>

#include "depthformer/config.hpp"
#include "depthformer/params.hpp"

namespace df {

// Filled in by sra_attention when requested: row-sum extrema of the softmax
// attention matrix and the key/value count actually used.
struct AttnStats {
  double min_row_sum = 1.0;
  double max_row_sum = 1.0;
  int64_t rows = 0;
  int64_t kv_count = 0;
};

struct TokenBatch {
  VarId tokens = kNoVar;  // [B, N, C]
  int origin_h = 0;
  int origin_w = 0;
};

struct StageSpec {
  int kernel;
  int stride;
  int pad;
  int channels;
  int heads;
  int ratio;
  int mlp_ratio;
};

// Number of key/value pairs after spatial reduction by ratio r: n / r^2.
int64_t sra_reduced_tokens(int origin_h, int origin_w, int ratio);

// Overlapping strided convolution followed by flattening to a token sequence.
template <typename T>
TokenBatch patch_embed(Graph<T>& g, VarId x, const StageSpec& spec, BoundParams<T>& params,
                       const std::string& prefix);

// Self-attention with key/value spatial reduction by the given ratio (a conv
// with kernel=stride=ratio and a norm over the reduced tokens). ratio == 1
// applies no reduction. Queries attend to n/ratio^2 key/value pairs.
template <typename T>
VarId sra_attention(Graph<T>& g, VarId tokens, int origin_h, int origin_w, int ratio, int heads,
                    BoundParams<T>& params, const std::string& prefix,
                    AttnStats* stats = nullptr);

// Pre-norm residual block: x + attn(norm(x)), then y + mlp(norm(y)).
template <typename T>
VarId transformer_block(Graph<T>& g, VarId tokens, int origin_h, int origin_w,
                        const StageSpec& spec, BoundParams<T>& params, const std::string& prefix,
                        AttnStats* stats = nullptr);

// Full four-stage pyramid: E[i] has channels stage_channels[i] at 1/4..1/32
// of the input resolution.
template <typename T>
std::array<VarId, 4> encoder_forward(Graph<T>& g, VarId image, const ModelConfig& cfg,
                                     BoundParams<T>& params, AttnStats* stats = nullptr);

StageSpec stage_spec(const ModelConfig& cfg, int stage_index);

}  // namespace df
