#pragma once

#include <vector>

#include "depthformer/config.hpp"
#include "depthformer/params.hpp"

namespace df {

// Keeps normalized widths strictly positive without visibly distorting the
// learned partition.
inline constexpr double kWidthEps = 1e-3;

// Host-side bin partition: normalized widths and the strictly increasing
// centers they induce over [d_min, d_max].
struct BinPartition {
  std::vector<double> widths;
  std::vector<double> centers;
  double d_min = 0.0;
  double d_max = 0.0;
};

// widths must be strictly positive and sum to ~1 (normalize_widths_host does
// that). centers[k] = d_min + (d_max-d_min) * (widths[k]/2 + sum_{j<k} widths[j]).
BinPartition make_partition(const std::vector<double>& widths, double d_min, double d_max);
std::vector<double> normalize_widths_host(const std::vector<double>& raw, double eps);

// Raw (pre-normalization, nonnegative) width predictions, one vector per image.
template <typename T>
VarId transbins_widths(Graph<T>& g, VarId f_out, const ModelConfig& cfg, BoundParams<T>& params);
template <typename T>
VarId gap_widths(Graph<T>& g, VarId f_out, const ModelConfig& cfg, BoundParams<T>& params);
// Dispatches on cfg.head_kind.
template <typename T>
VarId head_widths(Graph<T>& g, VarId f_out, const ModelConfig& cfg, BoundParams<T>& params);

// Per-pixel distribution over bins: 1x1 conv then channelwise softmax.
template <typename T>
VarId prob_head(Graph<T>& g, VarId f_out, const ModelConfig& cfg, BoundParams<T>& params);

// Probability-weighted sum of centers, bilinearly upsampled to full
// resolution. probs: [B,K,h,w], centers: [B,K] -> [B,1,full_h,full_w].
template <typename T>
VarId compose_depth(Graph<T>& g, VarId probs, VarId centers, int64_t full_h, int64_t full_w);

}  // namespace df
