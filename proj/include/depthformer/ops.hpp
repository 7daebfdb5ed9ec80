#pragma once

#include <span>
#include <vector>

#include "depthformer/graph.hpp"

namespace df::ops {

// Elementwise / broadcast arithmetic.
template <typename T>
VarId add(Graph<T>& g, VarId a, VarId b);
template <typename T>
VarId add_scaled(Graph<T>& g, VarId a, VarId b, T cb);  // a + cb * b
template <typename T>
VarId scale(Graph<T>& g, VarId a, T c);
template <typename T>
VarId mul(Graph<T>& g, VarId a, VarId b);
template <typename T>
VarId add_row_bias(Graph<T>& g, VarId x, VarId bias);  // bias over last dim
template <typename T>
VarId add_channel_bias(Graph<T>& g, VarId x, VarId bias);  // x: [B,C,H,W]

// Activations.
template <typename T>
VarId relu(Graph<T>& g, VarId x);
template <typename T>
VarId leaky_relu(Graph<T>& g, VarId x, T slope);
template <typename T>
VarId gelu(Graph<T>& g, VarId x);

// Linear algebra. linear() flattens all leading dims of x into rows.
template <typename T>
VarId matmul(Graph<T>& g, VarId a, VarId b);  // [m,k]x[k,n]
template <typename T>
VarId linear(Graph<T>& g, VarId x, VarId w, VarId bias = kNoVar);  // w: [in,out]
template <typename T>
VarId bmm(Graph<T>& g, VarId a, VarId b);  // [B,m,k]x[B,k,n]
template <typename T>
VarId bmm_nt(Graph<T>& g, VarId a, VarId b);  // [B,m,k]x[B,n,k]^T

// Layout moves.
template <typename T>
VarId split_heads(Graph<T>& g, VarId x, int heads);  // [B,N,h*d] -> [B*h,N,d]
template <typename T>
VarId merge_heads(Graph<T>& g, VarId x, int heads);  // [B*h,N,d] -> [B,N,h*d]
template <typename T>
VarId tokens_to_map(Graph<T>& g, VarId x, int h, int w);  // [B,N,C] -> [B,C,h,w]
template <typename T>
VarId map_to_tokens(Graph<T>& g, VarId x);  // [B,C,H,W] -> [B,H*W,C]
template <typename T>
VarId concat_channels(Graph<T>& g, std::span<const VarId> parts);  // NCHW, dim 1
template <typename T>
VarId take_token(Graph<T>& g, VarId x, int64_t index);  // [B,N,D] -> [B,D]

// NN building blocks.
template <typename T>
VarId conv2d(Graph<T>& g, VarId x, VarId w, VarId bias, int stride, int pad);
template <typename T>
VarId conv_transpose2x2(Graph<T>& g, VarId x, VarId w, VarId bias);  // w: [Ci,Co,2,2]
template <typename T>
VarId layernorm(Graph<T>& g, VarId x, VarId gamma, VarId beta);
template <typename T>
VarId softmax_lastdim(Graph<T>& g, VarId x);
template <typename T>
VarId softmax_channels(Graph<T>& g, VarId x);  // [B,C,H,W] over C
template <typename T>
VarId bilinear_upsample(Graph<T>& g, VarId x, int64_t oh, int64_t ow);
template <typename T>
VarId global_avg_pool(Graph<T>& g, VarId x);  // [B,C,H,W] -> [B,C]
template <typename T>
VarId mean_all(Graph<T>& g, VarId x);  // -> [1]

// Depth-bin math.
template <typename T>
VarId normalize_widths(Graph<T>& g, VarId raw, T eps);  // rows of [B,K]
template <typename T>
VarId bin_centers(Graph<T>& g, VarId widths, T d_min, T d_max);
template <typename T>
VarId bin_expectation(Graph<T>& g, VarId probs, VarId centers);  // -> [B,1,H,W]

// Losses. gt/valid are constants of the step, not graph nodes.
template <typename T>
struct SilogResult {
  VarId loss;
  int64_t n_valid;
};
template <typename T>
SilogResult<T> silog(Graph<T>& g, VarId pred, const Tensor<T>& gt,
                     const std::vector<uint8_t>& valid, T alpha, T lambda);
template <typename T>
VarId chamfer(Graph<T>& g, VarId centers, const std::vector<std::vector<T>>& gt_sets);

}  // namespace df::ops
