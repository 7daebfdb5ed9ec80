#pragma once

#include <cstdint>
#include <span>

#include "depthformer/bin_head.hpp"
#include "depthformer/data.hpp"

namespace df {

struct LossBreakdown {
  double silog = 0.0;
  double chamfer = 0.0;
  double total = 0.0;
  int64_t n_valid_pixels = 0;
};

// alpha * sqrt(mean(g^2) - lambda * mean(g)^2) over masked pixels, where
// g = ln(pred) - ln(gt). The radicand is clamped at zero. Throws DomainError
// on an empty mask or a nonpositive prediction at a masked pixel.
double silog_loss(std::span<const float> pred, std::span<const float> gt,
                  std::span<const uint8_t> mask, double alpha, double lambda);
double silog_loss(std::span<const float> pred, const DepthMap& gt, double alpha, double lambda);

// Uniform sampling of valid depth values without replacement, down to cap.
std::vector<float> sample_depth_values(std::span<const float> gt, std::span<const uint8_t> mask,
                                       int cap, uint64_t seed);

// Mean-normalized bidirectional squared Chamfer distance between the bin
// centers and (a sample of) the valid ground-truth depths.
double chamfer_loss(const BinPartition& bins, const DepthMap& gt, int sample_cap, uint64_t seed);
double chamfer_loss_sets(std::span<const double> centers, std::span<const float> gt_values);

struct TotalLossParams {
  double alpha = 10.0;
  double lambda = 0.85;
  double gamma = 0.1;
  int sample_cap = 2048;
  uint64_t seed = 0;
};
LossBreakdown total_loss(std::span<const float> pred, const DepthMap& gt, const BinPartition& bins,
                         const TotalLossParams& p);

}  // namespace df
