#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "depthformer/data.hpp"

namespace df {

struct MetricReport {
  double rmse = 0.0;
  double rel = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  int64_t n_pixels = 0;
};

// RMSE, mean absolute relative error, and threshold accuracies at
// 1.25, 1.25^2, 1.25^3 (strict <), all over masked pixels in 64-bit.
MetricReport compute_metrics(std::span<const float> pred, std::span<const float> gt,
                             std::span<const uint8_t> mask);
MetricReport compute_metrics(std::span<const float> pred, const DepthMap& gt);

// Equal-weight mean over per-image reports.
MetricReport aggregate_mean(std::span<const MetricReport> reports);

// Half-open pixel ranges of an evaluation sub-rectangle.
struct EvalCrop {
  int row_lo = 0, row_hi = 0;
  int col_lo = 0, col_hi = 0;
};

// Relative outdoor evaluation crop; fractions of the image extent.
EvalCrop garg_crop(int h, int w);
// Fixed indoor center crop, defined on 480x640 images only (apply_crop
// rejects other sizes).
EvalCrop eigen_crop_nyu();

// Throws DomainError when the crop does not fit inside h x w.
void check_crop(const EvalCrop& crop, int h, int w);
std::vector<float> crop_plane(std::span<const float> plane, int h, int w, const EvalCrop& crop);
std::vector<uint8_t> crop_plane(std::span<const uint8_t> plane, int h, int w,
                                const EvalCrop& crop);
DepthMap crop_depth(const DepthMap& dm, const EvalCrop& crop);

}  // namespace df
