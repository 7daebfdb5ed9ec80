#include "depthformer/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "depthformer/error.hpp"

namespace df {

MetricReport compute_metrics(std::span<const float> pred, std::span<const float> gt,
                             std::span<const uint8_t> mask) {
  if (pred.size() != gt.size() || pred.size() != mask.size())
    throw ShapeError("compute_metrics: size mismatch");
  double se = 0.0, rel = 0.0;
  int64_t n = 0, k1 = 0, k2 = 0, k3 = 0;
  constexpr double kThr1 = 1.25, kThr2 = 1.25 * 1.25, kThr3 = 1.25 * 1.25 * 1.25;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const double d = static_cast<double>(pred[i]);
    const double g = static_cast<double>(gt[i]);
    if (!(d > 0.0) || !(g > 0.0))
      throw DomainError("compute_metrics: nonpositive depth at a masked pixel");
    const double diff = d - g;
    se += diff * diff;
    rel += std::abs(diff) / g;
    const double ratio = std::max(d / g, g / d);
    if (ratio < kThr1) ++k1;
    if (ratio < kThr2) ++k2;
    if (ratio < kThr3) ++k3;
    ++n;
  }
  if (n == 0) throw DomainError("compute_metrics: empty valid mask");
  MetricReport r;
  r.n_pixels = n;
  r.rmse = std::sqrt(se / static_cast<double>(n));
  r.rel = rel / static_cast<double>(n);
  r.delta1 = static_cast<double>(k1) / static_cast<double>(n);
  r.delta2 = static_cast<double>(k2) / static_cast<double>(n);
  r.delta3 = static_cast<double>(k3) / static_cast<double>(n);
  return r;
}

MetricReport compute_metrics(std::span<const float> pred, const DepthMap& gt) {
  return compute_metrics(pred, std::span<const float>(gt.data),
                         std::span<const uint8_t>(gt.valid));
}

MetricReport aggregate_mean(std::span<const MetricReport> reports) {
  if (reports.empty()) throw DomainError("aggregate_mean: no reports");
  MetricReport agg;
  for (const MetricReport& r : reports) {
    agg.rmse += r.rmse;
    agg.rel += r.rel;
    agg.delta1 += r.delta1;
    agg.delta2 += r.delta2;
    agg.delta3 += r.delta3;
    agg.n_pixels += r.n_pixels;
  }
  const double n = static_cast<double>(reports.size());
  agg.rmse /= n;
  agg.rel /= n;
  agg.delta1 /= n;
  agg.delta2 /= n;
  agg.delta3 /= n;
  return agg;
}

EvalCrop garg_crop(int h, int w) {
  if (h <= 0 || w <= 0) throw DomainError("garg_crop: bad extent");
  EvalCrop c;
  c.row_lo = static_cast<int>(std::floor(0.40810811 * h));
  c.row_hi = static_cast<int>(std::floor(0.99189189 * h));
  c.col_lo = static_cast<int>(std::floor(0.03594771 * w));
  c.col_hi = static_cast<int>(std::floor(0.96405229 * w));
  return c;
}

EvalCrop eigen_crop_nyu() { return EvalCrop{45, 471, 41, 601}; }

void check_crop(const EvalCrop& crop, int h, int w) {
  if (crop.row_lo < 0 || crop.col_lo < 0 || crop.row_lo >= crop.row_hi ||
      crop.col_lo >= crop.col_hi || crop.row_hi > h || crop.col_hi > w)
    throw DomainError("crop [" + std::to_string(crop.row_lo) + "," + std::to_string(crop.row_hi) +
                      ")x[" + std::to_string(crop.col_lo) + "," + std::to_string(crop.col_hi) +
                      ") does not fit a " + std::to_string(h) + "x" + std::to_string(w) +
                      " image");
}

namespace {

template <typename T>
std::vector<T> crop_impl(std::span<const T> plane, int h, int w, const EvalCrop& crop) {
  if (static_cast<int64_t>(plane.size()) != static_cast<int64_t>(h) * w)
    throw ShapeError("crop_plane: size mismatch");
  check_crop(crop, h, w);
  std::vector<T> out;
  out.reserve(static_cast<size_t>(crop.row_hi - crop.row_lo) * (crop.col_hi - crop.col_lo));
  for (int y = crop.row_lo; y < crop.row_hi; ++y)
    for (int x = crop.col_lo; x < crop.col_hi; ++x)
      out.push_back(plane[static_cast<size_t>(y) * w + x]);
  return out;
}

}  // namespace

std::vector<float> crop_plane(std::span<const float> plane, int h, int w, const EvalCrop& crop) {
  return crop_impl(plane, h, w, crop);
}

std::vector<uint8_t> crop_plane(std::span<const uint8_t> plane, int h, int w,
                                const EvalCrop& crop) {
  return crop_impl(plane, h, w, crop);
}

DepthMap crop_depth(const DepthMap& dm, const EvalCrop& crop) {
  DepthMap out;
  out.h = crop.row_hi - crop.row_lo;
  out.w = crop.col_hi - crop.col_lo;
  out.cap = dm.cap;
  out.data = crop_plane(std::span<const float>(dm.data), dm.h, dm.w, crop);
  out.valid = crop_plane(std::span<const uint8_t>(dm.valid), dm.h, dm.w, crop);
  return out;
}

}  // namespace df
