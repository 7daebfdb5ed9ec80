#include "depthformer/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "depthformer/error.hpp"

namespace df {

double silog_loss(std::span<const float> pred, std::span<const float> gt,
                  std::span<const uint8_t> mask, double alpha, double lambda) {
  if (pred.size() != gt.size() || pred.size() != mask.size())
    throw ShapeError("silog_loss: size mismatch");
  double s1 = 0.0, s2 = 0.0;
  int64_t n = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    if (!(pred[i] > 0.0f)) throw DomainError("silog_loss: nonpositive prediction at valid pixel");
    const double g = std::log(static_cast<double>(pred[i])) - std::log(static_cast<double>(gt[i]));
    s1 += g;
    s2 += g * g;
    ++n;
  }
  if (n == 0) throw DomainError("silog_loss: empty valid mask");
  const double mean1 = s1 / static_cast<double>(n);
  const double mean2 = s2 / static_cast<double>(n);
  const double rad = std::max(0.0, mean2 - lambda * mean1 * mean1);
  return alpha * std::sqrt(rad);
}

double silog_loss(std::span<const float> pred, const DepthMap& gt, double alpha, double lambda) {
  return silog_loss(pred, std::span<const float>(gt.data), std::span<const uint8_t>(gt.valid),
                    alpha, lambda);
}

std::vector<float> sample_depth_values(std::span<const float> gt, std::span<const uint8_t> mask,
                                       int cap, uint64_t seed) {
  if (gt.size() != mask.size()) throw ShapeError("sample_depth_values: size mismatch");
  std::vector<float> values;
  values.reserve(gt.size());
  for (size_t i = 0; i < gt.size(); ++i)
    if (mask[i]) values.push_back(gt[i]);
  if (values.empty()) throw DomainError("sample_depth_values: empty valid mask");
  if (cap <= 0 || static_cast<size_t>(cap) >= values.size()) return values;

  // Partial Fisher-Yates keeps the draw order deterministic for a given seed.
  Rng rng = Rng::stream(seed, 0xcafe);
  const int64_t n = static_cast<int64_t>(values.size());
  for (int64_t i = 0; i < cap; ++i) {
    const int64_t j = i + rng.uniform_int(n - i);
    std::swap(values[static_cast<size_t>(i)], values[static_cast<size_t>(j)]);
  }
  values.resize(static_cast<size_t>(cap));
  return values;
}

double chamfer_loss_sets(std::span<const double> centers, std::span<const float> gt_values) {
  if (centers.empty()) throw DomainError("chamfer_loss: no bin centers");
  if (gt_values.empty()) throw DomainError("chamfer_loss: empty ground-truth set");
  double fwd = 0.0;
  for (float xv : gt_values) {
    const double x = static_cast<double>(xv);
    double best = std::numeric_limits<double>::infinity();
    for (double c : centers) best = std::min(best, (x - c) * (x - c));
    fwd += best;
  }
  fwd /= static_cast<double>(gt_values.size());
  double bwd = 0.0;
  for (double c : centers) {
    double best = std::numeric_limits<double>::infinity();
    for (float xv : gt_values) {
      const double d = c - static_cast<double>(xv);
      best = std::min(best, d * d);
    }
    bwd += best;
  }
  bwd /= static_cast<double>(centers.size());
  return fwd + bwd;
}

double chamfer_loss(const BinPartition& bins, const DepthMap& gt, int sample_cap, uint64_t seed) {
  const std::vector<float> values =
      sample_depth_values(std::span<const float>(gt.data), std::span<const uint8_t>(gt.valid),
                          sample_cap, seed);
  return chamfer_loss_sets(std::span<const double>(bins.centers),
                           std::span<const float>(values));
}

LossBreakdown total_loss(std::span<const float> pred, const DepthMap& gt, const BinPartition& bins,
                         const TotalLossParams& p) {
  LossBreakdown out;
  out.n_valid_pixels = gt.n_valid();
  out.silog = silog_loss(pred, gt, p.alpha, p.lambda);
  out.chamfer = chamfer_loss(bins, gt, p.sample_cap, p.seed);
  out.total = out.silog + p.gamma * out.chamfer;
  return out;
}

}  // namespace df
