#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "depthformer/rng.hpp"
#include "depthformer/tensor.hpp"

namespace df {

// Per-pixel metric depth with validity mask. Valid entries satisfy
// 0 < value <= cap; invalid entries are stored as 0.
struct DepthMap {
  int h = 0, w = 0;
  std::vector<float> data;
  std::vector<uint8_t> valid;
  float cap = 0.0f;

  int64_t n_valid() const {
    int64_t n = 0;
    for (uint8_t v : valid) n += v;
    return n;
  }
};

struct Sample {
  int h = 0, w = 0;
  std::vector<float> image;  // [3,h,w], values in [0,1]
  DepthMap depth;
  std::string source_id;
};

// Deterministic synthetic scene: 3-6 tilted rectangles/ellipses over a ground
// plane, depth clamped to [d_min+0.1, d_max-0.1], Lambertian-shaded image with
// per-object albedo and N(0, 0.01) pixel noise. All depth pixels are valid.
Sample synth_scene(uint64_t seed, int h, int w, double d_min, double d_max);

// Identical crop offsets applied to image and depth; optional horizontal flip
// with probability 0.5 when enabled.
Sample random_crop_pair(const Sample& s, int crop_h, int crop_w, Rng& rng, bool hflip_enabled);

// 16-bit PNG depth conventions. KITTI: meters = raw/256, raw 0 invalid,
// cap 80 m. The generic loader takes the scale divisor and cap explicitly.
DepthMap load_depth_png16(const std::string& path, double scale, double cap);
DepthMap load_kitti_depth_png(const std::string& path);
void write_depth_png16(const std::string& path, const DepthMap& dm, double scale);
void write_kitti_depth_png(const std::string& path, const DepthMap& dm);

// Newline-delimited "image_path<TAB>depth_path" pairs.
std::vector<std::pair<std::string, std::string>> load_manifest(const std::string& path);

// One aligned image/depth pair from disk (8-bit RGB PNG + 16-bit depth PNG).
Sample load_sample(const std::string& image_path, const std::string& depth_path,
                   double depth_scale, double cap);

// n scenes with per-index seeds derived from the base seed; the same
// (seed, n, size, range) always yields the same dataset.
std::vector<Sample> make_synthetic_dataset(int n, int h, int w, double d_min, double d_max,
                                           uint64_t seed);

struct Batch {
  Tensor<float> images;        // [B,3,H,W]
  Tensor<float> depth;         // [B,H,W]
  std::vector<uint8_t> valid;  // B*H*W
  std::vector<std::string> source_ids;
  float cap = 0.0f;
};

Batch make_batch(std::span<const Sample> samples);
std::vector<Sample> unbatch(const Batch& batch);

}  // namespace df
