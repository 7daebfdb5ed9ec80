#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "depthformer/tensor.hpp"

namespace df {

struct ImageU16 {
  int h = 0, w = 0;
  std::vector<uint16_t> pix;  // row-major
};

struct ImageU8 {
  int h = 0, w = 0;
  int channels = 0;  // 1 or 3, interleaved
  std::vector<uint8_t> pix;
};

// Strict 16-bit single-channel PNG; anything else is a DataError. Values
// round-trip bit-exactly through write_png16_gray.
ImageU16 read_png16_gray(const std::string& path);
void write_png16_gray(const std::string& path, const ImageU16& img);

// Any PNG, converted to 8-bit RGB.
ImageU8 read_png8_rgb(const std::string& path);
void write_png8_rgb(const std::string& path, const ImageU8& img);

// Grayscale PFM ("Pf"), little-endian (negative scale), rows bottom-up.
void write_pfm(const std::string& path, int h, int w, const float* data);
std::vector<float> read_pfm(const std::string& path, int* h, int* w);

// [3,h,w] float tensor in [0,1]; grayscale inputs are replicated.
Tensor<float> image_to_tensor(const ImageU8& img);

// Edge-replicate pad of a [B,3,H,W] tensor up to the next multiple on each
// spatial axis.
Tensor<float> pad_image_to_multiple(const Tensor<float>& image, int multiple);

// 8-bit preview of a depth plane, dark-to-warm ramp over [d_min, d_max].
ImageU8 colorize_depth(std::span<const float> depth, int h, int w, double d_min, double d_max);

}  // namespace df
