#include "depthformer/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "depthformer/error.hpp"

namespace df {

namespace {

struct File {
  std::FILE* f = nullptr;
  ~File() {
    if (f) std::fclose(f);
  }
};

struct PngRead {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngRead() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct PngWrite {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWrite() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  (void)png;
  throw DataError(std::string("png: ") + msg);
}

void png_warn_fn(png_structp, png_const_charp) {}

}  // namespace

ImageU16 read_png16_gray(const std::string& path) {
  File file;
  file.f = std::fopen(path.c_str(), "rb");
  if (!file.f) throw DataError("cannot open png: " + path);

  PngRead ctx;
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warn_fn);
  if (!ctx.png) throw DataError("png_create_read_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw DataError("png_create_info_struct failed");

  png_init_io(ctx.png, file.f);
  png_read_info(ctx.png, ctx.info);

  const png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
  const png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
  const int bit_depth = png_get_bit_depth(ctx.png, ctx.info);
  const int color_type = png_get_color_type(ctx.png, ctx.info);
  if (bit_depth != 16 || color_type != PNG_COLOR_TYPE_GRAY)
    throw DataError(path + ": expected 16-bit single-channel PNG, got " +
                    std::to_string(bit_depth) + "-bit color type " + std::to_string(color_type));

  png_set_swap(ctx.png);  // png stores big-endian
  png_read_update_info(ctx.png, ctx.info);

  ImageU16 img;
  img.h = static_cast<int>(h);
  img.w = static_cast<int>(w);
  img.pix.resize(static_cast<size_t>(h) * w);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = reinterpret_cast<png_bytep>(img.pix.data() + static_cast<size_t>(y) * w);
  png_read_image(ctx.png, rows.data());
  png_read_end(ctx.png, nullptr);
  return img;
}

void write_png16_gray(const std::string& path, const ImageU16& img) {
  File file;
  file.f = std::fopen(path.c_str(), "wb");
  if (!file.f) throw DataError("cannot open png for writing: " + path);

  PngWrite ctx;
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warn_fn);
  if (!ctx.png) throw DataError("png_create_write_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw DataError("png_create_info_struct failed");

  png_init_io(ctx.png, file.f);
  png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(img.w),
               static_cast<png_uint_32>(img.h), 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);
  png_set_swap(ctx.png);

  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int y = 0; y < img.h; ++y)
    rows[static_cast<size_t>(y)] = reinterpret_cast<png_bytep>(
        const_cast<uint16_t*>(img.pix.data() + static_cast<size_t>(y) * img.w));
  png_write_image(ctx.png, rows.data());
  png_write_end(ctx.png, nullptr);
}

ImageU8 read_png8_rgb(const std::string& path) {
  File file;
  file.f = std::fopen(path.c_str(), "rb");
  if (!file.f) throw DataError("cannot open png: " + path);

  PngRead ctx;
  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warn_fn);
  if (!ctx.png) throw DataError("png_create_read_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw DataError("png_create_info_struct failed");

  png_init_io(ctx.png, file.f);
  png_read_info(ctx.png, ctx.info);

  // Normalize anything to 8-bit RGB.
  png_set_expand(ctx.png);
  if (png_get_bit_depth(ctx.png, ctx.info) == 16) png_set_strip_16(ctx.png);
  png_set_strip_alpha(ctx.png);
  const int color_type = png_get_color_type(ctx.png, ctx.info);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(ctx.png);
  png_read_update_info(ctx.png, ctx.info);

  const png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
  const png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
  ImageU8 img;
  img.h = static_cast<int>(h);
  img.w = static_cast<int>(w);
  img.channels = 3;
  img.pix.resize(static_cast<size_t>(h) * w * 3);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = img.pix.data() + static_cast<size_t>(y) * w * 3;
  png_read_image(ctx.png, rows.data());
  png_read_end(ctx.png, nullptr);
  return img;
}

void write_png8_rgb(const std::string& path, const ImageU8& img) {
  if (img.channels != 3) throw DataError("write_png8_rgb: expected 3 channels");
  File file;
  file.f = std::fopen(path.c_str(), "wb");
  if (!file.f) throw DataError("cannot open png for writing: " + path);

  PngWrite ctx;
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warn_fn);
  if (!ctx.png) throw DataError("png_create_write_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw DataError("png_create_info_struct failed");

  png_init_io(ctx.png, file.f);
  png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(img.w),
               static_cast<png_uint_32>(img.h), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);

  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int y = 0; y < img.h; ++y)
    rows[static_cast<size_t>(y)] =
        const_cast<uint8_t*>(img.pix.data() + static_cast<size_t>(y) * img.w * 3);
  png_write_image(ctx.png, rows.data());
  png_write_end(ctx.png, nullptr);
}

void write_pfm(const std::string& path, int h, int w, const float* data) {
  File file;
  file.f = std::fopen(path.c_str(), "wb");
  if (!file.f) throw DataError("cannot open pfm for writing: " + path);
  // Negative scale marks little-endian data; rows are stored bottom-up.
  std::fprintf(file.f, "Pf\n%d %d\n-1.0\n", w, h);
  for (int y = h - 1; y >= 0; --y)
    if (std::fwrite(data + static_cast<size_t>(y) * w, sizeof(float), static_cast<size_t>(w),
                    file.f) != static_cast<size_t>(w))
      throw DataError("pfm write failed");
}

std::vector<float> read_pfm(const std::string& path, int* out_h, int* out_w) {
  File file;
  file.f = std::fopen(path.c_str(), "rb");
  if (!file.f) throw DataError("cannot open pfm: " + path);
  char tag[3] = {};
  if (std::fscanf(file.f, "%2s", tag) != 1 || std::strcmp(tag, "Pf") != 0)
    throw DataError(path + ": not a grayscale PFM");
  int w = 0, h = 0;
  double scale = 0.0;
  if (std::fscanf(file.f, "%d %d %lf", &w, &h, &scale) != 3 || w <= 0 || h <= 0)
    throw DataError(path + ": bad PFM header");
  std::fgetc(file.f);  // single whitespace before the raster
  if (scale >= 0) throw DataError(path + ": big-endian PFM not supported");
  std::vector<float> data(static_cast<size_t>(h) * w);
  for (int y = h - 1; y >= 0; --y)
    if (std::fread(data.data() + static_cast<size_t>(y) * w, sizeof(float),
                   static_cast<size_t>(w), file.f) != static_cast<size_t>(w))
      throw DataError(path + ": truncated PFM");
  *out_h = h;
  *out_w = w;
  return data;
}

Tensor<float> pad_image_to_multiple(const Tensor<float>& image, int multiple) {
  if (image.ndim() != 4) throw ShapeError("pad_image_to_multiple: expected [B,C,H,W]");
  const int64_t B = image.shape[0], C = image.shape[1], H = image.shape[2], W = image.shape[3];
  const int64_t m = multiple;
  const int64_t ph = (H + m - 1) / m * m;
  const int64_t pw = (W + m - 1) / m * m;
  if (ph == H && pw == W) return image;
  Tensor<float> out({B, C, ph, pw});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < ph; ++y) {
        const int64_t sy = std::min(y, H - 1);
        const float* src = image.ptr() + ((b * C + c) * H + sy) * W;
        float* dst = out.ptr() + ((b * C + c) * ph + y) * pw;
        std::memcpy(dst, src, sizeof(float) * static_cast<size_t>(W));
        for (int64_t x = W; x < pw; ++x) dst[x] = src[W - 1];
      }
  return out;
}

ImageU8 colorize_depth(std::span<const float> depth, int h, int w, double d_min, double d_max) {
  if (static_cast<int64_t>(depth.size()) != static_cast<int64_t>(h) * w)
    throw ShapeError("colorize_depth: size mismatch");
  ImageU8 img;
  img.h = h;
  img.w = w;
  img.channels = 3;
  img.pix.resize(depth.size() * 3);
  const double span = std::max(1e-12, d_max - d_min);
  for (size_t i = 0; i < depth.size(); ++i) {
    double t = (static_cast<double>(depth[i]) - d_min) / span;
    t = std::clamp(t, 0.0, 1.0);
    // Simple blue->green->red ramp, near is warm.
    const double u = 1.0 - t;
    const double r = std::clamp(1.5 - std::abs(4.0 * u - 3.0), 0.0, 1.0);
    const double g = std::clamp(1.5 - std::abs(4.0 * u - 2.0), 0.0, 1.0);
    const double b = std::clamp(1.5 - std::abs(4.0 * u - 1.0), 0.0, 1.0);
    img.pix[i * 3 + 0] = static_cast<uint8_t>(std::lround(255.0 * r));
    img.pix[i * 3 + 1] = static_cast<uint8_t>(std::lround(255.0 * g));
    img.pix[i * 3 + 2] = static_cast<uint8_t>(std::lround(255.0 * b));
  }
  return img;
}

Tensor<float> image_to_tensor(const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw DataError("image_to_tensor: expected 1 or 3 channels");
  Tensor<float> t({1, 3, img.h, img.w});
  const int64_t hw = static_cast<int64_t>(img.h) * img.w;
  for (int64_t i = 0; i < hw; ++i) {
    for (int c = 0; c < 3; ++c) {
      const int src_c = img.channels == 3 ? c : 0;
      t.data[static_cast<size_t>(c * hw + i)] =
          static_cast<float>(img.pix[static_cast<size_t>(i * img.channels + src_c)]) / 255.0f;
    }
  }
  return t;
}

}  // namespace df
