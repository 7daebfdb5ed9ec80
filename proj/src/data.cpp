#include "depthformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "depthformer/error.hpp"
#include "depthformer/image_io.hpp"

namespace df {

namespace {

struct SceneObject {
  bool ellipse;
  double cx, cy;
  double ax, ay;  // half extents in pixels
  double cos_t, sin_t;
  double depth0;
  double slope_x, slope_y;  // depth gradient along the rotated axes
  double albedo[3];
};

}  // namespace

Sample synth_scene(uint64_t seed, int h, int w, double d_min, double d_max) {
  if (h <= 0 || w <= 0 || h % 32 != 0 || w % 32 != 0)
    throw ShapeError("synth_scene: h and w must be positive multiples of 32");
  if (!(d_min < d_max)) throw DomainError("synth_scene: d_min < d_max violated");

  Rng rng = Rng::stream(seed, 0x5ce9eull);
  const double span = d_max - d_min;
  const double lo = d_min + 0.1, hi = d_max - 0.1;
  const double scale_px = static_cast<double>(std::min(h, w));

  // Ground plane: near at the bottom row, far at the top, slight lateral tilt.
  const double near_d = d_min + span * (0.05 + 0.15 * rng.uniform());
  const double far_d = d_max - span * (0.05 + 0.15 * rng.uniform());
  const double lateral = (rng.uniform() - 0.5) * 0.1 * span / static_cast<double>(w);
  double ground_albedo[3];
  for (double& a : ground_albedo) a = 0.25 + 0.7 * rng.uniform();

  const int n_objects = 3 + static_cast<int>(rng.uniform_int(4));
  std::vector<SceneObject> objects;
  objects.reserve(static_cast<size_t>(n_objects));
  for (int k = 0; k < n_objects; ++k) {
    SceneObject o;
    o.ellipse = rng.uniform() < 0.5;
    o.cx = w * (0.1 + 0.8 * rng.uniform());
    o.cy = h * (0.15 + 0.7 * rng.uniform());
    o.ax = scale_px * (0.08 + 0.22 * rng.uniform());
    o.ay = scale_px * (0.08 + 0.22 * rng.uniform());
    const double theta = rng.uniform() * 3.14159265358979323846;
    o.cos_t = std::cos(theta);
    o.sin_t = std::sin(theta);
    o.depth0 = d_min + span * (0.1 + 0.75 * rng.uniform());
    o.slope_x = (rng.uniform() - 0.5) * 0.3 * span / scale_px;
    o.slope_y = (rng.uniform() - 0.5) * 0.3 * span / scale_px;
    for (double& a : o.albedo) a = 0.25 + 0.7 * rng.uniform();
    objects.push_back(o);
  }
  double light[3] = {rng.uniform() - 0.5, rng.uniform() - 0.5, 1.0};
  {
    const double n = std::sqrt(light[0] * light[0] + light[1] * light[1] + 1.0);
    for (double& v : light) v /= n;
  }

  Sample s;
  s.h = h;
  s.w = w;
  s.source_id = "synth:" + std::to_string(seed);
  s.depth.h = h;
  s.depth.w = w;
  s.depth.cap = static_cast<float>(d_max);
  s.depth.data.resize(static_cast<size_t>(h) * w);
  s.depth.valid.assign(static_cast<size_t>(h) * w, 1);
  s.image.resize(static_cast<size_t>(3) * h * w);

  std::vector<int> owner(static_cast<size_t>(h) * w, -1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double d = far_d + (near_d - far_d) * (static_cast<double>(y) / (h - 1)) +
                 lateral * (x - 0.5 * w);
      int own = -1;
      for (size_t k = 0; k < objects.size(); ++k) {
        const SceneObject& o = objects[k];
        const double dx = x - o.cx, dy = y - o.cy;
        const double rx = o.cos_t * dx + o.sin_t * dy;
        const double ry = -o.sin_t * dx + o.cos_t * dy;
        const bool inside = o.ellipse
                                ? (rx / o.ax) * (rx / o.ax) + (ry / o.ay) * (ry / o.ay) <= 1.0
                                : std::abs(rx) <= o.ax && std::abs(ry) <= o.ay;
        if (!inside) continue;
        const double od = o.depth0 + o.slope_x * rx + o.slope_y * ry;
        if (od < d) {
          d = od;
          own = static_cast<int>(k);
        }
      }
      s.depth.data[static_cast<size_t>(y) * w + x] =
          static_cast<float>(std::clamp(d, lo, hi));
      owner[static_cast<size_t>(y) * w + x] = own;
    }
  }

  // Lambertian shading of the depth field plus per-pixel noise.
  const double shade_scale = 1.5 * scale_px / span;
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto at = [&](int yy, int xx) {
        yy = std::clamp(yy, 0, h - 1);
        xx = std::clamp(xx, 0, w - 1);
        return static_cast<double>(s.depth.data[static_cast<size_t>(yy) * w + xx]);
      };
      const double ddx = (at(y, x + 1) - at(y, x - 1)) * 0.5 * shade_scale;
      const double ddy = (at(y + 1, x) - at(y - 1, x)) * 0.5 * shade_scale;
      const double inv_n = 1.0 / std::sqrt(ddx * ddx + ddy * ddy + 1.0);
      const double ndotl = (-ddx * light[0] - ddy * light[1] + light[2]) * inv_n;
      const double shade = 0.3 + 0.7 * std::max(0.0, ndotl);
      const int own = owner[static_cast<size_t>(y) * w + x];
      const double* albedo = own < 0 ? ground_albedo : objects[static_cast<size_t>(own)].albedo;
      for (int c = 0; c < 3; ++c) {
        const double v = albedo[c] * shade + 0.01 * rng.normal();
        s.image[static_cast<size_t>(c) * hw + static_cast<size_t>(y) * w + x] =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return s;
}

Sample random_crop_pair(const Sample& s, int crop_h, int crop_w, Rng& rng, bool hflip_enabled) {
  if (crop_h <= 0 || crop_w <= 0 || crop_h > s.h || crop_w > s.w)
    throw ShapeError("random_crop_pair: crop larger than image");
  const int oy = static_cast<int>(rng.uniform_int(s.h - crop_h + 1));
  const int ox = static_cast<int>(rng.uniform_int(s.w - crop_w + 1));
  const bool flip = hflip_enabled && rng.uniform() < 0.5;

  Sample out;
  out.h = crop_h;
  out.w = crop_w;
  out.source_id = s.source_id;
  out.depth.h = crop_h;
  out.depth.w = crop_w;
  out.depth.cap = s.depth.cap;
  out.depth.data.resize(static_cast<size_t>(crop_h) * crop_w);
  out.depth.valid.resize(static_cast<size_t>(crop_h) * crop_w);
  out.image.resize(static_cast<size_t>(3) * crop_h * crop_w);

  const int64_t shw = static_cast<int64_t>(s.h) * s.w;
  const int64_t ohw = static_cast<int64_t>(crop_h) * crop_w;
  for (int y = 0; y < crop_h; ++y) {
    for (int x = 0; x < crop_w; ++x) {
      const int sx = flip ? ox + crop_w - 1 - x : ox + x;
      const size_t src = static_cast<size_t>(oy + y) * s.w + sx;
      const size_t dst = static_cast<size_t>(y) * crop_w + x;
      out.depth.data[dst] = s.depth.data[src];
      out.depth.valid[dst] = s.depth.valid[src];
      for (int c = 0; c < 3; ++c)
        out.image[static_cast<size_t>(c * ohw) + dst] =
            s.image[static_cast<size_t>(c * shw) + src];
    }
  }
  return out;
}

DepthMap load_depth_png16(const std::string& path, double scale, double cap) {
  const ImageU16 img = read_png16_gray(path);
  DepthMap dm;
  dm.h = img.h;
  dm.w = img.w;
  dm.cap = static_cast<float>(cap);
  dm.data.resize(img.pix.size());
  dm.valid.resize(img.pix.size());
  for (size_t i = 0; i < img.pix.size(); ++i) {
    const double d = static_cast<double>(img.pix[i]) / scale;
    const bool ok = img.pix[i] != 0 && d <= cap;
    dm.valid[i] = ok ? 1 : 0;
    dm.data[i] = ok ? static_cast<float>(d) : 0.0f;
  }
  return dm;
}

DepthMap load_kitti_depth_png(const std::string& path) {
  return load_depth_png16(path, 256.0, 80.0);
}

void write_depth_png16(const std::string& path, const DepthMap& dm, double scale) {
  ImageU16 img;
  img.h = dm.h;
  img.w = dm.w;
  img.pix.resize(dm.data.size());
  for (size_t i = 0; i < dm.data.size(); ++i) {
    if (!dm.valid[i]) {
      img.pix[i] = 0;
      continue;
    }
    const double raw = std::round(static_cast<double>(dm.data[i]) * scale);
    img.pix[i] = static_cast<uint16_t>(std::clamp(raw, 0.0, 65535.0));
  }
  write_png16_gray(path, img);
}

void write_kitti_depth_png(const std::string& path, const DepthMap& dm) {
  write_depth_png16(path, dm, 256.0);
}

std::vector<std::pair<std::string, std::string>> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("manifest line " + std::to_string(lineno) + " has no tab separator");
    entries.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return entries;
}

Sample load_sample(const std::string& image_path, const std::string& depth_path,
                   double depth_scale, double cap) {
  const ImageU8 img = read_png8_rgb(image_path);
  DepthMap dm = load_depth_png16(depth_path, depth_scale, cap);
  if (dm.h != img.h || dm.w != img.w)
    throw DataError("image/depth size mismatch: " + image_path + " vs " + depth_path);
  Sample s;
  s.h = img.h;
  s.w = img.w;
  s.source_id = image_path;
  s.depth = std::move(dm);
  const Tensor<float> t = image_to_tensor(img);
  s.image.assign(t.data.begin(), t.data.end());
  return s;
}

std::vector<Sample> make_synthetic_dataset(int n, int h, int w, double d_min, double d_max,
                                           uint64_t seed) {
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    out.push_back(synth_scene(seed + 1000003ull * static_cast<uint64_t>(i), h, w, d_min, d_max));
  return out;
}

Batch make_batch(std::span<const Sample> samples) {
  if (samples.empty()) throw DataError("make_batch: empty sample list");
  const int h = samples[0].h, w = samples[0].w;
  const float cap = samples[0].depth.cap;
  for (const Sample& s : samples)
    if (s.h != h || s.w != w || s.depth.cap != cap)
      throw ShapeError("make_batch: samples disagree on size or cap");

  const int64_t B = static_cast<int64_t>(samples.size());
  const int64_t hw = static_cast<int64_t>(h) * w;
  Batch batch;
  batch.cap = cap;
  batch.images = Tensor<float>({B, 3, h, w});
  batch.depth = Tensor<float>({B, h, w});
  batch.valid.resize(static_cast<size_t>(B * hw));
  for (int64_t b = 0; b < B; ++b) {
    const Sample& s = samples[static_cast<size_t>(b)];
    std::copy(s.image.begin(), s.image.end(), batch.images.data.begin() + b * 3 * hw);
    std::copy(s.depth.data.begin(), s.depth.data.end(), batch.depth.data.begin() + b * hw);
    std::copy(s.depth.valid.begin(), s.depth.valid.end(), batch.valid.begin() + b * hw);
    batch.source_ids.push_back(s.source_id);
  }
  return batch;
}

std::vector<Sample> unbatch(const Batch& batch) {
  const int64_t B = batch.images.shape[0];
  const int h = static_cast<int>(batch.images.shape[2]);
  const int w = static_cast<int>(batch.images.shape[3]);
  const int64_t hw = static_cast<int64_t>(h) * w;
  std::vector<Sample> out;
  for (int64_t b = 0; b < B; ++b) {
    Sample s;
    s.h = h;
    s.w = w;
    s.source_id = b < static_cast<int64_t>(batch.source_ids.size())
                      ? batch.source_ids[static_cast<size_t>(b)]
                      : "";
    s.image.assign(batch.images.data.begin() + b * 3 * hw,
                   batch.images.data.begin() + (b + 1) * 3 * hw);
    s.depth.h = h;
    s.depth.w = w;
    s.depth.cap = batch.cap;
    s.depth.data.assign(batch.depth.data.begin() + b * hw,
                        batch.depth.data.begin() + (b + 1) * hw);
    s.depth.valid.assign(batch.valid.begin() + b * hw, batch.valid.begin() + (b + 1) * hw);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace df
