#include "calibkit/fusion_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "calibkit/errors.hpp"
#include "calibkit/image.hpp"

namespace calibkit {

DepthMap::DepthMap(int width, int height) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw ParseError("DepthMap: dimensions must be positive");
  cells_.assign(static_cast<std::size_t>(width) * height, 0.0);
}

std::optional<double> DepthMap::at(int u, int v) const {
  const double d = cells_[static_cast<std::size_t>(v) * width_ + u];
  if (d > 0.0) return d;
  return std::nullopt;
}

void DepthMap::set(int u, int v, double depth) {
  if (!(depth > 0.0) || !std::isfinite(depth)) throw DomainError("DepthMap: depth must be positive");
  cells_[static_cast<std::size_t>(v) * width_ + u] = depth;
}

std::size_t DepthMap::valid_count() const {
  return static_cast<std::size_t>(std::count_if(cells_.begin(), cells_.end(), [](double d) { return d > 0.0; }));
}

FeatureMap::FeatureMap(int w, int h, int c, double fill)
    : width(w), height(h), channels(c), values(static_cast<std::size_t>(w) * h * c, fill) {}

DepthMap render_depth_map(std::span<const Vec3> cloud, const Intrinsics& k, const Extrinsic& h,
                          int width, int height) {
  DepthMap map(width, height);
  const ImageSize size{width, height};
  for (const Vec3& p : cloud) {
    const auto px = project(p, k, h);
    if (!px || !std::isfinite(px->u) || !std::isfinite(px->v)) continue;
    const double ru = std::round(px->u), rv = std::round(px->v);
    if (ru < 0 || rv < 0 || ru >= width || rv >= height) continue;
    const int u = static_cast<int>(ru), v = static_cast<int>(rv);
    if (!size.contains(u, v)) continue;
    const auto cur = map.at(u, v);
    if (!cur || px->depth < *cur) map.set(u, v, px->depth);
  }
  return map;
}

double photometric_loss(const DepthMap& pred, const DepthMap& gt) {
  if (pred.width() != gt.width() || pred.height() != gt.height()) {
    throw ParseError("photometric_loss: depth maps differ in size");
  }
  const auto a = pred.raw();
  const auto b = gt.raw();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > 0.0 && b[i] > 0.0) {
      const double d = a[i] - b[i];
      sum += d * d;
      ++n;
    }
  }
  if (n == 0) throw DomainError("photometric_loss: no pixel is valid in both maps");
  return sum / static_cast<double>(n);
}

double cloud_distance_loss(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  if (pred.size() != gt.size()) throw ParseError("cloud_distance_loss: clouds differ in length");
  if (pred.empty()) throw DomainError("cloud_distance_loss: empty clouds");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += (pred[i] - gt[i]).norm();
  return sum / static_cast<double>(pred.size());
}

double smooth_l1(std::span<const double> diff, double beta) {
  double sum = 0.0;
  for (double d : diff) {
    const double a = std::abs(d);
    sum += a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
  }
  return sum;
}

double smooth_l1_quat_loss(const Quaternion& pred, const Quaternion& gt) {
  if (std::abs(pred.norm() - 1.0) > 1e-6 || std::abs(gt.norm() - 1.0) > 1e-6) {
    throw DomainError("smooth_l1_quat_loss: quaternions must be unit length");
  }
  const Quaternion a = pred.canonical(), b = gt.canonical();
  const double diff[4] = {a.w - b.w, a.x - b.x, a.y - b.y, a.z - b.z};
  return smooth_l1(diff);
}

double combined_loss(double loss_t, double loss_p, const LossWeights& w) {
  return w.lambda_t * loss_t + w.lambda_p * loss_p;
}

CostVolume cost_volume(const FeatureMap& rgb, const FeatureMap& lidar, int radius) {
  if (rgb.width != lidar.width || rgb.height != lidar.height || rgb.channels != lidar.channels) {
    throw ParseError("cost_volume: feature maps differ in shape");
  }
  if (radius < 0) throw ParseError("cost_volume: radius must be >= 0");
  if (rgb.channels <= 0) throw ParseError("cost_volume: feature maps need at least one channel");
  CostVolume cv;
  cv.width = rgb.width;
  cv.height = rgb.height;
  cv.radius = radius;
  const int win = cv.window();
  cv.costs.assign(static_cast<std::size_t>(rgb.width) * rgb.height * win * win, 0.0);
  const double inv_n = 1.0 / rgb.channels;
  const auto n = static_cast<std::size_t>(rgb.channels);

  std::size_t out = 0;
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x) {
      const double* a = &rgb.values[(static_cast<std::size_t>(y) * rgb.width + x) * n];
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx, ++out) {
          const int x2 = x + dx, y2 = y + dy;
          if (x2 < 0 || y2 < 0 || x2 >= rgb.width || y2 >= rgb.height) continue;
          const double* b = &lidar.values[(static_cast<std::size_t>(y2) * rgb.width + x2) * n];
          double dot = 0.0;
          for (std::size_t c = 0; c < n; ++c) dot += a[c] * b[c];
          cv.costs[out] = inv_n * dot;
        }
    }
  return cv;
}

void write_depth_png(const std::string& path, const DepthMap& map) {
  Gray16 img(map.width(), map.height(), 1);
  for (int v = 0; v < map.height(); ++v)
    for (int u = 0; u < map.width(); ++u) {
      const auto d = map.at(u, v);
      if (!d) continue;
      const double scaled = std::round(*d * 256.0);
      img.at(u, v) = static_cast<std::uint16_t>(std::clamp(scaled, 1.0, 65535.0));
    }
  write_png(path, img);
}

DepthMap read_depth_png(const std::string& path) {
  const Gray16 img = read_png_gray16(path);
  DepthMap map(img.width, img.height);
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u)
      if (img.at(u, v) != 0) map.set(u, v, img.at(u, v) / 256.0);
  return map;
}

}  // namespace calibkit
