#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "calibkit/geometry.hpp"

namespace calibkit {

/// Sparse depth image. A stored value of 0 marks an invalid pixel.
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  std::optional<double> at(int u, int v) const;
  /// depth must be positive and finite.
  void set(int u, int v, double depth);
  std::size_t valid_count() const;
  std::span<const double> raw() const { return cells_; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> cells_;
};

/// Dense feature tensor; the channels of a pixel are contiguous:
/// values[(y * width + x) * channels + c].
struct FeatureMap {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(int w, int h, int c, double fill = 0.0);
  double& at(int x, int y, int c) { return values[index(x, y, c)]; }
  double at(int x, int y, int c) const { return values[index(x, y, c)]; }

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
};

/// Correlation costs over a (2r+1)^2 displacement window around each pixel.
struct CostVolume {
  int width = 0;
  int height = 0;
  int radius = 0;
  std::vector<double> costs;

  int window() const { return 2 * radius + 1; }
  /// Cost between pixel (x, y) of the first map and (x + dx, y + dy) of the second.
  double at(int x, int y, int dx, int dy) const {
    const std::size_t w = static_cast<std::size_t>(window());
    return costs[((static_cast<std::size_t>(y) * width + x) * w + (dy + radius)) * w + (dx + radius)];
  }
};

struct LossWeights {
  double lambda_t = 1.0;
  double lambda_p = 1.0;
};

/// Z-buffered nearest-pixel rasterization of a cloud through (k, h).
DepthMap render_depth_map(std::span<const Vec3> cloud, const Intrinsics& k, const Extrinsic& h,
                          int width, int height);

/// Mean squared depth difference over pixels valid in both maps.
/// Throws ParseError on size mismatch, DomainError if no pixel overlaps.
double photometric_loss(const DepthMap& pred, const DepthMap& gt);

/// Mean Euclidean distance between index-aligned clouds.
double cloud_distance_loss(std::span<const Vec3> pred, std::span<const Vec3> gt);

/// Sum over d of 0.5 d^2 for |d| < beta, |d| - 0.5 beta otherwise.
double smooth_l1(std::span<const double> diff, double beta = 1.0);

/// Smooth-L1 (beta = 1) over quaternion components after both inputs are
/// canonicalized. Throws DomainError for non-unit input.
double smooth_l1_quat_loss(const Quaternion& pred, const Quaternion& gt);

double combined_loss(double loss_t, double loss_p, const LossWeights& w);

/// cv(p1, p2) = (1/N) f_rgb(p1) . f_lidar(p2) for every p2 in the window of p1;
/// displacements leaving the image cost 0.
CostVolume cost_volume(const FeatureMap& rgb, const FeatureMap& lidar, int radius = 2);

/// 16-bit grayscale PNG, value = round(depth * 256), 0 for invalid pixels.
void write_depth_png(const std::string& path, const DepthMap& map);
DepthMap read_depth_png(const std::string& path);

}  // namespace calibkit
