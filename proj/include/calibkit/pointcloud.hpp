#pragma once

#include <cstddef>
#include <span>
#include <unordered_map>
#include <vector>

#include "calibkit/geometry.hpp"

namespace calibkit {

/// Raw LiDAR return in the sensor frame.
struct RawPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;

  Vec3 position() const { return {x, y, z}; }
};

/// Class id for points that belong to no cluster of sufficient size.
constexpr int kNoise = -1;

/// A point with position, unit normal, normalized reflectivity and cluster id.
struct AttributedPoint {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double reflectivity = 0.0;
  int segment = kNoise;
  bool normal_reliable = true;
};

struct AttributedCloud {
  std::vector<AttributedPoint> points;
  int class_count = 0;
};

struct NormalEstimate {
  Vec3 normal = Vec3::UnitZ();
  bool reliable = true;
};

/// Preprocessing knobs. Defaults: 10 neighbors for PCA normals, 0.5 m
/// connectivity radius, clusters below 5 points are noise.
struct PreprocessParams {
  int knn = 10;
  double cluster_radius = 0.5;
  int min_cluster_points = 5;
  unsigned threads = 1;
};

/// Uniform-grid spatial hash over a fixed point set. Exact radius and
/// k-nearest queries; results are ordered by (distance, index).
class SpatialGrid {
 public:
  SpatialGrid(std::span<const Vec3> points, double cell_size);

  /// Indices of all points within distance <= radius of q.
  std::vector<std::size_t> within(const Vec3& q, double radius) const;
  /// The k points closest to q (including q itself when it is in the set).
  std::vector<std::size_t> nearest(const Vec3& q, std::size_t k) const;

  std::size_t size() const { return points_.size(); }

 private:
  struct CellKey {
    long x, y, z;
    bool operator==(const CellKey&) const = default;
  };
  struct CellHash {
    std::size_t operator()(const CellKey& k) const;
  };

  CellKey key_of(const Vec3& p) const;
  const std::vector<std::size_t>* cell(const CellKey& k) const;

  std::vector<Vec3> points_;
  double cell_;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> cells_;
  CellKey lo_{0, 0, 0}, hi_{0, 0, 0};
};

/// PCA normal per point from its k nearest neighbors (query point included),
/// oriented so that n . (-p) >= 0. Coincident neighborhoods yield (0,0,1)
/// flagged unreliable. Throws ParseError if k < 3 or the cloud has fewer
/// than k points.
/// cell_size sets the spatial hash resolution only; results do not depend on it.
std::vector<NormalEstimate> estimate_normals(std::span<const RawPoint> cloud, int k,
                                             double cell_size = 0.5, unsigned threads = 1);

/// Min to 99th-percentile rescaling of intensities into [0, 1]. The
/// percentile is the sorted value at rank ceil(0.99 n) - 1. When that
/// equals the minimum, points at the minimum map to 0 and the rest to 1.
std::vector<double> normalize_intensity(std::span<const RawPoint> cloud);

/// Euclidean connected components with link distance <= radius. Components
/// smaller than min_pts get kNoise; the rest are numbered 0.. in order of
/// their lowest point index.
std::vector<int> segment_clusters(std::span<const RawPoint> cloud, double radius, int min_pts);

AttributedCloud attribute(std::span<const RawPoint> cloud, const PreprocessParams& params = {});

/// Number of distinct non-noise labels (labels must be dense from 0).
int count_classes(std::span<const int> labels);

}  // namespace calibkit
