#include "calibkit/pointcloud.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "calibkit/errors.hpp"
#include "calibkit/parallel.hpp"

namespace calibkit {

std::size_t SpatialGrid::CellHash::operator()(const CellKey& k) const {
  std::size_t h = static_cast<std::size_t>(k.x) * 73856093u;
  h ^= static_cast<std::size_t>(k.y) * 19349663u;
  h ^= static_cast<std::size_t>(k.z) * 83492791u;
  return h;
}

SpatialGrid::SpatialGrid(std::span<const Vec3> points, double cell_size)
    : points_(points.begin(), points.end()), cell_(cell_size) {
  if (!(cell_size > 0.0)) throw ParseError("SpatialGrid: cell size must be positive");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const CellKey k = key_of(points_[i]);
    if (i == 0) {
      lo_ = hi_ = k;
    } else {
      lo_ = {std::min(lo_.x, k.x), std::min(lo_.y, k.y), std::min(lo_.z, k.z)};
      hi_ = {std::max(hi_.x, k.x), std::max(hi_.y, k.y), std::max(hi_.z, k.z)};
    }
    cells_[k].push_back(i);
  }
}

SpatialGrid::CellKey SpatialGrid::key_of(const Vec3& p) const {
  return {static_cast<long>(std::floor(p.x() / cell_)), static_cast<long>(std::floor(p.y() / cell_)),
          static_cast<long>(std::floor(p.z() / cell_))};
}

const std::vector<std::size_t>* SpatialGrid::cell(const CellKey& k) const {
  const auto it = cells_.find(k);
  return it == cells_.end() ? nullptr : &it->second;
}

std::vector<std::size_t> SpatialGrid::within(const Vec3& q, double radius) const {
  std::vector<std::size_t> out;
  if (points_.empty()) return out;
  const long reach = static_cast<long>(std::ceil(radius / cell_));
  const CellKey c = key_of(q);
  const double r2 = radius * radius;
  for (long x = std::max(c.x - reach, lo_.x); x <= std::min(c.x + reach, hi_.x); ++x)
    for (long y = std::max(c.y - reach, lo_.y); y <= std::min(c.y + reach, hi_.y); ++y)
      for (long z = std::max(c.z - reach, lo_.z); z <= std::min(c.z + reach, hi_.z); ++z) {
        const auto* bucket = cell({x, y, z});
        if (!bucket) continue;
        for (std::size_t i : *bucket)
          if ((points_[i] - q).squaredNorm() <= r2) out.push_back(i);
      }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> SpatialGrid::nearest(const Vec3& q, std::size_t k) const {
  k = std::min(k, points_.size());
  if (k == 0) return {};
  const CellKey c = key_of(q);
  const long max_ring = std::max({c.x - lo_.x, hi_.x - c.x, c.y - lo_.y, hi_.y - c.y,
                                  c.z - lo_.z, hi_.z - c.z, 0L});
  std::vector<std::pair<double, std::size_t>> found;
  for (long ring = 0; ring <= max_ring; ++ring) {
    // Visit cells whose Chebyshev distance from c is exactly `ring`.
    for (long x = c.x - ring; x <= c.x + ring; ++x)
      for (long y = c.y - ring; y <= c.y + ring; ++y) {
        const bool on_face = std::abs(x - c.x) == ring || std::abs(y - c.y) == ring;
        const long step = on_face ? 1 : 2 * ring;
        for (long z = c.z - ring; z <= c.z + ring; z += std::max(step, 1L)) {
          const auto* bucket = cell({x, y, z});
          if (!bucket) continue;
          for (std::size_t i : *bucket) found.emplace_back((points_[i] - q).squaredNorm(), i);
        }
      }
    if (found.size() >= k) {
      std::nth_element(found.begin(), found.begin() + static_cast<long>(k - 1), found.end());
      // Everything closer than ring * cell has been visited.
      const double bound = static_cast<double>(ring) * cell_;
      if (found[k - 1].first <= bound * bound) break;
    }
  }
  std::sort(found.begin(), found.end());
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(found[i].second);
  return out;
}

std::vector<NormalEstimate> estimate_normals(std::span<const RawPoint> cloud, int k,
                                             double cell_size, unsigned threads) {
  if (k < 3) throw ParseError("estimate_normals: k must be >= 3");
  if (cloud.size() < static_cast<std::size_t>(k)) {
    throw ParseError("estimate_normals: cloud has fewer points than k");
  }
  std::vector<Vec3> pts;
  pts.reserve(cloud.size());
  for (const auto& p : cloud) pts.push_back(p.position());
  const SpatialGrid grid(pts, cell_size);

  std::vector<NormalEstimate> normals(cloud.size());
  parallel_for(cloud.size(), threads, [&](std::size_t i) {
    const auto nbrs = grid.nearest(pts[i], static_cast<std::size_t>(k));
    Vec3 mean = Vec3::Zero();
    for (std::size_t j : nbrs) mean += pts[j];
    mean /= static_cast<double>(nbrs.size());
    Mat3 cov = Mat3::Zero();
    for (std::size_t j : nbrs) {
      const Vec3 d = pts[j] - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(nbrs.size());
    if (cov.trace() <= 1e-24 * (1.0 + mean.squaredNorm())) {
      normals[i] = {Vec3::UnitZ(), false};
      return;
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
    Vec3 n = solver.eigenvectors().col(0).normalized();
    if (n.dot(-pts[i]) < 0.0) n = -n;
    normals[i] = {n, true};
  });
  return normals;
}

std::vector<double> normalize_intensity(std::span<const RawPoint> cloud) {
  if (cloud.empty()) return {};
  std::vector<double> sorted;
  sorted.reserve(cloud.size());
  for (const auto& p : cloud) sorted.push_back(p.intensity);
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(n))) - 1;
  const double lo = sorted.front();
  const double p99 = sorted[std::min(rank, n - 1)];
  const double range = p99 - lo;

  std::vector<double> r;
  r.reserve(n);
  for (const auto& p : cloud) {
    if (range > 0.0) {
      r.push_back(std::clamp((p.intensity - lo) / range, 0.0, 1.0));
    } else {
      r.push_back(p.intensity > lo ? 1.0 : 0.0);
    }
  }
  return r;
}

namespace {

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }
};

}  // namespace

std::vector<int> segment_clusters(std::span<const RawPoint> cloud, double radius, int min_pts) {
  if (!(radius > 0.0)) throw ParseError("segment_clusters: radius must be positive");
  if (min_pts < 1) throw ParseError("segment_clusters: min_pts must be >= 1");
  std::vector<Vec3> pts;
  pts.reserve(cloud.size());
  for (const auto& p : cloud) pts.push_back(p.position());
  const SpatialGrid grid(pts, radius);

  DisjointSets sets(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j : grid.within(pts[i], radius))
      if (j > i) sets.unite(i, j);

  std::vector<std::size_t> size(pts.size(), 0);
  for (std::size_t i = 0; i < pts.size(); ++i) ++size[sets.find(i)];

  std::vector<int> label_of_root(pts.size(), kNoise);
  std::vector<bool> seen(pts.size(), false);
  std::vector<int> labels(pts.size(), kNoise);
  int next = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const std::size_t root = sets.find(i);
    if (!seen[root]) {
      seen[root] = true;
      if (size[root] >= static_cast<std::size_t>(min_pts)) label_of_root[root] = next++;
    }
    labels[i] = label_of_root[root];
  }
  return labels;
}

int count_classes(std::span<const int> labels) {
  int top = -1;
  for (int l : labels) top = std::max(top, l);
  return top + 1;
}

AttributedCloud attribute(std::span<const RawPoint> cloud, const PreprocessParams& params) {
  const auto normals = estimate_normals(cloud, params.knn, params.cluster_radius, params.threads);
  const auto reflect = normalize_intensity(cloud);
  const auto labels = segment_clusters(cloud, params.cluster_radius, params.min_cluster_points);

  AttributedCloud out;
  out.points.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    out.points.push_back(
        {cloud[i].position(), normals[i].normal, reflect[i], labels[i], normals[i].reliable});
  }
  out.class_count = count_classes(labels);
  return out;
}

}  // namespace calibkit
