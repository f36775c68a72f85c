#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "calibkit/geometry.hpp"
#include "calibkit/pointcloud.hpp"

namespace calibkit {

/// Binary image-sized membership matrix.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // 0 or 1, row-major

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}
  bool test(int u, int v) const { return bits[static_cast<std::size_t>(v) * width + u] != 0; }
  void set(int u, int v, bool on = true) {
    bits[static_cast<std::size_t>(v) * width + u] = on ? 1 : 0;
  }
  std::size_t area() const;
};

struct Scene {
  Intrinsics intrinsics;
  ImageSize image;
  std::vector<Mask> masks;
  AttributedCloud cloud;
  std::optional<Extrinsic> gt_extrinsic;
};

struct ConsistencyWeights {
  double reflect = 1.0 / 3.0;
  double normal = 1.0 / 3.0;
  double segment = 1.0 / 3.0;

  /// Non-negative and summing to 1 within 1e-9, else ParseError.
  void validate() const;
};

/// Search lattice. Angles in degrees, translations in meters.
struct SearchConfig {
  double coarse_rot_step = 5.0;
  double coarse_rot_range = 25.0;
  double fine_rot_step = 0.5;
  double fine_trans_step = 0.05;
  double fine_rot_range = 5.0;
  double fine_trans_range = 0.3;
  int min_points_per_mask = 20;
  unsigned threads = 0;  // 0 = hardware concurrency

  /// Steps > 0 and every range >= its step, else ParseError.
  void validate() const;
};

/// Offsets applied to a base extrinsic in the camera frame: the rotation
/// Rz*Rx*Ry (radians) turns the scene about `pivot`, then the translation
/// (meters) is added. With the default pivot (camera center) the rotation is
/// simply pre-multiplied onto the base rotation.
struct PoseOffset {
  EulerAngles rotation;
  Vec3 translation = Vec3::Zero();
};

Extrinsic apply_offset(const Extrinsic& base, const PoseOffset& offset,
                       const Vec3& pivot = Vec3::Zero());

/// Median camera-frame depth of the points that land on the image under h
/// (0 when none do).
double median_view_depth(const Scene& scene, const Extrinsic& h);

struct MaskScore {
  std::size_t points = 0;
  /// Empty when the mask was skipped (too few points or no scoreable sub-score).
  std::optional<double> score;
  std::optional<double> reflect;
  std::optional<double> normal;
  std::optional<double> segment;
};

struct ConsistencyBreakdown {
  double total = 0.0;
  std::vector<MaskScore> masks;
};

struct CalibrationResult {
  Extrinsic extrinsic;
  double score = 0.0;
  std::size_t candidates_evaluated = 0;
  std::vector<MaskScore> per_mask_scores;
};

/// Points whose rounded projection lands on a set pixel of the mask.
std::vector<AttributedPoint> points_in_mask(const Mask& mask, const AttributedCloud& cloud,
                                            const Intrinsics& k, const Extrinsic& h);

/// 1 / (1 + population stddev of reflectivity). Empty input yields nullopt.
std::optional<double> reflectivity_consistency(std::span<const AttributedPoint> points);

/// Mean pairwise dot product of the reliable normals, via
/// (|sum n|^2 - m) / (m (m - 1)). Fewer than two reliable normals yields nullopt.
std::optional<double> normal_consistency(std::span<const AttributedPoint> points);

/// Sum over classes of (m_c / m)^2 across non-noise points. All-noise input
/// yields nullopt.
std::optional<double> segmentation_consistency(std::span<const AttributedPoint> points);

/// Point-count weighted mean of the per-mask weighted sub-scores. Masks with
/// fewer than cfg.min_points_per_mask points are skipped. When a sub-score is
/// unavailable for a mask, the remaining weights are renormalized.
/// Throws DomainError when no mask is scoreable.
ConsistencyBreakdown consistency_breakdown(const Scene& scene, const Extrinsic& h,
                                           const ConsistencyWeights& w, const SearchConfig& cfg);
double total_consistency(const Scene& scene, const Extrinsic& h, const ConsistencyWeights& w,
                         const SearchConfig& cfg);

struct SearchOutcome {
  Extrinsic extrinsic;
  double score = 0.0;
  std::size_t candidates_evaluated = 0;
};

/// Exhaustive rotation grid around h_init (translation fixed). Ties go to the
/// smallest rotation offset, then to the earliest grid entry.
SearchOutcome coarse_search(const Scene& scene, const Extrinsic& h_init,
                            const ConsistencyWeights& w, const SearchConfig& cfg);

/// Coordinate descent over (theta, omega, psi, tx, ty, tz) on the fine
/// lattice around h_coarse: each parameter in turn moves to its best lattice
/// value (others fixed) when that strictly improves the score; sweeps repeat
/// until no single-parameter move improves. Rotation offsets pivot at
/// (0, 0, median_view_depth(h_coarse)).
SearchOutcome fine_search(const Scene& scene, const Extrinsic& h_coarse,
                          const ConsistencyWeights& w, const SearchConfig& cfg);

CalibrationResult calibrate(const Scene& scene, const Extrinsic& h_init,
                            const ConsistencyWeights& w = {}, const SearchConfig& cfg = {});

/// Plain-text key=value report.
std::string format_calibration_report(const CalibrationResult& result,
                                      const std::string& extrinsic_path);

}  // namespace calibkit
