#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "calibkit/calibrator.hpp"
#include "calibkit/geometry.hpp"
#include "calibkit/image.hpp"
#include "calibkit/pointcloud.hpp"

namespace calibkit {

using Mat34 = Eigen::Matrix<double, 3, 4>;

// ---------------------------------------------------------------------------
// KITTI formats

/// Velodyne scan: little-endian float32 quadruples (x, y, z, reflectance).
/// Throws ParseError when the length is not a multiple of 16 or a coordinate
/// is NaN (the message names the point index).
std::vector<RawPoint> read_velodyne_bin(std::span<const std::byte> bytes);
std::vector<RawPoint> read_velodyne_file(const std::string& path);
/// Inverse of read_velodyne_bin; values are narrowed to float32.
std::vector<std::byte> write_velodyne_bin(std::span<const RawPoint> points);
void write_velodyne_file(const std::string& path, std::span<const RawPoint> points);

/// Odometry-benchmark calib.txt: P0..P3 camera projections and Tr, the
/// LiDAR to camera-0 transform.
struct KittiCalib {
  std::array<Mat34, 4> projection;
  Extrinsic velo_to_cam;

  /// Pinhole intrinsics taken from P_camera.
  Intrinsics intrinsics(int camera) const;
  /// LiDAR to camera-`camera` transform: the projection's baseline term
  /// K^-1 P[:,3] composed onto Tr.
  Extrinsic camera_extrinsic(int camera) const;
};

/// Throws ParseError for a missing key, a wrong value count, or a Tr whose
/// rotation block is further than 1e-3 from orthonormal. Rotation blocks
/// within that tolerance are snapped to the nearest rotation.
KittiCalib read_kitti_calib(const std::string& text);
KittiCalib read_kitti_calib_file(const std::string& path);
std::string format_kitti_calib(const KittiCalib& calib);

// ---------------------------------------------------------------------------
// Masks and overlays

/// One PNG per mask, sorted by filename; pixel > 127 is a member.
/// Throws ParseError on unreadable files or mismatched dimensions.
std::vector<Mask> read_masks(const std::string& directory);
void write_mask_png(const std::string& path, const Mask& mask);

/// Depth colormap: linear in 1/depth over [2, 80] m, red near, blue far.
std::array<std::uint8_t, 3> depth_color(double depth);

/// Copy of `image` with every visible point drawn as one depth-colored
/// pixel (nearest point wins). Returns the number of points drawn.
std::size_t draw_overlay(Rgb8& image, std::span<const Vec3> cloud, const Intrinsics& k,
                         const Extrinsic& h);
/// Writes the overlay as binary PPM; returns the number of points drawn.
std::size_t render_overlay(const Rgb8& image, std::span<const Vec3> cloud, const Intrinsics& k,
                           const Extrinsic& h, const std::string& path);

// ---------------------------------------------------------------------------
// Synthetic scenes

enum class ObjectKind { kPlane, kBox };

struct SyntheticSceneConfig {
  std::uint64_t seed = 1;
  int object_count = 3;
  /// Cycled over the objects; empty means planes only.
  std::vector<ObjectKind> kinds;
  /// Raw intensity per object, cycled; empty means distinct evenly spaced
  /// levels (shared with the room surfaces) shuffled by the seed.
  std::vector<double> reflectivities;
  /// Points spread over each object's camera-facing faces.
  int points_per_object = 1700;
  /// Optional box-shaped room around the camera: floor, ceiling, two side
  /// walls and a far wall, each a separate cluster with its own reflectivity,
  /// sampled at room_density points per square meter. Occluding objects may
  /// split a room surface into several pieces (clusters and masks).
  bool room = false;
  double room_density = 7.0;
  /// Multiplies the room dimensions (12 m wide, 6.5 m tall, 18 m deep at 1).
  double room_scale = 1.0;
  Intrinsics intrinsics{500.0, 500.0, 320.0, 240.0, std::nullopt, std::nullopt};
  ImageSize image{640, 480};
  /// LiDAR to camera. Default maps (x fwd, y left, z up) to (x right, y down, z fwd).
  Extrinsic gt_extrinsic = default_gt();
  PreprocessParams preprocess;

  static Extrinsic default_gt();
};

struct SyntheticScene {
  std::vector<RawPoint> raw;
  /// Cluster group per raw point: object index, or object_count + i for
  /// room surface i (floor, ceiling, left, right, far).
  std::vector<int> object_of_point;
  /// Index of the mask each point falls in under the GT extrinsic, or -1 for
  /// points outside the view.
  std::vector<int> mask_of_point;
  Rgb8 image;
  Scene scene;
};

/// Deterministic in cfg. Visibility is ray-cast per pixel: every surface
/// (object face or room surface) owns the pixels where it is nearest, and only
/// points that round onto their own surface's pixels are kept. Masks: one per
/// object (in object order), then one per connected visible region of each
/// room surface. Throws DomainError when objects cannot be placed
/// with disjoint footprints and separate clusters within the retry budget.
SyntheticScene generate_synthetic_scene(const SyntheticSceneConfig& cfg);

// ---------------------------------------------------------------------------
// Scene bundles

/// Manifest: `key = value` lines (image, cloud, masks, calib, camera, gt),
/// '#' comments, paths relative to the manifest's directory.
struct SceneManifest {
  std::string image;
  std::string cloud;
  std::string masks;  // may be empty: no masks
  std::string calib;
  int camera = 0;
  std::string gt;  // optional explicit GT extrinsic; defaults to the calib
};

SceneManifest read_manifest(const std::string& path);

struct LoadedScene {
  std::vector<RawPoint> raw;
  Rgb8 image;
  Scene scene;
};

LoadedScene load_scene(const std::string& manifest_path, const PreprocessParams& params = {});

/// Writes manifest.txt, image.png, velodyne.bin, calib.txt, gt_extrinsic.txt
/// and masks/mask_NNN.png into `directory`. Returns the manifest path.
std::string write_scene_bundle(const std::string& directory, const SyntheticScene& scene);

}  // namespace calibkit
