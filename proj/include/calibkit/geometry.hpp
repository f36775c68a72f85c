#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <optional>
#include <string>

namespace calibkit {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Three rotation angles in radians. The composed rotation is
/// Rz(theta) * Rx(omega) * Ry(psi).
struct EulerAngles {
  double theta = 0.0;  // about z
  double omega = 0.0;  // about x
  double psi = 0.0;    // about y
};

/// Unit quaternion, canonicalized to the w >= 0 hemisphere.
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const;
  Quaternion negated() const { return {-w, -x, -y, -z}; }
  /// Flips the sign so that w > 0, or for w == 0 the first nonzero of
  /// (x, y, z) is positive.
  Quaternion canonical() const;
};

/// Rigid transform p' = rotation * p + translation (homogeneous [R t; 0 1]).
struct Extrinsic {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Extrinsic identity() { return {}; }
  static Extrinsic from_matrix(const Mat4& m);
  Mat4 matrix() const;
  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

/// Pinhole intrinsics. dx/dy (meters per pixel) are only needed for the
/// image-plane to pixel conversion.
struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double u0 = 0.0;
  double v0 = 0.0;
  std::optional<double> dx;
  std::optional<double> dy;

  /// Throws ParseError unless fx > 0 and fy > 0 and everything is finite.
  void validate() const;
};

struct ImageSize {
  int width = 0;
  int height = 0;

  bool contains(long u, long v) const { return u >= 0 && v >= 0 && u < width && v < height; }
};

/// A projected point. depth is the camera-frame z, always > 0.
struct Pixel {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

Mat3 euler_to_rotation(const EulerAngles& angles);

/// Maximum entry of |R^T R - I| and |det R - 1|.
double orthonormality_defect(const Mat3& r);
/// True if r is a rotation within the given per-entry tolerance.
bool is_rotation(const Mat3& r, double tol = 1e-9);

/// Throws DomainError for matrices that are not rotations (tolerance 1e-6).
Quaternion rotation_to_quaternion(const Mat3& r);
/// Throws DomainError for quaternions whose norm is off by more than 1e-6.
Mat3 quaternion_to_rotation(const Quaternion& q);

/// Axis-angle vector to rotation matrix. Zero vector maps to identity.
Mat3 rodrigues(const Vec3& rotvec);

/// Geodesic angle of r (radians, in [0, pi]).
double rotation_angle(const Mat3& r);

Extrinsic compose(const Extrinsic& a, const Extrinsic& b);
Extrinsic invert(const Extrinsic& a);

/// Pinhole projection of a point through extrinsic h. Returns nullopt for
/// points with camera-frame depth <= 0 (behind the image plane).
std::optional<Pixel> project(const Vec3& point, const Intrinsics& k, const Extrinsic& h);

/// Back-projection of a pixel at depth into the camera frame.
/// Throws DomainError for depth <= 0.
Vec3 unproject(double u, double v, double depth, const Intrinsics& k);

/// The pinhole model in rotation/translation form, K (R X + t) followed by
/// the perspective divide. Returns exactly project(point, k, Extrinsic{r, t}).
std::optional<Pixel> reproject(const Vec3& point, const Mat3& r, const Vec3& t,
                               const Intrinsics& k);

/// Image-plane metric coordinates to pixels. Throws ParseError if the
/// intrinsics carry no dx/dy.
Eigen::Vector2d pixel_from_image(double x, double y, const Intrinsics& k);

/// Geodesic angle between two rotations, degrees in [0, 180].
double rotation_error_deg(const Mat3& a, const Mat3& b);
/// Euclidean distance between two translations, centimeters.
double translation_error_cm(const Vec3& a, const Vec3& b);

// Extrinsic text format: four lines of four floats (row-major homogeneous
// matrix). Lines starting with '#' and blank lines are ignored.
Extrinsic parse_extrinsic(std::istream& in);
Extrinsic read_extrinsic_file(const std::string& path);
std::string format_extrinsic(const Extrinsic& h);
void write_extrinsic_file(const std::string& path, const Extrinsic& h);

}  // namespace calibkit
