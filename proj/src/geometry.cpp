#include "calibkit/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "calibkit/errors.hpp"

namespace calibkit {

namespace {

bool all_finite(const Mat3& m) { return m.allFinite(); }

}  // namespace

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion Quaternion::canonical() const {
  if (w > 0.0) return *this;
  if (w < 0.0) return negated();
  for (double c : {x, y, z}) {
    if (c > 0.0) return *this;
    if (c < 0.0) return negated();
  }
  return *this;
}

Extrinsic Extrinsic::from_matrix(const Mat4& m) {
  if (!m.allFinite()) throw ParseError("extrinsic matrix has non-finite entries");
  const Eigen::RowVector4d bottom = m.row(3);
  if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9) {
    throw ParseError("extrinsic matrix last row must be 0 0 0 1");
  }
  Extrinsic h;
  h.rotation = m.topLeftCorner<3, 3>();
  h.translation = m.topRightCorner<3, 1>();
  if (!is_rotation(h.rotation, 1e-6)) {
    throw ParseError("extrinsic rotation block is not orthonormal with det +1");
  }
  return h;
}

Mat4 Extrinsic::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

void Intrinsics::validate() const {
  if (!(std::isfinite(fx) && std::isfinite(fy) && std::isfinite(u0) && std::isfinite(v0))) {
    throw ParseError("intrinsics must be finite");
  }
  if (fx <= 0.0 || fy <= 0.0) throw ParseError("intrinsics require fx > 0 and fy > 0");
  if ((dx && !(*dx > 0.0)) || (dy && !(*dy > 0.0))) {
    throw ParseError("pixel pitch dx/dy must be positive");
  }
}

Mat3 euler_to_rotation(const EulerAngles& a) {
  const double ct = std::cos(a.theta), st = std::sin(a.theta);
  const double co = std::cos(a.omega), so = std::sin(a.omega);
  const double cp = std::cos(a.psi), sp = std::sin(a.psi);
  Mat3 rz, rx, ry;
  rz << ct, -st, 0, st, ct, 0, 0, 0, 1;
  rx << 1, 0, 0, 0, co, -so, 0, so, co;
  ry << cp, 0, sp, 0, 1, 0, -sp, 0, cp;
  return rz * rx * ry;
}

double orthonormality_defect(const Mat3& r) {
  if (!all_finite(r)) return std::numeric_limits<double>::infinity();
  const double ortho = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  return std::max(ortho, std::abs(r.determinant() - 1.0));
}

bool is_rotation(const Mat3& r, double tol) { return orthonormality_defect(r) <= tol; }

Quaternion rotation_to_quaternion(const Mat3& r) {
  if (!is_rotation(r, 1e-6)) throw DomainError("rotation_to_quaternion: input is not a rotation");
  // Shepperd: pivot on the largest of (trace, r00, r11, r22).
  const double tr = r.trace();
  Quaternion q;
  if (tr >= r(0, 0) && tr >= r(1, 1) && tr >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + tr);
    q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
  } else if (r(0, 0) >= r(1, 1) && r(0, 0) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
  } else if (r(1, 1) >= r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
    q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
    q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
  }
  const double n = q.norm();
  q = {q.w / n, q.x / n, q.y / n, q.z / n};
  return q.canonical();
}

Mat3 quaternion_to_rotation(const Quaternion& q) {
  if (!(std::abs(q.norm() - 1.0) <= 1e-6)) {
    throw DomainError("quaternion_to_rotation: quaternion is not unit length");
  }
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Mat3 rodrigues(const Vec3& rotvec) {
  const double angle = rotvec.norm();
  if (angle == 0.0) return Mat3::Identity();
  const Vec3 axis = rotvec / angle;
  Mat3 k;
  k << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
  return Mat3::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * (k * k);
}

double rotation_angle(const Mat3& r) {
  // atan2 form stays accurate near 0 and pi, unlike acos of the trace alone.
  const Vec3 skew(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double s = 0.5 * skew.norm();
  const double c = 0.5 * (r.trace() - 1.0);
  return std::atan2(s, c);
}

Extrinsic compose(const Extrinsic& a, const Extrinsic& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

Extrinsic invert(const Extrinsic& a) {
  const Mat3 rt = a.rotation.transpose();
  return {rt, -(rt * a.translation)};
}

std::optional<Pixel> project(const Vec3& point, const Intrinsics& k, const Extrinsic& h) {
  const Vec3 c = h.apply(point);
  if (!(c.z() > 0.0)) return std::nullopt;
  return Pixel{k.fx * c.x() / c.z() + k.u0, k.fy * c.y() / c.z() + k.v0, c.z()};
}

Vec3 unproject(double u, double v, double depth, const Intrinsics& k) {
  if (!(depth > 0.0)) throw DomainError("unproject: depth must be positive");
  return {(u - k.u0) / k.fx * depth, (v - k.v0) / k.fy * depth, depth};
}

std::optional<Pixel> reproject(const Vec3& point, const Mat3& r, const Vec3& t,
                               const Intrinsics& k) {
  // K (R p + t) followed by the perspective divide, evaluated exactly as
  // project() does so the two agree bit for bit.
  return project(point, k, Extrinsic{r, t});
}

Eigen::Vector2d pixel_from_image(double x, double y, const Intrinsics& k) {
  if (!k.dx || !k.dy) throw ParseError("pixel_from_image: intrinsics carry no dx/dy");
  return {x / *k.dx + k.u0, y / *k.dy + k.v0};
}

double rotation_error_deg(const Mat3& a, const Mat3& b) {
  return std::clamp(rad2deg(rotation_angle(a.transpose() * b)), 0.0, 180.0);
}

double translation_error_cm(const Vec3& a, const Vec3& b) { return 100.0 * (a - b).norm(); }

Extrinsic parse_extrinsic(std::istream& in) {
  std::vector<double> values;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    int count = 0;
    std::string tok;
    while (ls >> tok) {
      double v = 0.0;
      try {
        std::size_t used = 0;
        v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError("extrinsic: bad number '" + tok + "' on row " + std::to_string(row + 1));
      }
      values.push_back(v);
      ++count;
    }
    if (count != 4) {
      throw ParseError("extrinsic: row " + std::to_string(row + 1) + " has " +
                       std::to_string(count) + " values, expected 4");
    }
    ++row;
  }
  if (row != 4) throw ParseError("extrinsic: expected 4 rows, got " + std::to_string(row));
  Mat4 m;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) m(i, j) = values[static_cast<std::size_t>(i * 4 + j)];
  return Extrinsic::from_matrix(m);
}

Extrinsic read_extrinsic_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open extrinsic file: " + path);
  try {
    return parse_extrinsic(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string format_extrinsic(const Extrinsic& h) {
  const Mat4 m = h.matrix();
  std::string out;
  char buf[64];
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
      out += buf;
      out += (j == 3) ? '\n' : ' ';
    }
  }
  return out;
}

void write_extrinsic_file(const std::string& path, const Extrinsic& h) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write extrinsic file: " + path);
  out << format_extrinsic(h);
  if (!out) throw ParseError("write failed: " + path);
}

}  // namespace calibkit
