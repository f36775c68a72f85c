#include "calibkit/ingest.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "calibkit/errors.hpp"
#include "calibkit/harness.hpp"

namespace calibkit {

namespace fs = std::filesystem;

namespace {

std::uint32_t load_le32(const std::byte* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint32_t>(p[i]);
  return v;
}

void store_le32(std::byte* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::byte>((v >> (8 * i)) & 0xffu);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// Velodyne

std::vector<RawPoint> read_velodyne_bin(std::span<const std::byte> bytes) {
  if (bytes.size() % 16 != 0) {
    throw ParseError("velodyne scan length " + std::to_string(bytes.size()) +
                     " is not a multiple of 16 bytes");
  }
  std::vector<RawPoint> points(bytes.size() / 16);
  for (std::size_t i = 0; i < points.size(); ++i) {
    float f[4];
    for (int c = 0; c < 4; ++c) f[c] = std::bit_cast<float>(load_le32(bytes.data() + 16 * i + 4 * c));
    if (std::isnan(f[0]) || std::isnan(f[1]) || std::isnan(f[2])) {
      throw ParseError("velodyne point " + std::to_string(i) + " has a NaN coordinate");
    }
    points[i] = {f[0], f[1], f[2], f[3]};
  }
  return points;
}

std::vector<RawPoint> read_velodyne_file(const std::string& path) {
  const std::string data = read_text_file(path);
  try {
    return read_velodyne_bin(std::as_bytes(std::span(data.data(), data.size())));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::vector<std::byte> write_velodyne_bin(std::span<const RawPoint> points) {
  std::vector<std::byte> out(points.size() * 16);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const float f[4] = {static_cast<float>(points[i].x), static_cast<float>(points[i].y),
                        static_cast<float>(points[i].z), static_cast<float>(points[i].intensity)};
    for (int c = 0; c < 4; ++c) store_le32(out.data() + 16 * i + 4 * c, std::bit_cast<std::uint32_t>(f[c]));
  }
  return out;
}

void write_velodyne_file(const std::string& path, std::span<const RawPoint> points) {
  const auto bytes = write_velodyne_bin(points);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ParseError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// calib.txt

Intrinsics KittiCalib::intrinsics(int camera) const {
  if (camera < 0 || camera > 3) throw ParseError("camera index must be 0..3");
  const Mat34& p = projection[static_cast<std::size_t>(camera)];
  Intrinsics k{p(0, 0), p(1, 1), p(0, 2), p(1, 2), std::nullopt, std::nullopt};
  k.validate();
  return k;
}

Extrinsic KittiCalib::camera_extrinsic(int camera) const {
  if (camera < 0 || camera > 3) throw ParseError("camera index must be 0..3");
  const Mat34& p = projection[static_cast<std::size_t>(camera)];
  const Mat3 k = p.leftCols<3>();
  const Vec3 baseline = k.inverse() * p.col(3);
  return compose(Extrinsic{Mat3::Identity(), baseline}, velo_to_cam);
}

KittiCalib read_kitti_calib(const std::string& text) {
  std::map<std::string, std::vector<double>> entries;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto colon = t.find(':');
    if (colon == std::string::npos) {
      throw ParseError("calib line " + std::to_string(lineno) + ": expected 'KEY: values'");
    }
    const std::string key = trim(t.substr(0, colon));
    std::istringstream vs(t.substr(colon + 1));
    std::vector<double> values;
    std::string tok;
    while (vs >> tok) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError("calib key " + key + ": bad number '" + tok + "'");
      }
    }
    entries[key] = std::move(values);
  }

  auto matrix = [&](const std::string& key) {
    const auto it = entries.find(key);
    if (it == entries.end()) throw ParseError("calib: missing key " + key);
    if (it->second.size() != 12) {
      throw ParseError("calib key " + key + ": expected 12 values, got " +
                       std::to_string(it->second.size()));
    }
    Mat34 m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) m(r, c) = it->second[static_cast<std::size_t>(r * 4 + c)];
    if (!m.allFinite()) throw ParseError("calib key " + key + ": non-finite value");
    return m;
  };

  KittiCalib calib;
  for (int i = 0; i < 4; ++i) calib.projection[static_cast<std::size_t>(i)] = matrix("P" + std::to_string(i));
  const Mat34 tr = matrix("Tr");
  Mat3 r = tr.leftCols<3>();
  if (orthonormality_defect(r) > 1e-3) throw ParseError("calib: Tr rotation is not orthonormal");
  const Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  r = svd.matrixU() * svd.matrixV().transpose();
  calib.velo_to_cam = {r, tr.col(3)};
  return calib;
}

KittiCalib read_kitti_calib_file(const std::string& path) {
  try {
    return read_kitti_calib(read_text_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::string format_kitti_calib(const KittiCalib& calib) {
  std::string out;
  char buf[32];
  auto emit = [&](const std::string& key, const Mat34& m) {
    out += key + ":";
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) {
        std::snprintf(buf, sizeof(buf), " %.12e", m(r, c));
        out += buf;
      }
    out += "\n";
  };
  for (int i = 0; i < 4; ++i) emit("P" + std::to_string(i), calib.projection[static_cast<std::size_t>(i)]);
  Mat34 tr;
  tr << calib.velo_to_cam.rotation, calib.velo_to_cam.translation;
  emit("Tr", tr);
  return out;
}

// ---------------------------------------------------------------------------
// Masks and overlays

std::vector<Mask> read_masks(const std::string& directory) {
  if (!fs::is_directory(directory)) throw ParseError("mask directory not found: " + directory);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());

  std::vector<Mask> masks;
  for (const auto& f : files) {
    const Gray8 img = read_png_gray8(f);
    if (!masks.empty() && (img.width != masks.front().width || img.height != masks.front().height)) {
      throw ParseError("mask " + f + " differs in size from the first mask");
    }
    Mask m(img.width, img.height);
    for (std::size_t i = 0; i < img.data.size(); ++i) m.bits[i] = img.data[i] > 127 ? 1 : 0;
    masks.push_back(std::move(m));
  }
  return masks;
}

void write_mask_png(const std::string& path, const Mask& mask) {
  Gray8 img(mask.width, mask.height, 1);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) img.data[i] = mask.bits[i] ? 255 : 0;
  write_png(path, img);
}

std::array<std::uint8_t, 3> depth_color(double depth) {
  constexpr double kNear = 2.0, kFar = 80.0;
  const double s = std::clamp((1.0 / depth - 1.0 / kFar) / (1.0 / kNear - 1.0 / kFar), 0.0, 1.0);
  return {static_cast<std::uint8_t>(std::lround(255.0 * s)), 0,
          static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - s)))};
}

std::size_t draw_overlay(Rgb8& image, std::span<const Vec3> cloud, const Intrinsics& k,
                         const Extrinsic& h) {
  std::vector<double> zbuf(static_cast<std::size_t>(image.width) * image.height, 0.0);
  std::size_t drawn = 0;
  for (const Vec3& p : cloud) {
    const auto px = project(p, k, h);
    if (!px || !std::isfinite(px->u) || !std::isfinite(px->v)) continue;
    const double ru = std::round(px->u), rv = std::round(px->v);
    if (ru < 0 || rv < 0 || ru >= image.width || rv >= image.height) continue;
    ++drawn;
    const int u = static_cast<int>(ru), v = static_cast<int>(rv);
    double& z = zbuf[static_cast<std::size_t>(v) * image.width + u];
    if (z > 0.0 && z <= px->depth) continue;
    z = px->depth;
    const auto c = depth_color(px->depth);
    for (int ch = 0; ch < 3; ++ch) image.at(u, v, ch) = c[static_cast<std::size_t>(ch)];
  }
  return drawn;
}

std::size_t render_overlay(const Rgb8& image, std::span<const Vec3> cloud, const Intrinsics& k,
                           const Extrinsic& h, const std::string& path) {
  Rgb8 out = image;
  const std::size_t drawn = draw_overlay(out, cloud, k, h);
  write_ppm(path, out);
  return drawn;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

Extrinsic SyntheticSceneConfig::default_gt() {
  Mat3 r;
  r << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  return {r, Vec3(0.02, -0.08, -0.27)};
}

namespace {

using Vec2 = Eigen::Vector2d;

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  if (pts.size() < 3) return pts;
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

// Counter-clockwise hull; inclusive of edges.
bool inside_hull(const std::vector<Vec2>& hull, const Vec2& p) {
  for (std::size_t i = 0; i < hull.size(); ++i) {
    if (cross(hull[i], hull[(i + 1) % hull.size()], p) < 0) return false;
  }
  return true;
}

struct Face {
  Vec3 origin;  // camera frame
  Vec3 edge_a;
  Vec3 edge_b;
  Vec3 normal;  // outward, unit
};

struct PlacedObject {
  ObjectKind kind = ObjectKind::kPlane;
  std::vector<Face> faces;       // faces that carry points
  std::vector<Vec3> corners;     // silhouette corners, camera frame
  double intensity = 0.0;
};

std::vector<Vec3> sample_face(const Face& f, int n) {
  const double la = f.edge_a.norm(), lb = f.edge_b.norm();
  const int na = std::max(2, static_cast<int>(std::lround(std::sqrt(n * la / lb))));
  const int nb = std::max(2, static_cast<int>(std::lround(static_cast<double>(n) / na)));
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(na) * nb);
  for (int j = 0; j < nb; ++j)
    for (int i = 0; i < na; ++i)
      out.push_back(f.origin + f.edge_a * ((i + 0.5) / na) + f.edge_b * ((j + 0.5) / nb));
  return out;
}

Mask footprint(const std::vector<Vec3>& corners, const std::vector<Vec3>& points,
               const Intrinsics& k, const ImageSize& size) {
  std::vector<Vec2> proj;
  for (const auto& c : corners) {
    const auto px = project(c, k, Extrinsic::identity());
    if (px) proj.emplace_back(px->u, px->v);
  }
  const auto hull = convex_hull(proj);
  Mask m(size.width, size.height);
  double umin = 1e18, umax = -1e18, vmin = 1e18, vmax = -1e18;
  for (const auto& p : hull) {
    umin = std::min(umin, p.x());
    umax = std::max(umax, p.x());
    vmin = std::min(vmin, p.y());
    vmax = std::max(vmax, p.y());
  }
  const int u0 = std::max(0, static_cast<int>(std::floor(umin)));
  const int u1 = std::min(size.width - 1, static_cast<int>(std::ceil(umax)));
  const int v0 = std::max(0, static_cast<int>(std::floor(vmin)));
  const int v1 = std::min(size.height - 1, static_cast<int>(std::ceil(vmax)));
  for (int v = v0; v <= v1; ++v)
    for (int u = u0; u <= u1; ++u)
      if (inside_hull(hull, Vec2(u, v))) m.set(u, v);
  for (const auto& p : points) {
    const auto px = project(p, k, Extrinsic::identity());
    if (!px) continue;
    const double ru = std::round(px->u), rv = std::round(px->v);
    if (size.contains(static_cast<long>(ru), static_cast<long>(rv))) {
      m.set(static_cast<int>(ru), static_cast<int>(rv));
    }
  }
  return m;
}

// Square (Chebyshev) dilation by `gap` pixels, done as two 1-D passes.
Mask dilate(const Mask& m, int gap) {
  Mask rows(m.width, m.height), out(m.width, m.height);
  for (int v = 0; v < m.height; ++v)
    for (int u = 0; u < m.width; ++u)
      if (m.test(u, v))
        for (int x = std::max(0, u - gap); x <= std::min(m.width - 1, u + gap); ++x) rows.set(x, v);
  for (int v = 0; v < m.height; ++v)
    for (int u = 0; u < m.width; ++u)
      if (rows.test(u, v))
        for (int y = std::max(0, v - gap); y <= std::min(m.height - 1, v + gap); ++y) out.set(u, y);
  return out;
}

bool overlaps(const Mask& a, const Mask& b) {
  for (std::size_t p = 0; p < a.bits.size(); ++p)
    if (a.bits[p] && b.bits[p]) return true;
  return false;
}

PlacedObject make_object(ObjectKind kind, SplitMix64& rng, const Intrinsics& k,
                         const ImageSize& size) {
  const double depth = 3.5 + 3.0 * rng.uniform();
  const double u = size.width * (0.15 + 0.7 * rng.uniform());
  const double v = size.height * (0.2 + 0.6 * rng.uniform());
  const double w = 1.0 + 0.8 * rng.uniform();
  const double h = 1.0 + 0.8 * rng.uniform();
  const Vec3 c = unproject(u, v, depth, k);
  const Vec3 lo(c.x() - w / 2, c.y() - h / 2, depth);

  PlacedObject obj;
  obj.kind = kind;
  if (kind == ObjectKind::kPlane) {
    obj.faces.push_back({lo, Vec3(w, 0, 0), Vec3(0, h, 0), Vec3(0, 0, -1)});
    obj.corners = {lo, lo + Vec3(w, 0, 0), lo + Vec3(0, h, 0), lo + Vec3(w, h, 0)};
    return obj;
  }
  const double d = 0.6 + 0.6 * rng.uniform();
  const Vec3 hi = lo + Vec3(w, h, d);
  const Vec3 ex(w, 0, 0), ey(0, h, 0), ez(0, 0, d);
  const std::array<Face, 6> all{{
      {lo, ex, ey, Vec3(0, 0, -1)},
      {lo + ez, ex, ey, Vec3(0, 0, 1)},
      {lo, ey, ez, Vec3(-1, 0, 0)},
      {lo + ex, ey, ez, Vec3(1, 0, 0)},
      {lo, ex, ez, Vec3(0, -1, 0)},
      {lo + ey, ex, ez, Vec3(0, 1, 0)},
  }};
  for (const Face& f : all) {
    const Vec3 center = f.origin + 0.5 * (f.edge_a + f.edge_b);
    if (f.normal.dot(-center) > 1e-9) obj.faces.push_back(f);
  }
  for (int i = 0; i < 8; ++i) {
    obj.corners.emplace_back((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(),
                             (i & 4) ? hi.z() : lo.z());
  }
  return obj;
}

// A sampled planar patch: one mask and one cluster group per surface.
struct Surface {
  Face face;
  int group = 0;  // object index, or object_count + room surface index
  double level = 0.0;
};

// Ray through the pixel center hits the parallelogram at depth t (camera z).
std::optional<double> ray_hit(const Face& f, double u, double v, const Intrinsics& k) {
  const Vec3 d((u - k.u0) / k.fx, (v - k.v0) / k.fy, 1.0);
  const double denom = f.normal.dot(d);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = f.normal.dot(f.origin) / denom;
  if (!(t > 0.0)) return std::nullopt;
  const Vec3 rel = t * d - f.origin;
  const double a = rel.dot(f.edge_a) / f.edge_a.squaredNorm();
  const double b = rel.dot(f.edge_b) / f.edge_b.squaredNorm();
  if (a < 0.0 || a > 1.0 || b < 0.0 || b > 1.0) return std::nullopt;
  return t;
}

// Room around the camera (camera frame: x right, y down, z forward), in
// units scaled by SyntheticSceneConfig::room_scale. The insets leave gaps of
// at least 1.1 * scale m between neighboring surfaces, keeping them separate
// clusters.
struct Room {
  double half_width, floor_y, ceiling_y, near, far, far_wall_z, inset;

  explicit Room(double scale)
      : half_width(6.0 * scale),
        floor_y(3.0 * scale),
        ceiling_y(-3.5 * scale),
        near(1.0),
        far(16.5 * scale),
        far_wall_z(18.0 * scale),
        inset(0.8 * scale) {}

  std::vector<Face> faces() const {
    const double xi = half_width - inset;
    const double y0 = ceiling_y + inset, y1 = floor_y - inset;
    const double len = far - near;
    return {
        {Vec3(-xi, floor_y, near), Vec3(2 * xi, 0, 0), Vec3(0, 0, len), Vec3(0, -1, 0)},
        {Vec3(-xi, ceiling_y, near), Vec3(2 * xi, 0, 0), Vec3(0, 0, len), Vec3(0, 1, 0)},
        {Vec3(-half_width, y0, near), Vec3(0, y1 - y0, 0), Vec3(0, 0, len), Vec3(1, 0, 0)},
        {Vec3(half_width, y0, near), Vec3(0, y1 - y0, 0), Vec3(0, 0, len), Vec3(-1, 0, 0)},
        {Vec3(-xi, y0, far_wall_z), Vec3(2 * xi, 0, 0), Vec3(0, y1 - y0, 0), Vec3(0, 0, -1)},
    };
  }

  // Objects keep the inset distance from every surface.
  bool contains(const PlacedObject& obj) const {
    const double xi = half_width - inset;
    for (const Vec3& c : obj.corners) {
      if (std::abs(c.x()) > xi || c.y() < ceiling_y + inset || c.y() > floor_y - inset || c.z() > far) {
        return false;
      }
    }
    return true;
  }
};

std::vector<Vec3> sample_face_density(const Face& f, double density) {
  const double area = f.edge_a.cross(f.edge_b).norm();
  return sample_face(f, std::max(4, static_cast<int>(std::lround(area * density))));
}

}  // namespace

SyntheticScene generate_synthetic_scene(const SyntheticSceneConfig& cfg) {
  cfg.intrinsics.validate();
  if (cfg.object_count < 1) throw ParseError("synthetic scene needs at least one object");
  if (cfg.points_per_object < 16) throw ParseError("points_per_object must be >= 16");
  if (cfg.image.width <= 0 || cfg.image.height <= 0) throw ParseError("image size must be positive");
  if (cfg.room && (!(cfg.room_density > 0.0) || !(cfg.room_scale >= 1.0))) {
    throw ParseError("room needs room_density > 0 and room_scale >= 1");
  }

  const int n = cfg.object_count;
  const int room_count = cfg.room ? 5 : 0;
  SplitMix64 rng(cfg.seed);
  // Distinct, evenly spaced levels shared by objects and room surfaces.
  std::vector<double> pool;
  const int total = n + room_count;
  for (int i = 0; i < total; ++i) pool.push_back(0.05 + 0.9 * (i + 0.5) / total);
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.next() % i]);
  std::vector<double> levels = cfg.reflectivities;
  if (levels.empty()) levels.assign(pool.begin(), pool.begin() + n);

  const Intrinsics& k = cfg.intrinsics;
  const ImageSize& size = cfg.image;
  const Extrinsic cam_to_lidar = invert(cfg.gt_extrinsic);
  constexpr int kMaxAttempts = 200;
  const Room room(cfg.room_scale);

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<Surface> surfaces;
    Mask taken(size.width, size.height);  // object silhouettes grown by the gap
    bool ok = true;
    constexpr int kObjectDraws = 50;
    for (int i = 0; i < n && ok; ++i) {
      const ObjectKind kind = cfg.kinds.empty()
                                  ? ObjectKind::kPlane
                                  : cfg.kinds[static_cast<std::size_t>(i) % cfg.kinds.size()];
      bool placed = false;
      for (int draw = 0; draw < kObjectDraws && !placed; ++draw) {
        const PlacedObject obj = make_object(kind, rng, k, size);
        if (cfg.room && !room.contains(obj)) continue;
        double area = 0.0;
        for (const Face& f : obj.faces) area += f.edge_a.cross(f.edge_b).norm();
        std::vector<Vec3> all;
        for (const Face& f : obj.faces) {
          const auto pts = sample_face_density(f, cfg.points_per_object / area);
          all.insert(all.end(), pts.begin(), pts.end());
        }
        // Every object point lands inside the image; silhouettes keep a gap.
        bool fits = true;
        for (const auto& p : all) {
          const auto px = project(p, k, Extrinsic::identity());
          if (!px || px->u < 2 || px->v < 2 || px->u > size.width - 3 || px->v > size.height - 3) {
            fits = false;
            break;
          }
        }
        if (!fits) continue;
        const Mask hull = footprint(obj.corners, all, k, size);
        if (overlaps(hull, taken)) continue;
        for (const Face& f : obj.faces) {
          surfaces.push_back({f, i, levels[static_cast<std::size_t>(i) % levels.size()]});
        }
        const Mask grown = dilate(hull, 6);
        for (std::size_t p = 0; p < grown.bits.size(); ++p) taken.bits[p] |= grown.bits[p];
        placed = true;
      }
      ok = placed;
    }
    if (!ok) continue;
    if (cfg.room) {
      const auto faces = room.faces();
      for (std::size_t r = 0; r < faces.size(); ++r) {
        surfaces.push_back({faces[r], n + static_cast<int>(r), pool[static_cast<std::size_t>(n) + r]});
      }
    }

    // Nearest surface along each pixel ray owns the pixel.
    std::vector<int> owner(static_cast<std::size_t>(size.width) * size.height, -1);
    for (int v = 0; v < size.height; ++v) {
      for (int u = 0; u < size.width; ++u) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t sidx = 0; sidx < surfaces.size(); ++sidx) {
          const auto t = ray_hit(surfaces[sidx].face, u, v, k);
          if (t && *t < best) {
            best = *t;
            owner[static_cast<std::size_t>(v) * size.width + u] = static_cast<int>(sidx);
          }
        }
      }
    }

    // A point is kept when the pixel it rounds to belongs to its own surface;
    // points outside the view are kept as they are.
    SyntheticScene out;
    std::vector<int> surface_of_point;
    std::vector<bool> in_view;
    for (std::size_t sidx = 0; sidx < surfaces.size(); ++sidx) {
      const Surface& sf = surfaces[sidx];
      double density = cfg.room_density;
      if (sf.group < n) {  // objects spread points_per_object over their faces
        double area = 0.0;
        for (const Surface& o : surfaces)
          if (o.group == sf.group) area += o.face.edge_a.cross(o.face.edge_b).norm();
        density = cfg.points_per_object / area;
      }
      for (const Vec3& p : sample_face_density(sf.face, density)) {
        // Stored as float32 (as in a velodyne scan); visibility is decided on
        // the stored position so masks stay exact after a bundle round trip.
        const Vec3 l = cam_to_lidar.apply(p).cast<float>().cast<double>();
        const auto px = project(cfg.gt_extrinsic.apply(l), k, Extrinsic::identity());
        bool visible = false;
        if (px) {
          const long iu = std::lround(px->u), iv = std::lround(px->v);
          visible = size.contains(iu, iv);
          if (visible && owner[static_cast<std::size_t>(iv) * size.width + iu] != static_cast<int>(sidx)) {
            continue;  // hidden, or rounds onto a neighboring surface
          }
        }
        surface_of_point.push_back(static_cast<int>(sidx));
        in_view.push_back(visible);
        out.object_of_point.push_back(sf.group);
        out.raw.push_back({l.x(), l.y(), l.z(), static_cast<double>(static_cast<float>(sf.level))});
      }
    }

    // Objects must come out as exactly one cluster; no cluster may span two
    // groups. Room surfaces may be split into pieces by occluding objects.
    const auto labels = segment_clusters(out.raw, cfg.preprocess.cluster_radius,
                                         cfg.preprocess.min_cluster_points);
    std::map<int, int> group_of_label;
    std::vector<int> object_label(static_cast<std::size_t>(n), -2);
    for (std::size_t i = 0; i < labels.size() && ok; ++i) {
      const int g = out.object_of_point[i];
      if (g < n) {
        int& expect = object_label[static_cast<std::size_t>(g)];
        if (labels[i] == kNoise || (expect != -2 && expect != labels[i])) ok = false;
        expect = labels[i];
      }
      if (labels[i] != kNoise) {
        const auto [it, fresh] = group_of_label.emplace(labels[i], g);
        ok = ok && (fresh || it->second == g);
      }
    }
    for (int l : object_label) ok = ok && l != -2;
    if (!ok) continue;

    // One mask per object (the union of its faces' pixels), then one mask per
    // 4-connected pixel region of each room surface. Every mask must hold
    // points of a single cluster.
    const std::size_t pixels = owner.size();
    std::vector<int> region(pixels, -1);
    std::vector<Mask> masks;
    for (int i = 0; i < n; ++i) {
      Mask m(size.width, size.height);
      bool any = false;
      for (std::size_t p = 0; p < pixels; ++p) {
        if (owner[p] >= 0 && surfaces[static_cast<std::size_t>(owner[p])].group == i) {
          m.bits[p] = 1;
          region[p] = static_cast<int>(masks.size());
          any = true;
        }
      }
      if (any) masks.push_back(std::move(m));
    }
    std::vector<std::size_t> stack;
    for (std::size_t sidx = 0; sidx < surfaces.size(); ++sidx) {
      if (surfaces[sidx].group < n) continue;
      for (std::size_t seed_px = 0; seed_px < pixels; ++seed_px) {
        if (owner[seed_px] != static_cast<int>(sidx) || region[seed_px] >= 0) continue;
        const int id = static_cast<int>(masks.size());
        Mask m(size.width, size.height);
        region[seed_px] = id;
        stack.assign(1, seed_px);
        while (!stack.empty()) {
          const std::size_t p = stack.back();
          stack.pop_back();
          m.bits[p] = 1;
          const int u = static_cast<int>(p % static_cast<std::size_t>(size.width));
          const int v = static_cast<int>(p / static_cast<std::size_t>(size.width));
          const std::array<std::pair<int, int>, 4> nbrs{{{u - 1, v}, {u + 1, v}, {u, v - 1}, {u, v + 1}}};
          for (const auto& [x, y] : nbrs) {
            if (!size.contains(x, y)) continue;
            const std::size_t q = static_cast<std::size_t>(y) * size.width + x;
            if (owner[q] == static_cast<int>(sidx) && region[q] < 0) {
              region[q] = id;
              stack.push_back(q);
            }
          }
        }
        masks.push_back(std::move(m));
      }
    }
    std::vector<int> label_of_mask(masks.size(), kNoise);
    out.mask_of_point.assign(out.raw.size(), -1);
    for (std::size_t i = 0; i < out.raw.size() && ok; ++i) {
      if (!in_view[i]) continue;
      const auto q = project(cfg.gt_extrinsic.apply(out.raw[i].position()), k, Extrinsic::identity());
      const std::size_t p = static_cast<std::size_t>(std::lround(q->v)) * size.width +
                            static_cast<std::size_t>(std::lround(q->u));
      const int m = region[p];
      out.mask_of_point[i] = m;
      if (labels[i] == kNoise) continue;
      int& l = label_of_mask[static_cast<std::size_t>(m)];
      if (l != kNoise && l != labels[i]) ok = false;
      l = labels[i];
    }
    if (!ok) continue;

    out.image = Rgb8(size.width, size.height, 3, 30);
    for (int v = 0; v < size.height; ++v) {
      for (int u = 0; u < size.width; ++u) {
        const int o = owner[static_cast<std::size_t>(v) * size.width + u];
        if (o < 0) continue;
        const auto g = static_cast<std::uint8_t>(
            std::lround(255.0 * std::clamp(surfaces[static_cast<std::size_t>(o)].level, 0.0, 1.0)));
        for (int ch = 0; ch < 3; ++ch) out.image.at(u, v, ch) = g;
      }
    }

    out.scene.intrinsics = k;
    out.scene.image = size;
    out.scene.masks = std::move(masks);
    out.scene.cloud = attribute(out.raw, cfg.preprocess);
    out.scene.gt_extrinsic = cfg.gt_extrinsic;
    return out;
  }
  throw DomainError("could not place synthetic objects within the retry budget");
}

// ---------------------------------------------------------------------------
// Scene bundles

SceneManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest: " + path);
  SceneManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key == "image") m.image = value;
    else if (key == "cloud") m.cloud = value;
    else if (key == "masks") m.masks = value;
    else if (key == "calib") m.calib = value;
    else if (key == "gt") m.gt = value;
    else if (key == "camera") {
      try {
        m.camera = std::stoi(value);
      } catch (const std::exception&) {
        throw ParseError(path + ": bad camera index '" + value + "'");
      }
    } else {
      throw ParseError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  if (m.image.empty() || m.cloud.empty() || m.calib.empty()) {
    throw ParseError(path + ": manifest needs image, cloud and calib");
  }
  return m;
}

LoadedScene load_scene(const std::string& manifest_path, const PreprocessParams& params) {
  const SceneManifest m = read_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& p) { return (base / p).string(); };

  LoadedScene out;
  out.image = read_rgb_image(resolve(m.image));
  out.raw = read_velodyne_file(resolve(m.cloud));
  const KittiCalib calib = read_kitti_calib_file(resolve(m.calib));
  out.scene.intrinsics = calib.intrinsics(m.camera);
  out.scene.image = {out.image.width, out.image.height};
  out.scene.gt_extrinsic = m.gt.empty() ? calib.camera_extrinsic(m.camera)
                                        : read_extrinsic_file(resolve(m.gt));
  if (!m.masks.empty()) {
    out.scene.masks = read_masks(resolve(m.masks));
    for (const Mask& mask : out.scene.masks) {
      if (mask.width != out.image.width || mask.height != out.image.height) {
        throw ParseError("masks do not match the image size");
      }
    }
  }
  if (out.raw.size() >= static_cast<std::size_t>(params.knn)) {
    out.scene.cloud = attribute(out.raw, params);
  }
  return out;
}

std::string write_scene_bundle(const std::string& directory, const SyntheticScene& s) {
  const fs::path dir(directory);
  fs::create_directories(dir / "masks");
  for (const auto& entry : fs::directory_iterator(dir / "masks")) fs::remove(entry.path());

  write_png_rgb((dir / "image.png").string(), s.image);
  write_velodyne_file((dir / "velodyne.bin").string(), s.raw);
  for (std::size_t i = 0; i < s.scene.masks.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "mask_%03zu.png", i);
    write_mask_png((dir / "masks" / name).string(), s.scene.masks[i]);
  }
  KittiCalib calib;
  Mat34 p = Mat34::Zero();
  p(0, 0) = s.scene.intrinsics.fx;
  p(1, 1) = s.scene.intrinsics.fy;
  p(0, 2) = s.scene.intrinsics.u0;
  p(1, 2) = s.scene.intrinsics.v0;
  p(2, 2) = 1.0;
  calib.projection.fill(p);
  calib.velo_to_cam = s.scene.gt_extrinsic.value_or(Extrinsic::identity());
  {
    std::ofstream out(dir / "calib.txt", std::ios::binary);
    out << format_kitti_calib(calib);
    if (!out) throw ParseError("cannot write calib.txt in " + directory);
  }
  write_extrinsic_file((dir / "gt_extrinsic.txt").string(),
                       s.scene.gt_extrinsic.value_or(Extrinsic::identity()));
  const fs::path manifest = dir / "manifest.txt";
  std::ofstream out(manifest, std::ios::binary);
  out << "# scene bundle\n"
         "image = image.png\n"
         "cloud = velodyne.bin\n"
         "masks = masks\n"
         "calib = calib.txt\n"
         "camera = 0\n"
         "gt = gt_extrinsic.txt\n";
  if (!out) throw ParseError("cannot write manifest in " + directory);
  return manifest.string();
}

}  // namespace calibkit
