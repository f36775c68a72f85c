#include "calibkit/fusion_metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "calibkit/errors.hpp"

namespace calibkit {
namespace {

const Intrinsics kCam{500.0, 500.0, 320.0, 240.0, std::nullopt, std::nullopt};

// Reads the two maps of tests/fixtures/features_8x8x3.txt.
std::pair<FeatureMap, FeatureMap> load_feature_fixture() {
  std::ifstream in(std::string(CALIBKIT_FIXTURES) + "/features_8x8x3.txt");
  EXPECT_TRUE(in.good());
  std::string line;
  FeatureMap maps[2];
  int current = -1;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    if (std::isalpha(static_cast<unsigned char>(line[0]))) {
      std::string name;
      int w, h, c;
      ls >> name >> w >> h >> c;
      maps[++current] = FeatureMap(w, h, c);
      continue;
    }
    int x, y;
    ls >> x >> y;
    for (int c = 0; c < maps[current].channels; ++c) ls >> maps[current].at(x, y, c);
  }
  return {maps[0], maps[1]};
}

// Naive renderer: loop over points, keep the nearest depth per pixel.
std::vector<double> naive_render(const std::vector<Vec3>& cloud, const Extrinsic& h, int w, int hgt) {
  std::vector<double> out(static_cast<std::size_t>(w) * hgt, 0.0);
  for (const Vec3& p : cloud) {
    const Vec3 c = h.rotation * p + h.translation;
    if (c.z() <= 0) continue;
    const long u = std::lround(kCam.fx * c.x() / c.z() + kCam.u0);
    const long v = std::lround(kCam.fy * c.y() / c.z() + kCam.v0);
    if (u < 0 || v < 0 || u >= w || v >= hgt) continue;
    double& cell = out[static_cast<std::size_t>(v) * w + u];
    if (cell == 0.0 || c.z() < cell) cell = c.z();
  }
  return out;
}

TEST(RenderTest, SinglePointAndZBuffer) {
  const Vec3 a(0, 0, 5);
  const auto m = render_depth_map(std::vector<Vec3>{a}, kCam, Extrinsic::identity(), 640, 480);
  EXPECT_EQ(m.valid_count(), 1u);
  EXPECT_EQ(m.at(320, 240), 5.0);
  const auto z = render_depth_map(std::vector<Vec3>{Vec3(0.5, 0, 5), Vec3(0.3, 0, 3)}, kCam,
                                  Extrinsic::identity(), 640, 480);
  EXPECT_EQ(z.valid_count(), 1u);
  EXPECT_EQ(z.at(370, 240), 3.0);
}

TEST(RenderTest, MatchesNaiveRenderer) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  std::vector<Vec3> cloud;
  for (int i = 0; i < 1000; ++i) cloud.emplace_back(u(rng), u(rng), u(rng) + 4.0);
  const Extrinsic h{euler_to_rotation({0.1, -0.05, 0.2}), Vec3(0.2, -0.1, 0.5)};
  const auto m = render_depth_map(cloud, kCam, h, 64, 48);
  const auto ref = naive_render(cloud, h, 64, 48);
  ASSERT_EQ(m.raw().size(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(m.raw()[i], ref[i]) << i;
  const auto full = render_depth_map(cloud, kCam, h, 640, 480);
  const auto full_ref = naive_render(cloud, h, 640, 480);
  for (std::size_t i = 0; i < full_ref.size(); ++i) ASSERT_EQ(full.raw()[i], full_ref[i]);
}

TEST(PhotometricTest, Cases) {
  DepthMap a(4, 4), b(4, 4), c(3, 4);
  a.set(1, 1, 3.0);
  b.set(1, 1, 5.0);
  b.set(2, 2, 7.0);
  EXPECT_EQ(photometric_loss(a, a), 0.0);
  EXPECT_EQ(photometric_loss(a, b), 4.0);
  EXPECT_EQ(photometric_loss(b, a), 4.0);
  EXPECT_THROW(photometric_loss(a, c), ParseError);
  DepthMap d(4, 4);
  d.set(0, 0, 1.0);
  EXPECT_THROW(photometric_loss(a, d), DomainError);
}

TEST(PhotometricTest, MatchesNaiveDoubleLoop) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DepthMap a(40, 30), b(40, 30);
  for (int v = 0; v < 30; ++v)
    for (int x = 0; x < 40; ++x) {
      if (u(rng) < 0.4) a.set(x, v, 1.0 + 50 * u(rng));
      if (u(rng) < 0.4) b.set(x, v, 1.0 + 50 * u(rng));
    }
  double sum = 0.0;
  int n = 0;
  for (int v = 0; v < 30; ++v)
    for (int x = 0; x < 40; ++x)
      if (a.at(x, v) && b.at(x, v)) {
        const double d = *a.at(x, v) - *b.at(x, v);
        sum += d * d;
        ++n;
      }
  EXPECT_NEAR(photometric_loss(a, b), sum / n, 1e-12);
}

TEST(CloudDistanceTest, Cases) {
  const std::vector<Vec3> a{Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(-1, 0, 0)};
  EXPECT_EQ(cloud_distance_loss(a, a), 0.0);
  std::vector<Vec3> up;
  for (const auto& p : a) up.push_back(p + Vec3(0, 0, 1));
  EXPECT_NEAR(cloud_distance_loss(a, up), 1.0, 1e-15);
  const double alpha = 0.7;
  const Mat3 r = euler_to_rotation({alpha, 0, 0});
  std::vector<Vec3> rot;
  for (const auto& p : a) rot.push_back(r * p);
  EXPECT_NEAR(cloud_distance_loss(a, rot), 2.0 * std::sin(alpha / 2), 1e-12);
  EXPECT_NEAR(cloud_distance_loss(rot, a), cloud_distance_loss(a, rot), 1e-15);
  EXPECT_THROW(cloud_distance_loss(a, std::vector<Vec3>{Vec3::Zero()}), ParseError);
}

TEST(CloudDistanceTest, IsometryInvariant) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<Vec3> a, b;
  for (int i = 0; i < 200; ++i) {
    a.emplace_back(u(rng), u(rng), u(rng));
    b.emplace_back(u(rng), u(rng), u(rng));
  }
  const Extrinsic m{euler_to_rotation({0.4, -1.1, 2.0}), Vec3(3, -2, 1)};
  std::vector<Vec3> ma, mb;
  for (int i = 0; i < 200; ++i) {
    ma.push_back(m.apply(a[i]));
    mb.push_back(m.apply(b[i]));
  }
  EXPECT_NEAR(cloud_distance_loss(a, b), cloud_distance_loss(ma, mb), 1e-9);
}

TEST(SmoothL1Test, ElementwiseHelper) {
  const std::vector<double> d{0.5, 0.0, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(smooth_l1(d), 0.125);
  const std::vector<double> big{2.0, -3.0};
  EXPECT_DOUBLE_EQ(smooth_l1(big), 1.5 + 2.5);
}

TEST(SmoothL1Test, QuaternionLoss) {
  const Quaternion q = rotation_to_quaternion(euler_to_rotation({0.3, 0.2, -0.4}));
  EXPECT_EQ(smooth_l1_quat_loss(q, q), 0.0);
  EXPECT_EQ(smooth_l1_quat_loss(q.negated(), q), 0.0);
  EXPECT_EQ(smooth_l1_quat_loss(q, q.negated()), 0.0);
  const Quaternion p = rotation_to_quaternion(euler_to_rotation({-0.3, 0.5, 0.1}));
  const double base = smooth_l1_quat_loss(p, q);
  const std::vector<double> d{p.w - q.w, p.x - q.x, p.y - q.y, p.z - q.z};
  EXPECT_DOUBLE_EQ(base, smooth_l1(d));
  EXPECT_DOUBLE_EQ(smooth_l1_quat_loss(p.negated(), q.negated()), base);
  EXPECT_THROW(smooth_l1_quat_loss({1.5, 0, 0, 0}, q), DomainError);
}

TEST(CombinedLossTest, Examples) {
  EXPECT_DOUBLE_EQ(combined_loss(1.0, 2.0, {1.0, 1.0}), 3.0);
  EXPECT_DOUBLE_EQ(combined_loss(7.0, 2.5, {0.0, 1.0}), 2.5);
  EXPECT_NEAR(combined_loss(0.297, 0.017, {1.0, 1.0}), 0.314, 1e-15);
}

TEST(CostVolumeTest, AllOnesAndOrthogonal) {
  const FeatureMap ones(6, 5, 4, 1.0);
  const auto cv = cost_volume(ones, ones, 2);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x)
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
          const bool in = x + dx >= 0 && x + dx < 6 && y + dy >= 0 && y + dy < 5;
          EXPECT_EQ(cv.at(x, y, dx, dy), in ? 1.0 : 0.0);
        }
  FeatureMap a(4, 4, 2), b(4, 4, 2);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      a.at(x, y, 0) = 1.0 + x;
      b.at(x, y, 1) = 2.0 - y;
    }
  for (double c : cost_volume(a, b, 1).costs) EXPECT_EQ(c, 0.0);
  EXPECT_THROW(cost_volume(a, FeatureMap(4, 3, 2), 1), ParseError);
}

TEST(CostVolumeTest, FixtureMatchesNaiveLoopsAndIsBilinear) {
  const auto [rgb, lidar] = load_feature_fixture();
  ASSERT_EQ(rgb.width, 8);
  ASSERT_EQ(rgb.channels, 3);
  const int d = 2;
  const auto cv = cost_volume(rgb, lidar);
  EXPECT_EQ(cv.radius, d);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int dy = -d; dy <= d; ++dy)
        for (int dx = -d; dx <= d; ++dx) {
          double ref = 0.0;
          if (x + dx >= 0 && x + dx < 8 && y + dy >= 0 && y + dy < 8) {
            for (int c = 0; c < 3; ++c) ref += rgb.at(x, y, c) * lidar.at(x + dx, y + dy, c);
            ref /= 3.0;
          }
          EXPECT_NEAR(cv.at(x, y, dx, dy), ref, 1e-6);
        }
  FeatureMap scaled = rgb;
  for (double& v : scaled.values) v *= 2.5;
  const auto cs = cost_volume(scaled, lidar);
  for (std::size_t i = 0; i < cv.costs.size(); ++i) EXPECT_NEAR(cs.costs[i], 2.5 * cv.costs[i], 1e-12);
  const auto swapped = cost_volume(lidar, rgb);
  for (int y = d; y < 8 - d; ++y)
    for (int x = d; x < 8 - d; ++x)
      for (int dy = -d; dy <= d; ++dy)
        for (int dx = -d; dx <= d; ++dx)
          EXPECT_NEAR(swapped.at(x + dx, y + dy, -dx, -dy), cv.at(x, y, dx, dy), 1e-12);
}

TEST(DepthPngTest, RoundTrip) {
  DepthMap m(20, 10);
  m.set(3, 4, 12.5);
  m.set(19, 9, 0.25);
  const auto path = (std::filesystem::temp_directory_path() / "calibkit_depth_test.png").string();
  write_depth_png(path, m);
  const DepthMap back = read_depth_png(path);
  EXPECT_EQ(back.valid_count(), 2u);
  EXPECT_EQ(back.at(3, 4), 12.5);
  EXPECT_EQ(back.at(19, 9), 0.25);
  EXPECT_FALSE(back.at(0, 0));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace calibkit
