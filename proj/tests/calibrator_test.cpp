#include "calibkit/calibrator.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include "calibkit/errors.hpp"
#include "calibkit/ingest.hpp"

namespace calibkit {
namespace {

const Intrinsics kCam{500.0, 500.0, 320.0, 240.0, std::nullopt, std::nullopt};

AttributedPoint at_pixel(double u, double v, double depth, Vec3 normal, double r, int seg) {
  AttributedPoint p;
  p.position = unproject(u, v, depth, kCam);
  p.normal = normal.normalized();
  p.reflectivity = r;
  p.segment = seg;
  return p;
}

Mask rect_mask(int u0, int v0, int u1, int v1) {
  Mask m(640, 480);
  for (int v = v0; v < v1; ++v)
    for (int u = u0; u < u1; ++u) m.set(u, v);
  return m;
}

const SyntheticScene& default_scene() {
  static const SyntheticScene s = generate_synthetic_scene({});
  return s;
}

SyntheticSceneConfig room_config(std::uint64_t seed) {
  SyntheticSceneConfig cfg;
  cfg.seed = seed;
  cfg.room = true;
  cfg.object_count = 6;
  cfg.points_per_object = 400;
  return cfg;
}

const SyntheticScene& room_scene() {
  static const SyntheticScene s = generate_synthetic_scene(room_config(3));
  return s;
}

TEST(ConfigTest, Validation) {
  EXPECT_NO_THROW(ConsistencyWeights{}.validate());
  EXPECT_THROW((ConsistencyWeights{0.5, 0.5, 0.5}.validate()), ParseError);
  EXPECT_THROW((ConsistencyWeights{-0.5, 1.0, 0.5}.validate()), ParseError);
  EXPECT_NO_THROW(SearchConfig{}.validate());
  SearchConfig c;
  c.coarse_rot_step = 30.0;
  EXPECT_THROW(c.validate(), ParseError);
  c = {};
  c.fine_trans_step = 0.0;
  EXPECT_THROW(c.validate(), ParseError);
}

TEST(PointsInMaskTest, FullEmptyAndBehind) {
  AttributedCloud cloud;
  cloud.points.push_back(at_pixel(100, 100, 5, Vec3::UnitZ(), 0, 0));
  cloud.points.push_back(at_pixel(600, 400, 8, Vec3::UnitZ(), 0, 0));
  AttributedPoint behind;
  behind.position = Vec3(0, 0, -3);
  cloud.points.push_back(behind);
  AttributedPoint outside;
  outside.position = Vec3(100, 0, 1);
  cloud.points.push_back(outside);
  EXPECT_EQ(points_in_mask(rect_mask(0, 0, 640, 480), cloud, kCam, Extrinsic::identity()).size(), 2u);
  EXPECT_TRUE(points_in_mask(Mask(640, 480), cloud, kCam, Extrinsic::identity()).empty());
  const auto one = points_in_mask(rect_mask(90, 90, 110, 110), cloud, kCam, Extrinsic::identity());
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].position, cloud.points[0].position);
}

TEST(PointsInMaskTest, SyntheticMasksCaptureExactlyTheirObjects) {
  for (const SyntheticScene* s : {&default_scene(), &room_scene()}) {
    const Scene& sc = s->scene;
    const Extrinsic gt = *sc.gt_extrinsic;
    for (std::size_t m = 0; m < sc.masks.size(); ++m) {
      std::vector<Vec3> expected;
      // Naive per-point check against the generator's bookkeeping.
      for (std::size_t i = 0; i < s->raw.size(); ++i)
        if (s->mask_of_point[i] == static_cast<int>(m)) expected.push_back(sc.cloud.points[i].position);
      const auto got = points_in_mask(sc.masks[m], sc.cloud, sc.intrinsics, gt);
      ASSERT_EQ(got.size(), expected.size()) << m;
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].position, expected[i]);
    }
  }
}

TEST(SubScoreTest, Reflectivity) {
  std::vector<AttributedPoint> pts(10);
  for (auto& p : pts) p.reflectivity = 0.3;
  EXPECT_DOUBLE_EQ(*reflectivity_consistency(pts), 1.0);
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i].reflectivity = i % 2 ? 1.0 : 0.0;
  EXPECT_NEAR(*reflectivity_consistency(pts), 2.0 / 3.0, 1e-15);
  EXPECT_FALSE(reflectivity_consistency({}));
  // Two-pass population variance oracle.
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& p : pts) p.reflectivity = u(rng);
  double mean = 0.0;
  for (const auto& p : pts) mean += p.reflectivity;
  mean /= pts.size();
  double var = 0.0;
  for (const auto& p : pts) var += (p.reflectivity - mean) * (p.reflectivity - mean);
  var /= pts.size();
  EXPECT_NEAR(*reflectivity_consistency(pts), 1.0 / (1.0 + std::sqrt(var)), 1e-12);
}

TEST(SubScoreTest, Normals) {
  std::vector<AttributedPoint> same(5);
  EXPECT_NEAR(*normal_consistency(same), 1.0, 1e-15);
  std::vector<AttributedPoint> ortho(2);
  ortho[1].normal = Vec3::UnitX();
  EXPECT_NEAR(*normal_consistency(ortho), 0.0, 1e-15);
  EXPECT_FALSE(normal_consistency(std::vector<AttributedPoint>(1)));
  std::vector<AttributedPoint> unreliable(4);
  for (auto& p : unreliable) p.normal_reliable = false;
  EXPECT_FALSE(normal_consistency(unreliable));
}

TEST(SubScoreTest, NormalsClosedFormMatchesPairwiseLoop) {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<AttributedPoint> pts(50);
  for (auto& p : pts) p.normal = Vec3(n(rng), n(rng), n(rng)).normalized();
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      sum += pts[i].normal.dot(pts[j].normal);
      ++pairs;
    }
  EXPECT_NEAR(*normal_consistency(pts), sum / pairs, 1e-9);
}

TEST(SubScoreTest, Segmentation) {
  std::vector<AttributedPoint> pts(4);
  for (auto& p : pts) p.segment = 2;
  EXPECT_DOUBLE_EQ(*segmentation_consistency(pts), 1.0);
  pts[0].segment = pts[1].segment = 0;
  EXPECT_DOUBLE_EQ(*segmentation_consistency(pts), 0.5);
  pts[1].segment = 2;
  EXPECT_DOUBLE_EQ(*segmentation_consistency(pts), 0.625);
  pts.push_back({});  // noise is ignored
  EXPECT_DOUBLE_EQ(*segmentation_consistency(pts), 0.625);
  EXPECT_FALSE(segmentation_consistency(std::vector<AttributedPoint>(3)));
}

Scene two_mask_scene() {
  Scene s;
  s.intrinsics = kCam;
  s.image = {640, 480};
  s.masks = {rect_mask(0, 0, 100, 100), rect_mask(200, 200, 300, 300)};
  for (int i = 0; i < 10; ++i) s.cloud.points.push_back(at_pixel(10 + 5 * i, 50, 5, -Vec3::UnitZ(), 0.2, 0));
  for (int i = 0; i < 30; ++i)
    s.cloud.points.push_back(
        at_pixel(210 + 2 * i, 250, 6, Vec3(i % 2 ? 1.0 : -1.0, 0.0, 0.0), 0.7, 1));
  s.cloud.class_count = 2;
  return s;
}

TEST(TotalConsistencyTest, PointWeightedMean) {
  const Scene s = two_mask_scene();
  const ConsistencyWeights normal_only{0.0, 1.0, 0.0};
  SearchConfig cfg;
  cfg.min_points_per_mask = 5;
  const auto b = consistency_breakdown(s, Extrinsic::identity(), normal_only, cfg);
  ASSERT_EQ(b.masks.size(), 2u);
  EXPECT_EQ(b.masks[0].points, 10u);
  EXPECT_EQ(b.masks[1].points, 30u);
  EXPECT_NEAR(*b.masks[0].score, 1.0, 1e-15);
  EXPECT_NEAR(*b.masks[1].score, -1.0 / 29.0, 1e-15);
  EXPECT_NEAR(b.total, (10 * 1.0 + 30 * (-1.0 / 29.0)) / 40.0, 1e-15);
  EXPECT_NEAR(total_consistency(s, Extrinsic::identity(), {}, cfg),
              (10 * 1.0 + 30 * ((1.0 + -1.0 / 29.0 + 1.0) / 3.0)) / 40.0, 1e-15);
}

TEST(TotalConsistencyTest, UndersizedMasksSkipped) {
  const Scene s = two_mask_scene();
  SearchConfig cfg;
  cfg.min_points_per_mask = 20;
  const auto b = consistency_breakdown(s, Extrinsic::identity(), {0.0, 1.0, 0.0}, cfg);
  EXPECT_FALSE(b.masks[0].score);
  EXPECT_NEAR(b.total, -1.0 / 29.0, 1e-15);
  cfg.min_points_per_mask = 31;
  EXPECT_THROW(total_consistency(s, Extrinsic::identity(), {}, cfg), DomainError);
}

TEST(TotalConsistencyTest, UniformObjectScoresOne) {
  Scene s;
  s.intrinsics = kCam;
  s.image = {640, 480};
  s.masks = {rect_mask(0, 0, 640, 480)};
  for (int i = 0; i < 40; ++i) s.cloud.points.push_back(at_pixel(100 + i, 100, 4, -Vec3::UnitZ(), 0.4, 0));
  EXPECT_DOUBLE_EQ(total_consistency(s, Extrinsic::identity(), {}, {}), 1.0);
}

TEST(TotalConsistencyTest, NoMasksIsDomainError) {
  Scene s = default_scene().scene;
  s.masks.clear();
  EXPECT_THROW(total_consistency(s, *s.gt_extrinsic, {}, {}), DomainError);
  EXPECT_THROW(calibrate(s, *s.gt_extrinsic), DomainError);
}

TEST(TotalConsistencyTest, SyntheticGtScoresOne) {
  SyntheticSceneConfig cfg;
  cfg.object_count = 2;
  cfg.reflectivities = {10.0, 40.0};
  const auto s = generate_synthetic_scene(cfg);
  EXPECT_NEAR(total_consistency(s.scene, *s.scene.gt_extrinsic, {}, {}), 1.0, 1e-12);
  EXPECT_NEAR(total_consistency(default_scene().scene, *default_scene().scene.gt_extrinsic, {}, {}),
              1.0, 1e-12);
}

TEST(TotalConsistencyTest, GtBeatsFiveDegreeCandidate) {
  const std::array<EulerAngles, 3> offsets{EulerAngles{deg2rad(5), 0, 0}, EulerAngles{0, deg2rad(5), 0},
                                           EulerAngles{0, 0, deg2rad(5)}};
  // Room scene: every surface is textured with distinct labels, so GT wins strictly.
  const Scene& room = room_scene().scene;
  const double room_gt = total_consistency(room, *room.gt_extrinsic, {}, {});
  for (const EulerAngles& e : offsets)
    EXPECT_GT(room_gt, total_consistency(room, apply_offset(*room.gt_extrinsic, {e, Vec3::Zero()}), {}, {}));
  // Default scene: isolated objects against empty background can still land
  // inside their masks after a small rotation, so GT is an argmax but not a
  // strict one.
  const Scene& flat = default_scene().scene;
  const double flat_gt = total_consistency(flat, *flat.gt_extrinsic, {}, {});
  for (const EulerAngles& e : offsets)
    EXPECT_GE(flat_gt,
              total_consistency(flat, apply_offset(*flat.gt_extrinsic, {e, Vec3::Zero()}), {}, {}) - 1e-12);
}

TEST(TotalConsistencyTest, FrameChangeInvariance) {
  const Scene& base = room_scene().scene;
  const Extrinsic gt = *base.gt_extrinsic;
  const Extrinsic m{euler_to_rotation({0.7, -0.3, 1.2}), Vec3(4.0, -2.0, 0.5)};
  Scene moved = base;
  for (auto& p : moved.cloud.points) {
    p.position = m.apply(p.position);
    p.normal = m.rotation * p.normal;
  }
  const Extrinsic h = apply_offset(gt, {{0.02, -0.01, 0.015}, Vec3(0.1, 0.0, -0.05)});
  EXPECT_NEAR(total_consistency(base, h, {}, {}), total_consistency(moved, compose(h, invert(m)), {}, {}),
              1e-9);
}

TEST(TotalConsistencyTest, PermutationInvariance) {
  const Scene& base = room_scene().scene;
  const Extrinsic h = apply_offset(*base.gt_extrinsic, {{0.03, 0.01, -0.02}, Vec3(0.05, 0.1, 0.0)});
  const double ref = total_consistency(base, h, {}, {});
  Scene p = base;
  std::mt19937_64 rng(2);
  std::shuffle(p.cloud.points.begin(), p.cloud.points.end(), rng);
  std::shuffle(p.masks.begin(), p.masks.end(), rng);
  EXPECT_NEAR(total_consistency(p, h, {}, {}), ref, 1e-12);
}

TEST(ApplyOffsetTest, PivotSemantics) {
  const Extrinsic base{euler_to_rotation({0.1, 0.2, 0.3}), Vec3(1, 2, 3)};
  const PoseOffset off{{0.05, -0.02, 0.01}, Vec3(0.1, 0, 0)};
  const Mat3 e = euler_to_rotation(off.rotation);
  const Extrinsic plain = apply_offset(base, off);
  EXPECT_LT((plain.rotation - e * base.rotation).norm(), 1e-15);
  EXPECT_LT((plain.translation - (e * base.translation + off.translation)).norm(), 1e-15);
  const Vec3 pivot(0, 0, 6);
  const Extrinsic piv = apply_offset(base, off, pivot);
  // A camera-frame point at the pivot only moves by the translation offset.
  const Vec3 lidar_pt = invert(base).apply(pivot);
  EXPECT_LT((piv.apply(lidar_pt) - (pivot + off.translation)).norm(), 1e-12);
}

TEST(CoarseSearchTest, GridCardinality) {
  const Scene& s = default_scene().scene;
  SearchConfig cfg;
  cfg.coarse_rot_step = 5.0;
  cfg.coarse_rot_range = 5.0;
  EXPECT_EQ(coarse_search(s, *s.gt_extrinsic, {}, cfg).candidates_evaluated, 27u);
}

TEST(CoarseSearchTest, ArgmaxOracleAndGridRecovery) {
  const Scene& s = room_scene().scene;
  const Extrinsic gt = *s.gt_extrinsic;
  SearchConfig cfg;
  cfg.coarse_rot_step = 5.0;
  cfg.coarse_rot_range = 10.0;
  // GT offset lies exactly on the grid: h_init = E(-5, 5, 0)^-1 * gt.
  const Mat3 e = euler_to_rotation({deg2rad(-5), deg2rad(5), 0});
  const Extrinsic init{e.transpose() * gt.rotation, gt.translation};
  const SearchOutcome out = coarse_search(s, init, {}, cfg);
  EXPECT_EQ(out.candidates_evaluated, 125u);
  EXPECT_LT(rotation_error_deg(out.extrinsic.rotation, gt.rotation), 1e-9);
  // Independent exhaustive rescoring.
  for (int a = -2; a <= 2; ++a)
    for (int b = -2; b <= 2; ++b)
      for (int c = -2; c <= 2; ++c) {
        const PoseOffset off{{deg2rad(5.0 * a), deg2rad(5.0 * b), deg2rad(5.0 * c)}, Vec3::Zero()};
        EXPECT_GE(out.score, total_consistency(s, apply_offset(init, off), {}, cfg));
      }
  EXPECT_DOUBLE_EQ(out.score, total_consistency(s, out.extrinsic, {}, cfg));
}

TEST(CoarseSearchTest, GtInitReturnsZeroOffsetAndIsThreadIndependent) {
  const Scene& s = default_scene().scene;
  const Extrinsic gt = *s.gt_extrinsic;
  SearchConfig cfg;
  cfg.coarse_rot_range = 10.0;
  cfg.threads = 1;
  const SearchOutcome one = coarse_search(s, gt, {}, cfg);
  EXPECT_EQ(one.extrinsic.matrix(), gt.matrix());
  cfg.threads = 4;
  const SearchOutcome four = coarse_search(s, gt, {}, cfg);
  EXPECT_EQ(four.extrinsic.matrix(), one.extrinsic.matrix());
  EXPECT_EQ(four.score, one.score);
}

TEST(FineSearchTest, OptimalInputUnchanged) {
  const Scene& s = room_scene().scene;
  const Extrinsic gt = *s.gt_extrinsic;
  const SearchOutcome out = fine_search(s, gt, {}, {});
  EXPECT_EQ(out.extrinsic.matrix(), gt.matrix());
}

TEST(FineSearchTest, CorrectsOneStepTranslationError) {
  const Scene& s = room_scene().scene;
  const Extrinsic gt = *s.gt_extrinsic;
  Extrinsic off = gt;
  off.translation.x() += 0.05;
  const double before = total_consistency(s, off, {}, {});
  const SearchOutcome out = fine_search(s, off, {}, {});
  EXPECT_GT(out.score, before);
  EXPECT_LT(translation_error_cm(out.extrinsic.translation, gt.translation), 1e-6);
  EXPECT_LT(rotation_error_deg(out.extrinsic.rotation, gt.rotation), 1e-6);
}

TEST(FineSearchTest, NeverDecreasesScore) {
  const Scene& s = room_scene().scene;
  const Extrinsic gt = *s.gt_extrinsic;
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> r(-0.05, 0.05), t(-0.2, 0.2);
  SearchConfig cfg;
  cfg.fine_rot_range = 2.0;
  cfg.fine_trans_range = 0.2;
  for (int i = 0; i < 3; ++i) {
    const Extrinsic h = apply_offset(gt, {{r(rng), r(rng), r(rng)}, Vec3(t(rng), t(rng), t(rng))});
    const double before = total_consistency(s, h, {}, cfg);
    const SearchOutcome out = fine_search(s, h, {}, cfg);
    EXPECT_GE(out.score, before);
    EXPECT_DOUBLE_EQ(out.score, total_consistency(s, out.extrinsic, {}, cfg));
  }
}

TEST(CalibrateTest, GtInitStaysWithinOneFineStep) {
  const Scene& s = room_scene().scene;
  const Extrinsic gt = *s.gt_extrinsic;
  SearchConfig cfg;
  cfg.coarse_rot_range = 10.0;
  const CalibrationResult r = calibrate(s, gt, {}, cfg);
  EXPECT_LE(rotation_error_deg(r.extrinsic.rotation, gt.rotation), cfg.fine_rot_step + 1e-9);
  EXPECT_LE(translation_error_cm(r.extrinsic.translation, gt.translation),
            100.0 * cfg.fine_trans_step + 1e-9);
  EXPECT_NEAR(r.score, total_consistency(s, r.extrinsic, {}, cfg), 1e-12);
  EXPECT_EQ(r.per_mask_scores.size(), s.masks.size());
}

TEST(CalibrateTest, RecoversModerateDecalibration) {
  const Scene& s = room_scene().scene;
  const Extrinsic gt = *s.gt_extrinsic;
  SearchConfig cfg;
  cfg.coarse_rot_range = 12.0;
  cfg.coarse_rot_step = 3.0;
  cfg.fine_trans_range = 0.8;
  const Extrinsic init = apply_offset(gt, {{deg2rad(4), deg2rad(-3), deg2rad(2)}, Vec3(0.2, -0.1, 0.15)});
  const CalibrationResult r = calibrate(s, init, {}, cfg);
  EXPECT_LT(rotation_error_deg(r.extrinsic.rotation, gt.rotation), 1.0);
  EXPECT_LT(translation_error_cm(r.extrinsic.translation, gt.translation), 10.0);
}

TEST(ReportTest, KeyValueLines) {
  CalibrationResult r;
  r.score = 0.5;
  r.candidates_evaluated = 12;
  r.per_mask_scores.push_back({25, 0.75, 1.0, 0.5, 0.75});
  r.per_mask_scores.push_back({3, std::nullopt, std::nullopt, std::nullopt, std::nullopt});
  const std::string text = format_calibration_report(r, "out/pred.txt");
  EXPECT_NE(text.find("score=0.5"), std::string::npos);
  EXPECT_NE(text.find("candidates_evaluated=12"), std::string::npos);
  EXPECT_NE(text.find("extrinsic=out/pred.txt"), std::string::npos);
  EXPECT_NE(text.find("skipped"), std::string::npos);
}

}  // namespace
}  // namespace calibkit
