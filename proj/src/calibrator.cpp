#include "calibkit/calibrator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "calibkit/errors.hpp"
#include "calibkit/parallel.hpp"

namespace calibkit {

namespace {

constexpr double kUnscoreable = -std::numeric_limits<double>::infinity();

std::optional<std::pair<int, int>> pixel_on_image(const Pixel& px, const ImageSize& size) {
  if (!std::isfinite(px.u) || !std::isfinite(px.v)) return std::nullopt;
  const double u = std::round(px.u), v = std::round(px.v);
  if (u < 0 || v < 0 || u >= size.width || v >= size.height) return std::nullopt;
  return std::pair{static_cast<int>(u), static_cast<int>(v)};
}

int lattice_extent(double range, double step) {
  return static_cast<int>(std::floor(range / step + 1e-9));
}

// Pixel -> list of masks covering it, in compressed rows.
class MaskIndex {
 public:
  MaskIndex(std::span<const Mask> masks, const ImageSize& size) : size_(size) {
    const std::size_t pixels = static_cast<std::size_t>(size.width) * size.height;
    offsets_.assign(pixels + 1, 0);
    for (const Mask& m : masks) {
      if (m.width != size.width || m.height != size.height) {
        throw ParseError("mask dimensions do not match the image");
      }
      for (std::size_t p = 0; p < pixels; ++p) offsets_[p + 1] += m.bits[p] ? 1 : 0;
    }
    for (std::size_t p = 0; p < pixels; ++p) offsets_[p + 1] += offsets_[p];
    ids_.resize(offsets_.back());
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (std::size_t k = 0; k < masks.size(); ++k)
      for (std::size_t p = 0; p < pixels; ++p)
        if (masks[k].bits[p]) ids_[fill[p]++] = static_cast<std::uint32_t>(k);
  }

  std::span<const std::uint32_t> at(int u, int v) const {
    const std::size_t p = static_cast<std::size_t>(v) * size_.width + u;
    return {ids_.data() + offsets_[p], offsets_[p + 1] - offsets_[p]};
  }

 private:
  ImageSize size_;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> ids_;
};

class Scorer {
 public:
  Scorer(const Scene& scene, const ConsistencyWeights& w, const SearchConfig& cfg)
      : scene_(scene), w_(w), cfg_(cfg), index_(scene.masks, scene.image) {
    w.validate();
    scene.intrinsics.validate();
    if (scene.masks.empty()) throw DomainError("scene has no masks");
    if (scene.cloud.points.empty()) throw DomainError("scene has an empty cloud");
  }

  ConsistencyBreakdown breakdown(const Extrinsic& h) const {
    std::vector<std::vector<AttributedPoint>> members(scene_.masks.size());
    for (const AttributedPoint& p : scene_.cloud.points) {
      const auto px = project(p.position, scene_.intrinsics, h);
      if (!px) continue;
      const auto uv = pixel_on_image(*px, scene_.image);
      if (!uv) continue;
      for (std::uint32_t k : index_.at(uv->first, uv->second)) members[k].push_back(p);
    }

    ConsistencyBreakdown out;
    out.masks.resize(members.size());
    double weighted = 0.0;
    double total_points = 0.0;
    for (std::size_t k = 0; k < members.size(); ++k) {
      MaskScore& ms = out.masks[k];
      ms.points = members[k].size();
      if (ms.points < static_cast<std::size_t>(std::max(cfg_.min_points_per_mask, 1))) continue;
      ms.reflect = reflectivity_consistency(members[k]);
      ms.normal = normal_consistency(members[k]);
      ms.segment = segmentation_consistency(members[k]);
      double sum = 0.0, wsum = 0.0;
      const std::array<std::pair<const std::optional<double>*, double>, 3> parts{
          {{&ms.reflect, w_.reflect}, {&ms.normal, w_.normal}, {&ms.segment, w_.segment}}};
      for (const auto& [value, weight] : parts) {
        if (*value && weight > 0.0) {
          sum += weight * **value;
          wsum += weight;
        }
      }
      if (wsum <= 0.0) continue;
      ms.score = sum / wsum;
      weighted += static_cast<double>(ms.points) * *ms.score;
      total_points += static_cast<double>(ms.points);
    }
    if (total_points == 0.0) throw DomainError("no mask has enough projected points to score");
    out.total = weighted / total_points;
    return out;
  }

  double score(const Extrinsic& h) const {
    try {
      return breakdown(h).total;
    } catch (const DomainError&) {
      return kUnscoreable;
    }
  }

 private:
  const Scene& scene_;
  ConsistencyWeights w_;
  SearchConfig cfg_;
  MaskIndex index_;
};

}  // namespace

std::size_t Mask::area() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

void ConsistencyWeights::validate() const {
  if (reflect < 0.0 || normal < 0.0 || segment < 0.0) {
    throw ParseError("consistency weights must be non-negative");
  }
  if (std::abs(reflect + normal + segment - 1.0) > 1e-9) {
    throw ParseError("consistency weights must sum to 1");
  }
}

void SearchConfig::validate() const {
  const std::array<std::pair<double, double>, 3> pairs{{{coarse_rot_step, coarse_rot_range},
                                                        {fine_rot_step, fine_rot_range},
                                                        {fine_trans_step, fine_trans_range}}};
  for (const auto& [step, range] : pairs) {
    if (!(step > 0.0) || !std::isfinite(step)) throw ParseError("search steps must be positive");
    if (!(range >= step) || !std::isfinite(range)) {
      throw ParseError("search ranges must be at least one step");
    }
  }
  if (min_points_per_mask < 1) throw ParseError("min_points_per_mask must be >= 1");
}

Extrinsic apply_offset(const Extrinsic& base, const PoseOffset& offset, const Vec3& pivot) {
  const Mat3 e = euler_to_rotation(offset.rotation);
  return {e * base.rotation, e * (base.translation - pivot) + pivot + offset.translation};
}

double median_view_depth(const Scene& scene, const Extrinsic& h) {
  std::vector<double> depths;
  for (const AttributedPoint& p : scene.cloud.points) {
    const auto px = project(p.position, scene.intrinsics, h);
    if (px && pixel_on_image(*px, scene.image)) depths.push_back(px->depth);
  }
  if (depths.empty()) return 0.0;
  const auto mid = depths.begin() + static_cast<std::ptrdiff_t>(depths.size() / 2);
  std::nth_element(depths.begin(), mid, depths.end());
  return *mid;
}

std::vector<AttributedPoint> points_in_mask(const Mask& mask, const AttributedCloud& cloud,
                                            const Intrinsics& k, const Extrinsic& h) {
  std::vector<AttributedPoint> out;
  const ImageSize size{mask.width, mask.height};
  for (const AttributedPoint& p : cloud.points) {
    const auto px = project(p.position, k, h);
    if (!px) continue;
    const auto uv = pixel_on_image(*px, size);
    if (uv && mask.test(uv->first, uv->second)) out.push_back(p);
  }
  return out;
}

std::optional<double> reflectivity_consistency(std::span<const AttributedPoint> points) {
  if (points.empty()) return std::nullopt;
  double mean = 0.0;
  for (const auto& p : points) mean += p.reflectivity;
  mean /= static_cast<double>(points.size());
  double var = 0.0;
  for (const auto& p : points) var += (p.reflectivity - mean) * (p.reflectivity - mean);
  var /= static_cast<double>(points.size());
  return 1.0 / (1.0 + std::sqrt(var));
}

std::optional<double> normal_consistency(std::span<const AttributedPoint> points) {
  Vec3 sum = Vec3::Zero();
  std::size_t m = 0;
  for (const auto& p : points) {
    if (!p.normal_reliable) continue;
    sum += p.normal;
    ++m;
  }
  if (m < 2) return std::nullopt;
  const double md = static_cast<double>(m);
  return (sum.squaredNorm() - md) / (md * (md - 1.0));
}

std::optional<double> segmentation_consistency(std::span<const AttributedPoint> points) {
  std::map<int, std::size_t> freq;
  std::size_t m = 0;
  for (const auto& p : points) {
    if (p.segment == kNoise) continue;
    ++freq[p.segment];
    ++m;
  }
  if (m == 0) return std::nullopt;
  double s = 0.0;
  for (const auto& [cls, count] : freq) {
    const double share = static_cast<double>(count) / static_cast<double>(m);
    s += share * share;
  }
  return s;
}

ConsistencyBreakdown consistency_breakdown(const Scene& scene, const Extrinsic& h,
                                           const ConsistencyWeights& w, const SearchConfig& cfg) {
  return Scorer(scene, w, cfg).breakdown(h);
}

double total_consistency(const Scene& scene, const Extrinsic& h, const ConsistencyWeights& w,
                         const SearchConfig& cfg) {
  return consistency_breakdown(scene, h, w, cfg).total;
}

// Scores closer than this are ties: an exactly consistent pose scores 1 only up
// to floating-point rounding, and that noise must not decide a search step.
constexpr double kScoreTolerance = 1e-12;

SearchOutcome coarse_search(const Scene& scene, const Extrinsic& h_init,
                            const ConsistencyWeights& w, const SearchConfig& cfg) {
  cfg.validate();
  const Scorer scorer(scene, w, cfg);
  const int n = lattice_extent(cfg.coarse_rot_range, cfg.coarse_rot_step);
  const int side = 2 * n + 1;
  const std::size_t count = static_cast<std::size_t>(side) * side * side;

  auto offset_of = [&](std::size_t idx) {
    const int a = static_cast<int>(idx / (side * side)) - n;
    const int b = static_cast<int>((idx / side) % side) - n;
    const int c = static_cast<int>(idx % side) - n;
    const double s = deg2rad(cfg.coarse_rot_step);
    return PoseOffset{{a * s, b * s, c * s}, Vec3::Zero()};
  };

  std::vector<double> scores(count);
  parallel_for(count, cfg.threads,
               [&](std::size_t i) { scores[i] = scorer.score(apply_offset(h_init, offset_of(i))); });

  // Sequential reduction keeps the tie-break independent of thread count.
  std::size_t best = count;
  double best_angle = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    if (scores[i] == kUnscoreable) continue;
    const double angle = rotation_angle(euler_to_rotation(offset_of(i).rotation));
    if (best == count || scores[i] > scores[best] + kScoreTolerance ||
        (scores[i] >= scores[best] - kScoreTolerance && angle < best_angle - 1e-12)) {
      best = i;
      best_angle = angle;
    }
  }
  if (best == count) throw DomainError("coarse search: no candidate could be scored");
  return {apply_offset(h_init, offset_of(best)), scores[best], count};
}

SearchOutcome fine_search(const Scene& scene, const Extrinsic& h_coarse,
                          const ConsistencyWeights& w, const SearchConfig& cfg) {
  cfg.validate();
  const Scorer scorer(scene, w, cfg);
  const int rot_n = lattice_extent(cfg.fine_rot_range, cfg.fine_rot_step);
  const int trans_n = lattice_extent(cfg.fine_trans_range, cfg.fine_trans_step);
  const double rs = deg2rad(cfg.fine_rot_step), ts = cfg.fine_trans_step;
  // Rotations pivot on the optical axis at the median depth of the visible
  // points, so a rotation step moves that depth layer little and rotation and
  // translation steps stay nearly independent.
  const Vec3 pivot(0.0, 0.0, median_view_depth(scene, h_coarse));

  using Lattice = std::array<int, 6>;
  auto to_extrinsic = [&](const Lattice& l) {
    if (l == Lattice{}) return h_coarse;
    return apply_offset(h_coarse,
                        {{l[0] * rs, l[1] * rs, l[2] * rs}, Vec3(l[3] * ts, l[4] * ts, l[5] * ts)},
                        pivot);
  };
  std::map<Lattice, double> memo;
  auto score_at = [&](const Lattice& l) {
    const auto it = memo.find(l);
    if (it != memo.end()) return it->second;
    const double s = scorer.score(to_extrinsic(l));
    memo.emplace(l, s);
    return s;
  };

  Lattice cur{};
  double cur_score = score_at(cur);
  if (cur_score == kUnscoreable) throw DomainError("fine search: starting extrinsic cannot be scored");

  // Each step re-optimizes one parameter over its whole lattice line with the
  // others held fixed; ties keep the value nearest the current one. Sweeps
  // repeat until no single-parameter move improves the score.
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t p = 0; p < 6; ++p) {
      const int limit = p < 3 ? rot_n : trans_n;
      int best_v = cur[p];
      double best = cur_score;
      for (int v = -limit; v <= limit; ++v) {
        Lattice next = cur;
        next[p] = v;
        const double sc = score_at(next);
        if (sc > best + kScoreTolerance ||
            (sc >= best - kScoreTolerance && std::abs(v - cur[p]) < std::abs(best_v - cur[p]))) {
          best = sc;
          best_v = v;
        }
      }
      if (best > cur_score + kScoreTolerance) {
        cur[p] = best_v;
        cur_score = best;
        improved = true;
      }
    }
  }
  return {to_extrinsic(cur), cur_score, memo.size()};
}

CalibrationResult calibrate(const Scene& scene, const Extrinsic& h_init,
                            const ConsistencyWeights& w, const SearchConfig& cfg) {
  if (scene.masks.empty()) throw DomainError("calibrate: scene has no masks");
  const SearchOutcome coarse = coarse_search(scene, h_init, w, cfg);
  const SearchOutcome fine = fine_search(scene, coarse.extrinsic, w, cfg);
  CalibrationResult result;
  result.extrinsic = fine.extrinsic;
  result.candidates_evaluated = coarse.candidates_evaluated + fine.candidates_evaluated;
  const ConsistencyBreakdown b = consistency_breakdown(scene, fine.extrinsic, w, cfg);
  result.score = b.total;
  result.per_mask_scores = b.masks;
  return result;
}

std::string format_calibration_report(const CalibrationResult& result,
                                      const std::string& extrinsic_path) {
  char buf[128];
  std::string out;
  std::snprintf(buf, sizeof(buf), "score=%.17g\n", result.score);
  out += buf;
  out += "candidates_evaluated=" + std::to_string(result.candidates_evaluated) + "\n";
  out += "extrinsic=" + extrinsic_path + "\n";
  for (std::size_t k = 0; k < result.per_mask_scores.size(); ++k) {
    const MaskScore& m = result.per_mask_scores[k];
    if (m.score) {
      std::snprintf(buf, sizeof(buf), "mask_%zu=%.17g points=%zu\n", k, *m.score, m.points);
    } else {
      std::snprintf(buf, sizeof(buf), "mask_%zu=skipped points=%zu\n", k, m.points);
    }
    out += buf;
  }
  return out;
}

}  // namespace calibkit
