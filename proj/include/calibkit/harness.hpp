#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "calibkit/calibrator.hpp"
#include "calibkit/geometry.hpp"

namespace calibkit {

/// SplitMix64 stream; uniform() maps the top 53 bits into [0, 1).
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t state) : state_(state) {}
  /// Stream for one benchmark trial: state = seed ^ (trial * golden gamma).
  static SplitMix64 for_trial(std::uint64_t seed, std::uint64_t trial);

  std::uint64_t next();
  double uniform();
  /// Uniform in [-bound, bound).
  double symmetric(double bound) { return (2.0 * uniform() - 1.0) * bound; }

 private:
  std::uint64_t state_;
};

/// Per-axis decalibration bounds. rot_max in degrees, trans_max in meters.
struct DecalibSpec {
  double rot_max = 25.0;
  double trans_max = 1.5;
  std::uint64_t seed = 0;
};

/// Draws (theta, omega, psi, tx, ty, tz) in that order from the trial stream.
Extrinsic sample_decalibration(const DecalibSpec& spec, std::uint64_t trial);

/// H_init = phi * H_gt.
Extrinsic apply_decalibration(const Extrinsic& h_gt, const Extrinsic& phi);
/// phi = H_init * H_gt^-1.
Extrinsic recover_decalibration(const Extrinsic& h_init, const Extrinsic& h_gt);

struct PoseError {
  double trans_cm = 0.0;
  double rot_deg = 0.0;
};

PoseError evaluate(const Extrinsic& h_pred, const Extrinsic& h_gt);

struct TrialResult {
  std::uint64_t trial = 0;
  Extrinsic decalibration;
  std::optional<Extrinsic> predicted;  // empty when the method failed
  double trans_err_cm = 0.0;
  double rot_err_deg = 0.0;
  std::string failure;

  bool ok() const { return predicted.has_value(); }
};

struct BenchmarkReport {
  std::vector<TrialResult> trials;
  double mean_trans_err_cm = 0.0;  // NaN when no trial succeeded
  double mean_rot_err_deg = 0.0;
  std::size_t failed = 0;
  DecalibSpec spec;
};

namespace method {
/// Returns H_gt.
struct Oracle {};
/// Returns H_init unchanged.
struct IdentityPassthrough {};
/// Runs the consistency calibrator from H_init.
struct Calibrator {
  ConsistencyWeights weights;
  SearchConfig search;
};
/// Loads pred_{trial:05}.txt from a directory.
struct PredictionFiles {
  std::string directory;
};
}  // namespace method

using Method = std::variant<method::Oracle, method::IdentityPassthrough, method::Calibrator,
                            method::PredictionFiles>;

std::string prediction_file_name(std::uint64_t trial);

/// Trial i runs on scenes[i % scenes.size()]. Every scene needs a GT extrinsic.
/// Failures of the method are recorded per trial and excluded from the means.
BenchmarkReport run_benchmark(std::span<const Scene> scenes, const Method& method,
                              const DecalibSpec& spec, std::size_t n_trials, unsigned threads = 0);

/// Recomputes the means from the trial list.
void finalize_report(BenchmarkReport& report);

/// "%.9g" with a trailing ".0" when the result would otherwise read as an integer.
std::string format_number(double v);

/// CSV: header `trial,tx_err_cm,rot_err_deg`, one row per trial (nan for
/// failed trials), then a `mean,...` row.
std::string format_report_csv(const BenchmarkReport& report);
void write_report(const BenchmarkReport& report, const std::string& path);

struct ParsedReportRow {
  std::string trial;
  double trans_err_cm = 0.0;
  double rot_err_deg = 0.0;
};
std::vector<ParsedReportRow> parse_report_csv(std::istream& in);

}  // namespace calibkit
