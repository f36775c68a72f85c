#include "calibkit/harness.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>

#include "calibkit/errors.hpp"
#include "calibkit/parallel.hpp"

namespace calibkit {

namespace {
constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;
}  // namespace

SplitMix64 SplitMix64::for_trial(std::uint64_t seed, std::uint64_t trial) {
  return SplitMix64(seed ^ (trial * kGoldenGamma));
}

std::uint64_t SplitMix64::next() {
  std::uint64_t z = (state_ += kGoldenGamma);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double SplitMix64::uniform() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

Extrinsic sample_decalibration(const DecalibSpec& spec, std::uint64_t trial) {
  if (!(spec.rot_max >= 0.0) || !(spec.trans_max >= 0.0)) {
    throw ParseError("decalibration bounds must be non-negative");
  }
  SplitMix64 rng = SplitMix64::for_trial(spec.seed, trial);
  const double rmax = deg2rad(spec.rot_max);
  EulerAngles a;
  a.theta = rng.symmetric(rmax);
  a.omega = rng.symmetric(rmax);
  a.psi = rng.symmetric(rmax);
  Vec3 t;
  t.x() = rng.symmetric(spec.trans_max);
  t.y() = rng.symmetric(spec.trans_max);
  t.z() = rng.symmetric(spec.trans_max);
  return {euler_to_rotation(a), t};
}

Extrinsic apply_decalibration(const Extrinsic& h_gt, const Extrinsic& phi) {
  return compose(phi, h_gt);
}

Extrinsic recover_decalibration(const Extrinsic& h_init, const Extrinsic& h_gt) {
  return compose(h_init, invert(h_gt));
}

PoseError evaluate(const Extrinsic& h_pred, const Extrinsic& h_gt) {
  return {translation_error_cm(h_pred.translation, h_gt.translation),
          rotation_error_deg(h_pred.rotation, h_gt.rotation)};
}

std::string prediction_file_name(std::uint64_t trial) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pred_%05llu.txt", static_cast<unsigned long long>(trial));
  return buf;
}

void finalize_report(BenchmarkReport& report) {
  double st = 0.0, sr = 0.0;
  std::size_t n = 0;
  report.failed = 0;
  for (const TrialResult& t : report.trials) {
    if (!t.ok()) {
      ++report.failed;
      continue;
    }
    st += t.trans_err_cm;
    sr += t.rot_err_deg;
    ++n;
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  report.mean_trans_err_cm = n ? st / static_cast<double>(n) : nan;
  report.mean_rot_err_deg = n ? sr / static_cast<double>(n) : nan;
}

BenchmarkReport run_benchmark(std::span<const Scene> scenes, const Method& method,
                              const DecalibSpec& spec, std::size_t n_trials, unsigned threads) {
  if (scenes.empty()) throw ParseError("run_benchmark: no scenes");
  for (const Scene& s : scenes)
    if (!s.gt_extrinsic) throw ParseError("run_benchmark: every scene needs a GT extrinsic");

  BenchmarkReport report;
  report.spec = spec;
  report.trials.resize(n_trials);
  // Calibrator runs are parallelized across trials, so each search runs single-threaded.
  parallel_for(n_trials, threads, [&](std::size_t i) {
    TrialResult& tr = report.trials[i];
    tr.trial = i;
    const Scene& scene = scenes[i % scenes.size()];
    const Extrinsic& gt = *scene.gt_extrinsic;
    tr.decalibration = sample_decalibration(spec, i);
    const Extrinsic h_init = apply_decalibration(gt, tr.decalibration);
    try {
      tr.predicted = std::visit(
          Overloaded{
              [&](const method::Oracle&) { return gt; },
              [&](const method::IdentityPassthrough&) { return h_init; },
              [&](const method::Calibrator& c) {
                SearchConfig cfg = c.search;
                cfg.threads = 1;
                return calibrate(scene, h_init, c.weights, cfg).extrinsic;
              },
              [&](const method::PredictionFiles& p) {
                const auto path = std::filesystem::path(p.directory) / prediction_file_name(i);
                if (!std::filesystem::exists(path)) {
                  throw ParseError("missing prediction file " + path.string());
                }
                return read_extrinsic_file(path.string());
              }},
          method);
      const PoseError e = evaluate(*tr.predicted, gt);
      tr.trans_err_cm = e.trans_cm;
      tr.rot_err_deg = e.rot_deg;
    } catch (const DomainError& e) {
      tr.predicted.reset();
      tr.failure = e.what();
    }
  });
  finalize_report(report);
  return report;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  std::string s(buf);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string format_report_csv(const BenchmarkReport& report) {
  std::string out = "trial,tx_err_cm,rot_err_deg\n";
  for (const TrialResult& t : report.trials) {
    out += std::to_string(t.trial) + ",";
    if (t.ok()) {
      out += format_number(t.trans_err_cm) + "," + format_number(t.rot_err_deg) + "\n";
    } else {
      out += "nan,nan\n";
    }
  }
  out += "mean," + format_number(report.mean_trans_err_cm) + "," +
         format_number(report.mean_rot_err_deg) + "\n";
  return out;
}

void write_report(const BenchmarkReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write report: " + path);
  out << format_report_csv(report);
  if (!out) throw ParseError("report write failed: " + path);
}

std::vector<ParsedReportRow> parse_report_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "trial,tx_err_cm,rot_err_deg") {
    throw ParseError("report CSV: missing header");
  }
  auto parse = [](const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    try {
      return std::stod(s);
    } catch (const std::exception&) {
      throw ParseError("report CSV: bad number '" + s + "'");
    }
  };
  std::vector<ParsedReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b, c;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, c)) {
      throw ParseError("report CSV: malformed row '" + line + "'");
    }
    rows.push_back({a, parse(b), parse(c)});
  }
  return rows;
}

}  // namespace calibkit
