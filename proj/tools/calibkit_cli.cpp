// Command-line front end: project, decalib, calibrate, evaluate, bench,
// gen-synthetic. Exit codes: 0 success, 2 usage/parse error, 3 domain failure.
// Every command prints its resolved configuration and ends with a RESULT: line.

#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "calibkit/calibrator.hpp"
#include "calibkit/errors.hpp"
#include "calibkit/geometry.hpp"
#include "calibkit/harness.hpp"
#include "calibkit/ingest.hpp"

namespace ck = calibkit;
namespace fs = std::filesystem;

namespace {

struct SearchFlags {
  ck::SearchConfig search;
  ck::ConsistencyWeights weights;
  ck::PreprocessParams preprocess;

  void attach(CLI::App* cmd) {
    cmd->add_option("--coarse-step", search.coarse_rot_step, "coarse rotation step (deg)");
    cmd->add_option("--coarse-range", search.coarse_rot_range, "coarse rotation half-range (deg)");
    cmd->add_option("--fine-rot-step", search.fine_rot_step, "fine rotation step (deg)");
    cmd->add_option("--fine-trans-step", search.fine_trans_step, "fine translation step (m)");
    cmd->add_option("--fine-rot-range", search.fine_rot_range, "fine rotation half-range (deg)");
    cmd->add_option("--fine-trans-range", search.fine_trans_range, "fine translation half-range (m)");
    cmd->add_option("--min-points", search.min_points_per_mask, "minimum projected points per mask");
    cmd->add_option("--w-reflect", weights.reflect, "reflectivity consistency weight");
    cmd->add_option("--w-normal", weights.normal, "normal consistency weight");
    cmd->add_option("--w-segment", weights.segment, "segmentation consistency weight");
    cmd->add_option("--knn", preprocess.knn, "neighbors for normal estimation");
    cmd->add_option("--cluster-radius", preprocess.cluster_radius, "cluster link distance (m)");
    cmd->add_option("--min-cluster", preprocess.min_cluster_points, "smallest non-noise cluster");
  }

  void validate() const {
    search.validate();
    weights.validate();
    if (preprocess.knn < 3) throw ck::ParseError("--knn must be >= 3");
    if (!(preprocess.cluster_radius > 0.0)) throw ck::ParseError("--cluster-radius must be > 0");
    if (preprocess.min_cluster_points < 1) throw ck::ParseError("--min-cluster must be >= 1");
  }

  void echo() const {
    std::cout << "config: coarse_step_deg=" << search.coarse_rot_step
              << " coarse_range_deg=" << search.coarse_rot_range
              << " fine_rot_step_deg=" << search.fine_rot_step
              << " fine_trans_step_m=" << search.fine_trans_step
              << " fine_rot_range_deg=" << search.fine_rot_range
              << " fine_trans_range_m=" << search.fine_trans_range
              << " min_points=" << search.min_points_per_mask << "\n"
              << "config: weights=" << weights.reflect << "," << weights.normal << ","
              << weights.segment << " knn=" << preprocess.knn
              << " cluster_radius_m=" << preprocess.cluster_radius
              << " min_cluster=" << preprocess.min_cluster_points
              << " threads=" << search.threads << "\n";
  }
};

std::string fmt(double v) { return ck::format_number(v); }

int run_project(const std::string& manifest, const std::string& extrinsic_path,
                const std::string& out) {
  std::cout << "config: manifest=" << manifest << " extrinsic=" << extrinsic_path
            << " out=" << out << "\n";
  const ck::SceneManifest m = ck::read_manifest(manifest);
  const fs::path base = fs::path(manifest).parent_path();
  const ck::Rgb8 image = ck::read_rgb_image((base / m.image).string());
  const auto raw = ck::read_velodyne_file((base / m.cloud).string());
  const ck::KittiCalib calib = ck::read_kitti_calib_file((base / m.calib).string());
  const ck::Extrinsic h = ck::read_extrinsic_file(extrinsic_path);

  std::vector<ck::Vec3> cloud;
  cloud.reserve(raw.size());
  for (const auto& p : raw) cloud.push_back(p.position());
  const std::size_t visible = ck::render_overlay(image, cloud, calib.intrinsics(m.camera), h, out);
  std::cout << "visible_points=" << visible << "\n";
  if (visible == 0) throw ck::DomainError("no point projects into the image");
  std::cout << "RESULT: visible=" << visible << " overlay=" << out << "\n";
  return 0;
}

int run_decalib(const std::string& gt_path, const std::string& out, const ck::DecalibSpec& spec,
                std::uint64_t trial) {
  std::cout << "config: gt=" << gt_path << " out=" << out << " rot_max_deg=" << spec.rot_max
            << " (per axis) trans_max_m=" << spec.trans_max << " (per axis) seed=" << spec.seed
            << " trial=" << trial << "\n";
  const ck::Extrinsic gt = ck::read_extrinsic_file(gt_path);
  const ck::Extrinsic phi = ck::sample_decalibration(spec, trial);
  ck::write_extrinsic_file(out, ck::apply_decalibration(gt, phi));
  const double rot = ck::rad2deg(ck::rotation_angle(phi.rotation));
  const double trans = phi.translation.norm();
  std::cout << "decalibration: rotation_deg=" << fmt(rot) << " translation_m=" << fmt(trans) << "\n";
  std::cout << "RESULT: rot_deg=" << fmt(rot) << " trans_m=" << fmt(trans) << "\n";
  return 0;
}

int run_calibrate(const std::string& manifest, const std::string& init_path,
                  const std::string& out, std::string report, SearchFlags flags) {
  flags.validate();
  if (report.empty()) report = out + ".report";
  std::cout << "config: manifest=" << manifest << " init=" << init_path << " out=" << out
            << " report=" << report << "\n";
  flags.echo();
  const ck::Extrinsic init = ck::read_extrinsic_file(init_path);
  const ck::LoadedScene loaded = ck::load_scene(manifest, flags.preprocess);
  if (loaded.scene.masks.empty()) throw ck::DomainError("manifest provides no masks");
  const ck::CalibrationResult result =
      ck::calibrate(loaded.scene, init, flags.weights, flags.search);
  ck::write_extrinsic_file(out, result.extrinsic);
  {
    std::ofstream r(report, std::ios::binary);
    r << ck::format_calibration_report(result, out);
    if (!r) throw ck::ParseError("cannot write report " + report);
  }
  std::cout << "score=" << fmt(result.score) << " candidates=" << result.candidates_evaluated << "\n";
  std::string line = "RESULT: score=" + fmt(result.score);
  if (loaded.scene.gt_extrinsic) {
    const ck::PoseError e = ck::evaluate(result.extrinsic, *loaded.scene.gt_extrinsic);
    std::cout << "error vs gt: trans_cm=" << fmt(e.trans_cm) << " rot_deg=" << fmt(e.rot_deg) << "\n";
    line += " trans_err_cm=" + fmt(e.trans_cm) + " rot_err_deg=" + fmt(e.rot_deg);
  }
  std::cout << line << "\n";
  return 0;
}

int run_evaluate(const std::string& pred, const std::string& gt) {
  std::cout << "config: pred=" << pred << " gt=" << gt << "\n";
  const ck::PoseError e = ck::evaluate(ck::read_extrinsic_file(pred), ck::read_extrinsic_file(gt));
  std::cout << "tx_err_cm,rot_err_deg\n";
  std::cout << "RESULT: " << fmt(e.trans_cm) << "," << fmt(e.rot_deg) << "\n";
  return 0;
}

int run_bench(const std::vector<std::string>& manifests, const std::string& method_name,
              const std::string& pred_dir, const ck::DecalibSpec& spec, std::size_t trials,
              const std::string& out, unsigned threads, SearchFlags flags) {
  flags.validate();
  std::cout << "config: method=" << method_name << " trials=" << trials
            << " rot_max_deg=" << spec.rot_max << " (per axis) trans_max_m=" << spec.trans_max
            << " (per axis) seed=" << spec.seed << " threads=" << threads << " out=" << out << "\n";
  if (method_name == "calibrate") flags.echo();

  ck::Method method;
  if (method_name == "oracle") method = ck::method::Oracle{};
  else if (method_name == "identity") method = ck::method::IdentityPassthrough{};
  else if (method_name == "calibrate") method = ck::method::Calibrator{flags.weights, flags.search};
  else if (method_name == "predictions") {
    if (pred_dir.empty()) throw ck::ParseError("--method predictions needs --pred-dir");
    method = ck::method::PredictionFiles{pred_dir};
  } else {
    throw ck::ParseError("unknown method '" + method_name + "'");
  }

  // Only the calibrator needs attributed clouds.
  ck::PreprocessParams pre = flags.preprocess;
  std::vector<ck::Scene> scenes;
  for (const auto& m : manifests) {
    if (method_name == "calibrate") {
      scenes.push_back(ck::load_scene(m, pre).scene);
    } else {
      const ck::SceneManifest sm = ck::read_manifest(m);
      const fs::path base = fs::path(m).parent_path();
      ck::Scene s;
      s.gt_extrinsic = sm.gt.empty()
                           ? ck::read_kitti_calib_file((base / sm.calib).string()).camera_extrinsic(sm.camera)
                           : ck::read_extrinsic_file((base / sm.gt).string());
      scenes.push_back(std::move(s));
    }
  }
  const ck::BenchmarkReport report = ck::run_benchmark(scenes, method, spec, trials, threads);
  ck::write_report(report, out);
  std::cout << "RESULT: mean_trans_err_cm=" << fmt(report.mean_trans_err_cm)
            << " mean_rot_err_deg=" << fmt(report.mean_rot_err_deg)
            << " failed=" << report.failed << " trials=" << report.trials.size() << "\n";
  return 0;
}

int run_gen_synthetic(ck::SyntheticSceneConfig cfg, const std::string& out) {
  std::cout << "config: seed=" << cfg.seed << " objects=" << cfg.object_count
            << " points_per_object=" << cfg.points_per_object
            << " room=" << (cfg.room ? "on" : "off") << " room_density=" << cfg.room_density
            << " out=" << out << "\n";
  const ck::SyntheticScene scene = ck::generate_synthetic_scene(cfg);
  const std::string manifest = ck::write_scene_bundle(out, scene);
  std::cout << "RESULT: manifest=" << manifest << " points=" << scene.raw.size()
            << " masks=" << scene.scene.masks.size()
            << " clusters=" << scene.scene.cloud.class_count << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR-camera extrinsic calibration toolkit"};
  app.require_subcommand(1);

  // project
  std::string manifest, extrinsic, out;
  auto* project = app.add_subcommand("project", "overlay a cloud on the image through an extrinsic");
  project->add_option("manifest", manifest, "scene manifest")->required();
  project->add_option("--extrinsic", extrinsic, "extrinsic file")->required();
  project->add_option("--out", out, "overlay PPM path")->required();

  // decalib
  ck::DecalibSpec spec;
  std::uint64_t trial = 0;
  std::string gt;
  auto* decalib = app.add_subcommand("decalib", "perturb a GT extrinsic into an initial guess");
  decalib->add_option("gt", gt, "GT extrinsic file")->required();
  decalib->add_option("--out", out, "output H_init file")->required();
  decalib->add_option("--rot-max", spec.rot_max, "per-axis rotation bound (deg)")->check(CLI::NonNegativeNumber);
  decalib->add_option("--trans-max", spec.trans_max, "per-axis translation bound (m)")->check(CLI::NonNegativeNumber);
  decalib->add_option("--seed", spec.seed, "PRNG seed")->envname("CALIB_SEED");
  decalib->add_option("--trial", trial, "trial index");

  // calibrate
  std::string init, report;
  SearchFlags calib_flags;
  auto* calibrate = app.add_subcommand("calibrate", "consistency-score calibration");
  calibrate->add_option("manifest", manifest, "scene manifest")->required();
  calibrate->add_option("--init", init, "initial extrinsic file")->required();
  calibrate->add_option("--out", out, "predicted extrinsic file")->required();
  calibrate->add_option("--report", report, "key=value report path (default <out>.report)");
  calibrate->add_option("--threads", calib_flags.search.threads, "worker threads (0 = all)")
      ->envname("CALIB_THREADS");
  calib_flags.attach(calibrate);

  // evaluate
  std::string pred;
  auto* evaluate = app.add_subcommand("evaluate", "translation/rotation error of a prediction");
  evaluate->add_option("pred", pred, "predicted extrinsic file")->required();
  evaluate->add_option("gt", gt, "GT extrinsic file")->required();

  // bench
  std::vector<std::string> manifests;
  std::string method_name = "oracle", pred_dir;
  std::size_t trials = 100;
  unsigned threads = 0;
  ck::DecalibSpec bench_spec;
  SearchFlags bench_flags;
  auto* bench = app.add_subcommand("bench", "run a decalibration benchmark and write a CSV report");
  bench->add_option("--manifest", manifests, "scene manifests (repeatable)")->required();
  bench->add_option("--method", method_name, "oracle | identity | calibrate | predictions")
      ->check(CLI::IsMember({"oracle", "identity", "calibrate", "predictions"}));
  bench->add_option("--pred-dir", pred_dir, "directory of pred_NNNNN.txt files");
  bench->add_option("--rot-max", bench_spec.rot_max, "per-axis rotation bound (deg)")->check(CLI::NonNegativeNumber);
  bench->add_option("--trans-max", bench_spec.trans_max, "per-axis translation bound (m)")->check(CLI::NonNegativeNumber);
  bench->add_option("--seed", bench_spec.seed, "PRNG seed")->envname("CALIB_SEED");
  bench->add_option("--trials", trials, "number of trials");
  bench->add_option("--out", out, "CSV report path")->required();
  bench->add_option("--threads", threads, "worker threads (0 = all)")->envname("CALIB_THREADS");
  bench_flags.attach(bench);

  // gen-synthetic
  ck::SyntheticSceneConfig syn;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic scene bundle");
  gen->add_option("--seed", syn.seed, "scene seed")->envname("CALIB_SEED");
  gen->add_option("--objects", syn.object_count, "number of objects")->check(CLI::PositiveNumber);
  gen->add_option("--points", syn.points_per_object, "points per object")->check(CLI::PositiveNumber);
  gen->add_flag("--room", syn.room, "surround the objects with a room (floor, ceiling, walls)");
  gen->add_option("--room-density", syn.room_density, "room surface points per square meter")
      ->check(CLI::PositiveNumber);
  gen->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*project) return run_project(manifest, extrinsic, out);
    if (*decalib) return run_decalib(gt, out, spec, trial);
    if (*calibrate) return run_calibrate(manifest, init, out, report, calib_flags);
    if (*evaluate) return run_evaluate(pred, gt);
    if (*bench) return run_bench(manifests, method_name, pred_dir, bench_spec, trials, out, threads, bench_flags);
    if (*gen) return run_gen_synthetic(syn, out);
  } catch (const ck::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ck::DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
