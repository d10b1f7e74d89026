#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "wbm/errors.h"
#include "wbm/fixture.h"
#include "wbm/io.h"
#include "wbm/pipeline.h"
#include "wbm/review.h"
#include "wbm/savgol.h"
#include "wbm/triangulation.h"

using namespace wbm;

namespace {

struct Common {
  std::string topology;
  bool strict = false;

  ParseMode mode() const { return strict ? ParseMode::kStrict : ParseMode::kLenient; }
  SkeletonTopology skeleton() const {
    if (topology.empty()) return default_topology();
    try {
      return load_topology(topology);
    } catch (const Error& e) {
      throw ConfigError(std::string("topology: ") + e.what());
    }
  }
};

SolverMethod parse_method(const std::string& name) {
  if (name == "irls") return SolverMethod::kIrls;
  if (name == "gradient_descent") return SolverMethod::kGradientDescent;
  throw ConfigError("--method must be 'irls' or 'gradient_descent'");
}

CameraMode parse_camera_mode(const std::string& name) {
  if (name == "per_frame") return CameraMode::kPerFrame;
  if (name == "static") return CameraMode::kStatic;
  if (name == "frozen") return CameraMode::kFrozen;
  throw ConfigError("--camera-mode must be 'per_frame', 'static' or 'frozen'");
}

void checked_filter(const FilterSpec& f) {
  try {
    f.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
}

std::vector<std::vector<KeypointFrame2D>> frames_for_cameras(std::vector<ViewKeypoints> views,
                                                             const std::vector<CameraModel>& cameras) {
  std::vector<std::vector<KeypointFrame2D>> out;
  for (const auto& cam : cameras) {
    auto it = std::find_if(views.begin(), views.end(), [&](const ViewKeypoints& v) { return v.view == cam.name; });
    if (it == views.end()) throw StructuralError("no 2D keypoints for camera '" + cam.name + "'");
    out.push_back(std::move(it->frames));
  }
  return out;
}

void add_filter_options(CLI::App* app, FilterSpec& f) {
  app->add_option("--poly-order", f.poly_order, "Savitzky-Golay polynomial order");
  app->add_option("--w-min", f.w_min, "smallest half-width (confident frames)");
  app->add_option("--w-max", f.w_max, "largest half-width (unreliable frames)");
}

void add_solver_options(CLI::App* app, std::string& method, SolverOptions& s) {
  app->add_option("--method", method, "irls or gradient_descent");
  app->add_option("--max-iterations", s.max_iterations);
  app->add_option("--tolerance", s.relative_tolerance, "relative loss change that stops the solver");
}

void print_metrics(const nlohmann::json& metrics) {
  auto row = [](const std::string& name, const nlohmann::json& v) {
    std::cout << std::left << std::setw(24) << name;
    if (v.is_number()) {
      std::cout << std::setprecision(6) << v.get<double>();
    } else {
      std::cout << v.dump();
    }
    std::cout << "\n";
  };
  for (auto it = metrics.begin(); it != metrics.end(); ++it) {
    if (it.key() == "temporal_std") {
      for (auto p = it->begin(); p != it->end(); ++p) row("temporal_std." + p.key(), *p);
    } else if (it.key() != "warnings") {
      row(it.key(), *it);
    }
  }
  for (const auto& w : metrics["warnings"]) std::cout << "warning: " << w.get<std::string>() << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"whole-body motion annotation tools"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--topology", common.topology, "skeleton topology JSON (default: built-in)");
  app.add_flag("--strict", common.strict, "reject unknown fields in input files");

  // smooth
  auto* smooth = app.add_subcommand("smooth", "score-adaptive Savitzky-Golay smoothing of 2D keypoints");
  std::string smooth_in, smooth_out;
  FilterSpec smooth_filter;
  smooth->add_option("input", smooth_in, "2D keypoints (JSON Lines)")->required();
  smooth->add_option("-o,--output", smooth_out)->required();
  add_filter_options(smooth, smooth_filter);

  // triangulate
  auto* tri = app.add_subcommand("triangulate", "multi-view triangulation with bone-length constraints");
  std::string tri_in, tri_cams, tri_out, tri_report;
  FilterSpec tri_filter;
  bool tri_no_bones = false, tri_no_smooth = false;
  tri->add_option("input", tri_in, "2D keypoints of all views")->required();
  tri->add_option("-c,--cameras", tri_cams)->required();
  tri->add_option("-o,--output", tri_out)->required();
  tri->add_option("--report", tri_report);
  tri->add_flag("--no-bone-lengths", tri_no_bones);
  tri->add_flag("--no-smooth", tri_no_smooth);
  add_filter_options(tri, tri_filter);

  // fit-local
  auto* local = app.add_subcommand("fit-local", "per-frame pose fitting to 3D and 2D keypoints");
  std::string local_init, local_k3d, local_k2d, local_cams, local_out, local_report, local_method = "irls";
  LossWeights local_weights;
  SolverOptions local_solver;
  double local_ground = 0.0;
  local->add_option("--init", local_init, "initial poses")->required();
  local->add_option("--keypoints3d", local_k3d);
  local->add_option("--keypoints2d", local_k2d);
  local->add_option("--cameras", local_cams);
  local->add_option("-o,--output", local_out)->required();
  local->add_option("--report", local_report);
  local->add_option("--lambda-joint", local_weights.lambda_joint);
  local->add_option("--lambda-smooth", local_weights.lambda_smooth);
  local->add_option("--lambda-pen", local_weights.lambda_pen);
  local->add_option("--lambda-phy", local_weights.lambda_phy);
  local->add_option("--ground", local_ground, "ground plane height");
  add_solver_options(local, local_method, local_solver);

  // fit-global
  auto* global = app.add_subcommand("fit-global", "root trajectory and camera fitting");
  std::string global_init, global_k2d, global_cams, global_prior, global_out, global_cams_out, global_report;
  std::string global_method = "irls", global_mode = "per_frame";
  GlobalLossWeights global_weights;
  SolverOptions global_solver;
  global->add_option("--init", global_init, "poses from fit-local")->required();
  global->add_option("--keypoints2d", global_k2d)->required();
  global->add_option("--cameras", global_cams)->required();
  global->add_option("--prior", global_prior, "root trajectory prior")->required();
  global->add_option("-o,--output", global_out)->required();
  global->add_option("--cameras-output", global_cams_out);
  global->add_option("--report", global_report);
  global->add_option("--camera-mode", global_mode, "per_frame, static or frozen");
  global->add_option("--lambda-2d", global_weights.lambda_2d);
  global->add_option("--lambda-traj", global_weights.lambda_traj);
  global->add_option("--lambda-cam", global_weights.lambda_cam);
  global->add_option("--lambda-reg", global_weights.lambda_reg);
  add_solver_options(global, global_method, global_solver);

  // caption
  auto* caption = app.add_subcommand("caption", "rule-based pose descriptions");
  std::string cap_motion, cap_k3d, cap_emotions, cap_out, cap_templates;
  CaptionOptions cap_options;
  caption->add_option("--motion", cap_motion);
  caption->add_option("--keypoints3d", cap_k3d);
  caption->add_option("--emotions", cap_emotions);
  caption->add_option("--templates", cap_templates);
  caption->add_option("--stride", cap_options.stride);
  caption->add_option("--seed", cap_options.template_seed);
  caption->add_option("-o,--output", cap_out)->required();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "error, jerk and diversity metrics of a motion");
  std::string eval_motion, eval_gt, eval_out;
  double eval_ground = 0.0;
  evaluate->add_option("motion", eval_motion)->required();
  evaluate->add_option("--ground-truth", eval_gt);
  evaluate->add_option("--ground", eval_ground);
  evaluate->add_option("-o,--output", eval_out);

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "run all enabled stages over a directory of sequences");
  std::string pipe_config, pipe_input, pipe_output;
  std::optional<std::uint64_t> pipe_seed;
  std::optional<int> pipe_workers;
  pipeline->add_option("--config", pipe_config)->required();
  pipeline->add_option("--seed", pipe_seed);
  pipeline->add_option("--workers", pipe_workers);
  pipeline->add_option("--input", pipe_input);
  pipeline->add_option("--output", pipe_output);

  // review
  auto* review = app.add_subcommand("review", "human verification manifest");
  review->require_subcommand(1);
  auto* review_export = review->add_subcommand("export", "write review_manifest.json for a results directory");
  std::string review_dir, review_config;
  review_export->add_option("results", review_dir)->required();
  review_export->add_option("--config", review_config, "pipeline config providing review thresholds");
  auto* review_set = review->add_subcommand("set", "record a verdict");
  std::string set_manifest, set_sequence, set_verdict, set_reason;
  review_set->add_option("manifest", set_manifest)->required();
  review_set->add_option("sequence", set_sequence)->required();
  review_set->add_option("verdict", set_verdict, "accepted or rejected")->required();
  review_set->add_option("--reason", set_reason);

  // fixture
  auto* fixture = app.add_subcommand("fixture", "write synthetic sequences and a config");
  std::string fixture_dir;
  FixtureOptions fixture_options;
  bool fixture_clean = false;
  fixture->add_option("dir", fixture_dir)->required();
  fixture->add_option("--frames", fixture_options.frames);
  fixture->add_option("--seed", fixture_options.seed);
  fixture->add_flag("--clean", fixture_clean, "skip the sequence with injected ground penetration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*smooth) {
    checked_filter(smooth_filter);
    auto views = read_keypoints2d(smooth_in, common.mode());
    for (auto& v : views) {
      if (v.frames.size() >= static_cast<std::size_t>(smooth_filter.min_sequence_length())) {
        v.frames = smooth_sequence(v.frames, smooth_filter);
      } else {
        std::cerr << "view '" << v.view << "' is shorter than the smallest window, copied unchanged\n";
      }
    }
    write_keypoints2d(smooth_out, views);
  } else if (*tri) {
    checked_filter(tri_filter);
    const SkeletonTopology topo = common.skeleton();
    const CameraFile cams = read_cameras(tri_cams, common.mode());
    SequenceTriangulationOptions opts;
    opts.filter = tri_filter;
    opts.smooth = !tri_no_smooth;
    opts.enforce_bone_lengths = !tri_no_bones;
    const auto result = triangulate_sequence(frames_for_cameras(read_keypoints2d(tri_in, common.mode()), cams.cameras),
                                             cams.cameras, topo, std::nullopt, opts);
    write_keypoints3d(tri_out, result.frames);
    if (!tri_report.empty()) {
      write_json_file(tri_report, {{"mean_residual_px", result.mean_residual},
                                   {"max_residual_px", result.max_residual},
                                   {"triangulated", result.triangulated},
                                   {"failed", result.failed}});
    }
  } else if (*local) {
    local_weights.validate();
    local_solver.method = parse_method(local_method);
    const SkeletonTopology topo = common.skeleton();
    FitTargets targets{{}, {}, {}, read_motion(local_init, topo, common.mode())};
    if (!local_k3d.empty()) targets.k3d = read_keypoints3d(local_k3d, common.mode());
    if (!local_k2d.empty() != !local_cams.empty()) throw ConfigError("--keypoints2d and --cameras go together");
    if (!local_k2d.empty()) {
      targets.cameras = read_cameras(local_cams, common.mode()).cameras;
      targets.k2d = frames_for_cameras(read_keypoints2d(local_k2d, common.mode()), targets.cameras);
    }
    LocalFitOptions opts;
    opts.solver = local_solver;
    opts.ground_height = local_ground;
    const LocalFitResult fit = fit_local(targets, local_weights, topo, opts);
    write_motion(local_out, fit.motion, topo);
    if (!local_report.empty()) write_json_file(local_report, fit.report_json());
  } else if (*global) {
    global_weights.validate();
    global_solver.method = parse_method(global_method);
    const SkeletonTopology topo = common.skeleton();
    const MotionSequence init = read_motion(global_init, topo, common.mode());
    const CameraFile cams = read_cameras(global_cams, common.mode());
    if (cams.cameras.size() != 1) throw StructuralError("fit-global needs exactly one camera");
    auto views = frames_for_cameras(read_keypoints2d(global_k2d, common.mode()), cams.cameras);
    std::vector<CameraModel> per_frame = cams.per_frame;
    if (per_frame.empty()) per_frame.assign(init.size(), cams.cameras.front());
    GlobalFitOptions opts;
    opts.solver = global_solver;
    opts.camera_mode = parse_camera_mode(global_mode);
    const GlobalFitResult fit = fit_global(init, views.front(), per_frame,
                                           read_trajectory_prior(global_prior, common.mode()), global_weights, topo, opts);
    if (fit.gauge_warning) std::cerr << "warning: camera and trajectory are not anchored, the result is one of many\n";
    write_motion(global_out, fit.motion, topo);
    if (!global_cams_out.empty()) write_cameras(global_cams_out, {cams.cameras, fit.cameras});
    if (!global_report.empty()) write_json_file(global_report, fit.report_json());
  } else if (*caption) {
    if (cap_motion.empty() == cap_k3d.empty()) throw ConfigError("give exactly one of --motion and --keypoints3d");
    const SkeletonTopology topo = common.skeleton();
    const TemplateTable templates = cap_templates.empty() ? TemplateTable() : TemplateTable::from_file(cap_templates);
    std::vector<std::string> emotions;
    if (!cap_emotions.empty()) emotions = read_emotions(cap_emotions, common.mode());
    if (cap_options.stride < 1) throw ConfigError("--stride must be >= 1");
    const auto captions =
        cap_motion.empty()
            ? caption_sequence(read_keypoints3d(cap_k3d, common.mode()), emotions, topo, cap_options, templates)
            : caption_sequence(read_motion(cap_motion, topo, common.mode()), emotions, topo, cap_options, templates);
    write_captions(cap_out, captions);
  } else if (*evaluate) {
    const SkeletonTopology topo = common.skeleton();
    const MotionSequence motion = read_motion(eval_motion, topo, common.mode());
    std::optional<MotionSequence> truth;
    if (!eval_gt.empty()) truth = read_motion(eval_gt, topo, common.mode());
    const auto metrics = evaluate_motion(motion, truth ? &*truth : nullptr, topo, eval_ground);
    print_metrics(metrics);
    if (!eval_out.empty()) write_json_file(eval_out, metrics);
  } else if (*pipeline) {
    PipelineConfig config = PipelineConfig::load(pipe_config);
    if (pipe_seed) config.seed = *pipe_seed;
    if (pipe_workers) config.workers = *pipe_workers;
    if (!pipe_input.empty()) config.input_dir = pipe_input;
    if (!pipe_output.empty()) config.output_dir = pipe_output;
    if (common.strict) config.parse_mode = ParseMode::kStrict;
    if (!common.topology.empty()) config.topology_path = common.topology;
    return run_pipeline(config).exit_code();
  } else if (*review_export) {
    ReviewThresholds thresholds;
    if (!review_config.empty()) thresholds = PipelineConfig::load(review_config).review;
    std::cout << export_review_manifest(review_dir, thresholds) << "\n";
  } else if (*review_set) {
    ReviewManifest manifest = ReviewManifest::load(set_manifest);
    try {
      manifest.set_verdict(set_sequence, verdict_from_string(set_verdict), set_reason);
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
    manifest.save(set_manifest);
  } else if (*fixture) {
    fixture_options.inject_ground = !fixture_clean;
    for (const auto& id : write_fixture(fixture_dir, fixture_options)) std::cout << id << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
