#include "wbm/pipeline.h"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <thread>

#include "wbm/errors.h"
#include "wbm/kinematics.h"
#include "wbm/metrics.h"
#include "wbm/triangulation.h"

namespace wbm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
      throw ConfigError("unknown config key '" + where + "." + it.key() + "'");
    }
  }
}

template <typename T>
void read_value(const json& j, const char* key, const std::string& where, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
  }
}

SolverOptions solver_from_json(const json& j, const std::string& where, SolverOptions s) {
  check_keys(j, where, {"method", "max_iterations", "relative_tolerance"});
  std::string method = s.method == SolverMethod::kIrls ? "irls" : "gradient_descent";
  read_value(j, "method", where, method);
  if (method == "irls") {
    s.method = SolverMethod::kIrls;
  } else if (method == "gradient_descent") {
    s.method = SolverMethod::kGradientDescent;
  } else {
    throw ConfigError(where + ".method must be 'irls' or 'gradient_descent'");
  }
  read_value(j, "max_iterations", where, s.max_iterations);
  read_value(j, "relative_tolerance", where, s.relative_tolerance);
  return s;
}

json solver_to_json(const SolverOptions& s) {
  return {{"method", s.method == SolverMethod::kIrls ? "irls" : "gradient_descent"},
          {"max_iterations", s.max_iterations},
          {"relative_tolerance", s.relative_tolerance}};
}

const char* camera_mode_name(CameraMode m) {
  switch (m) {
    case CameraMode::kPerFrame: return "per_frame";
    case CameraMode::kStatic: return "static";
    case CameraMode::kFrozen: return "frozen";
  }
  return "per_frame";
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j) {
  check_keys(j, "config",
             {"input_dir", "output_dir", "topology", "templates", "seed", "workers", "strict", "stages", "filter",
              "local_weights", "global_weights", "local_solver", "global_solver", "camera_mode", "ground_height",
              "caption", "review"});
  PipelineConfig c;
  read_value(j, "input_dir", "config", c.input_dir);
  read_value(j, "output_dir", "config", c.output_dir);
  read_value(j, "topology", "config", c.topology_path);
  read_value(j, "templates", "config", c.templates_path);
  read_value(j, "seed", "config", c.seed);
  read_value(j, "workers", "config", c.workers);
  bool strict = false;
  read_value(j, "strict", "config", strict);
  c.parse_mode = strict ? ParseMode::kStrict : ParseMode::kLenient;
  if (j.contains("stages")) {
    const json& s = j["stages"];
    check_keys(s, "stages", {"smooth", "triangulate", "fit_local", "fit_global", "caption", "evaluate"});
    read_value(s, "smooth", "stages", c.stages.smooth);
    read_value(s, "triangulate", "stages", c.stages.triangulate);
    read_value(s, "fit_local", "stages", c.stages.fit_local);
    read_value(s, "fit_global", "stages", c.stages.fit_global);
    read_value(s, "caption", "stages", c.stages.caption);
    read_value(s, "evaluate", "stages", c.stages.evaluate);
  }
  if (j.contains("filter")) {
    const json& f = j["filter"];
    check_keys(f, "filter", {"poly_order", "w_min", "w_max"});
    read_value(f, "poly_order", "filter", c.filter.poly_order);
    read_value(f, "w_min", "filter", c.filter.w_min);
    read_value(f, "w_max", "filter", c.filter.w_max);
  }
  if (j.contains("local_weights")) {
    const json& w = j["local_weights"];
    check_keys(w, "local_weights", {"lambda_joint", "lambda_smooth", "lambda_pen", "lambda_phy"});
    read_value(w, "lambda_joint", "local_weights", c.local_weights.lambda_joint);
    read_value(w, "lambda_smooth", "local_weights", c.local_weights.lambda_smooth);
    read_value(w, "lambda_pen", "local_weights", c.local_weights.lambda_pen);
    read_value(w, "lambda_phy", "local_weights", c.local_weights.lambda_phy);
  }
  if (j.contains("global_weights")) {
    const json& w = j["global_weights"];
    check_keys(w, "global_weights", {"lambda_2d", "lambda_traj", "lambda_cam", "lambda_reg"});
    read_value(w, "lambda_2d", "global_weights", c.global_weights.lambda_2d);
    read_value(w, "lambda_traj", "global_weights", c.global_weights.lambda_traj);
    read_value(w, "lambda_cam", "global_weights", c.global_weights.lambda_cam);
    read_value(w, "lambda_reg", "global_weights", c.global_weights.lambda_reg);
  }
  if (j.contains("local_solver")) c.local_solver = solver_from_json(j["local_solver"], "local_solver", c.local_solver);
  if (j.contains("global_solver")) {
    c.global_solver = solver_from_json(j["global_solver"], "global_solver", c.global_solver);
  }
  if (j.contains("camera_mode")) {
    std::string mode;
    read_value(j, "camera_mode", "config", mode);
    if (mode == "per_frame") {
      c.camera_mode = CameraMode::kPerFrame;
    } else if (mode == "static") {
      c.camera_mode = CameraMode::kStatic;
    } else if (mode == "frozen") {
      c.camera_mode = CameraMode::kFrozen;
    } else {
      throw ConfigError("camera_mode must be 'per_frame', 'static' or 'frozen'");
    }
  }
  read_value(j, "ground_height", "config", c.ground_height);
  if (j.contains("caption")) {
    const json& cap = j["caption"];
    check_keys(cap, "caption", {"stride", "angle_margin", "ratio_margin"});
    read_value(cap, "stride", "caption", c.caption_stride);
    read_value(cap, "angle_margin", "caption", c.caption_margins.angle_margin);
    read_value(cap, "ratio_margin", "caption", c.caption_margins.ratio_margin);
  }
  if (j.contains("review")) {
    const json& r = j["review"];
    check_keys(r, "review", {"max_reprojection_px", "max_penetration", "max_ground_penetration", "max_jerk"});
    read_value(r, "max_reprojection_px", "review", c.review.max_reprojection_px);
    read_value(r, "max_penetration", "review", c.review.max_penetration);
    read_value(r, "max_ground_penetration", "review", c.review.max_ground_penetration);
    read_value(r, "max_jerk", "review", c.review.max_jerk);
  }
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  json j;
  try {
    j = read_json_file(path);
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  PipelineConfig c = from_json(j);
  const fs::path base = fs::path(path).parent_path();
  for (std::string* p : {&c.input_dir, &c.output_dir, &c.topology_path, &c.templates_path}) {
    if (!p->empty() && fs::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  }
  return c;
}

json PipelineConfig::to_json() const {
  return {{"input_dir", input_dir},
          {"output_dir", output_dir},
          {"topology", topology_path},
          {"templates", templates_path},
          {"seed", seed},
          {"workers", workers},
          {"strict", parse_mode == ParseMode::kStrict},
          {"stages",
           {{"smooth", stages.smooth},
            {"triangulate", stages.triangulate},
            {"fit_local", stages.fit_local},
            {"fit_global", stages.fit_global},
            {"caption", stages.caption},
            {"evaluate", stages.evaluate}}},
          {"filter", {{"poly_order", filter.poly_order}, {"w_min", filter.w_min}, {"w_max", filter.w_max}}},
          {"local_weights",
           {{"lambda_joint", local_weights.lambda_joint},
            {"lambda_smooth", local_weights.lambda_smooth},
            {"lambda_pen", local_weights.lambda_pen},
            {"lambda_phy", local_weights.lambda_phy}}},
          {"global_weights",
           {{"lambda_2d", global_weights.lambda_2d},
            {"lambda_traj", global_weights.lambda_traj},
            {"lambda_cam", global_weights.lambda_cam},
            {"lambda_reg", global_weights.lambda_reg}}},
          {"local_solver", solver_to_json(local_solver)},
          {"global_solver", solver_to_json(global_solver)},
          {"camera_mode", camera_mode_name(camera_mode)},
          {"ground_height", ground_height},
          {"caption",
           {{"stride", caption_stride},
            {"angle_margin", caption_margins.angle_margin},
            {"ratio_margin", caption_margins.ratio_margin}}},
          {"review",
           {{"max_reprojection_px", review.max_reprojection_px},
            {"max_penetration", review.max_penetration},
            {"max_ground_penetration", review.max_ground_penetration},
            {"max_jerk", review.max_jerk}}}};
}

void PipelineConfig::validate() const {
  if (input_dir.empty() || !fs::is_directory(input_dir)) throw ConfigError("input_dir '" + input_dir + "' is not a directory");
  if (output_dir.empty()) throw ConfigError("output_dir is not set");
  if (!topology_path.empty() && !fs::is_regular_file(topology_path)) {
    throw ConfigError("topology file '" + topology_path + "' does not exist");
  }
  if (!templates_path.empty() && !fs::is_regular_file(templates_path)) {
    throw ConfigError("template file '" + templates_path + "' does not exist");
  }
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (caption_stride < 1) throw ConfigError("caption.stride must be >= 1");
  try {
    filter.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("filter: ") + e.what());
  }
  local_weights.validate();
  global_weights.validate();
  for (const SolverOptions* s : {&local_solver, &global_solver}) {
    if (s->max_iterations < 0 || !(s->relative_tolerance >= 0.0)) throw ConfigError("invalid solver settings");
  }
  if (!std::isfinite(ground_height)) throw ConfigError("ground_height must be finite");
  if (!(caption_margins.angle_margin >= 0.0) || !(caption_margins.ratio_margin >= 0.0)) {
    throw ConfigError("caption margins must be >= 0");
  }
}

std::uint64_t sequence_seed(std::uint64_t global_seed, const std::string& sequence_id) {
  // FNV-1a over the seed bytes followed by the id
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](unsigned char b) {
    h ^= b;
    h *= 1099511628211ULL;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(global_seed >> (8 * i)));
  for (char c : sequence_id) mix(static_cast<unsigned char>(c));
  return h;
}

bool PipelineResult::any_failed() const {
  return std::any_of(sequences.begin(), sequences.end(), [](const SequenceOutcome& s) { return !s.ok; });
}

namespace {

// Mean pixel distance between projected joints and the 2D evidence.
double reprojection_px(const MotionSequence& motion, const SkeletonTopology& topology,
                       const std::vector<std::vector<KeypointFrame2D>>& views,
                       const std::vector<std::vector<CameraModel>>& cameras) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < motion.size(); ++t) {
    const JointPositions p = forward_kinematics(topology, motion.shape(), motion.frame(t));
    for (std::size_t v = 0; v < views.size(); ++v) {
      const CameraModel& cam = cameras[v][t];
      for (int j = 0; j < topology.num_joints(); ++j) {
        if (!topology.is_observed(j)) continue;
        const int k = topology.joint_keypoint(j);
        if (!(views[v][t].scores[k] > 0.0)) continue;
        const Vec3 pc = cam.to_camera(p.col(j));
        if (!(pc.z() > 1e-6)) continue;
        sum += (project(cam, p.col(j)) - views[v][t].points[k]).norm();
        ++count;
      }
    }
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

class SequenceRun {
 public:
  SequenceRun(const std::string& id, const PipelineConfig& config, const SkeletonTopology& topology,
              const TemplateTable& templates, SequenceOutcome& outcome)
      : id_(id), config_(config), topology_(topology), templates_(templates), outcome_(outcome),
        in_(fs::path(config.input_dir) / id), out_(fs::path(config.output_dir) / id) {}

  void run() {
    const ParseMode mode = config_.parse_mode;
    fs::create_directories(out_);
    if (exists("cameras.json")) camera_file_ = read_cameras(input("cameras.json"), mode);
    if (exists("keypoints2d.jsonl")) load_views(read_keypoints2d(input("keypoints2d.jsonl"), mode));
    const bool multi_view = camera_file_.cameras.size() >= 2;

    if (config_.stages.smooth && !views_.empty()) stage_smooth();
    if (config_.stages.triangulate) {
      if (multi_view) {
        stage_triangulate();
      } else if (exists("keypoints3d.jsonl")) {
        k3d_ = read_keypoints3d(input("keypoints3d.jsonl"), mode);
        write_keypoints3d(output("keypoints3d.jsonl"), k3d_);
        done("ingest_3d");
      }
    }
    if (k3d_.empty() && exists("keypoints3d.jsonl")) k3d_ = read_keypoints3d(input("keypoints3d.jsonl"), mode);
    if (config_.stages.fit_local) stage_fit_local(multi_view);
    if (config_.stages.fit_global && !multi_view) stage_fit_global();
    if (config_.stages.caption) stage_caption();
    if (config_.stages.evaluate) stage_evaluate(multi_view);
  }

 private:
  bool exists(const char* name) const { return fs::is_regular_file(in_ / name); }
  std::string input(const char* name) const { return (in_ / name).string(); }
  std::string output(const char* name) const { return (out_ / name).string(); }
  void done(const char* stage) { outcome_.stages_run.emplace_back(stage); }

  void load_views(std::vector<ViewKeypoints> views) {
    // order views like the cameras they belong to
    for (const auto& cam : camera_file_.cameras) {
      auto it = std::find_if(views.begin(), views.end(), [&](const ViewKeypoints& v) { return v.view == cam.name; });
      if (it == views.end()) throw StructuralError("no 2D keypoints for camera '" + cam.name + "'");
      views_.push_back(std::move(*it));
      views.erase(it);
    }
    if (!views.empty()) throw StructuralError("2D keypoints for unknown view '" + views.front().view + "'");
    for (const auto& v : views_) {
      if (v.frames.size() != views_.front().frames.size()) throw StructuralError("views have different frame counts");
      for (std::size_t t = 0; t < v.frames.size(); ++t) {
        if (v.frames[t].frame != static_cast<int>(t)) {
          throw StructuralError("view '" + v.view + "' frames must be numbered 0, 1, 2, ...");
        }
      }
    }
  }

  std::vector<std::vector<KeypointFrame2D>> view_frames() const {
    std::vector<std::vector<KeypointFrame2D>> out;
    for (const auto& v : views_) out.push_back(v.frames);
    return out;
  }

  void stage_smooth() {
    json report = json::object();
    report["views"] = json::array();
    for (auto& v : views_) {
      const bool long_enough = v.frames.size() >= static_cast<std::size_t>(config_.filter.min_sequence_length());
      if (long_enough) v.frames = smooth_sequence(v.frames, config_.filter);
      report["views"].push_back({{"view", v.view}, {"frames", v.frames.size()}, {"smoothed", long_enough}});
    }
    write_keypoints2d(output("keypoints2d_smoothed.jsonl"), views_);
    write_json_file(output("smooth_report.json"), report);
    done("smooth");
  }

  void stage_triangulate() {
    SequenceTriangulationOptions opts;
    opts.filter = config_.filter;
    const SequenceTriangulation tri = triangulate_sequence(view_frames(), camera_file_.cameras, topology_, std::nullopt, opts);
    k3d_ = tri.frames;
    write_keypoints3d(output("keypoints3d.jsonl"), k3d_);
    write_json_file(output("triangulate_report.json"), {{"mean_residual_px", tri.mean_residual},
                                                       {"max_residual_px", tri.max_residual},
                                                       {"triangulated", tri.triangulated},
                                                       {"failed", tri.failed}});
    done("triangulate");
  }

  void stage_fit_local(bool multi_view) {
    if (!exists("init_pose.jsonl")) throw StructuralError("fit_local needs init_pose.jsonl");
    if (k3d_.empty() && !multi_view) throw StructuralError("fit_local needs 3D keypoints");
    MotionSequence init = read_motion(input("init_pose.jsonl"), topology_, config_.parse_mode);
    FitTargets targets{k3d_, {}, {}, init};
    if (multi_view) {
      targets.k2d = view_frames();
      targets.cameras = camera_file_.cameras;
    }
    LocalFitOptions opts;
    opts.solver = config_.local_solver;
    opts.ground_height = config_.ground_height;
    LocalFitResult fit = fit_local(targets, config_.local_weights, topology_, opts);
    write_motion(output("motion_local.jsonl"), fit.motion, topology_);
    write_json_file(output("fit_local_report.json"), fit.report_json());
    motion_ = std::move(fit.motion);
    done("fit_local");
  }

  void stage_fit_global() {
    if (views_.size() != 1 || !exists("trajectory_prior.jsonl")) return;
    MotionSequence start = motion_ ? *motion_ : read_motion(input("init_pose.jsonl"), topology_, config_.parse_mode);
    const TrajectoryPrior prior = read_trajectory_prior(input("trajectory_prior.jsonl"), config_.parse_mode);
    std::vector<CameraModel> cams = camera_file_.per_frame;
    if (cams.empty()) cams.assign(start.size(), camera_file_.cameras.front());
    GlobalFitOptions opts;
    opts.solver = config_.global_solver;
    opts.camera_mode = config_.camera_mode;
    GlobalFitResult fit = fit_global(start, views_.front().frames, cams, prior, config_.global_weights, topology_, opts);
    write_motion(output("motion_global.jsonl"), fit.motion, topology_);
    write_cameras(output("cameras_global.json"), {{camera_file_.cameras.front()}, fit.cameras});
    write_json_file(output("fit_global_report.json"), fit.report_json());
    motion_ = std::move(fit.motion);
    global_cameras_ = std::move(fit.cameras);
    done("fit_global");
  }

  void stage_caption() {
    std::vector<std::string> emotions;
    if (exists("emotions.jsonl")) emotions = read_emotions(input("emotions.jsonl"), config_.parse_mode);
    CaptionOptions opts;
    opts.stride = config_.caption_stride;
    opts.template_seed = sequence_seed(config_.seed, id_);
    opts.aggregation = config_.caption_margins;
    std::vector<PoseDescription> captions;
    if (motion_) {
      captions = caption_sequence(*motion_, emotions, topology_, opts, templates_);
    } else if (!k3d_.empty()) {
      captions = caption_sequence(k3d_, emotions, topology_, opts, templates_);
    } else {
      return;
    }
    write_captions(output("captions.jsonl"), captions);
    done("caption");
  }

  void stage_evaluate(bool multi_view) {
    if (!motion_) return;
    std::optional<MotionSequence> truth;
    if (exists("ground_truth.jsonl")) truth = read_motion(input("ground_truth.jsonl"), topology_, config_.parse_mode);
    json metrics = evaluate_motion(*motion_, truth ? &*truth : nullptr, topology_, config_.ground_height);
    if (!views_.empty()) {
      std::vector<std::vector<CameraModel>> cams;
      for (std::size_t v = 0; v < views_.size(); ++v) {
        if (!multi_view && !global_cameras_.empty()) {
          cams.push_back(global_cameras_);
        } else if (!multi_view && !camera_file_.per_frame.empty()) {
          cams.push_back(camera_file_.per_frame);
        } else {
          cams.emplace_back(motion_->size(), camera_file_.cameras[v]);
        }
      }
      if (views_.front().frames.size() == motion_->size()) {
        metrics["reprojection_px"] = reprojection_px(*motion_, topology_, view_frames(), cams);
      }
    }
    write_json_file(output("metrics.json"), metrics);
    done("evaluate");
  }

  std::string id_;
  const PipelineConfig& config_;
  const SkeletonTopology& topology_;
  const TemplateTable& templates_;
  SequenceOutcome& outcome_;
  fs::path in_;
  fs::path out_;
  CameraFile camera_file_;
  std::vector<ViewKeypoints> views_;
  std::vector<KeypointFrame3D> k3d_;
  std::optional<MotionSequence> motion_;
  std::vector<CameraModel> global_cameras_;
};

}  // namespace

json evaluate_motion(const MotionSequence& motion, const MotionSequence* truth, const SkeletonTopology& topology,
                     double ground_height) {
  const auto joints = sequence_joint_positions(topology, motion);
  std::optional<std::vector<JointPositions>> gt;
  if (truth) {
    if (truth->size() != motion.size()) throw StructuralError("ground truth length differs from the motion");
    gt = sequence_joint_positions(topology, *truth);
  }
  std::vector<Eigen::VectorXd> params;
  for (const auto& p : motion.frames()) params.push_back(p.pose_params());
  json metrics = evaluate_sequence(joints, gt, params, motion.fps(), topology);

  const CollisionProxy proxy = CollisionProxy::from_topology(topology);
  double pen = 0.0;
  for (const auto& p : motion.frames()) pen += loss_pen(p, proxy, topology, motion.shape());
  metrics["penetration_mean"] = pen / static_cast<double>(motion.size());
  const PhysicsLoss phy = loss_phy(motion, ground_height, topology);
  metrics["ground_penetration"] = phy.penetration;
  metrics["skating"] = phy.skating;
  return metrics;
}

SequenceOutcome run_sequence(const std::string& id, const PipelineConfig& config, const SkeletonTopology& topology,
                             const TemplateTable& templates) {
  SequenceOutcome outcome;
  outcome.id = id;
  try {
    SequenceRun(id, config, topology, templates, outcome).run();
  } catch (const std::exception& e) {
    outcome.ok = false;
    outcome.error = e.what();
  }
  return outcome;
}

PipelineResult run_pipeline(const PipelineConfig& config) {
  config.validate();
  const SkeletonTopology topology = config.topology_path.empty() ? default_topology() : load_topology(config.topology_path);
  const TemplateTable templates =
      config.templates_path.empty() ? TemplateTable() : TemplateTable::from_file(config.templates_path);

  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(config.input_dir)) {
    if (entry.is_directory()) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());

  PipelineResult result;
  result.sequences.resize(ids.size());
  if (!config.stages.any()) {
    std::cerr << "all stages disabled: validated config and " << ids.size() << " sequence(s), nothing to do\n";
    for (std::size_t i = 0; i < ids.size(); ++i) result.sequences[i].id = ids[i];
    return result;
  }

  fs::create_directories(config.output_dir);
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < ids.size(); i = next++) {
      result.sequences[i] = run_sequence(ids[i], config, topology, templates);
      const std::lock_guard<std::mutex> lock(log_mutex);
      if (result.sequences[i].ok) {
        std::cerr << ids[i] << ": ok\n";
      } else {
        std::cerr << ids[i] << ": failed: " << result.sequences[i].error << "\n";
      }
    }
  };
  const int n = std::max(1, std::min<int>(config.workers, static_cast<int>(ids.size())));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  json summary = json::array();
  for (const auto& s : result.sequences) {
    json entry{{"id", s.id}, {"ok", s.ok}, {"stages", s.stages_run}};
    if (!s.ok) entry["error"] = s.error;
    summary.push_back(entry);
  }
  write_json_file((fs::path(config.output_dir) / "pipeline_summary.json").string(), {{"sequences", summary}});
  return result;
}

}  // namespace wbm
