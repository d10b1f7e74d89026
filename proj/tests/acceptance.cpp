// Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and exits
// non-zero when any fails. argv[1] is a scratch directory for pipeline runs.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "fs_support.h"
#include "support.h"
#include "wbm/captioner.h"
#include "wbm/bundle_adjustment.h"
#include "wbm/global_fit.h"
#include "wbm/local_fit.h"
#include "wbm/metrics.h"
#include "wbm/pipeline.h"
#include "wbm/review.h"
#include "wbm/savgol.h"
#include "wbm/triangulation.h"

using namespace wbm;
using wbm::test::random_vec;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "failed: " << what << "; ";
    }
  }
};

const SkeletonTopology& topo() { return default_topology(); }
const SkeletonShape& shape() { return default_shape(); }

double polynomial(const std::vector<double>& c, double x) {
  double v = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) v = v * x + *it;
  return v;
}

void sg_exactness(Outcome& out) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  int pairs = 0;
  for (int w = 1; w <= 8; ++w) {
    for (int order = 0; order < 2 * w + 1; ++order) {
      ++pairs;
      const Eigen::VectorXd c = sg_coefficients(w, order);
      for (int degree = 0; degree <= order; ++degree) {
        std::vector<double> coeffs(degree + 1);
        for (auto& a : coeffs) a = u(rng);
        for (double center : {-3.0, 0.0, 2.5}) {
          // samples on a unit-scaled grid keep high-degree values bounded
          double filtered = 0.0;
          for (int k = -w; k <= w; ++k) filtered += c[k + w] * polynomial(coeffs, (center + k) / w);
          worst = std::max(worst, std::abs(filtered - polynomial(coeffs, center / w)));
        }
      }
      if (order == 0) {
        for (int k = 0; k < 2 * w + 1; ++k) out.require(std::abs(c[k] - 1.0 / (2 * w + 1)) <= 1e-12, "moving average coefficient");
      }
    }
  }
  out.require(worst <= 1e-9, "polynomial reproduction");
  out.detail << pairs << " (w, order) pairs, max error " << worst << " <= 1e-9";
}

void adaptive_window_law(Outcome& out) {
  const FilterSpec spec{2, 2, 8};
  const std::vector<double> ones(20, 1.0), zeros(20, 0.0), halves(20, 0.5);
  out.require(adaptive_window(ones, 10, spec) == 2, "all scores 1 -> w_min");
  out.require(adaptive_window(zeros, 10, spec) == 8, "all scores 0 -> w_max");
  out.require(adaptive_window(halves, 10, spec) == 5, "all scores 0.5 -> 5");
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int violations = 0;
  for (int series = 0; series < 1000; ++series) {
    std::vector<double> a(30), b(30);
    for (int t = 0; t < 30; ++t) {
      a[t] = u(rng);
      b[t] = std::min(1.0, a[t] + (u(rng) < 0.5 ? 0.0 : 0.3 * u(rng)));
    }
    for (std::size_t t = 0; t < a.size(); ++t) violations += adaptive_window(b, t, spec) > adaptive_window(a, t, spec);
  }
  out.require(violations == 0, "monotonicity");
  out.detail << "formula cases exact, " << violations << " monotonicity violations over 1000 series";
}

void triangulation_round_trip(Outcome& out) {
  const MotionSequence motion = fixture_motion(16, 30.0);
  const auto cams = test::two_cameras();
  std::vector<std::vector<KeypointFrame2D>> views(2);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t t = 0; t < motion.size(); ++t) {
      views[c].push_back(render_keypoints(topo(), shape(), motion.frame(t), cams[c], static_cast<int>(t)));
    }
  }
  SequenceTriangulationOptions raw;
  raw.smooth = false;
  raw.enforce_bone_lengths = false;
  const auto tri = triangulate_sequence(views, cams, topo(), std::nullopt, raw);
  double worst = 0.0;
  for (std::size_t t = 0; t < motion.size(); ++t) {
    const KeypointFrame3D truth = test::exact_keypoints3d(motion.frame(t), static_cast<int>(t));
    for (int k = 0; k < kNumKeypoints; ++k) {
      if (truth.scores[k] > 0.0) worst = std::max(worst, (tri.frames[t].points[k] - truth.points[k]).norm());
    }
  }
  out.require(worst <= 1e-5, "keypoint recovery");
  out.require(tri.failed == 0, "no failed keypoints");

  SequenceTriangulationOptions bones = raw;
  bones.enforce_bone_lengths = true;
  const auto fixed = triangulate_sequence(views, cams, topo(), std::nullopt, bones);
  double worst_std = 0.0;
  for (const auto& bone : observed_bones(topo())) {
    std::vector<double> lengths;
    for (const auto& f : fixed.frames) lengths.push_back((f.points[bone.child_keypoint] - f.points[bone.parent_keypoint]).norm());
    double mean = 0.0, var = 0.0;
    for (double l : lengths) mean += l / lengths.size();
    for (double l : lengths) var += (l - mean) * (l - mean) / lengths.size();
    worst_std = std::max(worst_std, std::sqrt(var));
  }
  out.require(worst_std <= 1e-9, "bone length std");
  out.detail << "max keypoint error " << worst << " m <= 1e-5, max bone-length std " << worst_std << " <= 1e-9";
}

void camera_refinement(Outcome& out) {
  auto truth = test::two_cameras();
  truth.push_back(look_at_camera("cam2", Vec3(3.0, 0.5, 1.6), Vec3(0.0, 0.0, 0.9)));
  const MotionSequence motion = fixture_motion(6, 30.0);
  std::vector<Track> tracks;
  for (std::size_t t = 0; t < motion.size(); ++t) {
    const JointPositions x = forward_kinematics(topo(), shape(), motion.frame(t));
    for (int j = 0; j < kNumBodyJoints; ++j) {
      Track track;
      for (std::size_t c = 0; c < truth.size(); ++c) track.observations.push_back({static_cast<int>(c), project(truth[c], x.col(j)), 1.0});
      tracks.push_back(track);
    }
  }
  const double deg = std::numbers::pi / 180.0;
  std::mt19937_64 rng(4);
  auto init = truth;
  for (std::size_t c = 1; c < init.size(); ++c) init[c] = rotate_about_center(init[c], random_vec(rng, 1.0).normalized() * deg);
  const auto result = refine_cameras(init, tracks);
  double rot = 0.0, trans = 0.0;
  for (std::size_t c = 0; c < truth.size(); ++c) {
    rot = std::max(rot, rotation_angle_between(result.cameras[c].rotation, truth[c].rotation) / deg);
    trans = std::max(trans, (result.cameras[c].center() - truth[c].center()).norm());
  }
  bool monotone = true;
  for (std::size_t i = 1; i < result.error_history.size(); ++i) monotone = monotone && result.error_history[i] <= result.error_history[i - 1];
  out.require(rot < 0.05, "rotation");
  out.require(trans < 5e-3, "translation");
  out.require(monotone, "non-increasing reprojection error");
  out.detail << "rotation error " << rot << " deg < 0.05, translation error " << trans * 1000 << " mm < 5, "
             << result.error_history.size() << " non-increasing iterates";
}

double worst_gradient_error(const std::function<std::pair<std::shared_ptr<LeastAbsoluteObjective>, Eigen::VectorXd>()>& draw) {
  double worst = 0.0;
  for (int point = 0; point < 20;) {
    const auto [objective, x] = draw();
    if (test::straddles_kink(*objective, x, 1e-6)) continue;
    worst = std::max(worst, test::gradient_relative_error(*objective, x, 1e-6));
    ++point;
  }
  return worst;
}

void gradient_fidelity(Outcome& out) {
  std::mt19937_64 rng(5);
  const auto cams = test::two_cameras();
  // the objective keeps references to its targets
  auto targets = std::make_shared<std::vector<std::unique_ptr<FitTargets>>>();
  const std::pair<const char*, LossWeights> local_terms[] = {{"L_joint", {1, 0, 0, 0}},
                                                             {"L_smooth", {0, 1, 0, 0}},
                                                             {"L_pen", {0, 0, 1, 0}},
                                                             {"L_phy", {0, 0, 0, 1}}};
  for (const auto& [name, weights] : local_terms) {
    const bool pen = std::string(name) == "L_pen";
    const double worst = worst_gradient_error([&] {
      const int n = pen ? 1 : 2;
      std::vector<PoseState> poses;
      for (int t = 0; t < n; ++t) {
        PoseState p = test::random_pose(rng, pen ? 0.8 : 0.15);
        if (!pen) {
          p.r.z() = 0.0;
          const JointPositions x = forward_kinematics(topo(), shape(), p);
          double lowest = 1e9;
          for (int j : foot_joints(topo())) lowest = std::min(lowest, x(2, j));
          p.r.z() = -lowest + 0.03 * random_vec(rng, 1.0).x();
        }
        poses.push_back(p);
      }
      std::vector<KeypointFrame3D> k3d;
      std::vector<std::vector<KeypointFrame2D>> k2d(2);
      std::vector<PoseState> init;
      for (int t = 0; t < n; ++t) {
        KeypointFrame3D f = test::exact_keypoints3d(poses[t], t);
        for (auto& p : f.points) p += random_vec(rng, 0.05);
        k3d.push_back(f);
        for (int c = 0; c < 2; ++c) {
          KeypointFrame2D g = render_keypoints(topo(), shape(), poses[t], cams[c], t);
          for (auto& uv : g.points) uv += 2.0 * random_vec(rng, 1.0).head<2>();
          k2d[c].push_back(g);
        }
        init.push_back(test::random_pose(rng, 0.2));
      }
      targets->push_back(std::make_unique<FitTargets>(FitTargets{k3d, k2d, cams, MotionSequence(30.0, init, shape())}));
      auto objective = std::make_shared<LocalObjective>(*targets->back(), weights, topo(), LocalFitOptions{});
      Eigen::VectorXd x(objective->num_params());
      for (int t = 0; t < n; ++t) x.segment(t * kPoseParamsPerFrame, kPoseParamsPerFrame) = poses[t].pose_params();
      return std::make_pair(std::shared_ptr<LeastAbsoluteObjective>(objective), x);
    });
    out.require(worst < 1e-4, name);
    out.detail << name << " " << worst << ", ";
  }

  struct GlobalData {
    MotionSequence motion;
    std::vector<KeypointFrame2D> k2d;
    std::vector<CameraModel> cams;
    TrajectoryPrior prior;
    GlobalProblem problem;
  };
  std::vector<std::unique_ptr<GlobalData>> keep;
  const CameraModel cam = look_at_camera("cam", Vec3(0.4, 3.5, 1.1), Vec3(0.0, 0.0, 0.9));
  const double worst = worst_gradient_error([&] {
    auto d = std::make_unique<GlobalData>(GlobalData{fixture_motion(4, 30.0), {}, {}, {}, {}});
    for (int t = 0; t < 4; ++t) {
      d->cams.push_back(cam);
      KeypointFrame2D g = render_keypoints(topo(), shape(), d->motion.frame(t), cam, t);
      for (auto& uv : g.points) uv += 2.0 * random_vec(rng, 1.0).head<2>();
      d->k2d.push_back(g);
      d->prior.positions.push_back(d->motion.frame(t).r + random_vec(rng, 0.05));
      d->prior.yaw.push_back(random_vec(rng, 0.1).x());
      d->prior.confidence.push_back(1.0);
    }
    d->problem = make_global_problem(d->motion, d->k2d, d->cams, d->prior, GlobalLossWeights{1.0, 0.5, 3.0, 2.0}, topo(),
                                     CameraMode::kPerFrame);
    Eigen::VectorXd x = d->problem.x0;
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += 0.01 * random_vec(rng, 1.0).x();
    LeastAbsoluteObjective* raw = d->problem.objective.get();
    keep.push_back(std::move(d));
    return std::make_pair(std::shared_ptr<LeastAbsoluteObjective>(raw, [](LeastAbsoluteObjective*) {}), x);
  });
  out.require(worst < 1e-4, "L_g");
  out.detail << "L_g " << worst << " (max relative error over 20 points each, < 1e-4)";
}

void local_recovery(Outcome& out) {
  const MotionSequence truth = fixture_motion(60, 30.0);
  std::mt19937_64 rng(6);
  std::vector<PoseState> init = truth.frames();
  for (auto& p : init) {
    for (int j = 0; j < kNumJoints; ++j) p.joint_rotation(j) += random_vec(rng, 0.05);
  }
  std::vector<KeypointFrame3D> k3d;
  for (std::size_t t = 0; t < truth.size(); ++t) k3d.push_back(test::exact_keypoints3d(truth.frame(t), static_cast<int>(t)));
  LossWeights w;
  w.lambda_pen = 0.0;
  w.lambda_phy = 0.0;
  const LocalFitResult fit = fit_local(FitTargets{k3d, {}, {}, MotionSequence(30.0, init, shape())}, w, topo());
  const double err = mpjpe(sequence_joint_positions(topo(), fit.motion), sequence_joint_positions(topo(), truth), false);
  const double before = mpjpe(sequence_joint_positions(topo(), MotionSequence(30.0, init, shape())),
                              sequence_joint_positions(topo(), truth), false);
  bool monotone = true;
  const auto& h = fit.report.history;
  for (std::size_t i = 1; i < h.size(); ++i) monotone = monotone && h[i].total <= h[i - 1].total;
  out.require(err < 5.0, "MPJPE");
  out.require(monotone, "non-increasing loss");
  out.detail << "60 frames, MPJPE " << before << " -> " << err << " mm < 5, " << fit.report.iterations
             << " iterations, loss non-increasing";
}

void global_recovery(Outcome& out) {
  const MotionSequence truth = fixture_motion(30, 30.0);
  const CameraModel cam = look_at_camera("cam", Vec3(0.4, 3.5, 1.1), Vec3(0.0, 0.0, 0.9));
  std::vector<CameraModel> cams(truth.size(), cam);
  std::vector<KeypointFrame2D> k2d;
  TrajectoryPrior prior;
  MotionSequence init = truth;
  const int n = static_cast<int>(truth.size());
  const Vec3 direction = Vec3(0.8, 0.5, 0.3).normalized();
  for (int t = 0; t < n; ++t) {
    k2d.push_back(render_keypoints(topo(), shape(), truth.frame(t), cam, t));
    prior.positions.push_back(truth.frame(t).r);
    prior.yaw.push_back(root_yaw(truth.frame(t).theta_body[0]));
    prior.confidence.push_back(1.0);
    init.frames()[t].r += 0.1 * std::sin(std::numbers::pi * t / (n - 1)) * direction;
  }
  GlobalLossWeights w;
  w.lambda_traj = 0.0;
  const GlobalFitResult fit = fit_global(init, k2d, cams, prior, w, topo());
  auto rms = [&](const MotionSequence& m) {
    double s = 0.0;
    for (int t = 0; t < n; ++t) s += (m.frame(t).r - truth.frame(t).r).squaredNorm();
    return std::sqrt(s / n);
  };
  out.require(rms(fit.motion) < 0.01, "root RMS");
  out.detail << "10 cm drift, root RMS " << rms(init) * 100 << " -> " << rms(fit.motion) * 100 << " cm < 1";
}

std::string swap_side(const std::string& s) {
  if (s.rfind("left_", 0) == 0) return "right_" + s.substr(5);
  if (s.rfind("right_", 0) == 0) return "left_" + s.substr(6);
  return s;
}

std::multiset<std::string> code_keys(std::vector<Posecode> codes, bool swap) {
  std::multiset<std::string> out;
  for (auto& c : codes) {
    if (swap) {
      c.subject = swap_side(c.subject);
      c.reference = swap_side(c.reference);
    }
    out.insert(c.subject + "|" + to_string(c.kind) + "|" + c.category + "|" + c.reference);
  }
  return out;
}

void captioner_conformance(Outcome& out) {
  out.require(classify_finger_curvature(140.0) == "slightly_bent", "140 degrees");
  int gaps = 0;
  for (long i = 0; i <= 180000; ++i) {
    const double a = i / 1000.0;
    const std::string c = classify_finger_curvature(a);
    const int hits = (a >= 160.0) + (a >= 120.0 && a < 160.0) + (a >= 80.0 && a < 120.0) + (a < 80.0);
    const std::string expected = a >= 160.0 ? "straight" : a >= 120.0 ? "slightly_bent" : a >= 80.0 ? "bent" : "completely_bent";
    gaps += hits != 1 || c != expected;
  }
  out.require(gaps == 0, "partition totality");

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> scale(0.2, 5.0);
  int scale_fail = 0, mirror_fail = 0;
  const Vec3 m(-1.0, 1.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const JointPositions x = forward_kinematics(topo(), shape(), test::random_pose(rng, 0.6));
    const CaptionInput in = caption_input_from_joints(x, topo());
    JointPositions scaled = x, mirrored = x;
    const double s = scale(rng);
    for (int j = 0; j < x.cols(); ++j) {
      scaled.col(j) = x.col(0) + s * (x.col(j) - x.col(0));
      mirrored.col(j) = x.col(topo().joint_index(swap_side(topo().joint_name(j)))).cwiseProduct(m);
    }
    const CaptionInput si = caption_input_from_joints(scaled, topo());
    const CaptionInput mi = caption_input_from_joints(mirrored, topo());
    scale_fail += code_keys(body_posecodes(si, topo()), false) != code_keys(body_posecodes(in, topo()), false) ||
                  code_keys(hand_posecodes(si), false) != code_keys(hand_posecodes(in), false);
    mirror_fail += code_keys(body_posecodes(mi, topo()), false) != code_keys(body_posecodes(in, topo()), true) ||
                   code_keys(hand_posecodes(mi), false) != code_keys(hand_posecodes(in), true);
  }
  out.require(scale_fail == 0, "scale invariance");
  out.require(mirror_fail == 0, "mirror consistency");

  const MotionSequence motion = fixture_motion(12, 30.0);
  const std::vector<std::string> emotions(12, "happy");
  CaptionOptions opts;
  opts.template_seed = 42;
  std::string first, second;
  for (const auto& d : caption_sequence(motion, emotions, topo(), opts)) first += d.to_json().dump() + "\n";
  for (const auto& d : caption_sequence(motion, emotions, topo(), opts)) second += d.to_json().dump() + "\n";
  out.require(first == second, "byte determinism");
  out.detail << "140 deg -> slightly_bent, 180001 grid angles with one category each, 500 poses scale/mirror ("
             << scale_fail << "/" << mirror_fail << " failures), identical renders";
}

void metrics_oracles(Outcome& out) {
  std::mt19937_64 rng(9);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::Matrix3Xd src(3, 30);
    for (int i = 0; i < 30; ++i) src.col(i) = random_vec(rng, 0.5);
    const Mat3 r = exp_so3(random_vec(rng, 1.5));
    const Vec3 t = random_vec(rng, 2.0);
    const double s = std::exp(random_vec(rng, 0.5).x());
    const AlignmentResult a = procrustes_align(src, ((s * r) * src).colwise() + t);
    worst = std::max({worst, std::abs(a.scale - s), test::max_abs(a.rotation - r), test::max_abs(a.translation - t)});
  }
  out.require(worst <= 1e-9, "Procrustes exactness");
  int violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<JointPositions> pred, gt;
    for (int f = 0; f < 2; ++f) {
      JointPositions a(3, kNumJoints), b(3, kNumJoints);
      for (int j = 0; j < kNumJoints; ++j) {
        a.col(j) = random_vec(rng, 0.5);
        b.col(j) = random_vec(rng, 0.5);
      }
      pred.push_back(a);
      gt.push_back(b);
    }
    violations += mpjpe(pred, gt, true) > mpjpe(pred, gt, false);
  }
  out.require(violations == 0, "aligned <= unaligned");
  Eigen::VectorXd plus(1), minus(1);
  plus << 0.3;
  minus << -0.3;
  const double std2 = temporal_std({plus, minus}).value;
  out.require(std2 == 0.3, "two-point temporal std");
  out.detail << "similarity error " << worst << " <= 1e-9, " << violations << " of 100 aligned > unaligned, two-point std "
             << std2 << " == 0.3";
}

void end_to_end(Outcome& out, const fs::path& work) {
  fs::remove_all(work);
  write_fixture(work.string(), FixtureOptions{});
  const PipelineConfig base = PipelineConfig::load((work / "config.json").string());
  std::vector<std::map<std::string, std::string>> trees;
  for (const auto& [name, workers] : {std::pair{"run_a", 1}, std::pair{"run_b", 1}, std::pair{"run_w8", 8}}) {
    PipelineConfig c = base;
    c.output_dir = (work / name).string();
    c.workers = workers;
    const PipelineResult r = run_pipeline(c);
    out.require(r.exit_code() == 0, std::string(name) + " exit code");
    trees.push_back(test::tree(c.output_dir));
  }
  out.require(!trees[0].empty(), "outputs written");
  out.require(trees[0] == trees[1], "repeat run identical");
  out.require(trees[0] == trees[2], "1 vs 8 workers identical");

  const ReviewManifest m = ReviewManifest::load(export_review_manifest((work / "run_a").string(), base.review));
  int unexpected = 0;
  bool sinking_flagged = false;
  for (const auto& e : m.sequences) {
    const bool injected = e.id == "sinking";
    if (injected) sinking_flagged = e.flags.physics;
    unexpected += e.flags.reprojection + e.flags.penetration + e.flags.jerk + (e.flags.physics && !injected);
  }
  out.require(sinking_flagged, "injected ground violation flagged");
  out.require(unexpected == 0, "no other flags");
  out.detail << trees[0].size() << " files byte-identical across 2 runs and 1 vs 8 workers, ground flag on sinking only";
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "wbm_acceptance";
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<void(Outcome&)> run;
  };
  const std::vector<Criterion> criteria{
      {1, "SG exactness", 1.0, sg_exactness},
      {2, "adaptive-window law", 1.0, adaptive_window_law},
      {3, "triangulation round trip", 5.0, triangulation_round_trip},
      {4, "camera refinement", 30.0, camera_refinement},
      {5, "gradient fidelity", 60.0, gradient_fidelity},
      {6, "local-fit recovery", 120.0, local_recovery},
      {7, "global-fit recovery", 60.0, global_recovery},
      {8, "captioner conformance", 10.0, captioner_conformance},
      {9, "metrics oracles", 5.0, metrics_oracles},
      {10, "end-to-end determinism", 300.0, [&](Outcome& o) { end_to_end(o, work); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome out;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(out);
    } catch (const std::exception& e) {
      out.require(false, std::string("exception: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.require(seconds < c.limit_s, "runtime");
    failed += !out.pass;
    std::printf("%s %d: %s (%s; %.2f s < %.0f s)\n", out.pass ? "PASS" : "FAIL", c.id, c.name, out.detail.str().c_str(),
                seconds, c.limit_s);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
