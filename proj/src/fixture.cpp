#include "wbm/fixture.h"

#include <Eigen/Geometry>

#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>

#include "wbm/errors.h"
#include "wbm/io.h"
#include "wbm/kinematics.h"
#include "wbm/local_fit.h"

namespace wbm {

namespace fs = std::filesystem;

MotionSequence fixture_motion(int frames, double fps) {
  if (frames < 1) throw ValidationError("fixture needs at least one frame");
  const SkeletonTopology& topo = default_topology();
  const SkeletonShape& shape = default_shape();
  const double pi = std::numbers::pi;
  const Vec3 left_arm(std::sin(40.0 * pi / 180.0), 0.0, -std::cos(40.0 * pi / 180.0));

  std::vector<PoseState> poses(frames);
  for (int t = 0; t < frames; ++t) {
    const double phase = 2.0 * pi * t / std::max(frames, 8);
    PoseState& p = poses[t];
    p.theta_body[0] = Vec3(0.0, 0.0, 0.1);
    p.joint_rotation(topo.joint_index("spine2")) = Vec3(0.05 * std::sin(phase), 0.0, 0.0);
    p.joint_rotation(topo.joint_index("neck")) = Vec3(0.1 * std::sin(phase), 0.0, 0.05 * std::cos(phase));
    p.joint_rotation(topo.joint_index("left_shoulder")) = Vec3(0.0, -0.2 - 0.15 * std::sin(phase), 0.0);
    p.joint_rotation(topo.joint_index("right_shoulder")) = Vec3(0.0, 0.25 + 0.1 * std::cos(phase), 0.0);
    p.joint_rotation(topo.joint_index("left_elbow")) = Vec3(-0.5 - 0.3 * std::sin(phase), 0.0, 0.0);
    p.joint_rotation(topo.joint_index("right_elbow")) = Vec3(-0.3 - 0.2 * std::cos(phase), 0.0, 0.0);
    p.joint_rotation(topo.joint_index("left_knee")) = Vec3(0.1, 0.0, 0.0);
    p.joint_rotation(topo.joint_index("right_knee")) = Vec3(0.15, 0.0, 0.0);
    p.theta_jaw = Vec3(0.1 + 0.05 * std::sin(phase), 0.0, 0.0);

    for (int side = 0; side < 2; ++side) {
      const std::string prefix = side == 0 ? "left_" : "right_";
      const Vec3 arm = side == 0 ? left_arm : Vec3(-left_arm.x(), left_arm.y(), left_arm.z());
      const Vec3 n = arm.cross(Vec3::UnitY()).normalized();
      const double curl = side == 0 ? 0.15 + 0.15 * std::sin(phase) : 0.25 + 0.1 * std::cos(phase);
      for (const char* finger : {"thumb", "index", "middle", "ring", "pinky"}) {
        for (int seg = 1; seg <= 3; ++seg) {
          const int j = topo.joint_index(prefix + finger + std::to_string(seg));
          const Vec3 ray = topo.rest_direction(j);
          const Vec3 axis = ray.cross(n).normalized();
          p.joint_rotation(j) = curl * axis;
        }
      }
    }
  }

  // stand on the ground: the lowest foot joint over the sequence touches z = 0.01
  const auto feet = foot_joints(topo);
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& p : poses) {
    const JointPositions x = forward_kinematics(topo, shape, p);
    for (int j : feet) lowest = std::min(lowest, x(2, j));
  }
  for (auto& p : poses) p.r = Vec3(0.0, 0.0, 0.01 - lowest);
  return MotionSequence(fps, std::move(poses), shape);
}

CameraModel look_at_camera(const std::string& name, const Vec3& center, const Vec3& target) {
  const Vec3 z = (target - center).normalized();
  const Vec3 x = z.cross(Vec3::UnitZ()).normalized();
  const Vec3 y = z.cross(x);
  CameraModel cam;
  cam.name = name;
  cam.fx = cam.fy = 1000.0;
  cam.cx = 640.0;
  cam.cy = 360.0;
  cam.rotation.row(0) = x.transpose();
  cam.rotation.row(1) = y.transpose();
  cam.rotation.row(2) = z.transpose();
  cam.translation = -cam.rotation * center;
  return cam;
}

KeypointFrame2D render_keypoints(const SkeletonTopology& topology, const SkeletonShape& shape, const PoseState& pose,
                                 const CameraModel& camera, int frame) {
  const JointPositions x = forward_kinematics(topology, shape, pose);
  KeypointFrame2D out;
  out.frame = frame;
  out.view = camera.name;
  for (int k = 0; k < kNumKeypoints; ++k) {
    const int j = topology.keypoint_joint(k);
    if (j < 0) continue;
    out.points[k] = project(camera, x.col(j));
    out.scores[k] = 1.0;
  }
  return out;
}

KeypointFrame3D keypoints_from_pose(const SkeletonTopology& topology, const SkeletonShape& shape,
                                    const PoseState& pose, int frame) {
  const JointPositions x = forward_kinematics(topology, shape, pose);
  KeypointFrame3D out;
  out.frame = frame;
  for (int k = 0; k < kNumKeypoints; ++k) {
    const int j = topology.keypoint_joint(k);
    if (j < 0) continue;
    out.points[k] = x.col(j);
    out.scores[k] = 1.0;
  }
  return out;
}

namespace {

MotionSequence perturbed(const MotionSequence& truth, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<PoseState> poses = truth.frames();
  for (auto& p : poses) {
    for (int j = 0; j < kNumJoints; ++j) p.joint_rotation(j) += Vec3(noise(rng), noise(rng), noise(rng));
  }
  return MotionSequence(truth.fps(), std::move(poses), truth.shape());
}

std::vector<std::string> emotion_labels(int frames) {
  std::vector<std::string> out;
  for (int t = 0; t < frames; ++t) out.emplace_back(t < frames / 2 ? "calm" : "happy");
  return out;
}

void write_multiview(const fs::path& dir, const MotionSequence& truth, const FixtureOptions& options,
                     std::uint64_t seed) {
  const SkeletonTopology& topo = default_topology();
  fs::create_directories(dir);
  const Vec3 target(0.0, 0.0, 0.9);
  const std::vector<CameraModel> cams{look_at_camera("cam0", Vec3(-1.4, 3.4, 1.3), target),
                                      look_at_camera("cam1", Vec3(1.3, 3.6, 1.0), target)};
  std::vector<ViewKeypoints> views;
  for (const auto& cam : cams) {
    ViewKeypoints v{cam.name, {}};
    for (std::size_t t = 0; t < truth.size(); ++t) {
      v.frames.push_back(render_keypoints(topo, truth.shape(), truth.frame(t), cam, static_cast<int>(t)));
    }
    views.push_back(std::move(v));
  }
  write_cameras((dir / "cameras.json").string(), {cams, {}});
  write_keypoints2d((dir / "keypoints2d.jsonl").string(), views);
  write_motion((dir / "init_pose.jsonl").string(), perturbed(truth, options.init_noise, seed), topo);
  write_motion((dir / "ground_truth.jsonl").string(), truth, topo);
  write_emotions((dir / "emotions.jsonl").string(), emotion_labels(static_cast<int>(truth.size())));
}

}  // namespace

std::vector<std::string> write_fixture(const std::string& dir, const FixtureOptions& options) {
  const SkeletonTopology& topo = default_topology();
  const fs::path root(dir);
  const fs::path seqs = root / "sequences";
  const MotionSequence truth = fixture_motion(options.frames, options.fps);
  std::vector<std::string> ids;

  write_multiview(seqs / "multiview", truth, options, options.seed);
  ids.emplace_back("multiview");

  {
    const fs::path d = seqs / "monocular";
    fs::create_directories(d);
    const CameraModel cam = look_at_camera("cam0", Vec3(0.4, 3.5, 1.1), Vec3(0.0, 0.0, 0.9));
    ViewKeypoints view{cam.name, {}};
    std::vector<KeypointFrame3D> k3d;
    TrajectoryPrior prior;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      view.frames.push_back(render_keypoints(topo, truth.shape(), truth.frame(t), cam, static_cast<int>(t)));
      k3d.push_back(keypoints_from_pose(topo, truth.shape(), truth.frame(t), static_cast<int>(t)));
      prior.positions.push_back(truth.frame(t).r);
      prior.yaw.push_back(root_yaw(truth.frame(t).theta_body[0]));
      prior.confidence.push_back(1.0);
    }
    write_cameras((d / "cameras.json").string(), {{cam}, {}});
    write_keypoints2d((d / "keypoints2d.jsonl").string(), {view});
    write_keypoints3d((d / "keypoints3d.jsonl").string(), k3d);
    write_trajectory_prior((d / "trajectory_prior.jsonl").string(), prior);
    write_motion((d / "init_pose.jsonl").string(), perturbed(truth, options.init_noise, options.seed + 1), topo);
    write_motion((d / "ground_truth.jsonl").string(), truth, topo);
    write_emotions((d / "emotions.jsonl").string(), emotion_labels(static_cast<int>(truth.size())));
    ids.emplace_back("monocular");
  }

  if (options.inject_ground) {
    // the body sinks smoothly and comes back up, pushing the feet below z = 0
    std::vector<PoseState> poses = truth.frames();
    const double n = static_cast<double>(std::max<std::size_t>(poses.size() - 1, 1));
    for (std::size_t t = 0; t < poses.size(); ++t) {
      const double s = std::sin(std::numbers::pi * static_cast<double>(t) / n);
      poses[t].r.z() -= options.ground_drop * s * s;
    }
    write_multiview(seqs / "sinking", MotionSequence(truth.fps(), std::move(poses), truth.shape()), options,
                    options.seed + 2);
    ids.emplace_back("sinking");
  }

  write_json_file((root / "config.json").string(),
                  {{"input_dir", "sequences"}, {"output_dir", "results"}, {"seed", options.seed}, {"workers", 1}});
  return ids;
}

}  // namespace wbm
