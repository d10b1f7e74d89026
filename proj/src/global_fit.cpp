#include "wbm/global_fit.h"

#include <cmath>
#include <limits>
#include <numbers>

#include "wbm/errors.h"
#include "wbm/kinematics.h"

namespace wbm {

void GlobalLossWeights::validate() const {
  const std::pair<const char*, double> all[] = {
      {"lambda_2d", lambda_2d}, {"lambda_traj", lambda_traj}, {"lambda_cam", lambda_cam}, {"lambda_reg", lambda_reg}};
  for (const auto& [name, v] : all) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError(std::string(name) + " must be finite and >= 0");
  }
}

void TrajectoryPrior::validate(std::size_t frames) const {
  if (positions.size() != frames || yaw.size() != frames || confidence.size() != frames) {
    throw StructuralError("trajectory prior has " + std::to_string(positions.size()) + " frames, expected " +
                          std::to_string(frames));
  }
  for (std::size_t t = 0; t < frames; ++t) {
    if (!positions[t].allFinite() || !std::isfinite(yaw[t])) {
      throw ValidationError("trajectory prior frame " + std::to_string(t) + " is not finite");
    }
    if (!(confidence[t] >= 0.0 && confidence[t] <= 1.0)) {
      throw ValidationError("trajectory prior confidence at frame " + std::to_string(t) + " is outside [0, 1]");
    }
  }
}

double root_yaw(const Vec3& root_rotation) {
  const Vec3 f = exp_so3(root_rotation) * Vec3::UnitY();
  return std::atan2(-f.x(), f.y());
}

namespace {

double wrap_angle(double a) { return std::remainder(a, 2.0 * std::numbers::pi); }

enum Term { kReprojection = 0, kTrajectory, kCamera, kRegFirst, kRegSecond, kNumTerms };

// Parameter layout per frame: r (3), root rotation (3) and, for per-frame
// cameras, camera axis-angle (3) and translation (3). A static camera adds
// one trailing 6-block.
class GlobalObjective final : public LeastAbsoluteObjective {
 public:
  GlobalObjective(const MotionSequence& motion, const std::vector<KeypointFrame2D>& k2d,
                  const std::vector<CameraModel>& cameras, const TrajectoryPrior& prior,
                  const GlobalLossWeights& weights, const SkeletonTopology& topology, CameraMode mode)
      : motion_(motion), k2d_(k2d), cameras_(cameras), prior_(prior), weights_(weights), topology_(topology),
        mode_(mode), frames_(static_cast<int>(motion.size())) {
    block_ = mode_ == CameraMode::kPerFrame ? 12 : 6;
    // Joint offsets from the root in the root frame; fixed because only the root moves.
    for (const auto& pose : motion_.frames()) {
      PoseState local = pose;
      local.r.setZero();
      local.theta_body[0].setZero();
      offsets_.push_back(forward_kinematics(topology_, motion_.shape(), local));
    }
  }

  void pin_first_root() { pinned_first_ = true; }

  int num_params() const override { return frames_ * block_ + (mode_ == CameraMode::kStatic ? 6 : 0); }
  std::vector<std::string> term_names() const override { return {"2d", "traj", "cam", "reg_first", "reg_second"}; }
  std::vector<double> term_weights() const override {
    return {weights_.lambda_2d, weights_.lambda_traj, weights_.lambda_cam, weights_.lambda_reg, weights_.lambda_reg};
  }
  std::unique_ptr<NormalSystem> make_system() const override {
    if (mode_ == CameraMode::kStatic) return make_dense_system(num_params());
    return make_block_banded_system(block_, frames_, 2);
  }

  Eigen::VectorXd initial_params() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(num_params());
    for (int t = 0; t < frames_; ++t) {
      x.segment<3>(t * block_) = motion_.frame(t).r;
      x.segment<3>(t * block_ + 3) = motion_.frame(t).theta_body[0];
      if (mode_ == CameraMode::kPerFrame) {
        x.segment<3>(t * block_ + 6) = log_so3(cameras_[t].rotation);
        x.segment<3>(t * block_ + 9) = cameras_[t].translation;
      }
    }
    if (mode_ == CameraMode::kStatic) {
      x.segment<3>(frames_ * block_) = log_so3(cameras_[0].rotation);
      x.segment<3>(frames_ * block_ + 3) = cameras_[0].translation;
    }
    return x;
  }

  int camera_index(int t) const {
    if (mode_ == CameraMode::kPerFrame) return t * block_ + 6;
    if (mode_ == CameraMode::kStatic) return frames_ * block_;
    return -1;
  }

  CameraModel camera(const Eigen::VectorXd& x, int t) const {
    CameraModel cam = mode_ == CameraMode::kStatic ? cameras_[0] : cameras_[t];
    const int c = camera_index(t);
    if (c >= 0) {
      cam.rotation = exp_so3(x.segment<3>(c));
      cam.translation = x.segment<3>(c + 3);
    }
    return cam;
  }

  void evaluate(const Eigen::VectorXd& x, ResidualSet& out) const override {
    const double f = frames_;
    const double n_obs = topology_.num_observed_joints();
    auto deriv = [&](int index, double d) {
      if (pinned_first_ && index < 6) return;
      out.add_derivative(index, d);
    };
    for (int t = 0; t < frames_; ++t) {
      const int base = t * block_;
      const Vec3 r = x.segment<3>(base);
      const Vec3 root = x.segment<3>(base + 3);
      const Mat3 r0 = exp_so3(root);
      const Mat3 jr0 = right_jacobian_so3(root);
      const CameraModel cam = camera(x, t);
      const int ci = camera_index(t);
      const Mat3 jrc = ci >= 0 ? right_jacobian_so3(x.segment<3>(ci)) : Mat3::Identity();

      if (weights_.lambda_2d > 0.0) {
        for (int j = 0; j < topology_.num_joints(); ++j) {
          if (!topology_.is_observed(j)) continue;
          const int k = topology_.joint_keypoint(j);
          const double s = k2d_[t].scores[k];
          if (!(s > 0.0)) continue;
          const Vec3 q = offsets_[t].col(j);
          const Vec3 p = r + r0 * q;
          const Vec3 pc = cam.to_camera(p);
          const double coeff = s / (f * n_obs);
          if (!(pc.z() > 1e-6)) {
            out.add_row(kReprojection, t, ResidualKind::kAbsolute, coeff, std::numeric_limits<double>::infinity());
            continue;
          }
          const Vec2 uv(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
          const Eigen::Matrix<double, 2, 3> jp = projection_jacobian(cam, pc);
          const Eigen::Matrix<double, 2, 3> d_r = jp * cam.rotation;
          const Eigen::Matrix<double, 2, 3> d_root = d_r * (-r0 * hat(q) * jr0);
          const Eigen::Matrix<double, 2, 3> d_omega = jp * (-cam.rotation * hat(p) * jrc);
          for (int c = 0; c < 2; ++c) {
            out.add_row(kReprojection, t, ResidualKind::kAbsolute, coeff, uv[c] - k2d_[t].points[k][c]);
            if (!out.with_jacobian()) continue;
            for (int i = 0; i < 3; ++i) {
              deriv(base + i, d_r(c, i));
              deriv(base + 3 + i, d_root(c, i));
              if (ci >= 0) {
                out.add_derivative(ci + i, d_omega(c, i));
                out.add_derivative(ci + 3 + i, jp(c, i));
              }
            }
          }
        }
      }

      if (weights_.lambda_traj > 0.0) {
        const double coeff = prior_.confidence[t] / f;
        for (int c = 0; c < 3; ++c) {
          out.add_row(kTrajectory, t, ResidualKind::kAbsolute, coeff, r[c] - prior_.positions[t][c]);
          deriv(base + c, 1.0);
        }
        const Vec3 fwd = r0 * Vec3::UnitY();
        out.add_row(kTrajectory, t, ResidualKind::kAbsolute, coeff, wrap_angle(root_yaw(root) - prior_.yaw[t]));
        if (out.with_jacobian()) {
          const Eigen::Matrix3d dfwd = -r0 * hat(Vec3::UnitY()) * jr0;
          const double den = fwd.x() * fwd.x() + fwd.y() * fwd.y();
          if (den > 1e-24) {
            const Eigen::RowVector3d dyaw = (-fwd.y() * dfwd.row(0) + fwd.x() * dfwd.row(1)) / den;
            for (int i = 0; i < 3; ++i) deriv(base + 3 + i, dyaw[i]);
          }
        }
      }

      if (t >= 1 && mode_ == CameraMode::kPerFrame && weights_.lambda_cam > 0.0) {
        const int prev = (t - 1) * block_ + 6;
        for (int i = 0; i < 6; ++i) {
          out.add_row(kCamera, t, ResidualKind::kAbsolute, 1.0 / (6.0 * (f - 1.0)), x[ci + i] - x[prev + i]);
          out.add_derivative(ci + i, 1.0);
          out.add_derivative(prev + i, -1.0);
        }
      }

      if (weights_.lambda_reg > 0.0) {
        if (t >= 1) {
          for (int c = 0; c < 3; ++c) {
            out.add_row(kRegFirst, t, ResidualKind::kAbsolute, 1.0 / (3.0 * (f - 1.0)),
                        x[base + c] - x[base - block_ + c]);
            deriv(base + c, 1.0);
            deriv(base - block_ + c, -1.0);
          }
        }
        if (t >= 2) {
          for (int c = 0; c < 3; ++c) {
            out.add_row(kRegSecond, t, ResidualKind::kAbsolute, 1.0 / (3.0 * (f - 2.0)),
                        x[base + c] - 2.0 * x[base - block_ + c] + x[base - 2 * block_ + c]);
            deriv(base + c, 1.0);
            deriv(base - block_ + c, -2.0);
            deriv(base - 2 * block_ + c, 1.0);
          }
        }
      }
    }
  }

  MotionSequence to_motion(const Eigen::VectorXd& x) const {
    std::vector<PoseState> frames = motion_.frames();
    for (int t = 0; t < frames_; ++t) {
      frames[t].r = x.segment<3>(t * block_);
      frames[t].theta_body[0] = wrap_axis_angle(x.segment<3>(t * block_ + 3));
    }
    return MotionSequence(motion_.fps(), std::move(frames), motion_.shape());
  }

  std::vector<CameraModel> to_cameras(const Eigen::VectorXd& x) const {
    std::vector<CameraModel> out;
    for (int t = 0; t < frames_; ++t) out.push_back(camera(x, t));
    return out;
  }

 private:
  const MotionSequence& motion_;
  const std::vector<KeypointFrame2D>& k2d_;
  const std::vector<CameraModel>& cameras_;
  const TrajectoryPrior& prior_;
  GlobalLossWeights weights_;
  const SkeletonTopology& topology_;
  CameraMode mode_;
  int frames_;
  int block_ = 12;
  bool pinned_first_ = false;
  std::vector<JointPositions> offsets_;
};

void check_inputs(const MotionSequence& motion, const std::vector<KeypointFrame2D>& k2d,
                  const std::vector<CameraModel>& cameras, const TrajectoryPrior& prior,
                  const SkeletonTopology& topology) {
  check_dimensions(topology, motion.shape());
  const std::size_t n = motion.size();
  if (k2d.size() != n) throw StructuralError("2D keypoints have " + std::to_string(k2d.size()) + " frames, expected " +
                                             std::to_string(n));
  if (cameras.size() != n) throw StructuralError("expected one camera per frame, got " + std::to_string(cameras.size()));
  prior.validate(n);
  for (const auto& f : k2d) validate(f);
  for (const auto& c : cameras) c.validate();
}

}  // namespace

GlobalLoss global_loss(const MotionSequence& motion, const std::vector<KeypointFrame2D>& k2d,
                       const std::vector<CameraModel>& cameras, const TrajectoryPrior& prior,
                       const GlobalLossWeights& weights, const SkeletonTopology& topology) {
  weights.validate();
  check_inputs(motion, k2d, cameras, prior, topology);
  GlobalLossWeights all{1.0, 1.0, 1.0, 1.0};
  const GlobalObjective objective(motion, k2d, cameras, prior, all, topology, CameraMode::kPerFrame);
  ResidualSet rows(kNumTerms, false);
  objective.evaluate(objective.initial_params(), rows);
  const auto v = rows.term_values();
  GlobalLoss out{0.0, v[kReprojection], v[kTrajectory], v[kCamera], v[kRegFirst], v[kRegSecond]};
  out.total = weights.lambda_2d * out.reprojection + weights.lambda_traj * out.trajectory +
              weights.lambda_cam * out.camera + weights.lambda_reg * out.reg();
  return out;
}

GlobalFitResult fit_global(const MotionSequence& motion, const std::vector<KeypointFrame2D>& k2d,
                           const std::vector<CameraModel>& camera_init, const TrajectoryPrior& prior,
                           const GlobalLossWeights& weights, const SkeletonTopology& topology,
                           const GlobalFitOptions& options) {
  weights.validate();
  check_inputs(motion, k2d, camera_init, prior, topology);

  for (std::size_t t = 0; t < motion.size(); ++t) {
    if (!motion.frame(t).is_finite()) throw FitError("fit_global: non-finite pose at frame " + std::to_string(t));
  }
  MotionSequence seeded = motion;
  std::vector<int> reseeded;
  for (std::size_t t = 0; t < seeded.size(); ++t) {
    const CameraModel& cam = options.camera_mode == CameraMode::kStatic ? camera_init[0] : camera_init[t];
    if (!(cam.to_camera(seeded.frame(t).r).z() > 1e-6)) {
      seeded.frames()[t].r = prior.positions[t];
      reseeded.push_back(static_cast<int>(t));
    }
  }

  GlobalObjective objective(seeded, k2d, camera_init, prior, weights, topology, options.camera_mode);
  const bool gauge = options.camera_mode == CameraMode::kStatic && weights.lambda_traj == 0.0 &&
                     weights.lambda_reg == 0.0;
  if (gauge) objective.pin_first_root();
  Eigen::VectorXd x = objective.initial_params();
  SolveReport report = minimize(objective, x, options.solver);
  return {objective.to_motion(x), objective.to_cameras(x), std::move(report), gauge, std::move(reseeded)};
}

GlobalProblem make_global_problem(const MotionSequence& motion, const std::vector<KeypointFrame2D>& k2d,
                                  const std::vector<CameraModel>& camera_init, const TrajectoryPrior& prior,
                                  const GlobalLossWeights& weights, const SkeletonTopology& topology, CameraMode mode) {
  weights.validate();
  check_inputs(motion, k2d, camera_init, prior, topology);
  auto objective = std::make_unique<GlobalObjective>(motion, k2d, camera_init, prior, weights, topology, mode);
  Eigen::VectorXd x0 = objective->initial_params();
  return {std::move(objective), std::move(x0)};
}

nlohmann::json GlobalFitResult::report_json() const {
  nlohmann::json j = solve_report_json(report);
  j["reseeded_frames"] = reseeded_frames;
  j["warnings"] = nlohmann::json::array();
  if (gauge_warning) {
    j["warnings"].push_back("trajectory is unconstrained under a static camera: first-frame root held fixed");
  }
  return j;
}

}  // namespace wbm
