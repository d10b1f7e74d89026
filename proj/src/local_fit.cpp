#include "wbm/local_fit.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "wbm/errors.h"
#include "wbm/kinematics.h"

namespace wbm {

void LossWeights::validate() const {
  const std::pair<const char*, double> all[] = {
      {"lambda_joint", lambda_joint}, {"lambda_smooth", lambda_smooth}, {"lambda_pen", lambda_pen}, {"lambda_phy", lambda_phy}};
  for (const auto& [name, v] : all) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError(std::string(name) + " must be finite and >= 0");
  }
}

void FitTargets::validate(const SkeletonTopology& topology) const {
  check_dimensions(topology, theta_init.shape());
  const std::size_t n = theta_init.size();
  if (!k3d.empty() && k3d.size() != n) {
    throw StructuralError("3D targets have " + std::to_string(k3d.size()) + " frames, initial motion has " +
                          std::to_string(n));
  }
  if (k2d.size() != cameras.size()) {
    throw StructuralError(std::to_string(k2d.size()) + " 2D views but " + std::to_string(cameras.size()) + " cameras");
  }
  for (const auto& view : k2d) {
    if (view.size() != n) throw StructuralError("2D targets are not aligned with the initial motion");
    for (const auto& f : view) wbm::validate(f);
  }
  for (const auto& f : k3d) wbm::validate(f);
  for (const auto& c : cameras) c.validate();
  for (const auto& p : theta_init.frames()) {
    if (!p.is_finite()) throw ValidationError("initial motion contains non-finite values");
  }
}

CollisionProxy CollisionProxy::from_topology(const SkeletonTopology& topology) {
  CollisionProxy proxy;
  for (int j = 1; j < topology.num_joints(); ++j) {
    proxy.capsules.push_back({topology.parent(j), j, topology.capsule_radius(j)});
  }
  // Bones that share a joint or are linked by one other bone touch at rest
  // wherever that link is shorter than the two radii (spine3, thumb1).
  auto linked = [&](int u, int v) { return u == v || topology.parent(u) == v || topology.parent(v) == u; };
  for (std::size_t a = 0; a < proxy.capsules.size(); ++a) {
    for (std::size_t b = a + 1; b < proxy.capsules.size(); ++b) {
      const Capsule& ca = proxy.capsules[a];
      const Capsule& cb = proxy.capsules[b];
      if (linked(ca.parent, cb.parent) || linked(ca.parent, cb.joint) || linked(ca.joint, cb.parent) ||
          linked(ca.joint, cb.joint)) {
        proxy.excluded.emplace_back(static_cast<int>(a), static_cast<int>(b));
      }
    }
  }
  return proxy;
}

void CollisionProxy::validate(const SkeletonTopology& topology) const {
  for (const auto& c : capsules) {
    if (!(c.radius > 0.0) || !std::isfinite(c.radius)) throw ValidationError("capsule radius must be > 0");
    if (c.parent < 0 || c.joint < 0 || c.parent >= topology.num_joints() || c.joint >= topology.num_joints()) {
      throw ValidationError("capsule references an unknown joint");
    }
  }
  const int n = static_cast<int>(capsules.size());
  for (const auto& [a, b] : excluded) {
    if (a < 0 || b < 0 || a >= n || b >= n) throw ValidationError("excluded capsule pair out of range");
  }
}

std::vector<std::pair<int, int>> CollisionProxy::active_pairs() const {
  std::vector<std::pair<int, int>> sorted_excluded;
  for (auto [a, b] : excluded) sorted_excluded.emplace_back(std::min(a, b), std::max(a, b));
  std::sort(sorted_excluded.begin(), sorted_excluded.end());
  std::vector<std::pair<int, int>> pairs;
  const int n = static_cast<int>(capsules.size());
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      if (!std::binary_search(sorted_excluded.begin(), sorted_excluded.end(), std::make_pair(a, b))) {
        pairs.emplace_back(a, b);
      }
    }
  }
  return pairs;
}

SegmentClosest segment_closest(const Vec3& a0, const Vec3& a1, const Vec3& b0, const Vec3& b1) {
  const Vec3 d1 = a1 - a0;
  const Vec3 d2 = b1 - b0;
  const Vec3 r = a0 - b0;
  const double a = d1.squaredNorm();
  const double e = d2.squaredNorm();
  const double f = d2.dot(r);
  constexpr double kTiny = 1e-18;
  double s = 0.0;
  double t = 0.0;
  if (a <= kTiny && e <= kTiny) {
    // both degenerate
  } else if (a <= kTiny) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= kTiny) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      s = denom > kTiny ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return {s, t, ((a0 + s * d1) - (b0 + t * d2)).norm()};
}

double capsule_pair_penalty(const Vec3& a0, const Vec3& a1, double ra, const Vec3& b0, const Vec3& b1, double rb) {
  const double overlap = ra + rb - segment_closest(a0, a1, b0, b1).distance;
  return overlap > 0.0 ? overlap * overlap : 0.0;
}

std::vector<int> foot_joints(const SkeletonTopology& topology) {
  std::vector<int> out;
  for (const char* name : {"left_ankle", "right_ankle", "left_foot", "right_foot"}) {
    if (auto j = topology.find_joint(name)) out.push_back(*j);
  }
  return out;
}

namespace {

constexpr int kP = kPoseParamsPerFrame;
constexpr int kPriorDims = 3 * kNumJoints;

struct FrameFk {
  FkState state;
  FkJacobian jac;
};

class Emitter {
 public:
  Emitter(const SkeletonTopology& topology, const SkeletonShape& shape, ResidualSet& rows)
      : topology_(topology), shape_(shape), rows_(rows) {}

  std::vector<FrameFk> kinematics(const std::vector<PoseState>& poses) const {
    std::vector<FrameFk> out(poses.size());
    for (std::size_t t = 0; t < poses.size(); ++t) {
      out[t].state = forward_kinematics_state(topology_, shape_, poses[t]);
      if (rows_.with_jacobian()) out[t].jac = fk_jacobian(topology_, shape_, poses[t], out[t].state);
    }
    return out;
  }

  // Derivative of a . p_joint(frame) with respect to that frame's parameters.
  void point_derivative(const FrameFk& fk, int frame, int joint, const Eigen::RowVector3d& a) const {
    if (!rows_.with_jacobian()) return;
    for (int b : fk.jac.blocks[joint]) {
      const Eigen::RowVector3d d = a * fk.jac.d_positions.block<3, 3>(3 * joint, 3 * b);
      for (int k = 0; k < 3; ++k) rows_.add_derivative(frame * kP + 3 * b + k, d[k]);
    }
  }

  void joint3d(int term, int frame, const FrameFk& fk, const KeypointFrame3D& target, double coeff) const {
    for (int j = 0; j < topology_.num_joints(); ++j) {
      if (!topology_.is_observed(j)) continue;
      const int k = topology_.joint_keypoint(j);
      const double s = target.scores[k];
      if (!(s > 0.0)) continue;
      for (int c = 0; c < 3; ++c) {
        rows_.add_row(term, frame, ResidualKind::kAbsolute, s * coeff, fk.state.positions(c, j) - target.points[k][c]);
        point_derivative(fk, frame, j, Eigen::RowVector3d::Unit(c));
      }
    }
  }

  void joint2d(int term, int frame, const FrameFk& fk, const CameraModel& cam, const KeypointFrame2D& target,
               double coeff) const {
    for (int j = 0; j < topology_.num_joints(); ++j) {
      if (!topology_.is_observed(j)) continue;
      const int k = topology_.joint_keypoint(j);
      const double s = target.scores[k];
      if (!(s > 0.0)) continue;
      const Vec3 pc = cam.to_camera(fk.state.positions.col(j));
      if (!(pc.z() > 1e-6)) {
        rows_.add_row(term, frame, ResidualKind::kAbsolute, s * coeff, std::numeric_limits<double>::infinity());
        continue;
      }
      const Vec2 uv(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
      const Eigen::Matrix<double, 2, 3> jac = projection_jacobian(cam, pc) * cam.rotation;
      for (int c = 0; c < 2; ++c) {
        rows_.add_row(term, frame, ResidualKind::kAbsolute, s * coeff, uv[c] - target.points[k][c]);
        point_derivative(fk, frame, j, jac.row(c));
      }
    }
  }

  void prior(int term, int frame, const Eigen::VectorXd& params, const Eigen::VectorXd& init, double coeff) const {
    for (int i = 0; i < kPriorDims; ++i) {
      rows_.add_row(term, frame, ResidualKind::kAbsolute, coeff, params[i] - init[i]);
      rows_.add_derivative(frame * kP + i, 1.0);
    }
  }

  // First differences between frame t and t + 1.
  void smooth(int term, int t, const Eigen::VectorXd& p0, const Eigen::VectorXd& p1, const FrameFk& fk0,
              const FrameFk& fk1, double param_coeff, double joint_coeff) const {
    for (int i = 0; i < kP; ++i) {
      rows_.add_row(term, t + 1, ResidualKind::kAbsolute, param_coeff, p1[i] - p0[i]);
      rows_.add_derivative((t + 1) * kP + i, 1.0);
      rows_.add_derivative(t * kP + i, -1.0);
    }
    for (int j = 0; j < topology_.num_joints(); ++j) {
      for (int c = 0; c < 3; ++c) {
        rows_.add_row(term, t + 1, ResidualKind::kAbsolute, joint_coeff,
                      fk1.state.positions(c, j) - fk0.state.positions(c, j));
        point_derivative(fk1, t + 1, j, Eigen::RowVector3d::Unit(c));
        point_derivative(fk0, t, j, -Eigen::RowVector3d::Unit(c));
      }
    }
  }

  void pen(int term, int frame, const FrameFk& fk, const CollisionProxy& proxy,
           const std::vector<std::pair<int, int>>& pairs) const {
    const auto& pos = fk.state.positions;
    for (const auto& [ia, ib] : pairs) {
      const Capsule& ca = proxy.capsules[ia];
      const Capsule& cb = proxy.capsules[ib];
      const Vec3 a0 = pos.col(ca.parent);
      const Vec3 a1 = pos.col(ca.joint);
      const Vec3 b0 = pos.col(cb.parent);
      const Vec3 b1 = pos.col(cb.joint);
      const SegmentClosest cl = segment_closest(a0, a1, b0, b1);
      const double overlap = ca.radius + cb.radius - cl.distance;
      if (!(overlap > 0.0)) continue;
      rows_.add_row(term, frame, ResidualKind::kSquared, 1.0, overlap);
      if (!rows_.with_jacobian() || cl.distance < 1e-12) continue;
      const Vec3 n = ((a0 + cl.s * (a1 - a0)) - (b0 + cl.t * (b1 - b0))) / cl.distance;
      // d(overlap) = -d(distance); closest-point parameters are stationary.
      point_derivative(fk, frame, ca.parent, -(1.0 - cl.s) * n.transpose());
      point_derivative(fk, frame, ca.joint, -cl.s * n.transpose());
      point_derivative(fk, frame, cb.parent, (1.0 - cl.t) * n.transpose());
      point_derivative(fk, frame, cb.joint, cl.t * n.transpose());
    }
  }

  // Penetration of frame t and skating between t - 1 and t. Returns the two parts.
  // `contact` fixes which feet count as planted; otherwise the current height decides.
  std::pair<double, double> phy(int term, int t, const FrameFk& fk, const FrameFk* prev,
                                const std::vector<int>& feet, double ground, double fps,
                                const std::vector<char>* contact = nullptr) const {
    double penetration = 0.0;
    double skating = 0.0;
    for (std::size_t i = 0; i < feet.size(); ++i) {
      const int j = feet[i];
      const Vec3 p = fk.state.positions.col(j);
      const double below = ground - p.z();
      if (below > 0.0) {
        rows_.add_row(term, t, ResidualKind::kSquared, 1.0, below);
        point_derivative(fk, t, j, -Eigen::RowVector3d::UnitZ());
        penetration += below * below;
      }
      const bool planted = contact != nullptr ? (*contact)[i] != 0 : p.z() - ground < kContactHeight;
      if (prev != nullptr && planted) {
        const Vec3 q = prev->state.positions.col(j);
        for (int c = 0; c < 2; ++c) {
          const double v = (p[c] - q[c]) * fps;
          rows_.add_row(term, t, ResidualKind::kSquared, 1.0, v);
          point_derivative(fk, t, j, fps * Eigen::RowVector3d::Unit(c));
          point_derivative(*prev, t - 1, j, -fps * Eigen::RowVector3d::Unit(c));
          skating += v * v;
        }
      }
    }
    return {penetration, skating};
  }

 private:
  const SkeletonTopology& topology_;
  const SkeletonShape& shape_;
  ResidualSet& rows_;
};

double term_sum(const ResidualSet& rows, int term) { return rows.term_values()[term]; }

}  // namespace

JointLoss loss_joint(const MotionSequence& motion, const FitTargets& targets, const SkeletonTopology& topology) {
  check_dimensions(topology, motion.shape());
  const std::size_t n = motion.size();
  if (targets.theta_init.size() != n || (!targets.k3d.empty() && targets.k3d.size() != n)) {
    throw StructuralError("loss_joint: frame counts differ");
  }
  if (targets.k2d.size() != targets.cameras.size()) throw StructuralError("loss_joint: views and cameras differ");
  for (const auto& v : targets.k2d) {
    if (v.size() != n) throw StructuralError("loss_joint: 2D targets are not aligned");
  }
  ResidualSet rows(3, false);
  const Emitter emit(topology, motion.shape(), rows);
  const auto fk = emit.kinematics(motion.frames());
  const double f = static_cast<double>(n);
  const double n_obs = topology.num_observed_joints();
  for (std::size_t t = 0; t < n; ++t) {
    const int ti = static_cast<int>(t);
    if (!targets.k3d.empty()) emit.joint3d(0, ti, fk[t], targets.k3d[t], 1.0 / (f * n_obs));
    for (std::size_t v = 0; v < targets.cameras.size(); ++v) {
      emit.joint2d(1, ti, fk[t], targets.cameras[v], targets.k2d[v][t],
                   1.0 / (f * static_cast<double>(targets.cameras.size()) * n_obs));
    }
    emit.prior(2, ti, motion.frame(t).pose_params(), targets.theta_init.frame(t).pose_params(), 1.0 / (f * kPriorDims));
  }
  const auto values = rows.term_values();
  return {values[0] + values[1] + values[2], values[0], values[1], values[2]};
}

SmoothLoss loss_smooth(const MotionSequence& motion, const SkeletonTopology& topology) {
  check_dimensions(topology, motion.shape());
  if (motion.size() < 2) return {0.0, true};
  ResidualSet rows(1, false);
  const Emitter emit(topology, motion.shape(), rows);
  const auto fk = emit.kinematics(motion.frames());
  const double pairs = static_cast<double>(motion.size() - 1);
  for (std::size_t t = 0; t + 1 < motion.size(); ++t) {
    emit.smooth(0, static_cast<int>(t), motion.frame(t).pose_params(), motion.frame(t + 1).pose_params(), fk[t],
                fk[t + 1], 1.0 / (pairs * kP), 1.0 / (pairs * topology.num_joints()));
  }
  return {term_sum(rows, 0), false};
}

double loss_pen(const PoseState& pose, const CollisionProxy& proxy, const SkeletonTopology& topology,
                const SkeletonShape& shape) {
  check_dimensions(topology, shape);
  proxy.validate(topology);
  ResidualSet rows(1, false);
  const Emitter emit(topology, shape, rows);
  const auto fk = emit.kinematics({pose});
  emit.pen(0, 0, fk[0], proxy, proxy.active_pairs());
  return term_sum(rows, 0);
}

PhysicsLoss loss_phy(const MotionSequence& motion, double ground_height, const SkeletonTopology& topology) {
  check_dimensions(topology, motion.shape());
  ResidualSet rows(1, false);
  const Emitter emit(topology, motion.shape(), rows);
  const auto fk = emit.kinematics(motion.frames());
  const auto feet = foot_joints(topology);
  PhysicsLoss out;
  for (std::size_t t = 0; t < motion.size(); ++t) {
    const auto [pen, skate] = emit.phy(0, static_cast<int>(t), fk[t], t > 0 ? &fk[t - 1] : nullptr, feet,
                                       ground_height, motion.fps());
    out.penetration += pen;
    out.skating += skate;
  }
  out.total = out.penetration + out.skating;
  return out;
}

LocalObjective::LocalObjective(const FitTargets& targets, const LossWeights& weights, const SkeletonTopology& topology,
                               const LocalFitOptions& options)
    : targets_(targets),
      weights_(weights),
      topology_(topology),
      options_(options),
      proxy_(options.proxy ? *options.proxy : CollisionProxy::from_topology(topology)),
      pairs_(proxy_.active_pairs()),
      feet_(foot_joints(topology)) {
  weights_.validate();
  proxy_.validate(topology);
  const auto& mask = options_.terms;
  active_[kJoint3d] = mask.joint && weights_.lambda_joint > 0.0 && !targets_.k3d.empty();
  active_[kJoint2d] = mask.joint && weights_.lambda_joint > 0.0 && !targets_.cameras.empty();
  active_[kPrior] = mask.joint && weights_.lambda_joint > 0.0;
  active_[kSmooth] = mask.smooth && weights_.lambda_smooth > 0.0 && targets_.theta_init.size() > 1;
  active_[kPen] = mask.pen && weights_.lambda_pen > 0.0;
  active_[kPhy] = mask.phy && weights_.lambda_phy > 0.0;

  // Contact labels come from the observations and stay fixed during the solve: a
  // threshold on the moving estimate makes the loss jump and traps feet just above it.
  if (active_[kPhy]) {
    for (std::size_t t = 0; t < targets_.theta_init.size(); ++t) {
      const JointPositions init = forward_kinematics(topology_, targets_.theta_init.shape(), targets_.theta_init.frame(t));
      std::vector<char> planted(feet_.size());
      for (std::size_t i = 0; i < feet_.size(); ++i) {
        const int k = topology_.joint_keypoint(feet_[i]);
        const bool seen = t < targets_.k3d.size() && k >= 0 && targets_.k3d[t].scores[k] > 0.0;
        const double z = seen ? targets_.k3d[t].points[k].z() : init(2, feet_[i]);
        planted[i] = z - options_.ground_height < kContactHeight;
      }
      contact_.push_back(std::move(planted));
    }
  }
}

int LocalObjective::num_params() const { return static_cast<int>(targets_.theta_init.size()) * kP; }

std::vector<std::string> LocalObjective::term_names() const {
  return {"joint_3d", "joint_2d", "prior", "smooth", "pen", "phy"};
}

std::vector<double> LocalObjective::term_weights() const {
  return {weights_.lambda_joint, weights_.lambda_joint, weights_.lambda_joint,
          weights_.lambda_smooth, weights_.lambda_pen,   weights_.lambda_phy};
}

Eigen::VectorXd LocalObjective::initial_params() const {
  Eigen::VectorXd x(num_params());
  for (std::size_t t = 0; t < targets_.theta_init.size(); ++t) {
    x.segment(static_cast<Eigen::Index>(t) * kP, kP) = targets_.theta_init.frame(t).pose_params();
  }
  return x;
}

MotionSequence LocalObjective::to_motion(const Eigen::VectorXd& x) const {
  std::vector<PoseState> frames = targets_.theta_init.frames();
  for (std::size_t t = 0; t < frames.size(); ++t) {
    frames[t].set_pose_params(x.segment(static_cast<Eigen::Index>(t) * kP, kP));
  }
  return MotionSequence(targets_.theta_init.fps(), std::move(frames), targets_.theta_init.shape());
}

void LocalObjective::evaluate(const Eigen::VectorXd& x, ResidualSet& out) const {
  const std::size_t n = targets_.theta_init.size();
  std::vector<PoseState> poses = targets_.theta_init.frames();
  std::vector<Eigen::VectorXd> params(n);
  for (std::size_t t = 0; t < n; ++t) {
    params[t] = x.segment(static_cast<Eigen::Index>(t) * kP, kP);
    poses[t].set_pose_params(params[t]);
  }
  const Emitter emit(topology_, targets_.theta_init.shape(), out);
  const auto fk = emit.kinematics(poses);
  const double f = static_cast<double>(n);
  const double n_obs = topology_.num_observed_joints();
  const double views = static_cast<double>(targets_.cameras.size());
  for (std::size_t t = 0; t < n; ++t) {
    const int ti = static_cast<int>(t);
    if (active_[kJoint3d]) emit.joint3d(kJoint3d, ti, fk[t], targets_.k3d[t], 1.0 / (f * n_obs));
    if (active_[kJoint2d]) {
      for (std::size_t v = 0; v < targets_.cameras.size(); ++v) {
        emit.joint2d(kJoint2d, ti, fk[t], targets_.cameras[v], targets_.k2d[v][t], 1.0 / (f * views * n_obs));
      }
    }
    if (active_[kPrior]) {
      emit.prior(kPrior, ti, params[t], targets_.theta_init.frame(t).pose_params(), 1.0 / (f * kPriorDims));
    }
    if (active_[kSmooth] && t + 1 < n) {
      emit.smooth(kSmooth, ti, params[t], params[t + 1].eval(), fk[t], fk[t + 1], 1.0 / ((f - 1.0) * kP),
                  1.0 / ((f - 1.0) * topology_.num_joints()));
    }
    if (active_[kPen]) emit.pen(kPen, ti, fk[t], proxy_, pairs_);
    if (active_[kPhy]) {
      emit.phy(kPhy, ti, fk[t], t > 0 ? &fk[t - 1] : nullptr, feet_, options_.ground_height,
               targets_.theta_init.fps(), &contact_[t]);
    }
  }
}

std::unique_ptr<NormalSystem> LocalObjective::make_system() const {
  return make_block_banded_system(kP, static_cast<int>(targets_.theta_init.size()), 1);
}

LocalFitResult fit_local(const FitTargets& targets, const LossWeights& weights, const SkeletonTopology& topology,
                         const LocalFitOptions& options) {
  weights.validate();
  targets.validate(topology);
  const LocalObjective objective(targets, weights, topology, options);
  Eigen::VectorXd x = objective.initial_params();
  SolveReport report = minimize(objective, x, options.solver);
  MotionSequence motion = objective.to_motion(x);
  for (auto& p : motion.frames()) p = canonicalize_pose(p);
  const bool single = targets.theta_init.size() < 2 && options.terms.smooth && weights.lambda_smooth > 0.0;
  return {std::move(motion), std::move(report), single};
}

nlohmann::json LocalFitResult::report_json() const {
  nlohmann::json j = solve_report_json(report);
  j["warnings"] = nlohmann::json::array();
  if (smooth_single_frame) j["warnings"].push_back("single frame: smoothness term is zero");
  return j;
}

}  // namespace wbm
