#include "wbm/pose.h"

#include <cmath>
#include <string>

#include "wbm/errors.h"

namespace wbm {

PoseState::PoseState() {
  theta_body.fill(Vec3::Zero());
  theta_hands.fill(Vec3::Zero());
  psi.fill(0.0);
}

const Vec3& PoseState::joint_rotation(int joint) const {
  if (joint < kNumBodyJoints) return theta_body.at(joint);
  if (joint == kJawJoint) return theta_jaw;
  return theta_hands.at(joint - kJawJoint - 1);
}

Vec3& PoseState::joint_rotation(int joint) {
  return const_cast<Vec3&>(static_cast<const PoseState&>(*this).joint_rotation(joint));
}

Eigen::VectorXd PoseState::pose_params() const {
  Eigen::VectorXd p(kPoseParamsPerFrame);
  for (int j = 0; j < kNumJoints; ++j) p.segment<3>(3 * j) = joint_rotation(j);
  p.tail<3>() = r;
  return p;
}

void PoseState::set_pose_params(const Eigen::VectorXd& params) {
  if (params.size() != kPoseParamsPerFrame) {
    throw StructuralError("pose parameter vector must have " + std::to_string(kPoseParamsPerFrame) +
                          " entries, got " + std::to_string(params.size()));
  }
  for (int j = 0; j < kNumJoints; ++j) joint_rotation(j) = params.segment<3>(3 * j);
  r = params.tail<3>();
}

bool PoseState::is_finite() const {
  for (int j = 0; j < kNumJoints; ++j) {
    if (!joint_rotation(j).allFinite()) return false;
  }
  for (double v : psi) {
    if (!std::isfinite(v)) return false;
  }
  return r.allFinite();
}

PoseState canonicalize_pose(const PoseState& pose) {
  if (!pose.is_finite()) throw ValidationError("pose contains non-finite values");
  PoseState out = pose;
  for (int j = 0; j < kNumJoints; ++j) out.joint_rotation(j) = wrap_axis_angle(pose.joint_rotation(j));
  return out;
}

MotionSequence::MotionSequence(double fps, std::vector<PoseState> frames, SkeletonShape shape)
    : fps_(fps), frames_(std::move(frames)), shape_(std::move(shape)) {
  if (!(fps_ > 0.0) || !std::isfinite(fps_)) throw ValidationError("motion: fps must be positive");
  if (frames_.empty()) throw ValidationError("motion: sequence is empty");
  if (shape_.num_joints() != kNumJoints) {
    throw StructuralError("motion: shape has " + std::to_string(shape_.num_joints()) + " joints, expected " +
                          std::to_string(kNumJoints));
  }
}

}  // namespace wbm
