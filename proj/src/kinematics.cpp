#include "wbm/kinematics.h"

#include <string>

#include "wbm/errors.h"

namespace wbm {

void check_dimensions(const SkeletonTopology& topology, const SkeletonShape& shape) {
  if (topology.num_joints() != kNumJoints || shape.num_joints() != kNumJoints) {
    throw StructuralError("skeleton dimension mismatch: topology has " + std::to_string(topology.num_joints()) +
                          " joints, shape " + std::to_string(shape.num_joints()) + ", pose " +
                          std::to_string(kNumJoints));
  }
}

FkState forward_kinematics_state(const SkeletonTopology& topology, const SkeletonShape& shape,
                                 const PoseState& pose) {
  check_dimensions(topology, shape);
  FkState state;
  state.positions.resize(3, kNumJoints);
  state.world_rotations.resize(kNumJoints);
  state.world_rotations[0] = exp_so3(pose.joint_rotation(0));
  state.positions.col(0) = pose.r;
  for (int j = 1; j < kNumJoints; ++j) {
    const int p = topology.parent(j);
    state.positions.col(j) =
        state.positions.col(p) + state.world_rotations[p] * topology.rest_direction(j) * shape.bone_length(j);
    state.world_rotations[j] = state.world_rotations[p] * exp_so3(pose.joint_rotation(j));
  }
  return state;
}

JointPositions forward_kinematics(const SkeletonTopology& topology, const SkeletonShape& shape,
                                  const PoseState& pose) {
  return forward_kinematics_state(topology, shape, pose).positions;
}

FkJacobian fk_jacobian(const SkeletonTopology& topology, const SkeletonShape& shape, const PoseState& pose,
                       const FkState& state) {
  check_dimensions(topology, shape);
  FkJacobian jac;
  jac.d_positions = Eigen::MatrixXd::Zero(3 * kNumJoints, kPoseParamsPerFrame);
  jac.blocks.resize(kNumJoints);

  // dp_j/dtheta_a = -G_a [v]x J_r(theta_a), with v = G_a^T (p_j - p_a), for
  // every strict ancestor a of j.
  std::vector<Mat3> right_jacobians(kNumJoints);
  for (int a = 0; a < kNumJoints; ++a) right_jacobians[a] = right_jacobian_so3(pose.joint_rotation(a));

  for (int j = 0; j < kNumJoints; ++j) {
    auto& blocks = jac.blocks[j];
    for (int a = topology.parent(j); a >= 0; a = topology.parent(a)) {
      const Mat3& g = state.world_rotations[a];
      const Vec3 v = g.transpose() * (state.positions.col(j) - state.positions.col(a));
      jac.d_positions.block<3, 3>(3 * j, 3 * a) = -g * hat(v) * right_jacobians[a];
      blocks.push_back(a);
    }
    jac.d_positions.block<3, 3>(3 * j, 3 * kNumJoints).setIdentity();
    blocks.push_back(kNumJoints);
  }
  return jac;
}

std::vector<JointPositions> sequence_joint_positions(const SkeletonTopology& topology,
                                                     const MotionSequence& motion) {
  std::vector<JointPositions> out;
  out.reserve(motion.size());
  for (const auto& pose : motion.frames()) out.push_back(forward_kinematics(topology, motion.shape(), pose));
  return out;
}

}  // namespace wbm
