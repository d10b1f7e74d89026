#pragma once

#include <vector>

#include <Eigen/Core>

#include "wbm/pose.h"
#include "wbm/skeleton.h"

namespace wbm {

/// Joint positions, one column per skeleton joint (meters).
using JointPositions = Eigen::Matrix3Xd;

struct FkState {
  JointPositions positions;
  std::vector<Mat3> world_rotations;  // accumulated rotation of each joint's frame
};

/// Forward kinematics of the rigid skeleton. The root sits at pose.r and each
/// child is placed at parent + R_parent_world * rest_direction * bone_length,
/// where R_parent_world composes the rotations from the root down to the parent.
JointPositions forward_kinematics(const SkeletonTopology& topology, const SkeletonShape& shape,
                                  const PoseState& pose);
FkState forward_kinematics_state(const SkeletonTopology& topology, const SkeletonShape& shape,
                                 const PoseState& pose);

/// Analytic derivative of every joint position w.r.t. the per-frame pose
/// parameters laid out as PoseState::pose_params().
struct FkJacobian {
  /// (3 * num_joints) x kPoseParamsPerFrame.
  Eigen::MatrixXd d_positions;
  /// For each joint, the parameter blocks (3 columns each) with non-zero
  /// derivative: rotation blocks of strict ancestors followed by the
  /// translation block (index kNumJoints).
  std::vector<std::vector<int>> blocks;
};

FkJacobian fk_jacobian(const SkeletonTopology& topology, const SkeletonShape& shape, const PoseState& pose,
                       const FkState& state);

/// Positions of all joints for every frame of a sequence.
std::vector<JointPositions> sequence_joint_positions(const SkeletonTopology& topology,
                                                     const MotionSequence& motion);

/// Throws StructuralError unless topology and shape describe the same joint set.
void check_dimensions(const SkeletonTopology& topology, const SkeletonShape& shape);

}  // namespace wbm
