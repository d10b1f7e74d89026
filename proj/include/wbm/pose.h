#pragma once

#include <array>
#include <vector>

#include "wbm/rotation.h"
#include "wbm/skeleton.h"

namespace wbm {

inline constexpr int kNumExpressionCoeffs = 50;

/// Number of optimizable pose parameters per frame: one axis-angle per joint plus translation.
inline constexpr int kPoseParamsPerFrame = 3 * kNumJoints + 3;

/// Whole-body pose of one frame: body, hand and jaw rotations in axis-angle
/// radians, facial expression coefficients and global translation in meters.
///
/// The expression coefficients have no geometric realization here and are
/// carried through unchanged.
struct PoseState {
  std::array<Vec3, kNumBodyJoints> theta_body{};
  std::array<Vec3, kNumHandJoints> theta_hands{};
  Vec3 theta_jaw = Vec3::Zero();
  std::array<double, kNumExpressionCoeffs> psi{};
  Vec3 r = Vec3::Zero();

  PoseState();

  /// Rotation owned by skeleton joint `joint` (body joints, then jaw, then hands).
  const Vec3& joint_rotation(int joint) const;
  Vec3& joint_rotation(int joint);

  /// Rotations and translation flattened joint-major: [rot(0) .. rot(52), r].
  Eigen::VectorXd pose_params() const;
  void set_pose_params(const Eigen::VectorXd& params);

  bool is_finite() const;

  bool operator==(const PoseState&) const = default;
};

/// Wraps every axis-angle into magnitude [0, pi]. Throws ValidationError on
/// non-finite input.
PoseState canonicalize_pose(const PoseState& pose);

/// A fixed-rate sequence of poses sharing one skeleton shape.
class MotionSequence {
 public:
  MotionSequence(double fps, std::vector<PoseState> frames, SkeletonShape shape);

  double fps() const { return fps_; }
  const std::vector<PoseState>& frames() const { return frames_; }
  std::vector<PoseState>& frames() { return frames_; }
  const PoseState& frame(std::size_t i) const { return frames_.at(i); }
  std::size_t size() const { return frames_.size(); }
  const SkeletonShape& shape() const { return shape_; }

 private:
  double fps_;
  std::vector<PoseState> frames_;
  SkeletonShape shape_;
};

}  // namespace wbm
