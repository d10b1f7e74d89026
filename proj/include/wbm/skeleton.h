#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "wbm/rotation.h"

namespace wbm {

/// Number of keypoints in the whole-body detector layout (body, feet, face, hands).
inline constexpr int kNumKeypoints = 133;

/// Rotational joints carried by a pose: 22 body, 1 jaw, 15 per hand.
inline constexpr int kNumBodyJoints = 22;
inline constexpr int kNumHandJoints = 30;
inline constexpr int kJawJoint = 22;
inline constexpr int kNumJoints = kNumBodyJoints + 1 + kNumHandJoints;

/// Kinematic tree of the whole-body skeleton.
///
/// Joints are stored parents-first (parent index < child index), with the
/// root at index 0. Each non-root joint owns the bone from its parent; the
/// bone's rest direction, capsule radius and length (see SkeletonShape) are
/// indexed by the child joint.
class SkeletonTopology {
 public:
  SkeletonTopology(std::string name, std::vector<std::string> joint_names, std::vector<int> parents,
                   std::vector<Vec3> rest_directions, std::vector<int> keypoint_to_joint,
                   std::vector<double> capsule_radii);

  const std::string& name() const { return name_; }
  int num_joints() const { return static_cast<int>(joint_names_.size()); }
  const std::vector<std::string>& joint_names() const { return joint_names_; }
  const std::string& joint_name(int joint) const { return joint_names_.at(joint); }
  int parent(int joint) const { return parents_.at(joint); }
  const std::vector<int>& parents() const { return parents_; }
  const Vec3& rest_direction(int joint) const { return rest_directions_.at(joint); }
  double capsule_radius(int joint) const { return capsule_radii_.at(joint); }
  const std::vector<int>& children(int joint) const { return children_.at(joint); }

  /// Joint index for a name, or nullopt.
  std::optional<int> find_joint(std::string_view name) const;
  /// Joint index for a name; throws ValidationError when absent.
  int joint_index(std::string_view name) const;

  /// Skeleton joint observed by a detector keypoint, or -1.
  int keypoint_joint(int keypoint) const { return keypoint_to_joint_.at(keypoint); }
  /// Detector keypoint observing a joint, or -1 when the joint is unobserved.
  int joint_keypoint(int joint) const { return joint_to_keypoint_.at(joint); }
  bool is_observed(int joint) const { return joint_to_keypoint_.at(joint) >= 0; }
  int num_observed_joints() const;

  /// True when `ancestor` lies strictly above `joint` in the tree.
  bool is_ancestor(int ancestor, int joint) const;

  bool operator==(const SkeletonTopology&) const = default;

 private:
  std::string name_;
  std::vector<std::string> joint_names_;
  std::vector<int> parents_;
  std::vector<Vec3> rest_directions_;
  std::vector<int> keypoint_to_joint_;
  std::vector<double> capsule_radii_;
  std::vector<int> joint_to_keypoint_;
  std::vector<std::vector<int>> children_;
};

/// Per-bone lengths in meters, indexed by child joint. The root entry is 0.
class SkeletonShape {
 public:
  explicit SkeletonShape(std::vector<double> bone_lengths);

  const std::vector<double>& bone_lengths() const { return bone_lengths_; }
  double bone_length(int joint) const { return bone_lengths_.at(joint); }
  int num_joints() const { return static_cast<int>(bone_lengths_.size()); }

  bool operator==(const SkeletonShape&) const = default;

 private:
  std::vector<double> bone_lengths_;
};

/// The shipped 53-joint whole-body topology ("wholebody53").
const SkeletonTopology& default_topology();
/// Bone lengths of an average adult for default_topology().
const SkeletonShape& default_shape();

nlohmann::json topology_to_json(const SkeletonTopology& topology);
SkeletonTopology topology_from_json(const nlohmann::json& j);
SkeletonTopology load_topology(const std::string& path);

/// Shape as a {joint name: length} object.
nlohmann::json shape_to_json(const SkeletonTopology& topology, const SkeletonShape& shape);
SkeletonShape shape_from_json(const SkeletonTopology& topology, const nlohmann::json& j);

}  // namespace wbm
