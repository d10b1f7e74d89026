#include "wbm/skeleton.h"

#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "wbm/errors.h"

namespace wbm {

namespace {

void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError("topology: " + message);
}

}  // namespace

SkeletonTopology::SkeletonTopology(std::string name, std::vector<std::string> joint_names,
                                   std::vector<int> parents, std::vector<Vec3> rest_directions,
                                   std::vector<int> keypoint_to_joint,
                                   std::vector<double> capsule_radii)
    : name_(std::move(name)),
      joint_names_(std::move(joint_names)),
      parents_(std::move(parents)),
      rest_directions_(std::move(rest_directions)),
      keypoint_to_joint_(std::move(keypoint_to_joint)),
      capsule_radii_(std::move(capsule_radii)) {
  const std::size_t n = joint_names_.size();
  require(n == static_cast<std::size_t>(kNumJoints),
          "expected " + std::to_string(kNumJoints) + " joints, got " + std::to_string(n));
  require(parents_.size() == n, "parents size mismatch");
  require(rest_directions_.size() == n, "rest_directions size mismatch");
  require(capsule_radii_.size() == n, "capsule_radii size mismatch");
  require(keypoint_to_joint_.size() == static_cast<std::size_t>(kNumKeypoints),
          "keypoint map must cover " + std::to_string(kNumKeypoints) + " keypoints");
  require(parents_[0] == -1, "joint 0 must be the root");

  std::set<std::string> seen;
  for (std::size_t j = 0; j < n; ++j) {
    require(seen.insert(joint_names_[j]).second, "duplicate joint name '" + joint_names_[j] + "'");
    if (j == 0) continue;
    // Parents-first ordering rules out cycles and a second root.
    require(parents_[j] >= 0 && parents_[j] < static_cast<int>(j),
            "joint '" + joint_names_[j] + "' must have a parent listed before it");
    require(std::abs(rest_directions_[j].norm() - 1.0) <= 1e-9,
            "rest direction of '" + joint_names_[j] + "' is not unit length");
    require(std::isfinite(capsule_radii_[j]) && capsule_radii_[j] > 0.0,
            "capsule radius of '" + joint_names_[j] + "' must be positive");
  }

  joint_to_keypoint_.assign(n, -1);
  for (int k = 0; k < kNumKeypoints; ++k) {
    const int joint = keypoint_to_joint_[k];
    if (joint < 0) continue;
    require(joint < static_cast<int>(n), "keypoint " + std::to_string(k) + " maps to unknown joint");
    require(joint_to_keypoint_[joint] < 0,
            "keypoint map is not injective at joint '" + joint_names_[joint] + "'");
    joint_to_keypoint_[joint] = k;
  }

  children_.assign(n, {});
  for (std::size_t j = 1; j < n; ++j) children_[parents_[j]].push_back(static_cast<int>(j));
}

std::optional<int> SkeletonTopology::find_joint(std::string_view name) const {
  for (int j = 0; j < num_joints(); ++j) {
    if (joint_names_[j] == name) return j;
  }
  return std::nullopt;
}

int SkeletonTopology::joint_index(std::string_view name) const {
  if (auto j = find_joint(name)) return *j;
  throw ValidationError("unknown joint '" + std::string(name) + "'");
}

int SkeletonTopology::num_observed_joints() const {
  int count = 0;
  for (int k : joint_to_keypoint_) count += k >= 0 ? 1 : 0;
  return count;
}

bool SkeletonTopology::is_ancestor(int ancestor, int joint) const {
  for (int p = parents_.at(joint); p >= 0; p = parents_[p]) {
    if (p == ancestor) return true;
  }
  return false;
}

SkeletonShape::SkeletonShape(std::vector<double> bone_lengths) : bone_lengths_(std::move(bone_lengths)) {
  if (bone_lengths_.empty()) throw ValidationError("shape: no bone lengths");
  for (std::size_t j = 1; j < bone_lengths_.size(); ++j) {
    if (!std::isfinite(bone_lengths_[j]) || bone_lengths_[j] <= 0.0) {
      throw ValidationError("shape: bone length of joint " + std::to_string(j) + " must be positive");
    }
  }
}

namespace {

struct NamedBone {
  std::string name;
  std::string parent;
  Vec3 offset;
  double radius;
  int keypoint;
};

std::vector<NamedBone> builtin_bones() {
  std::vector<NamedBone> bones;
  const double arm_angle = 40.0 * std::numbers::pi / 180.0;
  const Vec3 left_arm(std::sin(arm_angle), 0.0, -std::cos(arm_angle));
  const Vec3 mirror(-1.0, 1.0, 1.0);
  auto add = [&](std::string name, std::string parent, Vec3 offset, double radius, int keypoint) {
    bones.push_back({std::move(name), std::move(parent), offset, radius, keypoint});
  };

  add("pelvis", "", Vec3::Zero(), 0.0, -1);
  add("left_hip", "pelvis", {0.09, 0.0, -0.08}, 0.03, 11);
  add("right_hip", "pelvis", {-0.09, 0.0, -0.08}, 0.03, 12);
  add("spine1", "pelvis", {0.0, 0.0, 0.11}, 0.04, -1);
  add("left_knee", "left_hip", {0.0, 0.0, -0.40}, 0.055, 13);
  add("right_knee", "right_hip", {0.0, 0.0, -0.40}, 0.055, 14);
  add("spine2", "spine1", {0.0, 0.0, 0.13}, 0.04, -1);
  add("left_ankle", "left_knee", {0.0, 0.0, -0.40}, 0.045, 15);
  add("right_ankle", "right_knee", {0.0, 0.0, -0.40}, 0.045, 16);
  add("spine3", "spine2", {0.0, 0.0, 0.06}, 0.04, -1);
  add("left_foot", "left_ankle", {0.0, 0.13, -0.06}, 0.03, 17);
  add("right_foot", "right_ankle", {0.0, 0.13, -0.06}, 0.03, 20);
  add("neck", "spine3", {0.0, 0.0, 0.21}, 0.03, -1);
  add("left_collar", "spine3", {0.07, 0.0, 0.12}, 0.03, -1);
  add("right_collar", "spine3", {-0.07, 0.0, 0.12}, 0.03, -1);
  add("head", "neck", {0.0, 0.02, 0.10}, 0.04, 0);
  add("left_shoulder", "left_collar", {0.11, 0.0, 0.02}, 0.03, 5);
  add("right_shoulder", "right_collar", {-0.11, 0.0, 0.02}, 0.03, 6);
  add("left_elbow", "left_shoulder", 0.27 * left_arm, 0.04, 7);
  add("right_elbow", "right_shoulder", 0.27 * left_arm.cwiseProduct(mirror), 0.04, 8);
  add("left_wrist", "left_elbow", 0.25 * left_arm, 0.035, 9);
  add("right_wrist", "right_elbow", 0.25 * left_arm.cwiseProduct(mirror), 0.035, 10);
  add("jaw", "head", {0.0, 0.05, -0.03}, 0.02, 31);  // chin landmark of the 68-point face

  struct Finger {
    const char* name;
    double spread;  // forward tilt of the finger ray relative to the forearm
    std::array<double, 3> lengths;
  };
  const std::array<Finger, 5> fingers{{
      {"thumb", 0.9, {0.035, 0.035, 0.030}},
      {"index", 0.25, {0.085, 0.040, 0.025}},
      {"middle", 0.08, {0.085, 0.045, 0.028}},
      {"ring", -0.08, {0.080, 0.042, 0.026}},
      {"pinky", -0.25, {0.075, 0.032, 0.020}},
  }};
  for (int side = 0; side < 2; ++side) {
    const std::string prefix = side == 0 ? "left_" : "right_";
    // Hand block: wrist, then four keypoints per finger (root .. tip).
    const int hand_base = side == 0 ? 91 : 112;
    for (int f = 0; f < 5; ++f) {
      Vec3 ray = (left_arm + fingers[f].spread * Vec3::UnitY()).normalized();
      if (side == 1) ray = ray.cwiseProduct(mirror);
      for (int seg = 0; seg < 3; ++seg) {
        const std::string parent =
            seg == 0 ? prefix + "wrist" : prefix + fingers[f].name + std::to_string(seg);
        add(prefix + fingers[f].name + std::to_string(seg + 1), parent, fingers[f].lengths[seg] * ray,
            seg == 0 ? 0.006 : 0.005, hand_base + 1 + 4 * f + seg);
      }
    }
  }
  return bones;
}

SkeletonTopology make_default_topology() {
  const auto bones = builtin_bones();
  std::vector<std::string> names;
  std::vector<int> parents;
  std::vector<Vec3> directions;
  std::vector<double> radii;
  std::vector<int> keypoint_to_joint(kNumKeypoints, -1);
  for (std::size_t j = 0; j < bones.size(); ++j) {
    names.push_back(bones[j].name);
    int parent = -1;
    for (std::size_t p = 0; p < j; ++p) {
      if (bones[p].name == bones[j].parent) parent = static_cast<int>(p);
    }
    parents.push_back(parent);
    directions.push_back(j == 0 ? Vec3::Zero() : Vec3(bones[j].offset.normalized()));
    radii.push_back(bones[j].radius);
    if (bones[j].keypoint >= 0) keypoint_to_joint[bones[j].keypoint] = static_cast<int>(j);
  }
  return SkeletonTopology("wholebody53", std::move(names), std::move(parents), std::move(directions),
                          std::move(keypoint_to_joint), std::move(radii));
}

SkeletonShape make_default_shape() {
  const auto bones = builtin_bones();
  std::vector<double> lengths;
  for (const auto& bone : bones) lengths.push_back(bone.offset.norm());
  return SkeletonShape(std::move(lengths));
}

}  // namespace

const SkeletonTopology& default_topology() {
  static const SkeletonTopology topology = make_default_topology();
  return topology;
}

const SkeletonShape& default_shape() {
  static const SkeletonShape shape = make_default_shape();
  return shape;
}

nlohmann::json topology_to_json(const SkeletonTopology& topology) {
  nlohmann::json joints = nlohmann::json::array();
  for (int j = 0; j < topology.num_joints(); ++j) {
    nlohmann::json entry;
    entry["name"] = topology.joint_name(j);
    entry["parent"] = j == 0 ? nlohmann::json(nullptr) : nlohmann::json(topology.joint_name(topology.parent(j)));
    const Vec3& d = topology.rest_direction(j);
    entry["rest_direction"] = {d.x(), d.y(), d.z()};
    entry["capsule_radius"] = topology.capsule_radius(j);
    entry["keypoint"] = topology.joint_keypoint(j) >= 0 ? nlohmann::json(topology.joint_keypoint(j))
                                                        : nlohmann::json(nullptr);
    joints.push_back(std::move(entry));
  }
  return {{"name", topology.name()}, {"num_keypoints", kNumKeypoints}, {"joints", std::move(joints)}};
}

SkeletonTopology topology_from_json(const nlohmann::json& j) {
  try {
    const auto& joints = j.at("joints");
    if (j.value("num_keypoints", kNumKeypoints) != kNumKeypoints) {
      throw ValidationError("topology: num_keypoints must be " + std::to_string(kNumKeypoints));
    }
    std::vector<std::string> names;
    for (const auto& entry : joints) names.push_back(entry.at("name").get<std::string>());
    std::vector<int> parents;
    std::vector<Vec3> directions;
    std::vector<double> radii;
    std::vector<int> keypoint_to_joint(kNumKeypoints, -1);
    for (std::size_t idx = 0; idx < joints.size(); ++idx) {
      const auto& entry = joints[idx];
      int parent = -1;
      if (!entry.at("parent").is_null()) {
        const auto parent_name = entry.at("parent").get<std::string>();
        for (std::size_t p = 0; p < names.size(); ++p) {
          if (names[p] == parent_name) parent = static_cast<int>(p);
        }
        if (parent < 0) throw ValidationError("topology: unknown parent '" + parent_name + "'");
      }
      parents.push_back(parent);
      const auto d = entry.at("rest_direction").get<std::vector<double>>();
      if (d.size() != 3) throw ValidationError("topology: rest_direction needs 3 components");
      directions.emplace_back(d[0], d[1], d[2]);
      radii.push_back(entry.at("capsule_radius").get<double>());
      if (!entry.at("keypoint").is_null()) {
        const int k = entry.at("keypoint").get<int>();
        if (k < 0 || k >= kNumKeypoints) throw ValidationError("topology: keypoint index out of range");
        if (keypoint_to_joint[k] >= 0) {
          throw ValidationError("topology: keypoint " + std::to_string(k) + " mapped twice");
        }
        keypoint_to_joint[k] = static_cast<int>(idx);
      }
    }
    return SkeletonTopology(j.at("name").get<std::string>(), std::move(names), std::move(parents),
                            std::move(directions), std::move(keypoint_to_joint), std::move(radii));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("topology: ") + e.what());
  }
}

SkeletonTopology load_topology(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open topology file '" + path + "'");
  try {
    return topology_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("topology: " + std::string(e.what()));
  }
}

nlohmann::json shape_to_json(const SkeletonTopology& topology, const SkeletonShape& shape) {
  nlohmann::json out = nlohmann::json::object();
  for (int j = 1; j < topology.num_joints(); ++j) out[topology.joint_name(j)] = shape.bone_length(j);
  return out;
}

SkeletonShape shape_from_json(const SkeletonTopology& topology, const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("shape: expected an object of bone lengths");
  std::vector<double> lengths(topology.num_joints(), 0.0);
  for (int joint = 1; joint < topology.num_joints(); ++joint) {
    const auto it = j.find(topology.joint_name(joint));
    if (it == j.end() || !it->is_number()) {
      throw ValidationError("shape: missing bone length for '" + topology.joint_name(joint) + "'");
    }
    lengths[joint] = it->get<double>();
  }
  if (j.size() != static_cast<std::size_t>(topology.num_joints() - 1)) {
    throw ValidationError("shape: unexpected entries in bone length object");
  }
  return SkeletonShape(std::move(lengths));
}

}  // namespace wbm
