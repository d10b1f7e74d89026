#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "wbm/rotation.h"

namespace wbm {

using Vec2 = Eigen::Vector2d;

/// Pinhole camera without lens distortion. `rotation` and `translation`
/// map world points into the camera frame: X_cam = rotation * X + translation.
struct CameraModel {
  std::string name;
  double fx = 1000.0;
  double fy = 1000.0;
  double cx = 0.0;
  double cy = 0.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  /// Throws ValidationError unless fx, fy > 0 and rotation is a proper rotation within 1e-9.
  void validate() const;

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 center() const { return -rotation.transpose() * translation; }

  /// Unit ray direction in world coordinates through pixel (u, v).
  Vec3 ray_direction(const Vec2& pixel) const;

  bool operator==(const CameraModel&) const = default;
};

/// Pinhole projection. Throws ProjectionError when the camera-space depth is <= 1e-6.
Vec2 project(const CameraModel& camera, const Vec3& point);

/// d(u, v) / d(camera-space point).
Eigen::Matrix<double, 2, 3> projection_jacobian(const CameraModel& camera, const Vec3& camera_point);

/// Camera with its orientation rotated by `delta` (axis-angle, camera frame)
/// while keeping its optical center fixed.
CameraModel rotate_about_center(const CameraModel& camera, const Vec3& delta);

nlohmann::json camera_to_json(const CameraModel& camera);
CameraModel camera_from_json(const nlohmann::json& j);

}  // namespace wbm
