#include "wbm/camera.h"

#include <Eigen/LU>

#include <cmath>

#include "wbm/errors.h"

namespace wbm {

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy)) {
    throw ValidationError("camera '" + name + "': focal lengths must be positive");
  }
  if (!std::isfinite(cx) || !std::isfinite(cy) || !rotation.allFinite() || !translation.allFinite()) {
    throw ValidationError("camera '" + name + "': non-finite parameters");
  }
  const double orth = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (orth > 1e-9 || std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw ValidationError("camera '" + name + "': rotation is not orthonormal with determinant +1");
  }
}

Vec3 CameraModel::ray_direction(const Vec2& pixel) const {
  const Vec3 d((pixel.x() - cx) / fx, (pixel.y() - cy) / fy, 1.0);
  return (rotation.transpose() * d).normalized();
}

Vec2 project(const CameraModel& camera, const Vec3& point) {
  const Vec3 pc = camera.to_camera(point);
  if (!(pc.z() > 1e-6)) {
    throw ProjectionError("point is behind camera '" + camera.name + "' (depth " + std::to_string(pc.z()) + ")");
  }
  return {camera.fx * pc.x() / pc.z() + camera.cx, camera.fy * pc.y() / pc.z() + camera.cy};
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const CameraModel& camera, const Vec3& pc) {
  const double iz = 1.0 / pc.z();
  Eigen::Matrix<double, 2, 3> j;
  j << camera.fx * iz, 0.0, -camera.fx * pc.x() * iz * iz, 0.0, camera.fy * iz, -camera.fy * pc.y() * iz * iz;
  return j;
}

CameraModel rotate_about_center(const CameraModel& camera, const Vec3& delta) {
  CameraModel out = camera;
  const Vec3 c = camera.center();
  out.rotation = exp_so3(delta) * camera.rotation;
  out.translation = -out.rotation * c;
  return out;
}

nlohmann::json camera_to_json(const CameraModel& camera) {
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rot.push_back(camera.rotation(r, c));
  }
  return {{"name", camera.name},
          {"fx", camera.fx},
          {"fy", camera.fy},
          {"cx", camera.cx},
          {"cy", camera.cy},
          {"rotation", rot},
          {"translation", {camera.translation.x(), camera.translation.y(), camera.translation.z()}}};
}

CameraModel camera_from_json(const nlohmann::json& j) {
  CameraModel cam;
  try {
    cam.name = j.value("name", std::string());
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    const auto rot = j.at("rotation").get<std::vector<double>>();
    const auto t = j.at("translation").get<std::vector<double>>();
    if (rot.size() != 9 || t.size() != 3) {
      throw ValidationError("camera '" + cam.name + "': rotation needs 9 and translation 3 values");
    }
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) cam.rotation(r, c) = rot[3 * r + c];
    }
    cam.translation = Vec3(t[0], t[1], t[2]);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("camera: " + std::string(e.what()));
  }
  cam.validate();
  return cam;
}

}  // namespace wbm
