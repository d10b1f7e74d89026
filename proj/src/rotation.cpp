#include "wbm/rotation.h"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace wbm {

Mat3 hat(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Mat3 exp_so3(const Vec3& axis_angle) {
  const double theta2 = axis_angle.squaredNorm();
  const Mat3 k = hat(axis_angle);
  double a = 0.0;
  double b = 0.0;
  if (theta2 < 1e-10) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * k + b * k * k;
}

Vec3 log_so3(const Mat3& rotation) {
  const Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

Mat3 right_jacobian_so3(const Vec3& axis_angle) {
  const double theta2 = axis_angle.squaredNorm();
  const Mat3 k = hat(axis_angle);
  double a = 0.0;
  double b = 0.0;
  if (theta2 < 1e-8) {
    a = 0.5 - theta2 / 24.0;
    b = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = (1.0 - std::cos(theta)) / theta2;
    b = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() - a * k + b * k * k;
}

Vec3 wrap_axis_angle(const Vec3& axis_angle) {
  constexpr double kPi = std::numbers::pi;
  const double angle = axis_angle.norm();
  if (angle <= kPi + 1e-9) return axis_angle;
  const Vec3 axis = axis_angle / angle;
  double wrapped = std::remainder(angle, 2.0 * kPi);  // in [-pi, pi]
  if (std::abs(wrapped) < 1e-15) return Vec3::Zero();
  return axis * wrapped;
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const Mat3 rel = a.transpose() * b;
  const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  // acos loses precision near zero; recover the small angle from the skew part.
  const Vec3 s(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  return std::atan2(0.5 * s.norm(), c);
}

}  // namespace wbm
