#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace wbm {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Skew-symmetric matrix such that hat(a) * b == a.cross(b).
Mat3 hat(const Vec3& v);

/// Rodrigues' formula; exact for all finite inputs, series-expanded near zero.
Mat3 exp_so3(const Vec3& axis_angle);

/// Inverse of exp_so3 with angle in [0, pi].
Vec3 log_so3(const Mat3& rotation);

/// Right Jacobian of SO(3): exp(w + d) ~= exp(w) * exp(right_jacobian(w) * d).
Mat3 right_jacobian_so3(const Vec3& axis_angle);

/// Wraps an axis-angle vector so its magnitude lies in [0, pi] while
/// representing the same rotation. Vectors already within pi are returned
/// untouched, which makes the operation idempotent.
Vec3 wrap_axis_angle(const Vec3& axis_angle);

/// Geodesic angle between two rotations in radians.
double rotation_angle_between(const Mat3& a, const Mat3& b);

}  // namespace wbm
