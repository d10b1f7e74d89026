#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "wbm/camera.h"
#include "wbm/fixture.h"
#include "wbm/keypoints.h"
#include "wbm/kinematics.h"
#include "wbm/least_squares.h"
#include "wbm/pose.h"
#include "wbm/skeleton.h"

namespace wbm::test {

inline Vec3 random_vec(std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> n(0.0, sigma);
  return {n(rng), n(rng), n(rng)};
}

inline PoseState random_pose(std::mt19937_64& rng, double sigma = 0.3) {
  PoseState p;
  for (int j = 0; j < kNumJoints; ++j) p.joint_rotation(j) = random_vec(rng, sigma);
  p.r = random_vec(rng, 0.5) + Vec3(0.0, 0.0, 1.0);
  return p;
}

inline KeypointFrame3D exact_keypoints3d(const PoseState& pose, int frame = 0) {
  return keypoints_from_pose(default_topology(), default_shape(), pose, frame);
}

/// Two cameras in front of a subject standing near the origin.
inline std::vector<CameraModel> two_cameras() {
  const Vec3 target(0.0, 0.0, 0.9);
  return {look_at_camera("cam0", Vec3(-1.4, 3.4, 1.3), target), look_at_camera("cam1", Vec3(1.3, 3.6, 1.0), target)};
}

/// Central differences of a scalar function.
inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                        double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd y = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    y(i) = x(i) + h;
    const double up = f(y);
    y(i) = x(i) - h;
    const double down = f(y);
    y(i) = x(i);
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

/// |analytic - numeric| / max(|numeric|, tiny), measured on the whole vector.
inline double gradient_relative_error(const LeastAbsoluteObjective& objective, const Eigen::VectorXd& x,
                                      double h = 1e-5) {
  const Eigen::VectorXd analytic = evaluate_gradient(objective, x);
  const Eigen::VectorXd numeric =
      numeric_gradient([&](const Eigen::VectorXd& p) { return evaluate_loss(objective, p).total; }, x, h);
  return (analytic - numeric).norm() / std::max(numeric.norm(), 1e-12);
}

/// True when a central difference of step h could cross the kink of an absolute row.
inline bool straddles_kink(const LeastAbsoluteObjective& objective, const Eigen::VectorXd& x, double h) {
  ResidualSet rows(static_cast<int>(objective.term_names().size()), true);
  objective.evaluate(x, rows);
  for (std::size_t i = 0; i < rows.num_rows(); ++i) {
    if (rows.kind(i) != ResidualKind::kAbsolute) continue;
    double slope = 0.0;
    for (std::size_t k = rows.row_begin(i); k < rows.row_end(i); ++k) slope = std::max(slope, std::abs(rows.derivatives()[k]));
    if (std::abs(rows.value(i)) <= 10.0 * h * slope) return true;
  }
  return false;
}

inline double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace wbm::test
