#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "wbm/camera.h"
#include "wbm/keypoints.h"
#include "wbm/least_squares.h"
#include "wbm/pose.h"
#include "wbm/skeleton.h"

namespace wbm {

struct GlobalLossWeights {
  double lambda_2d = 1.0;
  double lambda_traj = 0.1;
  double lambda_cam = 100.0;
  double lambda_reg = 1.0;

  void validate() const;
};

/// Per-frame root position, heading and confidence from an external
/// trajectory estimator.
struct TrajectoryPrior {
  std::vector<Vec3> positions;
  std::vector<double> yaw;
  std::vector<double> confidence;

  std::size_t size() const { return positions.size(); }
  /// Throws StructuralError unless all members have `frames` entries and
  /// ValidationError on non-finite values or confidences outside [0, 1].
  void validate(std::size_t frames) const;
};

/// Heading of a root rotation: angle of the rotated +y axis about +z, 0 when facing +y.
double root_yaw(const Vec3& root_rotation);

enum class CameraMode {
  kPerFrame,  // one extrinsic per frame, tied by the camera smoothness term
  kStatic,    // a single extrinsic shared by every frame
  kFrozen,    // extrinsics held at their initial values
};

struct GlobalFitOptions {
  SolverOptions solver;
  CameraMode camera_mode = CameraMode::kPerFrame;
};

struct GlobalLoss {
  double total = 0.0;
  double reprojection = 0.0;
  double trajectory = 0.0;
  double camera = 0.0;
  double reg_first = 0.0;
  double reg_second = 0.0;
  double reg() const { return reg_first + reg_second; }
};

/// Unweighted terms and weighted total for a motion seen through per-frame cameras.
GlobalLoss global_loss(const MotionSequence& motion, const std::vector<KeypointFrame2D>& k2d,
                       const std::vector<CameraModel>& cameras, const TrajectoryPrior& prior,
                       const GlobalLossWeights& weights, const SkeletonTopology& topology);

struct GlobalFitResult {
  MotionSequence motion;
  std::vector<CameraModel> cameras;
  SolveReport report;
  /// Neither trajectory prior nor regularizer constrains a static camera; frame 0's root was held.
  bool gauge_warning = false;
  /// Frames whose root started behind the camera and was moved to the prior.
  std::vector<int> reseeded_frames;

  nlohmann::json report_json() const;
};

/// Refines root translation, root rotation and camera extrinsics against
/// monocular 2D keypoints. All other joint rotations are held fixed.
GlobalFitResult fit_global(const MotionSequence& motion, const std::vector<KeypointFrame2D>& k2d,
                           const std::vector<CameraModel>& camera_init, const TrajectoryPrior& prior,
                           const GlobalLossWeights& weights, const SkeletonTopology& topology,
                           const GlobalFitOptions& options = {});

/// The objective behind fit_global and its starting point, exposed for
/// gradient checks. The objective keeps references to every argument.
struct GlobalProblem {
  std::unique_ptr<LeastAbsoluteObjective> objective;
  Eigen::VectorXd x0;
};
GlobalProblem make_global_problem(const MotionSequence& motion, const std::vector<KeypointFrame2D>& k2d,
                                  const std::vector<CameraModel>& camera_init, const TrajectoryPrior& prior,
                                  const GlobalLossWeights& weights, const SkeletonTopology& topology, CameraMode mode);

}  // namespace wbm
