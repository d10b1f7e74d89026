#pragma once

#include <vector>

#include "wbm/camera.h"

namespace wbm {

struct TrackObservation {
  int camera = 0;
  Vec2 pixel = Vec2::Zero();
  double weight = 1.0;
};

/// Observations of one static 3D point (e.g. one keypoint at one frame).
struct Track {
  std::vector<TrackObservation> observations;
};

struct BundleAdjustmentOptions {
  int max_iterations = 100;
  /// Also refine fx and fy of every camera except the first.
  bool refine_focal = false;
  /// Stop when an accepted step lowers the error by less than this fraction.
  double relative_tolerance = 1e-14;
  int min_tracks = 20;
};

struct BundleAdjustmentResult {
  std::vector<CameraModel> cameras;
  std::vector<Vec3> points;  // one per track; NaN for tracks that could not be initialized
  double initial_error = 0.0;
  double final_error = 0.0;
  /// Total error after initialization and after every accepted iteration.
  std::vector<double> error_history;
  int iterations = 0;
  bool converged = false;
};

/// Weighted squared reprojection error sum over all observations:
/// sum (w * |project(X) - uv|)^2.
double reprojection_error(const std::vector<CameraModel>& cameras, const std::vector<Track>& tracks,
                          const std::vector<Vec3>& points);

/// Levenberg-Marquardt bundle adjustment over camera extrinsics (and
/// optionally focal lengths) and track points, with the point blocks
/// eliminated by Schur complement. The first camera is held fixed and the
/// distance between the first two camera centers is restored to its initial
/// value after optimization, which fixes the gauge. Only steps that lower the
/// error are accepted; when the iteration budget runs out the best iterate
/// is returned with converged == false.
BundleAdjustmentResult refine_cameras(const std::vector<CameraModel>& initial, const std::vector<Track>& tracks,
                                      const BundleAdjustmentOptions& options = {});

}  // namespace wbm
