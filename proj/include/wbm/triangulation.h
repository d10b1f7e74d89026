#pragma once

#include <optional>
#include <span>
#include <vector>

#include "wbm/camera.h"
#include "wbm/keypoints.h"
#include "wbm/savgol.h"
#include "wbm/skeleton.h"

namespace wbm {

struct ViewObservation {
  const CameraModel* camera = nullptr;
  Vec2 pixel = Vec2::Zero();
  double score = 1.0;
};

struct TriangulationOptions {
  /// Observations scoring at or below this are ignored.
  double score_floor = 0.3;
  int max_gauss_newton_steps = 10;
  /// Ratio of the largest to the third singular value of the DLT system above
  /// which the geometry is rejected as degenerate.
  double max_condition = 1e10;
};

struct TriangulatedPoint {
  Vec3 point = Vec3::Zero();
  /// Unweighted RMS of the per-view reprojection error norms, pixels.
  double residual_rms = 0.0;
  int views_used = 0;
  /// Scores of the observations that were used.
  std::vector<double> used_scores;
};

/// Confidence-weighted DLT followed by Gauss-Newton on the score-weighted
/// reprojection error. Residuals are multiplied by the observation score.
///
/// Throws UnderdeterminedError with fewer than two usable views and
/// DegenerateGeometryError when the rays do not determine a point.
TriangulatedPoint triangulate_point(std::span<const ViewObservation> observations,
                                    const TriangulationOptions& options = {});

struct SequenceTriangulationOptions {
  TriangulationOptions point;
  /// Temporal smoothing of the 3D tracks; skipped for sequences shorter than
  /// filter.min_sequence_length().
  bool smooth = true;
  FilterSpec filter;
  bool enforce_bone_lengths = true;
};

struct SequenceTriangulation {
  std::vector<KeypointFrame3D> frames;
  /// Mean of the per-point RMS residuals over all triangulated keypoints, pixels.
  double mean_residual = 0.0;
  double max_residual = 0.0;
  std::size_t triangulated = 0;
  /// Keypoints seen by some view that could not be triangulated; unobserved ones are not counted.
  std::size_t failed = 0;
};

/// Per-frame triangulation of every keypoint, then temporal smoothing, then
/// bone-length projection. `views[c][t]` is camera c's detection at frame t.
/// Keypoints that cannot be triangulated get score 0 and keep their last
/// valid position. Output scores are the harmonic mean of the contributing
/// 2D scores.
SequenceTriangulation triangulate_sequence(const std::vector<std::vector<KeypointFrame2D>>& views,
                                           const std::vector<CameraModel>& cameras,
                                           const SkeletonTopology& topology,
                                           const std::optional<SkeletonShape>& shape_prior,
                                           const SequenceTriangulationOptions& options = {});

/// A skeleton bone whose two joints are both observed by keypoints.
struct KeypointBone {
  int parent_keypoint;
  int child_keypoint;
  int child_joint;
};

/// Observed bones in root-outward order.
std::vector<KeypointBone> observed_bones(const SkeletonTopology& topology);

/// Median length of each observed bone over frames where both ends score > 0
/// (0 when never observed). Indexed like observed_bones().
std::vector<double> median_bone_lengths(const std::vector<KeypointFrame3D>& frames,
                                        const SkeletonTopology& topology);

/// Moves each child keypoint along its bone so the bone has the target
/// length, visiting bones root-outward once per frame. Targets come from
/// `shape_prior` when given, otherwise from median_bone_lengths().
std::vector<KeypointFrame3D> enforce_bone_lengths(const std::vector<KeypointFrame3D>& frames,
                                                  const SkeletonTopology& topology,
                                                  const std::optional<SkeletonShape>& shape_prior);

}  // namespace wbm
