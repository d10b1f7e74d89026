#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "wbm/kinematics.h"
#include "wbm/skeleton.h"

namespace wbm {

struct AlignmentResult {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double residual_rmse = 0.0;

  Eigen::Matrix3Xd apply(const Eigen::Matrix3Xd& points) const;
};

/// Least-squares similarity transform taking `source` onto `target` (columns
/// are corresponding points). Throws StructuralError on a shape mismatch or
/// fewer than 3 points and DegenerateGeometryError when source is collinear.
AlignmentResult procrustes_align(const Eigen::Matrix3Xd& source, const Eigen::Matrix3Xd& target);

/// Mean joint distance in millimeters over all joints and frames; with
/// `aligned`, each predicted frame is first Procrustes-aligned to the truth.
double mpjpe(const std::vector<JointPositions>& pred, const std::vector<JointPositions>& gt, bool aligned);

struct TemporalStd {
  double value = 0.0;
  bool single_frame = false;
};

/// Population standard deviation over time per channel, averaged over channels.
TemporalStd temporal_std(const std::vector<Eigen::VectorXd>& channels);

enum class BodyPart { kBody, kLeftHand, kRightHand, kFace };

const char* to_string(BodyPart part);

/// temporal_std of a part's joint coordinates, taken relative to the pelvis
/// (body), the wrist (hands) or the neck (face).
TemporalStd temporal_std(const std::vector<JointPositions>& joints, BodyPart part, const SkeletonTopology& topology);

/// sqrt(mean |third difference|^2) * fps^3 over joints and frames, in m/s^3.
/// Throws ValidationError for fewer than 4 frames or a non-positive fps.
double jerk_rms(const std::vector<JointPositions>& joints, double fps);

/// Metrics of one predicted sequence; accuracy entries need a ground truth.
nlohmann::json evaluate_sequence(const std::vector<JointPositions>& pred,
                                 const std::optional<std::vector<JointPositions>>& gt,
                                 const std::vector<Eigen::VectorXd>& params, double fps,
                                 const SkeletonTopology& topology);

}  // namespace wbm
