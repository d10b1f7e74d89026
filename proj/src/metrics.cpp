#include "wbm/metrics.h"

#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>

#include "wbm/errors.h"

namespace wbm {

Eigen::Matrix3Xd AlignmentResult::apply(const Eigen::Matrix3Xd& points) const {
  return (scale * rotation * points).colwise() + translation;
}

AlignmentResult procrustes_align(const Eigen::Matrix3Xd& source, const Eigen::Matrix3Xd& target) {
  if (source.cols() != target.cols()) throw StructuralError("procrustes: point counts differ");
  const Eigen::Index n = source.cols();
  if (n < 3) throw StructuralError("procrustes needs at least 3 points");
  const Vec3 mu_x = source.rowwise().mean();
  const Vec3 mu_y = target.rowwise().mean();
  const Eigen::Matrix3Xd x = source.colwise() - mu_x;
  const Eigen::Matrix3Xd y = target.colwise() - mu_y;
  const double var_x = x.squaredNorm() / static_cast<double>(n);

  const Eigen::JacobiSVD<Eigen::Matrix3Xd> shape(x, Eigen::ComputeThinU);
  const auto& sv = shape.singularValues();
  if (!(sv(0) > 1e-12) || sv(1) < 1e-9 * sv(0)) {
    throw DegenerateGeometryError("procrustes: source points are collinear or coincident");
  }

  const Mat3 cov = y * x.transpose() / static_cast<double>(n);
  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2) = -1.0;
  AlignmentResult out;
  out.rotation = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  out.scale = svd.singularValues().dot(s) / var_x;
  out.translation = mu_y - out.scale * out.rotation * mu_x;
  out.residual_rmse = std::sqrt((out.apply(source) - target).colwise().squaredNorm().mean());
  return out;
}

double mpjpe(const std::vector<JointPositions>& pred, const std::vector<JointPositions>& gt, bool aligned) {
  if (pred.size() != gt.size()) throw StructuralError("mpjpe: frame counts differ");
  if (pred.empty()) throw StructuralError("mpjpe: empty sequence");
  double sum = 0.0;
  Eigen::Index count = 0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    if (pred[t].cols() != gt[t].cols()) throw StructuralError("mpjpe: joint counts differ at frame " + std::to_string(t));
    const Eigen::Matrix3Xd p = aligned ? procrustes_align(pred[t], gt[t]).apply(pred[t]) : Eigen::Matrix3Xd(pred[t]);
    sum += (p - gt[t]).colwise().norm().sum();
    count += p.cols();
  }
  return 1000.0 * sum / static_cast<double>(count);
}

TemporalStd temporal_std(const std::vector<Eigen::VectorXd>& channels) {
  if (channels.size() < 2) return {0.0, true};
  const Eigen::Index c = channels.front().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(c);
  for (const auto& v : channels) {
    if (v.size() != c) throw StructuralError("temporal_std: channel counts differ");
    mean += v;
  }
  mean /= static_cast<double>(channels.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(c);
  for (const auto& v : channels) var += (v - mean).cwiseAbs2();
  var /= static_cast<double>(channels.size());
  return {c > 0 ? var.cwiseSqrt().mean() : 0.0, false};
}

const char* to_string(BodyPart part) {
  switch (part) {
    case BodyPart::kBody: return "body";
    case BodyPart::kLeftHand: return "left_hand";
    case BodyPart::kRightHand: return "right_hand";
    case BodyPart::kFace: return "face";
  }
  return "unknown";
}

TemporalStd temporal_std(const std::vector<JointPositions>& joints, BodyPart part, const SkeletonTopology& topology) {
  std::vector<int> members;
  int anchor = 0;
  switch (part) {
    case BodyPart::kBody:
      for (int j = 0; j < kNumBodyJoints; ++j) members.push_back(j);
      anchor = 0;
      break;
    case BodyPart::kLeftHand:
    case BodyPart::kRightHand: {
      const int first = part == BodyPart::kLeftHand ? kJawJoint + 1 : kJawJoint + 1 + kNumHandJoints / 2;
      for (int j = first; j < first + kNumHandJoints / 2; ++j) members.push_back(j);
      anchor = topology.joint_index(part == BodyPart::kLeftHand ? "left_wrist" : "right_wrist");
      break;
    }
    case BodyPart::kFace:
      members.push_back(kJawJoint);
      anchor = topology.joint_index("neck");
      break;
  }
  std::vector<Eigen::VectorXd> channels;
  for (const auto& frame : joints) {
    if (frame.cols() != topology.num_joints()) throw StructuralError("temporal_std: joint count does not match topology");
    Eigen::VectorXd v(3 * members.size());
    for (std::size_t i = 0; i < members.size(); ++i) v.segment<3>(3 * i) = frame.col(members[i]) - frame.col(anchor);
    channels.push_back(std::move(v));
  }
  return temporal_std(channels);
}

double jerk_rms(const std::vector<JointPositions>& joints, double fps) {
  if (joints.size() < 4) throw ValidationError("jerk needs at least 4 frames");
  if (!(fps > 0.0)) throw ValidationError("fps must be positive");
  double sum = 0.0;
  Eigen::Index count = 0;
  for (std::size_t t = 3; t < joints.size(); ++t) {
    const Eigen::Matrix3Xd d3 = joints[t] - 3.0 * joints[t - 1] + 3.0 * joints[t - 2] - joints[t - 3];
    sum += d3.colwise().squaredNorm().sum();
    count += d3.cols();
  }
  return std::sqrt(sum / static_cast<double>(count)) * fps * fps * fps;
}

nlohmann::json evaluate_sequence(const std::vector<JointPositions>& pred,
                                 const std::optional<std::vector<JointPositions>>& gt,
                                 const std::vector<Eigen::VectorXd>& params, double fps,
                                 const SkeletonTopology& topology) {
  nlohmann::json j;
  j["frames"] = pred.size();
  if (gt) {
    j["mpjpe_mm"] = mpjpe(pred, *gt, false);
    j["pa_mpjpe_mm"] = mpjpe(pred, *gt, true);
  }
  j["jerk_rms"] = pred.size() >= 4 ? nlohmann::json(jerk_rms(pred, fps)) : nlohmann::json(nullptr);
  nlohmann::json stds = nlohmann::json::object();
  bool single = false;
  for (BodyPart part : {BodyPart::kBody, BodyPart::kLeftHand, BodyPart::kRightHand, BodyPart::kFace}) {
    const TemporalStd s = temporal_std(pred, part, topology);
    stds[to_string(part)] = s.value;
    single = single || s.single_frame;
  }
  if (!params.empty()) stds["params"] = temporal_std(params).value;
  j["temporal_std"] = stds;
  j["warnings"] = nlohmann::json::array();
  if (single) j["warnings"].push_back("single frame: temporal standard deviation is zero");
  return j;
}

}  // namespace wbm
