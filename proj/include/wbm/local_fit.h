#pragma once

#include <optional>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "wbm/camera.h"
#include "wbm/keypoints.h"
#include "wbm/least_squares.h"
#include "wbm/pose.h"
#include "wbm/skeleton.h"

namespace wbm {

struct LossWeights {
  double lambda_joint = 1.0;
  double lambda_smooth = 0.5;
  double lambda_pen = 0.1;
  double lambda_phy = 0.1;

  /// Throws ConfigError unless every weight is finite and >= 0.
  void validate() const;
};

/// What the local fit aligns to. `k3d` may be empty for 2D-only fitting and
/// `k2d` holds one list per camera (empty when no cameras are supplied).
struct FitTargets {
  std::vector<KeypointFrame3D> k3d;
  std::vector<std::vector<KeypointFrame2D>> k2d;
  std::vector<CameraModel> cameras;
  MotionSequence theta_init;

  /// Throws StructuralError on frame-count or view/camera mismatch and
  /// ValidationError on invalid keypoints or cameras.
  void validate(const SkeletonTopology& topology) const;
};

/// Capsule around the bone from `parent` to `joint`.
struct Capsule {
  int parent = 0;
  int joint = 0;
  double radius = 0.0;
};

struct CollisionProxy {
  std::vector<Capsule> capsules;
  /// Capsule index pairs that are never tested (bones sharing a joint).
  std::vector<std::pair<int, int>> excluded;

  /// One capsule per bone with the topology's radius. Bones that share a joint or are
  /// joined through one other bone are excluded.
  static CollisionProxy from_topology(const SkeletonTopology& topology);

  /// Throws ValidationError unless radii are > 0 and indices are in range.
  void validate(const SkeletonTopology& topology) const;
  /// Pairs (i < j) that take part in the penalty.
  std::vector<std::pair<int, int>> active_pairs() const;
};

struct SegmentClosest {
  double s = 0.0;  // parameter on segment a
  double t = 0.0;  // parameter on segment b
  double distance = 0.0;
};

/// Closest points between segments a0-a1 and b0-b1.
SegmentClosest segment_closest(const Vec3& a0, const Vec3& a1, const Vec3& b0, const Vec3& b1);

/// max(0, ra + rb - d)^2 for two capsules.
double capsule_pair_penalty(const Vec3& a0, const Vec3& a1, double ra, const Vec3& b0, const Vec3& b1, double rb);

struct JointLoss {
  double total = 0.0;
  double k3d = 0.0;
  double k2d = 0.0;
  double prior = 0.0;
};

struct SmoothLoss {
  double value = 0.0;
  bool single_frame = false;  // fewer than two frames: value is 0
};

struct PhysicsLoss {
  double total = 0.0;
  double penetration = 0.0;
  double skating = 0.0;
};

/// Height below which a foot joint counts as in contact for the skating term. The
/// fit decides contact from the 3D targets (or the initial poses) once per solve.
inline constexpr double kContactHeight = 0.05;

/// Joints checked against the ground: ankles and feet.
std::vector<int> foot_joints(const SkeletonTopology& topology);

JointLoss loss_joint(const MotionSequence& motion, const FitTargets& targets, const SkeletonTopology& topology);
SmoothLoss loss_smooth(const MotionSequence& motion, const SkeletonTopology& topology);
double loss_pen(const PoseState& pose, const CollisionProxy& proxy, const SkeletonTopology& topology,
                const SkeletonShape& shape);
PhysicsLoss loss_phy(const MotionSequence& motion, double ground_height, const SkeletonTopology& topology);

/// Terms that can be removed from the objective altogether.
struct TermMask {
  bool joint = true;
  bool smooth = true;
  bool pen = true;
  bool phy = true;
};

struct LocalFitOptions {
  SolverOptions solver;
  double ground_height = 0.0;
  std::optional<CollisionProxy> proxy;  // defaults to CollisionProxy::from_topology
  TermMask terms;
};

struct LocalFitResult {
  MotionSequence motion;
  SolveReport report;
  bool smooth_single_frame = false;

  nlohmann::json report_json() const;
};

/// Minimizes the weighted local objective over every frame's rotations and
/// translation, starting from targets.theta_init. Expression coefficients
/// are carried through.
LocalFitResult fit_local(const FitTargets& targets, const LossWeights& weights, const SkeletonTopology& topology,
                         const LocalFitOptions& options = {});

/// The objective behind fit_local, exposed for gradient checks. Parameters
/// are the frames' PoseState::pose_params() concatenated.
class LocalObjective final : public LeastAbsoluteObjective {
 public:
  enum Term { kJoint3d = 0, kJoint2d, kPrior, kSmooth, kPen, kPhy, kNumTerms };

  LocalObjective(const FitTargets& targets, const LossWeights& weights, const SkeletonTopology& topology,
                 const LocalFitOptions& options);

  int num_params() const override;
  std::vector<std::string> term_names() const override;
  std::vector<double> term_weights() const override;
  void evaluate(const Eigen::VectorXd& x, ResidualSet& out) const override;
  std::unique_ptr<NormalSystem> make_system() const override;

  Eigen::VectorXd initial_params() const;
  MotionSequence to_motion(const Eigen::VectorXd& x) const;

 private:
  const FitTargets& targets_;
  LossWeights weights_;
  const SkeletonTopology& topology_;
  LocalFitOptions options_;
  CollisionProxy proxy_;
  std::vector<std::pair<int, int>> pairs_;
  std::vector<int> feet_;
  std::vector<std::vector<char>> contact_;  // [frame][foot], fixed at construction
  bool active_[kNumTerms];
};

}  // namespace wbm
