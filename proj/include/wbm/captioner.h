#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wbm/keypoints.h"
#include "wbm/kinematics.h"
#include "wbm/pose.h"
#include "wbm/skeleton.h"

namespace wbm {

enum class PosecodeKind { kCurvature, kVertical, kDepth, kDistance, kSpread, kTorso };

const char* to_string(PosecodeKind kind);

/// One categorical fact about the pose. `margin` is the distance to the
/// nearest category boundary, in degrees for angle rules and in ratio units
/// otherwise.
struct Posecode {
  std::string subject;    // e.g. "left_knee", "left_index_middle", "hands"
  PosecodeKind kind = PosecodeKind::kCurvature;
  std::string category;   // e.g. "completely_bent", "above", "wide"
  std::string reference;  // e.g. "left_shoulder" for relative-position codes, else empty
  double margin = 0.0;

  bool operator==(const Posecode&) const = default;
};

nlohmann::json posecode_to_json(const Posecode& code);

/// Angle in degrees between (tip - wrist) and (root - tip). 180 for a straight finger.
double finger_angle(const Vec3& wrist, const Vec3& fingertip, const Vec3& finger_root);

/// straight [160, 180], slightly_bent [120, 160), bent [80, 120), completely_bent [0, 80).
/// Throws ValidationError outside [0, 180].
std::string classify_finger_curvature(double angle_degrees);
double curvature_margin(double angle_degrees);

/// 21 hand keypoints in whole-body order: wrist, then thumb, index, middle,
/// ring, pinky with four points each from root to tip.
using HandPoints = std::array<Vec3, 21>;

inline constexpr double kSpreadApart = 0.9;
inline constexpr double kCloseTogether = 0.4;

/// Adjacent fingertip distance over palm width (index root to pinky root) for
/// the pairs thumb-index, index-middle, middle-ring, ring-pinky. Throws
/// DegenerateGeometryError for a zero palm width.
std::array<double, 4> finger_spread_ratios(const HandPoints& hand);
/// "spread_apart", "close_together" or "neutral" per adjacent pair.
std::array<std::string, 4> classify_finger_spread(const HandPoints& hand);

/// Geometry handed to the rules. Joints in skeleton order; rules needing an
/// invalid joint or hand are skipped.
struct CaptionInput {
  JointPositions joints;
  std::vector<bool> joint_valid;
  std::array<HandPoints, 2> hands{};  // left, right
  std::array<bool, 2> hand_valid{};
};

/// From skeleton joints. The skeleton ends at the distal finger joint, which
/// stands in for the fingertip.
CaptionInput caption_input_from_joints(const JointPositions& joints, const SkeletonTopology& topology);
/// From whole-body keypoints; points with zero score are invalid.
CaptionInput caption_input_from_keypoints(const KeypointFrame3D& frame, const SkeletonTopology& topology);

std::vector<Posecode> body_posecodes(const CaptionInput& input, const SkeletonTopology& topology);
std::vector<Posecode> hand_posecodes(const CaptionInput& input);

struct AggregationOptions {
  double angle_margin = 2.0;    // degrees
  double ratio_margin = 0.02;
};

struct PoseDescription {
  int frame = 0;
  std::string emotion;
  std::vector<Posecode> body_codes;
  std::vector<Posecode> hand_codes;
  std::string text;

  nlohmann::json to_json() const;
};

/// Wording table: the built-in one unless replaced with load_templates().
class TemplateTable {
 public:
  TemplateTable();
  explicit TemplateTable(const nlohmann::json& table);
  static TemplateTable from_file(const std::string& path);

  const nlohmann::json& table() const { return table_; }

 private:
  nlohmann::json table_;
};

/// Dedupes, drops near-boundary codes, merges left/right pairs and renders
/// face, body and hand sentences. Deterministic in (codes, emotion, seed).
PoseDescription aggregate_and_render(const std::vector<Posecode>& body_codes, const std::vector<Posecode>& hand_codes,
                                     const std::string& emotion, std::uint64_t template_seed,
                                     const TemplateTable& templates = TemplateTable(),
                                     const AggregationOptions& options = {});

struct CaptionOptions {
  int stride = 1;
  std::uint64_t template_seed = 0;
  AggregationOptions aggregation;
};

/// Captions frames 0, stride, 2 * stride, ... `emotions` is empty or has one
/// label per frame.
std::vector<PoseDescription> caption_sequence(const MotionSequence& motion, const std::vector<std::string>& emotions,
                                              const SkeletonTopology& topology, const CaptionOptions& options = {},
                                              const TemplateTable& templates = TemplateTable());
std::vector<PoseDescription> caption_sequence(const std::vector<KeypointFrame3D>& frames,
                                              const std::vector<std::string>& emotions,
                                              const SkeletonTopology& topology, const CaptionOptions& options = {},
                                              const TemplateTable& templates = TemplateTable());

}  // namespace wbm
