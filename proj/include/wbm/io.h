#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wbm/camera.h"
#include "wbm/captioner.h"
#include "wbm/global_fit.h"
#include "wbm/keypoints.h"
#include "wbm/pose.h"
#include "wbm/skeleton.h"

namespace wbm {

/// Strict parsing rejects unknown fields; lenient parsing keeps them (for
/// keypoint frames) or ignores them (other records).
enum class ParseMode { kStrict, kLenient };

/// Frames of one camera view in file order.
struct ViewKeypoints {
  std::string view;
  std::vector<KeypointFrame2D> frames;
};

nlohmann::json keypoint_frame_to_json(const KeypointFrame2D& frame);
nlohmann::json keypoint_frame_to_json(const KeypointFrame3D& frame);
/// `line` is used for error locations only.
KeypointFrame2D keypoint_frame2d_from_json(const nlohmann::json& j, ParseMode mode, std::size_t line = 0);
KeypointFrame3D keypoint_frame3d_from_json(const nlohmann::json& j, ParseMode mode, std::size_t line = 0);

/// Parses 2D keypoint JSON Lines and groups them by view in order of first appearance.
std::vector<ViewKeypoints> read_keypoints2d(const std::string& path, ParseMode mode);
std::vector<KeypointFrame3D> read_keypoints3d(const std::string& path, ParseMode mode);
void write_keypoints2d(const std::string& path, const std::vector<ViewKeypoints>& views);
void write_keypoints3d(const std::string& path, const std::vector<KeypointFrame3D>& frames);

/// Pose file: a header line {"type": "header", "topology", "fps", "bone_lengths"}
/// followed by one line per frame.
MotionSequence read_motion(const std::string& path, const SkeletonTopology& topology, ParseMode mode);
void write_motion(const std::string& path, const MotionSequence& motion, const SkeletonTopology& topology);

/// {"cameras": [...]} with an optional {"per_frame": [...]} list for moving monocular cameras.
struct CameraFile {
  std::vector<CameraModel> cameras;
  std::vector<CameraModel> per_frame;
};
CameraFile read_cameras(const std::string& path, ParseMode mode);
void write_cameras(const std::string& path, const CameraFile& cameras);

TrajectoryPrior read_trajectory_prior(const std::string& path, ParseMode mode);
void write_trajectory_prior(const std::string& path, const TrajectoryPrior& prior);

/// One label per line {"frame", "label"}; frames must run 0, 1, 2, ...
std::vector<std::string> read_emotions(const std::string& path, ParseMode mode);
void write_emotions(const std::string& path, const std::vector<std::string>& labels);

void write_captions(const std::string& path, const std::vector<PoseDescription>& captions);

nlohmann::json read_json_file(const std::string& path);
/// Writes `j` pretty-printed with a trailing newline.
void write_json_file(const std::string& path, const nlohmann::json& j);
/// Writes one compact JSON document per line.
void write_json_lines(const std::string& path, const std::vector<nlohmann::json>& lines);

}  // namespace wbm
