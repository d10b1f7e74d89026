#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "wbm/skeleton.h"

namespace wbm {

/// One frame of whole-body 2D detections in pixels with confidences in [0, 1].
struct KeypointFrame2D {
  int frame = 0;
  std::string view;
  std::array<Eigen::Vector2d, kNumKeypoints> points{};
  std::array<double, kNumKeypoints> scores{};
  /// Unknown fields kept by lenient parsing, written back on serialization.
  nlohmann::json extra = nlohmann::json::object();

  KeypointFrame2D();
  bool operator==(const KeypointFrame2D&) const = default;
};

/// One frame of whole-body 3D keypoints in meters with confidences in [0, 1].
struct KeypointFrame3D {
  int frame = 0;
  std::array<Eigen::Vector3d, kNumKeypoints> points{};
  std::array<double, kNumKeypoints> scores{};
  nlohmann::json extra = nlohmann::json::object();

  KeypointFrame3D();
  bool operator==(const KeypointFrame3D&) const = default;
};

/// Throws ValidationError when coordinates are non-finite or scores leave [0, 1].
void validate(const KeypointFrame2D& frame);
void validate(const KeypointFrame3D& frame);

}  // namespace wbm
