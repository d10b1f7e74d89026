#include "wbm/keypoints.h"

#include <cmath>

#include "wbm/errors.h"

namespace wbm {

KeypointFrame2D::KeypointFrame2D() {
  points.fill(Eigen::Vector2d::Zero());
  scores.fill(0.0);
}

KeypointFrame3D::KeypointFrame3D() {
  points.fill(Eigen::Vector3d::Zero());
  scores.fill(0.0);
}

namespace {

template <typename Frame>
void validate_frame(const Frame& frame) {
  for (int k = 0; k < kNumKeypoints; ++k) {
    if (!frame.points[k].allFinite()) {
      throw ValidationError("frame " + std::to_string(frame.frame) + ": keypoint " + std::to_string(k) +
                            " has non-finite coordinates");
    }
    const double s = frame.scores[k];
    if (!(s >= 0.0 && s <= 1.0)) {
      throw ValidationError("frame " + std::to_string(frame.frame) + ": score of keypoint " + std::to_string(k) +
                            " outside [0,1]");
    }
  }
}

}  // namespace

void validate(const KeypointFrame2D& frame) { validate_frame(frame); }
void validate(const KeypointFrame3D& frame) { validate_frame(frame); }

}  // namespace wbm
