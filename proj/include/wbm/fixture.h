#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wbm/camera.h"
#include "wbm/keypoints.h"
#include "wbm/pose.h"

namespace wbm {

/// Synthetic sequences generated with forward kinematics and exact projection.
struct FixtureOptions {
  int frames = 16;
  double fps = 30.0;
  std::uint64_t seed = 1;
  double init_noise = 0.05;     // rad, added to every rotation of the initial poses
  bool inject_ground = true;    // also write a sequence whose feet sink below the ground
  double ground_drop = 0.05;    // m, peak depth of the injected sinking
};

/// Smooth whole-body motion standing on z = 0, facing +y.
MotionSequence fixture_motion(int frames, double fps);

/// Pinhole camera at `center` looking at `target`, with +z of the world pointing up in the image.
CameraModel look_at_camera(const std::string& name, const Vec3& center, const Vec3& target);

KeypointFrame2D render_keypoints(const SkeletonTopology& topology, const SkeletonShape& shape, const PoseState& pose,
                                 const CameraModel& camera, int frame);
KeypointFrame3D keypoints_from_pose(const SkeletonTopology& topology, const SkeletonShape& shape,
                                    const PoseState& pose, int frame);

/// Writes <dir>/sequences/<id>/... and <dir>/config.json (input sequences/, output results/).
/// Returns the ids written.
std::vector<std::string> write_fixture(const std::string& dir, const FixtureOptions& options);

}  // namespace wbm
