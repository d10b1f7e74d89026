#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "wbm/keypoints.h"

namespace wbm {

/// Score-guided Savitzky-Golay smoothing parameters. Half-widths are in frames.
struct FilterSpec {
  int poly_order = 2;
  int w_min = 2;
  int w_max = 8;

  /// Throws ValidationError unless 0 <= poly_order < 2*w_min+1 and 1 <= w_min <= w_max.
  void validate() const;
  int min_sequence_length() const { return 2 * w_min + 1; }
};

/// Convolution weights c_{-w..w} of the least-squares polynomial fit of
/// degree `poly_order` evaluated at the window center.
Eigen::VectorXd sg_coefficients(int half_width, int poly_order);

/// Half-width chosen for `frame`: w_min + round((1 - mean_score) * (w_max - w_min)),
/// where mean_score averages the scores within w_max frames of `frame`
/// (clipped to the sequence).
int adaptive_window(std::span<const double> scores, std::size_t frame, const FilterSpec& spec);

/// Smooths one scalar track with per-frame adaptive windows. Samples beyond
/// the ends are generated by point reflection about the end sample, which
/// keeps straight lines unchanged.
std::vector<double> smooth_track(std::span<const double> values, std::span<const double> scores,
                                 const FilterSpec& spec);

/// Smooths every keypoint channel independently; scores pass through.
/// Throws ValidationError when the sequence is shorter than 2*w_min+1.
std::vector<KeypointFrame2D> smooth_sequence(const std::vector<KeypointFrame2D>& frames, const FilterSpec& spec);
std::vector<KeypointFrame3D> smooth_sequence(const std::vector<KeypointFrame3D>& frames, const FilterSpec& spec);

}  // namespace wbm
