#include "wbm/savgol.h"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "wbm/errors.h"

namespace wbm {

void FilterSpec::validate() const {
  if (poly_order < 0) throw ValidationError("filter: poly_order must be >= 0");
  if (w_min < 1 || w_max < w_min) throw ValidationError("filter: require 1 <= w_min <= w_max");
  if (poly_order >= 2 * w_min + 1) {
    throw ValidationError("filter: poly_order " + std::to_string(poly_order) +
                          " needs a window wider than 2*w_min+1 = " + std::to_string(2 * w_min + 1));
  }
}

Eigen::VectorXd sg_coefficients(int half_width, int poly_order) {
  if (half_width < 0 || poly_order < 0) throw ValidationError("savgol: negative half-width or order");
  const int n = 2 * half_width + 1;
  if (poly_order >= n) {
    throw ValidationError("savgol: polynomial order " + std::to_string(poly_order) + " is too high for " +
                          std::to_string(n) + " samples");
  }
  // Abscissae are scaled to [-1, 1]; the value at the center is the constant
  // coefficient, so the scaling does not change the weights.
  Eigen::MatrixXd vander(n, poly_order + 1);
  for (int i = 0; i < n; ++i) {
    const double t = half_width == 0 ? 0.0 : static_cast<double>(i - half_width) / half_width;
    double power = 1.0;
    for (int k = 0; k <= poly_order; ++k) {
      vander(i, k) = power;
      power *= t;
    }
  }
  const Eigen::MatrixXd pinv = vander.colPivHouseholderQr().solve(Eigen::MatrixXd::Identity(n, n));
  return pinv.row(0).transpose();
}

int adaptive_window(std::span<const double> scores, std::size_t frame, const FilterSpec& spec) {
  if (scores.empty()) return spec.w_min;
  const auto n = static_cast<std::ptrdiff_t>(scores.size());
  const auto i = static_cast<std::ptrdiff_t>(frame);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - spec.w_max);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, i + spec.w_max);
  double sum = 0.0;
  for (std::ptrdiff_t k = lo; k <= hi; ++k) sum += scores[k];
  const double mean = sum / static_cast<double>(hi - lo + 1);
  const long w = spec.w_min + std::lround((1.0 - mean) * (spec.w_max - spec.w_min));
  return static_cast<int>(std::clamp<long>(w, spec.w_min, spec.w_max));
}

namespace {

double reflected_sample(std::span<const double> values, std::ptrdiff_t k) {
  const auto last = static_cast<std::ptrdiff_t>(values.size()) - 1;
  if (last == 0) return values[0];
  if (k < 0) return 2.0 * values[0] - reflected_sample(values, -k);
  if (k > last) return 2.0 * values[last] - reflected_sample(values, 2 * last - k);
  return values[k];
}

class CoefficientCache {
 public:
  explicit CoefficientCache(const FilterSpec& spec) {
    for (int w = spec.w_min; w <= spec.w_max; ++w) table_[w] = sg_coefficients(w, spec.poly_order);
  }
  const Eigen::VectorXd& at(int w) const { return table_.at(w); }

 private:
  std::map<int, Eigen::VectorXd> table_;
};

std::vector<double> smooth_with(std::span<const double> values, std::span<const double> scores,
                                const FilterSpec& spec, const CoefficientCache& cache) {
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int w = adaptive_window(scores, i, spec);
    const Eigen::VectorXd& c = cache.at(w);
    double acc = 0.0;
    for (int j = -w; j <= w; ++j) {
      acc += c[j + w] * reflected_sample(values, static_cast<std::ptrdiff_t>(i) + j);
    }
    out[i] = acc;
  }
  return out;
}

void check_length(std::size_t n, const FilterSpec& spec) {
  spec.validate();
  if (n < static_cast<std::size_t>(spec.min_sequence_length())) {
    throw ValidationError("smoothing needs at least " + std::to_string(spec.min_sequence_length()) +
                          " frames, got " + std::to_string(n));
  }
}

template <typename Frame, int Dim>
std::vector<Frame> smooth_frames(const std::vector<Frame>& frames, const FilterSpec& spec) {
  check_length(frames.size(), spec);
  const CoefficientCache cache(spec);
  std::vector<Frame> out = frames;
  const std::size_t n = frames.size();
  std::vector<double> scores(n);
  std::vector<double> track(n);
  for (int k = 0; k < kNumKeypoints; ++k) {
    for (std::size_t t = 0; t < n; ++t) scores[t] = frames[t].scores[k];
    for (int d = 0; d < Dim; ++d) {
      for (std::size_t t = 0; t < n; ++t) track[t] = frames[t].points[k][d];
      const auto smoothed = smooth_with(track, scores, spec, cache);
      for (std::size_t t = 0; t < n; ++t) out[t].points[k][d] = smoothed[t];
    }
  }
  return out;
}

}  // namespace

std::vector<double> smooth_track(std::span<const double> values, std::span<const double> scores,
                                 const FilterSpec& spec) {
  if (values.size() != scores.size()) throw StructuralError("smooth_track: values and scores differ in length");
  check_length(values.size(), spec);
  return smooth_with(values, scores, spec, CoefficientCache(spec));
}

std::vector<KeypointFrame2D> smooth_sequence(const std::vector<KeypointFrame2D>& frames, const FilterSpec& spec) {
  return smooth_frames<KeypointFrame2D, 2>(frames, spec);
}

std::vector<KeypointFrame3D> smooth_sequence(const std::vector<KeypointFrame3D>& frames, const FilterSpec& spec) {
  return smooth_frames<KeypointFrame3D, 3>(frames, spec);
}

}  // namespace wbm
