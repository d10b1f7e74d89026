#include "wbm/triangulation.h"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

#include "wbm/errors.h"

namespace wbm {

namespace {

double weighted_cost(std::span<const ViewObservation> obs, const Vec3& x) {
  double cost = 0.0;
  for (const auto& o : obs) {
    const Vec3 pc = o.camera->to_camera(x);
    if (!(pc.z() > 1e-6)) return std::numeric_limits<double>::infinity();
    const Vec2 uv(o.camera->fx * pc.x() / pc.z() + o.camera->cx, o.camera->fy * pc.y() / pc.z() + o.camera->cy);
    cost += o.score * o.score * (uv - o.pixel).squaredNorm();
  }
  return cost;
}

}  // namespace

TriangulatedPoint triangulate_point(std::span<const ViewObservation> observations,
                                    const TriangulationOptions& options) {
  std::vector<ViewObservation> usable;
  for (const auto& o : observations) {
    if (o.camera == nullptr) throw StructuralError("triangulate_point: observation without camera");
    if (o.score > options.score_floor && o.pixel.allFinite()) usable.push_back(o);
  }
  if (usable.size() < 2) {
    throw UnderdeterminedError("triangulation needs at least 2 views scoring above " +
                               std::to_string(options.score_floor) + ", got " + std::to_string(usable.size()));
  }

  // DLT in normalized image coordinates.
  Eigen::MatrixXd a(2 * usable.size(), 4);
  for (std::size_t i = 0; i < usable.size(); ++i) {
    const CameraModel& cam = *usable[i].camera;
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = cam.rotation;
    p.col(3) = cam.translation;
    const double xn = (usable[i].pixel.x() - cam.cx) / cam.fx;
    const double yn = (usable[i].pixel.y() - cam.cy) / cam.fy;
    const double w = usable[i].score;
    a.row(2 * i) = w * (xn * p.row(2) - p.row(0));
    a.row(2 * i + 1) = w * (yn * p.row(2) - p.row(1));
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(2) > 0.0) || sv(0) / sv(2) > options.max_condition) {
    throw DegenerateGeometryError("triangulation rays are nearly parallel (condition " +
                                  std::to_string(sv(2) > 0.0 ? sv(0) / sv(2) : INFINITY) + ")");
  }
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-12 * h.head<3>().norm()) {
    throw DegenerateGeometryError("triangulated point lies at infinity");
  }
  Vec3 x = h.head<3>() / h(3);

  double cost = weighted_cost(usable, x);
  if (!std::isfinite(cost)) throw DegenerateGeometryError("triangulated point lies behind a camera");

  for (int step = 0; step < options.max_gauss_newton_steps; ++step) {
    Mat3 jtj = Mat3::Zero();
    Vec3 jtr = Vec3::Zero();
    for (const auto& o : usable) {
      const Vec3 pc = o.camera->to_camera(x);
      const Vec2 r = o.score * (project(*o.camera, x) - o.pixel);
      const Eigen::Matrix<double, 2, 3> j = o.score * projection_jacobian(*o.camera, pc) * o.camera->rotation;
      jtj += j.transpose() * j;
      jtr += j.transpose() * r;
    }
    const Vec3 delta = -jtj.ldlt().solve(jtr);
    if (!delta.allFinite()) break;
    const Vec3 candidate = x + delta;
    const double candidate_cost = weighted_cost(usable, candidate);
    if (!(candidate_cost <= cost)) break;
    x = candidate;
    const bool tiny = delta.norm() <= 1e-14 * std::max(1.0, x.norm());
    cost = candidate_cost;
    if (tiny) break;
  }

  TriangulatedPoint out;
  out.point = x;
  out.views_used = static_cast<int>(usable.size());
  double sq = 0.0;
  for (const auto& o : usable) {
    sq += (project(*o.camera, x) - o.pixel).squaredNorm();
    out.used_scores.push_back(o.score);
  }
  out.residual_rms = std::sqrt(sq / static_cast<double>(usable.size()));
  return out;
}

std::vector<KeypointBone> observed_bones(const SkeletonTopology& topology) {
  std::vector<KeypointBone> bones;
  for (int j = 1; j < topology.num_joints(); ++j) {
    const int p = topology.parent(j);
    if (topology.is_observed(j) && topology.is_observed(p)) {
      bones.push_back({topology.joint_keypoint(p), topology.joint_keypoint(j), j});
    }
  }
  return bones;
}

std::vector<double> median_bone_lengths(const std::vector<KeypointFrame3D>& frames,
                                        const SkeletonTopology& topology) {
  const auto bones = observed_bones(topology);
  std::vector<double> medians(bones.size(), 0.0);
  std::vector<double> lengths;
  for (std::size_t b = 0; b < bones.size(); ++b) {
    lengths.clear();
    for (const auto& f : frames) {
      if (f.scores[bones[b].parent_keypoint] > 0.0 && f.scores[bones[b].child_keypoint] > 0.0) {
        lengths.push_back((f.points[bones[b].child_keypoint] - f.points[bones[b].parent_keypoint]).norm());
      }
    }
    if (lengths.empty()) continue;
    std::sort(lengths.begin(), lengths.end());
    const std::size_t n = lengths.size();
    medians[b] = n % 2 == 1 ? lengths[n / 2] : 0.5 * (lengths[n / 2 - 1] + lengths[n / 2]);
  }
  return medians;
}

std::vector<KeypointFrame3D> enforce_bone_lengths(const std::vector<KeypointFrame3D>& frames,
                                                  const SkeletonTopology& topology,
                                                  const std::optional<SkeletonShape>& shape_prior) {
  const auto bones = observed_bones(topology);
  std::vector<double> targets;
  if (shape_prior) {
    if (shape_prior->num_joints() != topology.num_joints()) {
      throw StructuralError("bone-length prior does not match the topology");
    }
    for (const auto& b : bones) targets.push_back(shape_prior->bone_length(b.child_joint));
  } else {
    targets = median_bone_lengths(frames, topology);
  }

  std::vector<KeypointFrame3D> out = frames;
  for (auto& f : out) {
    for (std::size_t b = 0; b < bones.size(); ++b) {
      const int pk = bones[b].parent_keypoint;
      const int ck = bones[b].child_keypoint;
      if (!(f.scores[pk] > 0.0 && f.scores[ck] > 0.0) || !(targets[b] > 0.0)) continue;
      const Vec3 d = f.points[ck] - f.points[pk];
      const double len = d.norm();
      if (len < 1e-12) continue;
      f.points[ck] = f.points[pk] + d * (targets[b] / len);
    }
  }
  return out;
}

SequenceTriangulation triangulate_sequence(const std::vector<std::vector<KeypointFrame2D>>& views,
                                           const std::vector<CameraModel>& cameras,
                                           const SkeletonTopology& topology,
                                           const std::optional<SkeletonShape>& shape_prior,
                                           const SequenceTriangulationOptions& options) {
  if (views.size() != cameras.size()) {
    throw StructuralError("triangulate_sequence: " + std::to_string(views.size()) + " views but " +
                          std::to_string(cameras.size()) + " cameras");
  }
  if (views.empty()) throw StructuralError("triangulate_sequence: no views");
  const std::size_t n = views.front().size();
  for (const auto& v : views) {
    if (v.size() != n) throw StructuralError("triangulate_sequence: views are not time-aligned");
  }
  for (const auto& c : cameras) c.validate();

  SequenceTriangulation result;
  result.frames.resize(n);
  std::array<Vec3, kNumKeypoints> last_valid;
  last_valid.fill(Vec3::Zero());
  std::vector<ViewObservation> obs(cameras.size());
  double residual_sum = 0.0;

  for (std::size_t t = 0; t < n; ++t) {
    KeypointFrame3D& out = result.frames[t];
    out.frame = views.front()[t].frame;
    for (int k = 0; k < kNumKeypoints; ++k) {
      bool seen = false;
      for (std::size_t c = 0; c < cameras.size(); ++c) {
        obs[c] = {&cameras[c], views[c][t].points[k], views[c][t].scores[k]};
        seen = seen || views[c][t].scores[k] > 0.0;
      }
      if (!seen) {
        out.points[k] = last_valid[k];
        out.scores[k] = 0.0;
        continue;
      }
      try {
        const TriangulatedPoint p = triangulate_point(obs, options.point);
        double inv_sum = 0.0;
        for (double s : p.used_scores) inv_sum += 1.0 / s;
        out.points[k] = p.point;
        out.scores[k] = std::min(1.0, static_cast<double>(p.used_scores.size()) / inv_sum);
        last_valid[k] = p.point;
        residual_sum += p.residual_rms;
        result.max_residual = std::max(result.max_residual, p.residual_rms);
        ++result.triangulated;
      } catch (const UnderdeterminedError&) {
        out.points[k] = last_valid[k];
        out.scores[k] = 0.0;
        ++result.failed;
      } catch (const DegenerateGeometryError&) {
        out.points[k] = last_valid[k];
        out.scores[k] = 0.0;
        ++result.failed;
      }
    }
  }
  if (result.triangulated > 0) result.mean_residual = residual_sum / static_cast<double>(result.triangulated);

  if (options.smooth && n >= static_cast<std::size_t>(options.filter.min_sequence_length())) {
    result.frames = smooth_sequence(result.frames, options.filter);
  }
  if (options.enforce_bone_lengths) result.frames = enforce_bone_lengths(result.frames, topology, shape_prior);
  return result;
}

}  // namespace wbm
