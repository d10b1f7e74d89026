#include "wbm/bundle_adjustment.h"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <limits>

#include "wbm/errors.h"
#include "wbm/triangulation.h"

namespace wbm {

double reprojection_error(const std::vector<CameraModel>& cameras, const std::vector<Track>& tracks,
                          const std::vector<Vec3>& points) {
  double total = 0.0;
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    if (!points[t].allFinite()) continue;
    for (const auto& o : tracks[t].observations) {
      const CameraModel& cam = cameras.at(o.camera);
      const Vec3 pc = cam.to_camera(points[t]);
      if (!(pc.z() > 1e-6)) return std::numeric_limits<double>::infinity();
      const Vec2 uv(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
      total += o.weight * o.weight * (uv - o.pixel).squaredNorm();
    }
  }
  return total;
}

namespace {

struct TrackBlocks {
  Mat3 v = Mat3::Zero();
  Vec3 g = Vec3::Zero();
  std::vector<std::pair<int, Eigen::MatrixXd>> w;  // (free camera index, D x 3)
};

void restore_baseline(std::vector<CameraModel>& cameras, std::vector<Vec3>& points, double baseline) {
  if (cameras.size() < 2 || !(baseline > 0.0)) return;
  const Vec3 c0 = cameras[0].center();
  const double current = (cameras[1].center() - c0).norm();
  if (!(current > 0.0)) return;
  const double s = baseline / current;
  for (std::size_t c = 1; c < cameras.size(); ++c) {
    const Vec3 center = c0 + s * (cameras[c].center() - c0);
    cameras[c].translation = -cameras[c].rotation * center;
  }
  for (auto& p : points) {
    if (p.allFinite()) p = c0 + s * (p - c0);
  }
}

}  // namespace

BundleAdjustmentResult refine_cameras(const std::vector<CameraModel>& initial, const std::vector<Track>& tracks,
                                      const BundleAdjustmentOptions& options) {
  if (initial.size() < 2) throw ValidationError("bundle adjustment needs at least 2 cameras");
  if (tracks.size() < static_cast<std::size_t>(options.min_tracks)) {
    throw ValidationError("bundle adjustment needs at least " + std::to_string(options.min_tracks) +
                          " tracks, got " + std::to_string(tracks.size()));
  }
  for (const auto& c : initial) c.validate();
  for (const auto& t : tracks) {
    for (const auto& o : t.observations) {
      if (o.camera < 0 || o.camera >= static_cast<int>(initial.size())) {
        throw StructuralError("track observation references unknown camera " + std::to_string(o.camera));
      }
    }
  }

  BundleAdjustmentResult result;
  result.cameras = initial;
  result.points.assign(tracks.size(), Vec3::Constant(std::numeric_limits<double>::quiet_NaN()));
  TriangulationOptions tri;
  tri.score_floor = 0.0;
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    std::vector<ViewObservation> obs;
    for (const auto& o : tracks[t].observations) obs.push_back({&initial[o.camera], o.pixel, o.weight});
    try {
      result.points[t] = triangulate_point(obs, tri).point;
    } catch (const Error&) {
      // left as NaN: the track takes no part in the optimization
    }
  }

  const double baseline = (initial[1].center() - initial[0].center()).norm();
  const int dim = options.refine_focal ? 8 : 6;
  const int free_cams = static_cast<int>(initial.size()) - 1;
  const int n_cam = dim * free_cams;

  double error = reprojection_error(result.cameras, tracks, result.points);
  result.initial_error = error;
  result.error_history.push_back(error);
  double lambda = -1.0;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    result.iterations = iter + 1;
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(n_cam, n_cam);
    Eigen::VectorXd gc = Eigen::VectorXd::Zero(n_cam);
    std::vector<TrackBlocks> blocks(tracks.size());

    for (std::size_t t = 0; t < tracks.size(); ++t) {
      const Vec3& x = result.points[t];
      if (!x.allFinite()) continue;
      TrackBlocks& tb = blocks[t];
      for (const auto& o : tracks[t].observations) {
        const CameraModel& cam = result.cameras[o.camera];
        const Vec3 rx = cam.rotation * x;
        const Vec3 pc = rx + cam.translation;
        const Vec2 r = o.weight * (project(cam, x) - o.pixel);
        const Eigen::Matrix<double, 2, 3> dproj = o.weight * projection_jacobian(cam, pc);
        const Eigen::Matrix<double, 2, 3> jp = dproj * cam.rotation;
        tb.v += jp.transpose() * jp;
        tb.g += jp.transpose() * r;
        if (o.camera == 0) continue;
        Eigen::MatrixXd jc(2, dim);
        jc.leftCols<3>() = -dproj * hat(rx);
        jc.block<2, 3>(0, 3) = dproj;
        if (options.refine_focal) {
          jc.block<2, 2>(0, 6) << o.weight * pc.x() / pc.z(), 0.0, 0.0, o.weight * pc.y() / pc.z();
        }
        const int off = dim * (o.camera - 1);
        u.block(off, off, dim, dim) += jc.transpose() * jc;
        gc.segment(off, dim) += jc.transpose() * r;
        tb.w.emplace_back(o.camera - 1, jc.transpose() * jp);
      }
    }

    if (lambda < 0.0) {
      double mean_diag = 0.0;
      for (int i = 0; i < n_cam; ++i) mean_diag += u(i, i);
      lambda = 1e-4 * std::max(mean_diag / std::max(n_cam, 1), 1e-12);
    }

    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd s = u;
      for (int i = 0; i < n_cam; ++i) s(i, i) += lambda * std::max(u(i, i), 1e-12);
      Eigen::VectorXd rhs = -gc;
      std::vector<Mat3> v_inv(tracks.size());
      for (std::size_t t = 0; t < tracks.size(); ++t) {
        if (!result.points[t].allFinite()) continue;
        Mat3 v = blocks[t].v;
        for (int i = 0; i < 3; ++i) v(i, i) += lambda * std::max(v(i, i), 1e-12);
        v_inv[t] = v.inverse();
        for (const auto& [ca, wa] : blocks[t].w) {
          const Eigen::MatrixXd wv = wa * v_inv[t];
          rhs.segment(dim * ca, dim) += wv * blocks[t].g;
          for (const auto& [cb, wb] : blocks[t].w) {
            s.block(dim * ca, dim * cb, dim, dim) -= wv * wb.transpose();
          }
        }
      }
      const Eigen::VectorXd dc = s.ldlt().solve(rhs);

      std::vector<CameraModel> cams = result.cameras;
      for (int c = 0; c < free_cams; ++c) {
        CameraModel& cam = cams[c + 1];
        const Eigen::VectorXd d = dc.segment(dim * c, dim);
        cam.rotation = exp_so3(d.head<3>()) * cam.rotation;
        cam.translation += d.segment<3>(3);
        if (options.refine_focal) {
          cam.fx += d(6);
          cam.fy += d(7);
        }
      }
      std::vector<Vec3> pts = result.points;
      for (std::size_t t = 0; t < tracks.size(); ++t) {
        if (!pts[t].allFinite()) continue;
        Vec3 b = -blocks[t].g;
        for (const auto& [c, w] : blocks[t].w) b -= w.transpose() * dc.segment(dim * c, dim);
        pts[t] += v_inv[t] * b;
      }

      bool valid = dc.allFinite();
      for (const auto& c : cams) valid = valid && c.fx > 0.0 && c.fy > 0.0;
      const double candidate = valid ? reprojection_error(cams, tracks, pts) : INFINITY;
      if (candidate < error) {
        const double improvement = error - candidate;
        result.cameras = std::move(cams);
        result.points = std::move(pts);
        error = candidate;
        result.error_history.push_back(error);
        lambda = std::max(lambda / 3.0, 1e-15);
        accepted = true;
        if (improvement <= options.relative_tolerance * result.initial_error || error == 0.0) {
          result.converged = true;
        }
      } else {
        lambda *= 4.0;
        if (lambda > 1e12) break;
      }
    }
    if (!accepted) {
      // No descent direction left: the current iterate is a local minimum.
      result.converged = true;
      break;
    }
    if (result.converged) break;
  }

  restore_baseline(result.cameras, result.points, baseline);
  result.final_error = reprojection_error(result.cameras, tracks, result.points);
  return result;
}

}  // namespace wbm
