#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "support.h"
#include "wbm/errors.h"
#include "wbm/local_fit.h"

using namespace wbm;
using wbm::test::random_pose;
using wbm::test::random_vec;

namespace {

const SkeletonTopology& topo() { return default_topology(); }
const SkeletonShape& shape() { return default_shape(); }

MotionSequence motion_of(std::vector<PoseState> poses) { return MotionSequence(30.0, std::move(poses), shape()); }

std::vector<PoseState> random_poses(std::mt19937_64& rng, int n, double sigma = 0.3) {
  std::vector<PoseState> out;
  for (int t = 0; t < n; ++t) out.push_back(random_pose(rng, sigma));
  return out;
}

std::vector<KeypointFrame3D> noisy_targets(const std::vector<PoseState>& poses, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.0);
  std::vector<KeypointFrame3D> out;
  for (std::size_t t = 0; t < poses.size(); ++t) {
    KeypointFrame3D f = test::exact_keypoints3d(poses[t], static_cast<int>(t));
    for (int k = 0; k < kNumKeypoints; ++k) {
      if (f.scores[k] > 0.0) {
        f.points[k] += random_vec(rng, 0.05);
        f.scores[k] = u(rng);
      }
    }
    out.push_back(f);
  }
  return out;
}

// Independent evaluation of the joint loss by plain summation.
JointLoss naive_joint_loss(const MotionSequence& m, const FitTargets& targets) {
  const double f = static_cast<double>(m.size());
  const double observed = topo().num_observed_joints();
  JointLoss out;
  for (std::size_t t = 0; t < m.size(); ++t) {
    const JointPositions x = forward_kinematics(topo(), shape(), m.frame(t));
    for (int j = 0; j < topo().num_joints(); ++j) {
      const int k = topo().joint_keypoint(j);
      if (k < 0) continue;
      if (!targets.k3d.empty()) {
        const double s = targets.k3d[t].scores[k];
        out.k3d += s * (x.col(j) - targets.k3d[t].points[k]).cwiseAbs().sum() / (f * observed);
      }
      for (std::size_t v = 0; v < targets.cameras.size(); ++v) {
        const double s = targets.k2d[v][t].scores[k];
        if (s > 0.0) {
          out.k2d += s * (project(targets.cameras[v], x.col(j)) - targets.k2d[v][t].points[k]).cwiseAbs().sum() /
                     (f * static_cast<double>(targets.cameras.size()) * observed);
        }
      }
    }
    for (int j = 0; j < kNumJoints; ++j) {
      out.prior += (m.frame(t).joint_rotation(j) - targets.theta_init.frame(t).joint_rotation(j)).cwiseAbs().sum() /
                   (f * 3.0 * kNumJoints);
    }
  }
  out.total = out.k3d + out.k2d + out.prior;
  return out;
}

double naive_smooth_loss(const MotionSequence& m) {
  const double gaps = static_cast<double>(m.size() - 1);
  double total = 0.0;
  for (std::size_t t = 1; t < m.size(); ++t) {
    const Eigen::VectorXd dp = m.frame(t).pose_params() - m.frame(t - 1).pose_params();
    total += dp.cwiseAbs().sum() / (gaps * kPoseParamsPerFrame);
    const JointPositions a = forward_kinematics(topo(), shape(), m.frame(t));
    const JointPositions b = forward_kinematics(topo(), shape(), m.frame(t - 1));
    total += (a - b).cwiseAbs().sum() / (gaps * kNumJoints);
  }
  return total;
}

// Segment distance by dense sampling of both segments.
double sampled_distance(const Vec3& a0, const Vec3& a1, const Vec3& b0, const Vec3& b1, int n = 400) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= n; ++i) {
    const Vec3 p = a0 + (a1 - a0) * (static_cast<double>(i) / n);
    for (int k = 0; k <= n; ++k) best = std::min(best, (p - (b0 + (b1 - b0) * (static_cast<double>(k) / n))).norm());
  }
  return best;
}

LossWeights only(double joint, double smooth, double pen, double phy) { return {joint, smooth, pen, phy}; }

// Poses whose feet sit around the ground so contact and penetration rows are live.
std::vector<PoseState> grounded_poses(std::mt19937_64& rng, int n) {
  auto poses = random_poses(rng, n, 0.15);
  std::uniform_real_distribution<double> dz(-0.04, 0.03);
  for (auto& p : poses) {
    p.r.z() = 0.0;
    const JointPositions x = forward_kinematics(topo(), shape(), p);
    double lowest = 1e9;
    for (int j : foot_joints(topo())) lowest = std::min(lowest, x(2, j));
    p.r.z() = -lowest + dz(rng);
  }
  return poses;
}

}  // namespace

TEST_CASE("joint loss: perfect fit, one offset joint and the naive oracle") {
  std::mt19937_64 rng(51);
  const auto poses = random_poses(rng, 3);
  const MotionSequence m = motion_of(poses);
  std::vector<KeypointFrame3D> exact;
  for (std::size_t t = 0; t < poses.size(); ++t) exact.push_back(test::exact_keypoints3d(poses[t], static_cast<int>(t)));
  const FitTargets perfect{exact, {}, {}, m};
  CHECK(loss_joint(m, perfect, topo()).total == 0.0);

  const MotionSequence single = motion_of({poses[0]});
  std::vector<KeypointFrame3D> moved{exact[0]};
  moved[0].points[topo().joint_keypoint(topo().joint_index("left_knee"))] += Vec3(0.1, 0.0, 0.0);
  const JointLoss one = loss_joint(single, FitTargets{moved, {}, {}, single}, topo());
  CHECK(one.k3d == doctest::Approx(0.1 / topo().num_observed_joints()).epsilon(1e-12));
  CHECK(one.prior == 0.0);

  const auto cams = test::two_cameras();
  for (int trial = 0; trial < 5; ++trial) {
    const auto truth = random_poses(rng, 3, 0.2);
    const auto init = random_poses(rng, 3, 0.2);
    const MotionSequence pred = motion_of(random_poses(rng, 3, 0.2));
    std::vector<std::vector<KeypointFrame2D>> k2d(2);
    for (std::size_t v = 0; v < 2; ++v) {
      for (std::size_t t = 0; t < 3; ++t) {
        PoseState shifted = truth[t];
        shifted.r = Vec3(0.0, 0.0, 1.0);
        k2d[v].push_back(render_keypoints(topo(), shape(), shifted, cams[v], static_cast<int>(t)));
      }
    }
    auto shifted_pred = pred;
    for (auto& p : shifted_pred.frames()) p.r = Vec3(0.05, -0.05, 1.0);
    const FitTargets targets{noisy_targets(truth, rng), k2d, cams, motion_of(init)};
    const JointLoss got = loss_joint(shifted_pred, targets, topo());
    const JointLoss want = naive_joint_loss(shifted_pred, targets);
    CHECK(got.k3d == doctest::Approx(want.k3d).epsilon(1e-12));
    CHECK(got.k2d == doctest::Approx(want.k2d).epsilon(1e-12));
    CHECK(got.prior == doctest::Approx(want.prior).epsilon(1e-12));
    CHECK(got.total == doctest::Approx(want.total).epsilon(1e-12));
  }
}

TEST_CASE("joint loss rejects mismatched targets") {
  std::mt19937_64 rng(52);
  const MotionSequence m = motion_of(random_poses(rng, 3));
  const FitTargets bad{{test::exact_keypoints3d(m.frame(0))}, {}, {}, m};
  CHECK_THROWS_AS(loss_joint(m, bad, topo()), StructuralError);
}

TEST_CASE("smoothness loss") {
  std::mt19937_64 rng(53);
  const PoseState p = random_pose(rng);
  CHECK(loss_smooth(motion_of({p, p, p}), topo()).value == 0.0);
  PoseState q = p;
  q.r += Vec3(0.3, 0.0, 0.0);
  CHECK(loss_smooth(motion_of({p, q}), topo()).value ==
        doctest::Approx(0.3 / kPoseParamsPerFrame + 0.3).epsilon(1e-12));
  const SmoothLoss single = loss_smooth(motion_of({p}), topo());
  CHECK(single.value == 0.0);
  CHECK(single.single_frame);
  for (int trial = 0; trial < 5; ++trial) {
    const MotionSequence m = motion_of(random_poses(rng, 4));
    CHECK(loss_smooth(m, topo()).value == doctest::Approx(naive_smooth_loss(m)).epsilon(1e-12));
  }
}

TEST_CASE("segment distance matches dense sampling") {
  std::mt19937_64 rng(54);
  for (int trial = 0; trial < 40; ++trial) {
    const Vec3 a0 = random_vec(rng, 1.0), a1 = random_vec(rng, 1.0), b0 = random_vec(rng, 1.0), b1 = random_vec(rng, 1.0);
    const SegmentClosest c = segment_closest(a0, a1, b0, b1);
    CHECK(c.s >= 0.0);
    CHECK(c.s <= 1.0);
    CHECK(c.t >= 0.0);
    CHECK(c.t <= 1.0);
    const double sampled = sampled_distance(a0, a1, b0, b1);
    CHECK(c.distance <= sampled + 1e-12);
    CHECK(c.distance >= sampled - 1e-2);
  }
  const SegmentClosest parallel = segment_closest({0, 0, 0}, {1, 0, 0}, {0, 0.06, 0}, {1, 0.06, 0});
  CHECK(parallel.distance == doctest::Approx(0.06).epsilon(1e-12));
}

TEST_CASE("penetration loss") {
  CHECK(capsule_pair_penalty({0, 0, 0}, {1, 0, 0}, 0.05, {0, 0.06, 0}, {1, 0.06, 0}, 0.05) ==
        doctest::Approx(1.6e-3).epsilon(1e-12));
  CHECK(capsule_pair_penalty({0, 0, 0}, {1, 0, 0}, 0.05, {0, 0.2, 0}, {1, 0.2, 0}, 0.05) == 0.0);
  const CollisionProxy proxy = CollisionProxy::from_topology(topo());
  CHECK(loss_pen(PoseState(), proxy, topo(), shape()) == 0.0);

  // pair enumeration and overlap summed independently of the proxy bookkeeping
  std::mt19937_64 rng(55);
  int touching = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const PoseState p = random_pose(rng, 0.8);
    const JointPositions x = forward_kinematics(topo(), shape(), p);
    auto adjacent = [&](int u, int v) { return u == v || topo().parent(u) == v || topo().parent(v) == u; };
    double oracle = 0.0;
    for (int a = 1; a < kNumJoints; ++a) {
      for (int b = a + 1; b < kNumJoints; ++b) {
        const int pa = topo().parent(a), pb = topo().parent(b);
        if (adjacent(pa, pb) || adjacent(pa, b) || adjacent(a, pb) || adjacent(a, b)) continue;
        const double d = segment_closest(x.col(pa), x.col(a), x.col(pb), x.col(b)).distance;
        const double overlap = std::max(0.0, topo().capsule_radius(a) + topo().capsule_radius(b) - d);
        oracle += overlap * overlap;
      }
    }
    const double got = loss_pen(p, proxy, topo(), shape());
    if (got > 0.0) ++touching;
    CHECK(got == doctest::Approx(oracle).epsilon(1e-12));
  }
  CHECK(touching > 0);

  CollisionProxy bad = proxy;
  bad.capsules[0].radius = 0.0;
  CHECK_THROWS_AS(bad.validate(topo()), ValidationError);
}

TEST_CASE("physics loss") {
  PoseState p;
  const JointPositions rest = forward_kinematics(topo(), shape(), p);
  double lowest = 1e9;
  for (int j : foot_joints(topo())) lowest = std::min(lowest, rest(2, j));
  p.r.z() = -lowest;
  CHECK(loss_phy(motion_of({p, p, p}), 0.0, topo()).total == 0.0);

  PoseState sunk = p;
  sunk.r.z() -= 0.03;
  const JointPositions x = forward_kinematics(topo(), shape(), sunk);
  int under = 0;
  for (int j : foot_joints(topo())) {
    if (x(2, j) < -1e-9) {
      ++under;
      CHECK(x(2, j) == doctest::Approx(-0.03));
    }
  }
  CHECK(under >= 1);
  const PhysicsLoss phy = loss_phy(motion_of({sunk}), 0.0, topo());
  CHECK(phy.penetration == doctest::Approx(under * 9e-4).epsilon(1e-9));
  CHECK(phy.skating == 0.0);
  CHECK(loss_phy(motion_of({sunk}), -0.03 - 1e-9, topo()).total == 0.0);

  // planted feet do not skate even when the upper body moves
  std::vector<PoseState> walk;
  for (int t = 0; t < 6; ++t) {
    PoseState w = p;
    w.joint_rotation(topo().joint_index("left_shoulder")) = Vec3(0.0, 0.1 * t, 0.0);
    walk.push_back(w);
  }
  CHECK(loss_phy(motion_of(walk), 0.0, topo()).skating == 0.0);

  // sliding in contact is penalized with the squared speed
  std::vector<PoseState> slide{p, p};
  slide[1].r.x() += 0.01;
  const JointPositions at = forward_kinematics(topo(), shape(), slide[1]);
  int contact = 0;
  for (int j : foot_joints(topo())) contact += at(2, j) < kContactHeight ? 1 : 0;
  CHECK(contact >= 2);
  const PhysicsLoss s = loss_phy(motion_of(slide), 0.0, topo());
  CHECK(s.skating == doctest::Approx(contact * std::pow(0.01 * 30.0, 2)).epsilon(1e-9));
}

TEST_CASE("contact in the fit follows the targets, not the estimate") {
  PoseState p;
  const JointPositions rest = forward_kinematics(topo(), shape(), p);
  double lowest = 1e9;
  for (int j : foot_joints(topo())) lowest = std::min(lowest, rest(2, j));
  p.r.z() = -lowest;
  const std::vector<KeypointFrame3D> planted{test::exact_keypoints3d(p, 0), test::exact_keypoints3d(p, 1)};

  // the estimate floats 20 cm up and slides 1 cm
  PoseState up = p;
  up.r.z() += 0.2;
  PoseState slid = up;
  slid.r.x() += 0.01;
  const MotionSequence floating = motion_of({up, slid});
  CHECK(loss_phy(floating, 0.0, topo()).skating == 0.0);

  const FitTargets targets{planted, {}, {}, floating};
  const LocalObjective objective(targets, only(0, 0, 0, 1), topo(), LocalFitOptions{});
  Eigen::VectorXd x(objective.num_params());
  x << up.pose_params(), slid.pose_params();
  int feet_planted = 0;
  for (int j : foot_joints(topo())) feet_planted += topo().is_observed(j) && rest(2, j) - lowest < kContactHeight;
  CHECK(evaluate_loss(objective, x).terms[5] == doctest::Approx(feet_planted * std::pow(0.01 * 30.0, 2)).epsilon(1e-9));

  // targets high above the floor: sliding there is free
  const FitTargets lifted{{test::exact_keypoints3d(up, 0), test::exact_keypoints3d(up, 1)}, {}, {}, floating};
  const LocalObjective free_objective(lifted, only(0, 0, 0, 1), topo(), LocalFitOptions{});
  CHECK(evaluate_loss(free_objective, x).terms[5] == 0.0);
}

TEST_CASE("losses are non-negative") {
  std::mt19937_64 rng(56);
  const CollisionProxy proxy = CollisionProxy::from_topology(topo());
  for (int trial = 0; trial < 10; ++trial) {
    const MotionSequence m = motion_of(grounded_poses(rng, 3));
    const FitTargets targets{noisy_targets(m.frames(), rng), {}, {}, motion_of(random_poses(rng, 3))};
    CHECK(loss_joint(m, targets, topo()).total >= 0.0);
    CHECK(loss_smooth(m, topo()).value >= 0.0);
    CHECK(loss_pen(m.frame(0), proxy, topo(), shape()) >= 0.0);
    CHECK(loss_phy(m, 0.0, topo()).total >= 0.0);
  }
}

TEST_CASE("analytic gradients match central differences") {
  std::mt19937_64 rng(57);
  const auto cams = test::two_cameras();
  struct Case {
    const char* name;
    LossWeights weights;
  };
  const Case cases[] = {{"joint", only(1, 0, 0, 0)}, {"smooth", only(0, 1, 0, 0)}, {"pen", only(0, 0, 1, 0)},
                        {"phy", only(0, 0, 0, 1)}};
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int point = 0; point < 20;) {
      const bool pen = std::string(c.name) == "pen";
      const auto poses = pen ? random_poses(rng, 1, 0.8) : grounded_poses(rng, 2);
      const int n = static_cast<int>(poses.size());
      std::vector<std::vector<KeypointFrame2D>> k2d(2);
      for (std::size_t v = 0; v < 2; ++v) {
        for (int t = 0; t < n; ++t) {
          PoseState moved = poses[t];
          moved.joint_rotation(3) += random_vec(rng, 0.05);
          KeypointFrame2D f = render_keypoints(topo(), shape(), moved, cams[v], t);
          for (auto& uv : f.points) uv += 2.0 * random_vec(rng, 1.0).head<2>();
          k2d[v].push_back(f);
        }
      }
      const FitTargets targets{noisy_targets(poses, rng), k2d, cams, motion_of(random_poses(rng, n, 0.2))};
      const LocalObjective objective(targets, c.weights, topo(), LocalFitOptions{});
      Eigen::VectorXd x(objective.num_params());
      for (int t = 0; t < n; ++t) x.segment(t * kPoseParamsPerFrame, kPoseParamsPerFrame) = poses[t].pose_params();
      REQUIRE(evaluate_loss(objective, x).total > 0.0);
      if (test::straddles_kink(objective, x, 1e-6)) continue;
      worst = std::max(worst, test::gradient_relative_error(objective, x, 1e-6));
      ++point;
    }
    INFO(std::string(c.name));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("fit_local at the truth stops at once") {
  const MotionSequence truth = fixture_motion(4, 30.0);
  std::vector<KeypointFrame3D> k3d;
  for (std::size_t t = 0; t < truth.size(); ++t) k3d.push_back(test::exact_keypoints3d(truth.frame(t), static_cast<int>(t)));
  const LocalFitResult fit = fit_local(FitTargets{k3d, {}, {}, truth}, only(1, 0, 0, 0), topo());
  CHECK(fit.report.iterations == 0);
  CHECK(fit.report.final_loss() <= 1e-12);
  CHECK(fit.report.converged);
}

TEST_CASE("fit_local recovers perturbed poses and never increases the loss") {
  const MotionSequence truth = fixture_motion(6, 30.0);
  std::mt19937_64 rng(58);
  std::vector<PoseState> init = truth.frames();
  for (auto& p : init) {
    for (int j = 0; j < kNumJoints; ++j) p.joint_rotation(j) += random_vec(rng, 0.05);
  }
  std::vector<KeypointFrame3D> k3d;
  for (std::size_t t = 0; t < truth.size(); ++t) k3d.push_back(test::exact_keypoints3d(truth.frame(t), static_cast<int>(t)));
  const LocalFitResult fit = fit_local(FitTargets{k3d, {}, {}, motion_of(init)}, only(1, 0.5, 0, 0), topo());
  const auto& h = fit.report.history;
  for (std::size_t i = 1; i < h.size(); ++i) CHECK(h[i].total <= h[i - 1].total);
  double err = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    const JointPositions a = forward_kinematics(topo(), shape(), truth.frame(t));
    const JointPositions b = forward_kinematics(topo(), shape(), fit.motion.frame(t));
    err += (a - b).colwise().norm().mean() / static_cast<double>(truth.size());
  }
  CHECK(err < 5e-3);
  for (const auto& p : fit.motion.frames()) {
    for (int j = 0; j < kNumJoints; ++j) CHECK(p.joint_rotation(j).norm() <= std::numbers::pi + 1e-6);
  }
  const auto j = fit.report_json();
  CHECK(j["history"].size() == h.size());
  CHECK(j["history"][0]["terms"].contains("smooth"));
}

TEST_CASE("a zero weight behaves exactly like a removed term") {
  std::mt19937_64 rng(59);
  const auto poses = grounded_poses(rng, 3);
  const FitTargets targets{noisy_targets(poses, rng), {}, {}, motion_of(random_poses(rng, 3, 0.2))};
  LocalFitOptions opts;
  opts.solver.max_iterations = 8;
  for (int term = 0; term < 3; ++term) {
    LossWeights zero = only(1, 0.5, 0.1, 0.1);
    LocalFitOptions removed = opts;
    if (term == 0) {
      zero.lambda_smooth = 0.0;
      removed.terms.smooth = false;
    } else if (term == 1) {
      zero.lambda_pen = 0.0;
      removed.terms.pen = false;
    } else {
      zero.lambda_phy = 0.0;
      removed.terms.phy = false;
    }
    const LocalFitResult a = fit_local(targets, zero, topo(), opts);
    const LocalFitResult b = fit_local(targets, only(1, 0.5, 0.1, 0.1), topo(), removed);
    REQUIRE(a.report.history.size() == b.report.history.size());
    for (std::size_t i = 0; i < a.report.history.size(); ++i) CHECK(a.report.history[i].total == b.report.history[i].total);
  }
}

TEST_CASE("weights and targets are validated") {
  CHECK_THROWS_AS(only(-1, 0, 0, 0).validate(), ConfigError);
  CHECK_THROWS_AS(only(1, std::nan(""), 0, 0).validate(), ConfigError);
  std::mt19937_64 rng(60);
  const MotionSequence m = motion_of(random_poses(rng, 2));
  const FitTargets mismatched{{}, {{}}, {}, m};
  CHECK_THROWS_AS(fit_local(mismatched, {}, topo()), StructuralError);
}
