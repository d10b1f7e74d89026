#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <tuple>

#include "support.h"
#include "wbm/captioner.h"
#include "wbm/errors.h"

using namespace wbm;
using wbm::test::random_vec;

namespace {

const SkeletonTopology& topo() { return default_topology(); }

double acos_angle(const Vec3& a, const Vec3& b) {
  const double c = std::clamp(a.dot(b) / (a.norm() * b.norm()), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

std::string band(double angle) {
  int hits = 0;
  std::string out;
  const std::tuple<double, double, bool, const char*> bands[] = {{160.0, 180.0, true, "straight"},
                                                                 {120.0, 160.0, false, "slightly_bent"},
                                                                 {80.0, 120.0, false, "bent"},
                                                                 {0.0, 80.0, false, "completely_bent"}};
  for (const auto& [lo, hi, closed, name] : bands) {
    if (angle >= lo && (closed ? angle <= hi : angle < hi)) {
      ++hits;
      out = name;
    }
  }
  return hits == 1 ? out : "";
}

using Key = std::tuple<std::string, std::string, std::string, std::string>;

std::multiset<Key> keys(const std::vector<Posecode>& codes) {
  std::multiset<Key> out;
  for (const auto& c : codes) out.insert({c.subject, to_string(c.kind), c.category, c.reference});
  return out;
}

std::string swap_side(const std::string& s) {
  if (s.rfind("left_", 0) == 0) return "right_" + s.substr(5);
  if (s.rfind("right_", 0) == 0) return "left_" + s.substr(6);
  return s;
}

JointPositions joints_of(const PoseState& p) { return forward_kinematics(topo(), default_shape(), p); }

PoseState random_body(std::mt19937_64& rng) {
  PoseState p = test::random_pose(rng, 0.6);
  return p;
}

// Rule-by-rule re-evaluation of the body rules written against the joint names.
std::vector<Posecode> oracle_body(const JointPositions& x) {
  auto at = [&](const char* n) -> Vec3 { return x.col(topo().joint_index(n)); };
  std::vector<Posecode> out;
  for (const char* side : {"left", "right"}) {
    const std::string s = side;
    for (const auto& [limb, a, b, c] : {std::tuple{"elbow", "shoulder", "elbow", "wrist"},
                                        std::tuple{"knee", "hip", "knee", "ankle"}}) {
      const Vec3 mid = at((s + "_" + b).c_str());
      const double angle = acos_angle(at((s + "_" + a).c_str()) - mid, at((s + "_" + c).c_str()) - mid);
      out.push_back({s + "_" + limb, PosecodeKind::kCurvature, band(angle), "", 0.0});
    }
  }
  const double width = (at("left_shoulder") - at("right_shoulder")).norm();
  for (const char* side : {"left", "right"}) {
    const std::string s = side;
    for (const char* ref : {"shoulder", "hip"}) {
      const bool above = at((s + "_wrist").c_str()).z() > at((s + "_" + ref).c_str()).z();
      out.push_back({s + "_hand", PosecodeKind::kVertical, above ? "above" : "below", s + "_" + ref, 0.0});
    }
  }
  const Vec3 shoulders = (at("left_shoulder") + at("right_shoulder")) / 2.0;
  const Vec3 hips = (at("left_hip") + at("right_hip")) / 2.0;
  // facing direction: torso up crossed with the right-to-left shoulder axis
  const Vec3 facing = (shoulders - hips).cross(at("left_shoulder") - at("right_shoulder"));
  for (const char* side : {"left", "right"}) {
    const std::string s = side;
    const bool front = (at((s + "_wrist").c_str()) - shoulders).dot(facing) > 0.0;
    out.push_back({s + "_hand", PosecodeKind::kDepth, front ? "in_front_of" : "behind", "torso", 0.0});
  }
  for (const auto& [subject, a, b] : {std::tuple{"hands", "left_wrist", "right_wrist"},
                                      std::tuple{"feet", "left_ankle", "right_ankle"}}) {
    const double r = (at(a) - at(b)).norm() / width;
    out.push_back({subject, PosecodeKind::kDistance, r < 0.6 ? "close" : r > 1.4 ? "wide" : "shoulder_width", "", 0.0});
  }
  const double pitch = acos_angle(shoulders - hips, Vec3::UnitZ());
  out.push_back({"torso", PosecodeKind::kTorso, pitch < 20 ? "upright" : pitch < 60 ? "leaning" : "horizontal", "", 0.0});
  return out;
}

CaptionInput mirrored(const CaptionInput& in) {
  const Vec3 m(-1.0, 1.0, 1.0);
  CaptionInput out = in;
  for (int j = 0; j < topo().num_joints(); ++j) {
    const int k = topo().joint_index(swap_side(topo().joint_name(j)));
    out.joints.col(j) = in.joints.col(k).cwiseProduct(m);
    out.joint_valid[j] = in.joint_valid[k];
  }
  for (int side = 0; side < 2; ++side) {
    for (int i = 0; i < 21; ++i) out.hands[side][i] = in.hands[1 - side][i].cwiseProduct(m);
    out.hand_valid[side] = in.hand_valid[1 - side];
  }
  return out;
}

TemplateTable first_variants_only() {
  nlohmann::json t = TemplateTable().table();
  for (auto& [kind, variants] : t["clauses"].items()) variants = nlohmann::json::array({variants[0]});
  return TemplateTable(t);
}

}  // namespace

TEST_CASE("finger angle") {
  CHECK(finger_angle({0, 0, 0}, {0, 0.1, 0}, {0, 0.05, 0}) == doctest::Approx(180.0));
  CHECK(finger_angle({0, 0, 0}, {0.1, 0, 0}, {0.1, 0.1, 0}) == doctest::Approx(90.0));
  std::mt19937_64 rng(81);
  for (int i = 0; i < 200; ++i) {
    const Vec3 w = random_vec(rng, 0.1), tip = random_vec(rng, 0.1), root = random_vec(rng, 0.1);
    CHECK(finger_angle(w, tip, root) == doctest::Approx(acos_angle(tip - w, root - tip)).epsilon(1e-9));
  }
  CHECK_THROWS_AS(finger_angle({0, 0, 0}, {0, 0, 0}, {1, 0, 0}), DegenerateGeometryError);
  CHECK_THROWS_AS(finger_angle({0, 0, 0}, {1, 0, 0}, {1, 0, 5e-7}), DegenerateGeometryError);
}

TEST_CASE("curvature bands") {
  CHECK(classify_finger_curvature(140.0) == "slightly_bent");
  CHECK(classify_finger_curvature(180.0) == "straight");
  CHECK(classify_finger_curvature(160.0) == "straight");
  CHECK(classify_finger_curvature(120.0) == "slightly_bent");
  CHECK(classify_finger_curvature(80.0) == "bent");
  CHECK(classify_finger_curvature(79.999) == "completely_bent");
  CHECK(classify_finger_curvature(0.0) == "completely_bent");
  CHECK_THROWS_AS(classify_finger_curvature(180.001), ValidationError);
  CHECK_THROWS_AS(classify_finger_curvature(-0.5), ValidationError);
  CHECK_THROWS_AS(classify_finger_curvature(std::nan("")), ValidationError);
  CHECK(curvature_margin(141.0) == doctest::Approx(19.0));
}

TEST_CASE("curvature partition is total on a fine grid") {
  int mismatches = 0;
  std::map<std::string, int> counts;
  for (long i = 0; i <= 180000; ++i) {
    const double a = static_cast<double>(i) / 1000.0;
    const std::string got = classify_finger_curvature(a);
    const std::string want = band(a);
    if (want.empty() || got != want) ++mismatches;
    ++counts[got];
  }
  CHECK(mismatches == 0);
  CHECK(counts.size() == 4);
  CHECK(counts["straight"] == 20001);
  CHECK(counts["completely_bent"] == 80000);
}

TEST_CASE("finger spread") {
  HandPoints hand{};
  for (int f = 0; f < 5; ++f) {
    for (int s = 0; s < 4; ++s) hand[1 + 4 * f + s] = Vec3(0.02 * f, 0.03 * (s + 1), 0.0);
  }
  // palm width is 0.06 between index and pinky roots
  for (int f = 0; f < 5; ++f) hand[4 + 4 * f] = Vec3(0.0, 0.12, 0.0);
  for (const auto& c : classify_finger_spread(hand)) CHECK(c == "close_together");
  for (int f = 0; f < 5; ++f) hand[4 + 4 * f] = Vec3(0.08 * f, 0.12, 0.0);
  for (const auto& c : classify_finger_spread(hand)) CHECK(c == "spread_apart");

  std::mt19937_64 rng(82);
  for (int trial = 0; trial < 200; ++trial) {
    HandPoints h{};
    for (auto& p : h) p = random_vec(rng, 0.05);
    const double palm = (h[5] - h[17]).norm();
    const auto got = classify_finger_spread(h);
    for (int f = 0; f < 4; ++f) {
      const double r = (h[4 + 4 * f] - h[8 + 4 * f]).norm() / palm;
      CHECK(got[f] == (r > 0.9 ? "spread_apart" : r < 0.4 ? "close_together" : "neutral"));
    }
  }
  HandPoints flat;
  flat.fill(Vec3::Zero());
  CHECK_THROWS_AS(finger_spread_ratios(flat), DegenerateGeometryError);
}

TEST_CASE("rest pose codes") {
  const CaptionInput in = caption_input_from_joints(joints_of(PoseState()), topo());
  const auto body = keys(body_posecodes(in, topo()));
  for (const char* s : {"left_knee", "right_knee", "left_elbow", "right_elbow"}) {
    CHECK(body.count({s, "curvature", "straight", ""}) == 1);
  }
  CHECK(body.count({"left_hand", "vertical", "below", "left_shoulder"}) == 1);
  CHECK(body.count({"right_hand", "vertical", "below", "right_shoulder"}) == 1);
  CHECK(body.count({"torso", "torso", "upright", ""}) == 1);
  for (const auto& c : hand_posecodes(in)) {
    if (c.kind == PosecodeKind::kCurvature) CHECK(c.category == "straight");
  }
}

TEST_CASE("knees at sixty degrees read as completely bent") {
  PoseState p;
  // flexing the knee by 120 degrees leaves 60 degrees between thigh and shin
  const double flex = 120.0 * std::numbers::pi / 180.0;
  p.joint_rotation(topo().joint_index("left_knee")) = Vec3(flex, 0.0, 0.0);
  p.joint_rotation(topo().joint_index("right_knee")) = Vec3(flex, 0.0, 0.0);
  const CaptionInput in = caption_input_from_joints(joints_of(p), topo());
  const auto codes = body_posecodes(in, topo());
  for (const auto& c : codes) {
    if (c.subject == "left_knee" || c.subject == "right_knee") {
      CHECK(c.category == "completely_bent");
      CHECK(c.margin == doctest::Approx(20.0).epsilon(1e-9));
    }
  }
  const PoseDescription d = aggregate_and_render(codes, {}, "", 0, first_variants_only());
  CHECK(d.text.find("both knees are completely bent") != std::string::npos);
  CHECK(d.text.find("left knee") == std::string::npos);
}

TEST_CASE("body codes agree with a rule-by-rule oracle") {
  std::mt19937_64 rng(83);
  for (int trial = 0; trial < 200; ++trial) {
    const JointPositions x = joints_of(random_body(rng));
    CHECK(keys(body_posecodes(caption_input_from_joints(x, topo()), topo())) == keys(oracle_body(x)));
  }
}

TEST_CASE("codes are scale invariant and mirror consistent") {
  std::mt19937_64 rng(84);
  std::uniform_real_distribution<double> scale(0.2, 5.0);
  for (int trial = 0; trial < 500; ++trial) {
    const JointPositions x = joints_of(random_body(rng));
    const CaptionInput in = caption_input_from_joints(x, topo());
    const auto body = body_posecodes(in, topo());
    const auto hands = hand_posecodes(in);

    const Vec3 root = x.col(0);
    const double s = scale(rng);
    JointPositions scaled = x;
    for (int j = 0; j < x.cols(); ++j) scaled.col(j) = root + s * (x.col(j) - root);
    const CaptionInput sin = caption_input_from_joints(scaled, topo());
    CHECK(keys(body_posecodes(sin, topo())) == keys(body));
    CHECK(keys(hand_posecodes(sin)) == keys(hands));

    const CaptionInput m = mirrored(in);
    auto swapped = [](std::vector<Posecode> codes) {
      for (auto& c : codes) {
        c.subject = swap_side(c.subject);
        c.reference = swap_side(c.reference);
      }
      return keys(codes);
    };
    CHECK(keys(body_posecodes(m, topo())) == swapped(body));
    CHECK(keys(hand_posecodes(m)) == swapped(hands));
  }
}

TEST_CASE("aggregation and rendering") {
  CHECK(aggregate_and_render({}, {}, "happy", 0).text == "the person looks happy.");
  CHECK(aggregate_and_render({}, {}, "", 0).text.empty());

  const Posecode lk{"left_knee", PosecodeKind::kCurvature, "bent", "", 10.0};
  const Posecode rk{"right_knee", PosecodeKind::kCurvature, "bent", "", 5.0};
  const Posecode edge{"torso", PosecodeKind::kTorso, "leaning", "", 1.0};
  const Posecode neutral{"left_index_middle", PosecodeKind::kSpread, "neutral", "", 0.3};
  const PoseDescription d = aggregate_and_render({lk, lk, rk, edge}, {neutral}, "calm", 0, first_variants_only());
  REQUIRE(d.body_codes.size() == 1);
  CHECK(d.body_codes[0].subject == "both_knee");
  CHECK(d.body_codes[0].margin == 5.0);
  CHECK(d.hand_codes.empty());
  CHECK(d.text == "the person looks calm. both knees are bent.");

  const Posecode lh{"left_hand", PosecodeKind::kVertical, "above", "left_shoulder", 0.5};
  const Posecode rh{"right_hand", PosecodeKind::kVertical, "above", "right_shoulder", 0.5};
  const Posecode spread{"right_index_middle", PosecodeKind::kSpread, "spread_apart", "", 0.2};
  const PoseDescription e = aggregate_and_render({lh, rh}, {spread}, "", 0, first_variants_only());
  CHECK(e.text == "both hands are above the shoulders. the right index finger and middle finger are spread apart.");

  AggregationOptions loose;
  loose.angle_margin = 0.5;
  CHECK(aggregate_and_render({edge}, {}, "", 0, TemplateTable(), loose).body_codes.size() == 1);
  CHECK_THROWS_AS(TemplateTable(nlohmann::json{{"face", nlohmann::json::array()}}), ConfigError);
}

TEST_CASE("rendering is deterministic in the seed") {
  std::mt19937_64 rng(85);
  const CaptionInput in = caption_input_from_joints(joints_of(random_body(rng)), topo());
  const auto body = body_posecodes(in, topo());
  const auto hands = hand_posecodes(in);
  const std::string a = aggregate_and_render(body, hands, "sad", 0).text;
  CHECK(a == aggregate_and_render(body, hands, "sad", 0).text);
  std::set<std::string> variants;
  for (std::uint64_t seed = 0; seed < 16; ++seed) variants.insert(aggregate_and_render(body, hands, "sad", seed).text);
  CHECK(variants.size() > 1);
}

TEST_CASE("caption_sequence strides and labels") {
  const MotionSequence constant(30.0, std::vector<PoseState>(10, PoseState()), default_shape());
  CaptionOptions opts;
  opts.stride = 10;
  CHECK(caption_sequence(constant, {}, topo(), opts).size() == 1);
  opts.stride = 3;
  const auto d = caption_sequence(constant, std::vector<std::string>(10, "calm"), topo(), opts);
  REQUIRE(d.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(d[i].frame == 3 * i);
    CHECK(d[i].text == d[0].text);
    CHECK(d[i].emotion == "calm");
  }
  CHECK(d[0].to_json()["text"] == d[0].text);
  CHECK_THROWS_AS(caption_sequence(constant, {"calm"}, topo(), opts), ValidationError);
  opts.stride = 0;
  CHECK_THROWS_AS(caption_sequence(constant, {}, topo(), opts), ValidationError);

  // keypoint input: frame ids come from the records, zero scores drop rules
  std::vector<KeypointFrame3D> frames;
  for (int t = 0; t < 3; ++t) frames.push_back(test::exact_keypoints3d(PoseState(), 5 + t));
  frames[1].scores[topo().joint_keypoint(topo().joint_index("left_knee"))] = 0.0;
  const auto k = caption_sequence(frames, {}, topo());
  REQUIRE(k.size() == 3);
  CHECK(k[2].frame == 7);
  const auto has_left_knee = [](const PoseDescription& p) {
    return std::any_of(p.body_codes.begin(), p.body_codes.end(),
                       [](const Posecode& c) { return c.subject.find("knee") != std::string::npos && c.subject != "right_knee"; });
  };
  CHECK(has_left_knee(k[0]));
  CHECK(std::none_of(k[1].body_codes.begin(), k[1].body_codes.end(),
                     [](const Posecode& c) { return c.subject == "left_knee" || c.subject == "both_knee"; }));
}
