#include "wbm/captioner.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>

#include "wbm/errors.h"

namespace wbm {

extern const char* const kTemplatesJson;

namespace {

constexpr const char* kFingers[5] = {"thumb", "index", "middle", "ring", "pinky"};
constexpr int kLeftHandBase = 91;
constexpr int kRightHandBase = 112;

double degrees_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b)) * 180.0 / std::numbers::pi;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

const char* to_string(PosecodeKind kind) {
  switch (kind) {
    case PosecodeKind::kCurvature: return "curvature";
    case PosecodeKind::kVertical: return "vertical";
    case PosecodeKind::kDepth: return "depth";
    case PosecodeKind::kDistance: return "distance";
    case PosecodeKind::kSpread: return "spread";
    case PosecodeKind::kTorso: return "torso";
  }
  return "unknown";
}

nlohmann::json posecode_to_json(const Posecode& code) {
  nlohmann::json j{{"subject", code.subject}, {"kind", to_string(code.kind)}, {"category", code.category},
                   {"margin", code.margin}};
  if (!code.reference.empty()) j["reference"] = code.reference;
  return j;
}

double finger_angle(const Vec3& wrist, const Vec3& fingertip, const Vec3& finger_root) {
  if ((wrist - fingertip).norm() <= 1e-6 || (wrist - finger_root).norm() <= 1e-6 ||
      (fingertip - finger_root).norm() <= 1e-6) {
    throw DegenerateGeometryError("finger angle needs three distinct points");
  }
  return degrees_between(fingertip - wrist, finger_root - fingertip);
}

std::string classify_finger_curvature(double angle) {
  if (!(angle >= 0.0 && angle <= 180.0)) throw ValidationError("curvature angle outside [0, 180] degrees");
  if (angle >= 160.0) return "straight";
  if (angle >= 120.0) return "slightly_bent";
  if (angle >= 80.0) return "bent";
  return "completely_bent";
}

double curvature_margin(double angle) {
  return std::min({std::abs(angle - 160.0), std::abs(angle - 120.0), std::abs(angle - 80.0)});
}

std::array<double, 4> finger_spread_ratios(const HandPoints& hand) {
  const double palm = (hand[5] - hand[17]).norm();
  if (!(palm > 1e-9)) throw DegenerateGeometryError("palm width is zero");
  std::array<double, 4> out{};
  for (int f = 0; f < 4; ++f) out[f] = (hand[4 * f + 4] - hand[4 * f + 8]).norm() / palm;
  return out;
}

std::array<std::string, 4> classify_finger_spread(const HandPoints& hand) {
  const auto ratios = finger_spread_ratios(hand);
  std::array<std::string, 4> out;
  for (int f = 0; f < 4; ++f) {
    out[f] = ratios[f] > kSpreadApart ? "spread_apart" : ratios[f] < kCloseTogether ? "close_together" : "neutral";
  }
  return out;
}

CaptionInput caption_input_from_joints(const JointPositions& joints, const SkeletonTopology& topology) {
  if (joints.cols() != topology.num_joints()) throw StructuralError("joint count does not match the topology");
  CaptionInput in;
  in.joints = joints;
  in.joint_valid.assign(topology.num_joints(), true);
  for (int side = 0; side < 2; ++side) {
    const std::string prefix = side == 0 ? "left_" : "right_";
    HandPoints& hand = in.hands[side];
    hand[0] = joints.col(topology.joint_index(prefix + "wrist"));
    for (int f = 0; f < 5; ++f) {
      for (int seg = 0; seg < 3; ++seg) {
        hand[4 * f + 1 + seg] = joints.col(topology.joint_index(prefix + kFingers[f] + std::to_string(seg + 1)));
      }
      hand[4 * f + 4] = hand[4 * f + 3];
    }
    in.hand_valid[side] = true;
  }
  return in;
}

CaptionInput caption_input_from_keypoints(const KeypointFrame3D& frame, const SkeletonTopology& topology) {
  CaptionInput in;
  in.joints = JointPositions::Zero(3, topology.num_joints());
  in.joint_valid.assign(topology.num_joints(), false);
  for (int j = 0; j < topology.num_joints(); ++j) {
    if (!topology.is_observed(j)) continue;
    const int k = topology.joint_keypoint(j);
    in.joints.col(j) = frame.points[k];
    in.joint_valid[j] = frame.scores[k] > 0.0;
  }
  for (int side = 0; side < 2; ++side) {
    const int base = side == 0 ? kLeftHandBase : kRightHandBase;
    bool valid = true;
    for (int i = 0; i < 21; ++i) {
      in.hands[side][i] = frame.points[base + i];
      valid = valid && frame.scores[base + i] > 0.0;
    }
    in.hand_valid[side] = valid;
  }
  return in;
}

std::vector<Posecode> body_posecodes(const CaptionInput& in, const SkeletonTopology& topology) {
  std::vector<Posecode> codes;
  auto id = [&](const char* name) { return topology.find_joint(name).value_or(-1); };
  auto ok = [&](std::initializer_list<int> joints) {
    for (int j : joints) {
      if (j < 0 || !in.joint_valid[j]) return false;
    }
    return true;
  };
  auto at = [&](int j) -> Vec3 { return in.joints.col(j); };

  // Elbow and knee bend.
  const std::pair<const char*, std::array<const char*, 3>> limbs[] = {
      {"left_elbow", {"left_shoulder", "left_elbow", "left_wrist"}},
      {"right_elbow", {"right_shoulder", "right_elbow", "right_wrist"}},
      {"left_knee", {"left_hip", "left_knee", "left_ankle"}},
      {"right_knee", {"right_hip", "right_knee", "right_ankle"}},
  };
  for (const auto& [subject, chain] : limbs) {
    const int a = id(chain[0]), b = id(chain[1]), c = id(chain[2]);
    if (!ok({a, b, c})) continue;
    const Vec3 u = at(a) - at(b);
    const Vec3 v = at(c) - at(b);
    if (u.norm() < 1e-9 || v.norm() < 1e-9) continue;
    const double angle = degrees_between(u, v);
    codes.push_back({subject, PosecodeKind::kCurvature, classify_finger_curvature(angle), "", curvature_margin(angle)});
  }

  const int ls = id("left_shoulder"), rs = id("right_shoulder");
  const int lh = id("left_hip"), rh = id("right_hip");
  if (!ok({ls, rs})) return codes;
  const double width = (at(ls) - at(rs)).norm();
  if (!(width > 1e-9)) return codes;
  const Vec3 mid_shoulder = 0.5 * (at(ls) + at(rs));

  // Hands relative to shoulders and hips.
  for (int side = 0; side < 2; ++side) {
    const std::string s = side == 0 ? "left_" : "right_";
    const int w = id((s + "wrist").c_str());
    if (!ok({w})) continue;
    for (const char* ref : {"shoulder", "hip"}) {
      const int r = id((s + ref).c_str());
      if (!ok({r})) continue;
      const double dz = (at(w).z() - at(r).z()) / width;
      codes.push_back({s + "hand", PosecodeKind::kVertical, dz > 0.0 ? "above" : "below", s + ref, std::abs(dz)});
    }
  }

  // Hands in front of or behind the torso plane.
  if (ok({lh, rh})) {
    const Vec3 up = mid_shoulder - 0.5 * (at(lh) + at(rh));
    const Vec3 forward = up.cross(at(ls) - at(rs));
    if (forward.norm() > 1e-12) {
      const Vec3 n = forward.normalized();
      for (int side = 0; side < 2; ++side) {
        const std::string s = side == 0 ? "left_" : "right_";
        const int w = id((s + "wrist").c_str());
        if (!ok({w})) continue;
        const double d = (at(w) - mid_shoulder).dot(n) / width;
        codes.push_back({s + "hand", PosecodeKind::kDepth, d > 0.0 ? "in_front_of" : "behind", "torso", std::abs(d)});
      }
    }
  }

  // Distances between wrists and between ankles.
  const std::pair<const char*, std::array<const char*, 2>> spans[] = {{"hands", {"left_wrist", "right_wrist"}},
                                                                       {"feet", {"left_ankle", "right_ankle"}}};
  for (const auto& [subject, ends] : spans) {
    const int a = id(ends[0]), b = id(ends[1]);
    if (!ok({a, b})) continue;
    const double ratio = (at(a) - at(b)).norm() / width;
    const char* category = ratio < 0.6 ? "close" : ratio <= 1.4 ? "shoulder_width" : "wide";
    codes.push_back({subject, PosecodeKind::kDistance, category, "",
                     std::min(std::abs(ratio - 0.6), std::abs(ratio - 1.4))});
  }

  // Torso pitch against vertical.
  if (ok({lh, rh})) {
    const Vec3 up = mid_shoulder - 0.5 * (at(lh) + at(rh));
    if (up.norm() > 1e-9) {
      const double pitch = degrees_between(up, Vec3::UnitZ());
      const char* category = pitch < 20.0 ? "upright" : pitch < 60.0 ? "leaning" : "horizontal";
      codes.push_back({"torso", PosecodeKind::kTorso, category, "",
                       std::min(std::abs(pitch - 20.0), std::abs(pitch - 60.0))});
    }
  }
  return codes;
}

std::vector<Posecode> hand_posecodes(const CaptionInput& in) {
  std::vector<Posecode> codes;
  for (int side = 0; side < 2; ++side) {
    if (!in.hand_valid[side]) continue;
    const std::string s = side == 0 ? "left_" : "right_";
    const HandPoints& hand = in.hands[side];
    for (int f = 0; f < 5; ++f) {
      try {
        const double angle = finger_angle(hand[0], hand[4 * f + 4], hand[4 * f + 1]);
        codes.push_back({s + kFingers[f], PosecodeKind::kCurvature, classify_finger_curvature(angle), "",
                         curvature_margin(angle)});
      } catch (const DegenerateGeometryError&) {
        // finger collapsed onto the wrist: no curvature code
      }
    }
    std::array<double, 4> ratios{};
    try {
      ratios = finger_spread_ratios(hand);
    } catch (const DegenerateGeometryError&) {
      continue;
    }
    for (int f = 0; f < 4; ++f) {
      const double r = ratios[f];
      const char* category = r > kSpreadApart ? "spread_apart" : r < kCloseTogether ? "close_together" : "neutral";
      codes.push_back({s + kFingers[f] + "_" + kFingers[f + 1], PosecodeKind::kSpread, category, "",
                       std::min(std::abs(r - kSpreadApart), std::abs(r - kCloseTogether))});
    }
  }
  return codes;
}

nlohmann::json PoseDescription::to_json() const {
  nlohmann::json codes = nlohmann::json::array();
  for (const auto& c : body_codes) codes.push_back(posecode_to_json(c));
  for (const auto& c : hand_codes) codes.push_back(posecode_to_json(c));
  nlohmann::json j{{"frame", frame}, {"codes", codes}, {"text", text}};
  if (!emotion.empty()) j["emotion"] = emotion;
  return j;
}

TemplateTable::TemplateTable() : table_(nlohmann::json::parse(kTemplatesJson)) {}

TemplateTable::TemplateTable(const nlohmann::json& table) : table_(table) {
  for (const char* key : {"face", "clauses", "categories", "parts", "and"}) {
    if (!table_.contains(key)) throw ConfigError(std::string("template table lacks '") + key + "'");
  }
}

TemplateTable TemplateTable::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open template table " + path);
  try {
    return TemplateTable(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("template table " + path + ": " + e.what());
  }
}

namespace {

std::string side_of(const std::string& s) {
  if (starts_with(s, "left_")) return "left";
  if (starts_with(s, "right_")) return "right";
  if (starts_with(s, "both_")) return "both";
  return "";
}

std::string strip_side(const std::string& s) {
  const std::string side = side_of(s);
  return side.empty() ? s : s.substr(side.size() + 1);
}

bool is_angle_kind(PosecodeKind k) { return k == PosecodeKind::kCurvature || k == PosecodeKind::kTorso; }

std::vector<Posecode> aggregate(const std::vector<Posecode>& input, const AggregationOptions& options) {
  std::vector<Posecode> codes;
  for (const auto& c : input) {
    if (c.category == "neutral") continue;
    const double eps = is_angle_kind(c.kind) ? options.angle_margin : options.ratio_margin;
    if (c.margin < eps) continue;
    const bool seen = std::any_of(codes.begin(), codes.end(), [&](const Posecode& o) {
      return o.subject == c.subject && o.kind == c.kind && o.category == c.category && o.reference == c.reference;
    });
    if (!seen) codes.push_back(c);
  }
  std::vector<Posecode> out;
  std::vector<bool> used(codes.size(), false);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (used[i]) continue;
    Posecode c = codes[i];
    if (side_of(c.subject) == "left" || side_of(c.subject) == "right") {
      for (std::size_t k = i + 1; k < codes.size(); ++k) {
        const Posecode& o = codes[k];
        if (used[k] || o.kind != c.kind || o.category != c.category) continue;
        const std::string s1 = side_of(c.subject), s2 = side_of(o.subject);
        if (s1 == s2 || s2.empty() || strip_side(o.subject) != strip_side(c.subject)) continue;
        if (strip_side(o.reference) != strip_side(c.reference)) continue;
        used[k] = true;
        c.subject = "both_" + strip_side(c.subject);
        if (!side_of(c.reference).empty()) c.reference = "both_" + strip_side(c.reference);
        c.margin = std::min(c.margin, o.margin);
        break;
      }
    }
    out.push_back(c);
  }
  return out;
}

class Renderer {
 public:
  Renderer(const nlohmann::json& table, std::uint64_t seed) : t_(table), rng_(seed) {}

  std::string pick(const nlohmann::json& variants) {
    if (!variants.is_array() || variants.empty()) throw ConfigError("template variants must be a non-empty array");
    const std::size_t n = variants.size();
    return variants[rng_() % n].get<std::string>();
  }

  std::string noun(const std::string& part, bool plural) const {
    const auto& parts = t_.at("parts");
    if (!parts.contains(part)) return part;
    return parts.at(part).at(plural ? 1 : 0).get<std::string>();
  }

  // Returns the phrase and whether it is plural.
  std::pair<std::string, bool> subject(const std::string& id) const {
    const std::string side = side_of(id);
    const std::string base = strip_side(id);
    const auto split = base.find('_');
    if (split != std::string::npos) {
      // adjacent-finger pair, e.g. "index_middle"
      const std::string a = base.substr(0, split), b = base.substr(split + 1);
      const std::string pair = noun(a, false) + " " + t_.at("and").get<std::string>() + " " + noun(b, false);
      if (side == "both") return {"the " + pair + " of both hands", true};
      return {"the " + (side.empty() ? "" : side + " ") + pair, true};
    }
    if (side == "both") return {"both " + noun(base, true), true};
    if (side.empty()) {
      const bool plural = base == "hands" || base == "feet";
      const std::string part = base == "hands" ? "hand" : base == "feet" ? "foot" : base;
      return {"the " + noun(part, plural), plural};
    }
    return {"the " + side + " " + noun(base, false), false};
  }

  std::string reference(const std::string& id) const {
    const std::string side = side_of(id);
    const std::string base = strip_side(id);
    if (side == "both") return "the " + noun(base, true);
    return "the " + (side.empty() ? "" : side + " ") + noun(base, false);
  }

  std::string clause(const Posecode& c) {
    std::string text = pick(t_.at("clauses").at(to_string(c.kind)));
    const auto [subj, plural] = subject(c.subject);
    const auto& cats = t_.at("categories");
    const std::string category = cats.contains(c.category) ? cats.at(c.category).get<std::string>() : c.category;
    replace(text, "{subject}", subj);
    replace(text, "{be}", plural ? "are" : "is");
    replace(text, "{category}", category);
    replace(text, "{reference}", c.reference.empty() ? "" : reference(c.reference));
    return text;
  }

  std::string sentence(const std::vector<Posecode>& codes) {
    std::vector<std::string> clauses;
    for (const auto& c : codes) clauses.push_back(clause(c));
    if (clauses.empty()) return "";
    std::string out = clauses[0];
    for (std::size_t i = 1; i < clauses.size(); ++i) {
      out += (i + 1 == clauses.size() ? " " + t_.at("and").get<std::string>() + " " : ", ") + clauses[i];
    }
    return out + ".";
  }

  static void replace(std::string& s, const std::string& key, const std::string& value) {
    for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size())) {
      s.replace(pos, key.size(), value);
    }
  }

 private:
  const nlohmann::json& t_;
  std::mt19937_64 rng_;
};

}  // namespace

PoseDescription aggregate_and_render(const std::vector<Posecode>& body_codes, const std::vector<Posecode>& hand_codes,
                                     const std::string& emotion, std::uint64_t template_seed,
                                     const TemplateTable& templates, const AggregationOptions& options) {
  PoseDescription d;
  d.emotion = emotion;
  d.body_codes = aggregate(body_codes, options);
  d.hand_codes = aggregate(hand_codes, options);
  Renderer render(templates.table(), template_seed);
  std::vector<std::string> sentences;
  if (!emotion.empty()) {
    std::string face = render.pick(templates.table().at("face"));
    Renderer::replace(face, "{emotion}", emotion);
    sentences.push_back(face);
  }
  for (const auto* group : {&d.body_codes, &d.hand_codes}) {
    const std::string s = render.sentence(*group);
    if (!s.empty()) sentences.push_back(s);
  }
  for (std::size_t i = 0; i < sentences.size(); ++i) d.text += (i ? " " : "") + sentences[i];
  return d;
}

namespace {

std::vector<PoseDescription> caption_frames(std::size_t n, const std::vector<std::string>& emotions,
                                            const CaptionOptions& options, const TemplateTable& templates,
                                            const std::function<std::pair<int, CaptionInput>(std::size_t)>& input,
                                            const SkeletonTopology& topology) {
  if (options.stride < 1) throw ValidationError("caption stride must be >= 1");
  if (!emotions.empty() && emotions.size() != n) {
    throw ValidationError("got " + std::to_string(emotions.size()) + " emotion labels for " + std::to_string(n) +
                          " frames");
  }
  std::vector<PoseDescription> out;
  for (std::size_t t = 0; t < n; t += static_cast<std::size_t>(options.stride)) {
    const auto [frame, in] = input(t);
    PoseDescription d = aggregate_and_render(body_posecodes(in, topology), hand_posecodes(in),
                                             emotions.empty() ? "" : emotions[t], options.template_seed, templates,
                                             options.aggregation);
    d.frame = frame;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace

std::vector<PoseDescription> caption_sequence(const MotionSequence& motion, const std::vector<std::string>& emotions,
                                              const SkeletonTopology& topology, const CaptionOptions& options,
                                              const TemplateTable& templates) {
  check_dimensions(topology, motion.shape());
  return caption_frames(
      motion.size(), emotions, options, templates,
      [&](std::size_t t) {
        return std::make_pair(static_cast<int>(t), caption_input_from_joints(
                                                        forward_kinematics(topology, motion.shape(), motion.frame(t)),
                                                        topology));
      },
      topology);
}

std::vector<PoseDescription> caption_sequence(const std::vector<KeypointFrame3D>& frames,
                                              const std::vector<std::string>& emotions,
                                              const SkeletonTopology& topology, const CaptionOptions& options,
                                              const TemplateTable& templates) {
  return caption_frames(
      frames.size(), emotions, options, templates,
      [&](std::size_t t) { return std::make_pair(frames[t].frame, caption_input_from_keypoints(frames[t], topology)); },
      topology);
}

}  // namespace wbm
