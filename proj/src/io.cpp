#include "wbm/io.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "wbm/errors.h"

namespace wbm {

namespace {

using nlohmann::json;

struct Line {
  std::size_t number;
  std::string text;
};

std::vector<Line> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::vector<Line> lines;
  std::string text;
  std::size_t n = 0;
  while (std::getline(in, text)) {
    ++n;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back({n, std::move(text)});
  }
  return lines;
}

json parse_line(const Line& line) {
  try {
    json j = json::parse(line.text);
    if (!j.is_object()) throw SchemaError("expected a JSON object", line.number);
    return j;
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), line.number);
  }
}

const json& field(const json& j, const char* key, std::size_t line) {
  const auto it = j.find(key);
  if (it == j.end()) throw SchemaError(std::string("missing field '") + key + "'", line);
  return *it;
}

double number(const json& v, const std::string& what, std::size_t line) {
  if (!v.is_number()) throw SchemaError(what + " must be a number", line);
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw RangeError(what + " must be finite", line);
  return d;
}

int integer(const json& v, const std::string& what, std::size_t line) {
  if (!v.is_number_integer()) throw SchemaError(what + " must be an integer", line);
  return v.get<int>();
}

std::string string_field(const json& v, const std::string& what, std::size_t line) {
  if (!v.is_string()) throw SchemaError(what + " must be a string", line);
  return v.get<std::string>();
}

template <int N>
Eigen::Matrix<double, N, 1> vector_field(const json& v, const std::string& what, std::size_t line) {
  if (!v.is_array() || v.size() != N) {
    throw SchemaError(what + " must be an array of " + std::to_string(N) + " numbers", line);
  }
  Eigen::Matrix<double, N, 1> out;
  for (int i = 0; i < N; ++i) out[i] = number(v[i], what, line);
  return out;
}

const json& sized_array(const json& v, std::size_t expected, const std::string& what, std::size_t line) {
  if (!v.is_array()) throw SchemaError(what + " must be an array", line);
  if (v.size() != expected) {
    throw SchemaError(what + ": expected " + std::to_string(expected) + " entries, got " + std::to_string(v.size()),
                      line);
  }
  return v;
}

json unknown_fields(const json& j, std::initializer_list<const char*> known, ParseMode mode, std::size_t line) {
  json extra = json::object();
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool is_known = false;
    for (const char* k : known) is_known = is_known || it.key() == k;
    if (is_known) continue;
    if (mode == ParseMode::kStrict) throw UnknownFieldError("unknown field '" + it.key() + "'", line);
    extra[it.key()] = it.value();
  }
  return extra;
}

template <typename Frame, int D>
void parse_points(const json& j, Frame& out, std::size_t line) {
  const json& pts = sized_array(field(j, "points", line), kNumKeypoints, "points", line);
  const json& scores = sized_array(field(j, "scores", line), kNumKeypoints, "scores", line);
  for (int k = 0; k < kNumKeypoints; ++k) {
    out.points[k] = vector_field<D>(pts[k], "points[" + std::to_string(k) + "]", line);
    const double s = number(scores[k], "scores[" + std::to_string(k) + "]", line);
    if (!(s >= 0.0 && s <= 1.0)) {
      std::ostringstream msg;
      msg << "scores[" << k << "] = " << s << " is outside [0, 1]";
      throw RangeError(msg.str(), line);
    }
    out.scores[k] = s;
  }
}

template <typename Frame>
json points_json(const Frame& f) {
  json pts = json::array();
  json scores = json::array();
  for (int k = 0; k < kNumKeypoints; ++k) {
    json p = json::array();
    for (Eigen::Index i = 0; i < f.points[k].size(); ++i) p.push_back(f.points[k][i]);
    pts.push_back(std::move(p));
    scores.push_back(f.scores[k]);
  }
  json j = json::object();
  j["points"] = std::move(pts);
  j["scores"] = std::move(scores);
  return j;
}

json vec_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!out) throw Error("failed writing " + path);
}

}  // namespace

json keypoint_frame_to_json(const KeypointFrame2D& frame) {
  json j = frame.extra.is_object() ? frame.extra : json::object();
  j["frame"] = frame.frame;
  j["view"] = frame.view;
  json p = points_json(frame);
  j["points"] = std::move(p["points"]);
  j["scores"] = std::move(p["scores"]);
  return j;
}

json keypoint_frame_to_json(const KeypointFrame3D& frame) {
  json j = frame.extra.is_object() ? frame.extra : json::object();
  j["frame"] = frame.frame;
  json p = points_json(frame);
  j["points"] = std::move(p["points"]);
  j["scores"] = std::move(p["scores"]);
  return j;
}

KeypointFrame2D keypoint_frame2d_from_json(const json& j, ParseMode mode, std::size_t line) {
  KeypointFrame2D f;
  f.frame = integer(field(j, "frame", line), "frame", line);
  f.view = string_field(field(j, "view", line), "view", line);
  parse_points<KeypointFrame2D, 2>(j, f, line);
  f.extra = unknown_fields(j, {"frame", "view", "points", "scores"}, mode, line);
  return f;
}

KeypointFrame3D keypoint_frame3d_from_json(const json& j, ParseMode mode, std::size_t line) {
  KeypointFrame3D f;
  f.frame = integer(field(j, "frame", line), "frame", line);
  parse_points<KeypointFrame3D, 3>(j, f, line);
  f.extra = unknown_fields(j, {"frame", "points", "scores"}, mode, line);
  return f;
}

std::vector<ViewKeypoints> read_keypoints2d(const std::string& path, ParseMode mode) {
  std::vector<ViewKeypoints> views;
  for (const Line& line : read_lines(path)) {
    KeypointFrame2D f = keypoint_frame2d_from_json(parse_line(line), mode, line.number);
    auto it = std::find_if(views.begin(), views.end(), [&](const ViewKeypoints& v) { return v.view == f.view; });
    if (it == views.end()) {
      views.push_back({f.view, {}});
      it = views.end() - 1;
    }
    it->frames.push_back(std::move(f));
  }
  return views;
}

std::vector<KeypointFrame3D> read_keypoints3d(const std::string& path, ParseMode mode) {
  std::vector<KeypointFrame3D> frames;
  for (const Line& line : read_lines(path)) frames.push_back(keypoint_frame3d_from_json(parse_line(line), mode, line.number));
  return frames;
}

void write_keypoints2d(const std::string& path, const std::vector<ViewKeypoints>& views) {
  std::vector<json> lines;
  std::size_t n = 0;
  for (const auto& v : views) n = std::max(n, v.frames.size());
  // frame-major so that a frame's views sit next to each other
  for (std::size_t t = 0; t < n; ++t) {
    for (const auto& v : views) {
      if (t < v.frames.size()) lines.push_back(keypoint_frame_to_json(v.frames[t]));
    }
  }
  write_json_lines(path, lines);
}

void write_keypoints3d(const std::string& path, const std::vector<KeypointFrame3D>& frames) {
  std::vector<json> lines;
  for (const auto& f : frames) lines.push_back(keypoint_frame_to_json(f));
  write_json_lines(path, lines);
}

MotionSequence read_motion(const std::string& path, const SkeletonTopology& topology, ParseMode mode) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw SchemaError("pose file is empty", 0);
  const json header = parse_line(lines[0]);
  const std::size_t hl = lines[0].number;
  if (string_field(field(header, "type", hl), "type", hl) != "header") {
    throw SchemaError("first line must be the header object", hl);
  }
  unknown_fields(header, {"type", "topology", "fps", "bone_lengths"}, mode, hl);
  const std::string topo = string_field(field(header, "topology", hl), "topology", hl);
  if (topo != topology.name()) {
    throw SchemaError("pose file uses topology '" + topo + "', expected '" + topology.name() + "'", hl);
  }
  const double fps = number(field(header, "fps", hl), "fps", hl);
  if (!(fps > 0.0)) throw RangeError("fps must be positive", hl);
  SkeletonShape shape = [&] {
    try {
      return shape_from_json(topology, field(header, "bone_lengths", hl));
    } catch (const FormatError&) {
      throw;
    } catch (const Error& e) {
      throw SchemaError(e.what(), hl);
    }
  }();

  std::vector<PoseState> frames;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t ln = lines[i].number;
    const json j = parse_line(lines[i]);
    unknown_fields(j, {"frame", "theta_body", "theta_hands", "theta_jaw", "psi", "r"}, mode, ln);
    const int frame = integer(field(j, "frame", ln), "frame", ln);
    if (frame != static_cast<int>(frames.size())) {
      throw SchemaError("expected frame " + std::to_string(frames.size()) + ", got " + std::to_string(frame), ln);
    }
    PoseState p;
    const json& body = sized_array(field(j, "theta_body", ln), kNumBodyJoints, "theta_body", ln);
    for (int k = 0; k < kNumBodyJoints; ++k) p.theta_body[k] = vector_field<3>(body[k], "theta_body", ln);
    const json& hands = sized_array(field(j, "theta_hands", ln), kNumHandJoints, "theta_hands", ln);
    for (int k = 0; k < kNumHandJoints; ++k) p.theta_hands[k] = vector_field<3>(hands[k], "theta_hands", ln);
    p.theta_jaw = vector_field<3>(field(j, "theta_jaw", ln), "theta_jaw", ln);
    const json& psi = sized_array(field(j, "psi", ln), kNumExpressionCoeffs, "psi", ln);
    for (int k = 0; k < kNumExpressionCoeffs; ++k) p.psi[k] = number(psi[k], "psi", ln);
    p.r = vector_field<3>(field(j, "r", ln), "r", ln);
    frames.push_back(p);
  }
  if (frames.empty()) throw SchemaError("pose file has no frames", 0);
  return MotionSequence(fps, std::move(frames), std::move(shape));
}

void write_motion(const std::string& path, const MotionSequence& motion, const SkeletonTopology& topology) {
  std::vector<json> lines;
  lines.push_back({{"type", "header"},
                   {"topology", topology.name()},
                   {"fps", motion.fps()},
                   {"bone_lengths", shape_to_json(topology, motion.shape())}});
  for (std::size_t t = 0; t < motion.size(); ++t) {
    const PoseState& p = motion.frame(t);
    json body = json::array();
    for (const auto& v : p.theta_body) body.push_back(vec_json(v));
    json hands = json::array();
    for (const auto& v : p.theta_hands) hands.push_back(vec_json(v));
    json j;
    j["frame"] = t;
    j["theta_body"] = std::move(body);
    j["theta_hands"] = std::move(hands);
    j["theta_jaw"] = vec_json(p.theta_jaw);
    j["psi"] = p.psi;
    j["r"] = vec_json(p.r);
    lines.push_back(std::move(j));
  }
  write_json_lines(path, lines);
}

CameraFile read_cameras(const std::string& path, ParseMode mode) {
  const json j = read_json_file(path);
  if (!j.is_object()) throw SchemaError("camera file must hold an object", 0);
  unknown_fields(j, {"cameras", "per_frame"}, mode, 0);
  auto parse_list = [&](const json& list, const char* what) {
    if (!list.is_array()) throw SchemaError(std::string(what) + " must be an array", 0);
    std::vector<CameraModel> out;
    for (std::size_t i = 0; i < list.size(); ++i) {
      try {
        if (mode == ParseMode::kStrict && list[i].is_object()) {
          unknown_fields(list[i], {"name", "fx", "fy", "cx", "cy", "rotation", "translation"}, mode, 0);
        }
        out.push_back(camera_from_json(list[i]));
      } catch (const FormatError&) {
        throw;
      } catch (const Error& e) {
        throw SchemaError(std::string(what) + "[" + std::to_string(i) + "]: " + e.what(), 0);
      }
    }
    return out;
  };
  CameraFile out;
  out.cameras = parse_list(field(j, "cameras", 0), "cameras");
  if (j.contains("per_frame")) out.per_frame = parse_list(j["per_frame"], "per_frame");
  return out;
}

void write_cameras(const std::string& path, const CameraFile& cameras) {
  json j;
  j["cameras"] = json::array();
  for (const auto& c : cameras.cameras) j["cameras"].push_back(camera_to_json(c));
  if (!cameras.per_frame.empty()) {
    j["per_frame"] = json::array();
    for (const auto& c : cameras.per_frame) j["per_frame"].push_back(camera_to_json(c));
  }
  write_json_file(path, j);
}

TrajectoryPrior read_trajectory_prior(const std::string& path, ParseMode mode) {
  TrajectoryPrior prior;
  for (const Line& line : read_lines(path)) {
    const std::size_t ln = line.number;
    const json j = parse_line(line);
    unknown_fields(j, {"frame", "x", "y", "z", "yaw", "confidence"}, mode, ln);
    const int frame = integer(field(j, "frame", ln), "frame", ln);
    if (frame != static_cast<int>(prior.size())) {
      throw SchemaError("expected frame " + std::to_string(prior.size()) + ", got " + std::to_string(frame), ln);
    }
    prior.positions.emplace_back(number(field(j, "x", ln), "x", ln), number(field(j, "y", ln), "y", ln),
                                 number(field(j, "z", ln), "z", ln));
    prior.yaw.push_back(number(field(j, "yaw", ln), "yaw", ln));
    const double c = number(field(j, "confidence", ln), "confidence", ln);
    if (!(c >= 0.0 && c <= 1.0)) throw RangeError("confidence is outside [0, 1]", ln);
    prior.confidence.push_back(c);
  }
  return prior;
}

void write_trajectory_prior(const std::string& path, const TrajectoryPrior& prior) {
  std::vector<json> lines;
  for (std::size_t t = 0; t < prior.size(); ++t) {
    lines.push_back({{"frame", t},
                     {"x", prior.positions[t].x()},
                     {"y", prior.positions[t].y()},
                     {"z", prior.positions[t].z()},
                     {"yaw", prior.yaw[t]},
                     {"confidence", prior.confidence[t]}});
  }
  write_json_lines(path, lines);
}

std::vector<std::string> read_emotions(const std::string& path, ParseMode mode) {
  std::vector<std::string> labels;
  for (const Line& line : read_lines(path)) {
    const std::size_t ln = line.number;
    const json j = parse_line(line);
    unknown_fields(j, {"frame", "label"}, mode, ln);
    const int frame = integer(field(j, "frame", ln), "frame", ln);
    if (frame != static_cast<int>(labels.size())) {
      throw SchemaError("expected frame " + std::to_string(labels.size()) + ", got " + std::to_string(frame), ln);
    }
    labels.push_back(string_field(field(j, "label", ln), "label", ln));
  }
  return labels;
}

void write_emotions(const std::string& path, const std::vector<std::string>& labels) {
  std::vector<json> lines;
  for (std::size_t t = 0; t < labels.size(); ++t) lines.push_back({{"frame", t}, {"label", labels[t]}});
  write_json_lines(path, lines);
}

void write_captions(const std::string& path, const std::vector<PoseDescription>& captions) {
  std::vector<json> lines;
  for (const auto& c : captions) lines.push_back(c.to_json());
  write_json_lines(path, lines);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": malformed JSON: " + e.what(), 0);
  }
}

void write_json_file(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_json_lines(const std::string& path, const std::vector<json>& lines) {
  std::string text;
  for (const auto& j : lines) {
    text += j.dump();
    text += '\n';
  }
  write_text(path, text);
}

}  // namespace wbm
