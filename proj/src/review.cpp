#include "wbm/review.h"

#include <algorithm>
#include <filesystem>

#include "wbm/errors.h"
#include "wbm/io.h"

namespace wbm {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kPending: return "pending";
    case Verdict::kAccepted: return "accepted";
    case Verdict::kRejected: return "rejected";
  }
  return "pending";
}

Verdict verdict_from_string(const std::string& s) {
  if (s == "pending") return Verdict::kPending;
  if (s == "accepted") return Verdict::kAccepted;
  if (s == "rejected") return Verdict::kRejected;
  throw ValidationError("unknown verdict '" + s + "'");
}

json ReviewManifest::to_json() const {
  json seqs = json::array();
  for (const auto& e : sequences) {
    seqs.push_back({{"id", e.id},
                    {"metrics", e.metrics},
                    {"flags",
                     {{"reprojection", e.flags.reprojection},
                      {"penetration", e.flags.penetration},
                      {"physics", e.flags.physics},
                      {"jerk", e.flags.jerk}}},
                    {"verdict", to_string(e.verdict)},
                    {"reason", e.reason},
                    {"gaps", e.gaps}});
  }
  json log_json = json::array();
  for (const auto& t : log) {
    log_json.push_back({{"sequence", t.sequence}, {"from", to_string(t.from)}, {"to", to_string(t.to)}, {"reason", t.reason}});
  }
  return {{"sequences", seqs}, {"log", log_json}};
}

ReviewManifest ReviewManifest::from_json(const json& j) {
  ReviewManifest m;
  try {
    for (const auto& s : j.at("sequences")) {
      ReviewEntry e;
      e.id = s.at("id").get<std::string>();
      e.metrics = s.value("metrics", json::object());
      const json& f = s.at("flags");
      e.flags = {f.at("reprojection").get<bool>(), f.at("penetration").get<bool>(), f.at("physics").get<bool>(),
                 f.at("jerk").get<bool>()};
      e.verdict = verdict_from_string(s.at("verdict").get<std::string>());
      e.reason = s.value("reason", "");
      e.gaps = s.value("gaps", std::vector<std::string>{});
      m.sequences.push_back(std::move(e));
    }
    for (const auto& t : j.at("log")) {
      m.log.push_back({t.at("sequence").get<std::string>(), verdict_from_string(t.at("from").get<std::string>()),
                       verdict_from_string(t.at("to").get<std::string>()), t.value("reason", "")});
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("review manifest: ") + e.what(), 0);
  }
  return m;
}

ReviewManifest ReviewManifest::load(const std::string& path) { return from_json(read_json_file(path)); }

void ReviewManifest::save(const std::string& path) const { write_json_file(path, to_json()); }

void ReviewManifest::set_verdict(const std::string& sequence, Verdict verdict, const std::string& reason) {
  auto it = std::find_if(sequences.begin(), sequences.end(), [&](const ReviewEntry& e) { return e.id == sequence; });
  if (it == sequences.end()) throw ValidationError("no sequence '" + sequence + "' in the manifest");
  if (verdict == Verdict::kPending) throw ValidationError("a verdict cannot be reset to pending");
  if (it->verdict != Verdict::kPending) {
    throw ValidationError("sequence '" + sequence + "' already has verdict " + to_string(it->verdict));
  }
  log.push_back({sequence, it->verdict, verdict, reason});
  it->verdict = verdict;
  it->reason = reason;
}

namespace {

std::optional<double> number(const json& j, const char* key) {
  if (j.contains(key) && j[key].is_number()) return j[key].get<double>();
  return std::nullopt;
}

std::optional<json> optional_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) return std::nullopt;
  return read_json_file(p.string());
}

}  // namespace

ReviewManifest build_review_manifest(const std::string& results_dir, const ReviewThresholds& thresholds,
                                     const ReviewManifest* previous) {
  if (!fs::is_directory(results_dir)) throw Error("results directory '" + results_dir + "' does not exist");
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(results_dir)) {
    if (entry.is_directory()) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());

  ReviewManifest m;
  for (const auto& id : ids) {
    const fs::path dir = fs::path(results_dir) / id;
    ReviewEntry e;
    e.id = id;
    const auto metrics = optional_file(dir / "metrics.json");
    const auto local = optional_file(dir / "fit_local_report.json");
    const auto global = optional_file(dir / "fit_global_report.json");
    if (!metrics) e.gaps.emplace_back("evaluate");
    if (!local && !global) e.gaps.emplace_back("fit");
    if (local) e.metrics["fit_local_final_loss"] = (*local)["final_loss"];
    if (global) e.metrics["fit_global_final_loss"] = (*global)["final_loss"];
    if (const auto tri = optional_file(dir / "triangulate_report.json")) {
      e.metrics["triangulation_residual_px"] = (*tri)["mean_residual_px"];
    }
    if (metrics) {
      for (const char* key : {"mpjpe_mm", "reprojection_px", "penetration_mean", "ground_penetration", "jerk_rms"}) {
        if (metrics->contains(key)) e.metrics[key] = (*metrics)[key];
      }
      const auto reproj = number(*metrics, "reprojection_px");
      const auto pen = number(*metrics, "penetration_mean");
      const auto ground = number(*metrics, "ground_penetration");
      const auto jerk = number(*metrics, "jerk_rms");
      e.flags.reprojection = reproj && *reproj > thresholds.max_reprojection_px;
      e.flags.penetration = pen && *pen > thresholds.max_penetration;
      e.flags.physics = ground && *ground > thresholds.max_ground_penetration;
      e.flags.jerk = jerk && *jerk > thresholds.max_jerk;
    }
    if (previous) {
      for (const auto& p : previous->sequences) {
        if (p.id == id) {
          e.verdict = p.verdict;
          e.reason = p.reason;
        }
      }
    }
    m.sequences.push_back(std::move(e));
  }
  if (previous) m.log = previous->log;
  return m;
}

std::string export_review_manifest(const std::string& results_dir, const ReviewThresholds& thresholds) {
  const fs::path path = fs::path(results_dir) / "review_manifest.json";
  std::optional<ReviewManifest> previous;
  if (fs::is_regular_file(path)) previous = ReviewManifest::load(path.string());
  build_review_manifest(results_dir, thresholds, previous ? &*previous : nullptr).save(path.string());
  return path.string();
}

}  // namespace wbm
