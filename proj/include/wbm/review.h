#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wbm/pipeline.h"

namespace wbm {

enum class Verdict { kPending, kAccepted, kRejected };
const char* to_string(Verdict v);
Verdict verdict_from_string(const std::string& s);

struct ReviewFlags {
  bool reprojection = false;
  bool penetration = false;
  bool physics = false;
  bool jerk = false;
};

struct ReviewEntry {
  std::string id;
  nlohmann::json metrics = nlohmann::json::object();
  ReviewFlags flags;
  Verdict verdict = Verdict::kPending;
  std::string reason;
  std::vector<std::string> gaps;  // stage outputs that were missing
};

struct ReviewTransition {
  std::string sequence;
  Verdict from;
  Verdict to;
  std::string reason;
};

struct ReviewManifest {
  std::vector<ReviewEntry> sequences;
  std::vector<ReviewTransition> log;

  nlohmann::json to_json() const;
  static ReviewManifest from_json(const nlohmann::json& j);
  static ReviewManifest load(const std::string& path);
  void save(const std::string& path) const;

  /// Only pending -> accepted/rejected is allowed; appends one log entry.
  void set_verdict(const std::string& sequence, Verdict verdict, const std::string& reason);
};

/// Builds a manifest from a pipeline output directory. Verdicts and the log of
/// `previous` are carried over for sequences that still exist.
ReviewManifest build_review_manifest(const std::string& results_dir, const ReviewThresholds& thresholds,
                                     const ReviewManifest* previous = nullptr);

/// Writes results_dir/review_manifest.json, keeping verdicts of an existing manifest.
std::string export_review_manifest(const std::string& results_dir, const ReviewThresholds& thresholds);

}  // namespace wbm
