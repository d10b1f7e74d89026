#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wbm/captioner.h"
#include "wbm/global_fit.h"
#include "wbm/io.h"
#include "wbm/local_fit.h"
#include "wbm/savgol.h"

namespace wbm {

struct StageToggles {
  bool smooth = true;
  bool triangulate = true;
  bool fit_local = true;
  bool fit_global = true;
  bool caption = true;
  bool evaluate = true;

  bool any() const { return smooth || triangulate || fit_local || fit_global || caption || evaluate; }
};

/// Limits above which a sequence is flagged for manual review.
struct ReviewThresholds {
  double max_reprojection_px = 5.0;
  double max_penetration = 1e-3;         // mean capsule penalty per frame
  double max_ground_penetration = 1e-4;  // sum of squared ground penetration (m^2)
  double max_jerk = 2000.0;              // m/s^3
};

struct PipelineConfig {
  std::string input_dir;
  std::string output_dir;
  std::string topology_path;   // empty: built-in skeleton
  std::string templates_path;  // empty: built-in wording
  std::uint64_t seed = 0;
  int workers = 1;
  ParseMode parse_mode = ParseMode::kLenient;
  StageToggles stages;
  FilterSpec filter;
  LossWeights local_weights;
  GlobalLossWeights global_weights;
  SolverOptions local_solver;
  SolverOptions global_solver;
  CameraMode camera_mode = CameraMode::kPerFrame;
  double ground_height = 0.0;
  int caption_stride = 1;
  AggregationOptions caption_margins;
  ReviewThresholds review;

  /// Unknown keys, wrong types and invalid values raise ConfigError.
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::string& path);
  nlohmann::json to_json() const;
  /// Checks values and that referenced input paths exist.
  void validate() const;
};

/// Seed of one sequence, derived from the global seed and the sequence id.
std::uint64_t sequence_seed(std::uint64_t global_seed, const std::string& sequence_id);

/// Error, smoothness, diversity, self-penetration and ground-contact metrics of
/// a motion. `truth` may be null.
nlohmann::json evaluate_motion(const MotionSequence& motion, const MotionSequence* truth,
                               const SkeletonTopology& topology, double ground_height);

struct SequenceOutcome {
  std::string id;
  bool ok = true;
  std::string error;
  std::vector<std::string> stages_run;
};

struct PipelineResult {
  std::vector<SequenceOutcome> sequences;  // sorted by id
  bool any_failed() const;
  int exit_code() const { return any_failed() ? 4 : 0; }
};

/// Runs the enabled stages for every sequence directory in config.input_dir,
/// writing into config.output_dir/<sequence>/. Validates the config first.
PipelineResult run_pipeline(const PipelineConfig& config);

/// Runs one sequence; failures are reported in the outcome, not thrown.
SequenceOutcome run_sequence(const std::string& id, const PipelineConfig& config, const SkeletonTopology& topology,
                             const TemplateTable& templates);

}  // namespace wbm
