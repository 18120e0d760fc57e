#pragma once

// Condition grids over generated benchmarks: inference on every held-out
// episode, success aggregation, CSV / text / SVG reports.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "r2diff/denoiser.hpp"
#include "r2diff/pipeline.hpp"
#include "r2diff/schedule.hpp"
#include "r2diff/synth.hpp"

namespace r2diff {

enum class ScheduleKind { tuned, basic };
std::string to_string(ScheduleKind k);
ScheduleKind parse_schedule_kind(const std::string& s);

struct Condition {
  std::string id;
  InferenceMode mode = InferenceMode::ret_ste;
  ScheduleKind schedule = ScheduleKind::tuned;
  std::size_t rank = 1;  // tuned only
  std::size_t n_start = 500;
  std::size_t steps = 1000;

  /// Key naming the model / schedule a condition needs, e.g.
  /// "tuned-r1-N1000" or "basic-N1000".
  std::string schedule_tag() const;
  std::size_t effective_start() const noexcept {
    return mode == InferenceMode::rand ? steps : n_start;
  }
  void validate() const;
};

struct FamilyArtifacts {
  std::string name;  // label used in reports
  std::filesystem::path dataset;
  std::map<std::string, std::filesystem::path> models;     // by schedule tag
  std::map<std::string, std::filesystem::path> schedules;  // optional, by tag
  TaskFamily params;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "report";
  DistanceWeights weights;
  double similarity_guard = kDefaultSimilarityGuard;
  double beta0 = 1e-4;
  double delta_min = 1e-6;
  PosteriorVariance variance = PosteriorVariance::ddpm;
  std::size_t max_episodes = 0;  // 0 = every held-out episode
  std::vector<FamilyArtifacts> families;
  std::vector<Condition> conditions;

  void validate() const;
};

/// INI-style file: an [experiment] section, one [family NAME] section per
/// family and one [condition ID] section per grid cell. Relative paths are
/// resolved against the file's directory.
ExperimentConfig parse_experiment_config(const std::filesystem::path& path);

struct ReportRow {
  std::string condition_id;
  std::string mode;
  std::string schedule;
  std::size_t rank = 0;
  std::size_t n_start = 0;
  std::size_t steps = 0;
  std::string family;  // "all" for the aggregate over families
  double success_rate = 0.0;  // percent
  double mean_final_err = 0.0;
  std::size_t episodes = 0;
};

struct TraceRow {
  std::string condition_id;
  std::string family;
  std::size_t query_id = 0;
  std::string method;
  std::size_t retrieved_id = 0;
  double score = 0.0;
};

struct ConditionTiming {
  std::string condition_id;
  std::string family;
  double seconds = 0.0;
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  std::vector<TraceRow> traces;
  std::vector<ConditionTiming> timings;
};

struct EpisodeOutcome {
  std::size_t episode_index = 0;
  bool success = false;
  double final_err = 0.0;
  std::optional<RetrievalResult> retrieval;
};

/// Runs one condition on a set of held-out episodes.
std::vector<EpisodeOutcome> evaluate_episodes(const NoisePredictor& model, const NoiseSchedule& s,
                                              const MotionDataset& train,
                                              std::span<const Episode> episodes,
                                              const TaskFamily& family,
                                              const InferenceConfig& cfg);

struct Aggregate {
  double success_rate = 0.0;
  double mean_final_err = 0.0;
  std::size_t episodes = 0;
};
/// Order independent: outcomes are reduced in episode-index order.
Aggregate aggregate(std::span<const EpisodeOutcome> outcomes);

/// Runs the grid without writing files.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

/// Parses, runs, and writes report.csv, summary.txt, success.svg and
/// traces/<condition>.<family>.csv into the configured output directory.
ExperimentReport run_experiment(const std::filesystem::path& config_path);

void write_report_files(const std::filesystem::path& dir, const ExperimentReport& report);
void write_report_csv(const std::filesystem::path& path, std::span<const ReportRow> rows);
/// CSV `query_id,method,retrieved_id,score`.
void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> traces);
std::string format_summary(const ExperimentReport& report);
std::string render_success_svg(std::span<const ReportRow> rows);

}  // namespace r2diff
