#pragma once

// Procedural desk-scale episodes: a scene of Gaussian blobs, a ground-truth
// hand motion that ends on the goal, and a binary success predicate.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "r2diff/dataset.hpp"
#include "r2diff/motion.hpp"
#include "r2diff/scene_field.hpp"

namespace r2diff {

enum class FamilyId : std::uint32_t { reach = 0, reach_grasp = 1, bimodal_avoid = 2 };

std::string to_string(FamilyId f);
FamilyId parse_family(const std::string& s);

/// Scene channels.
inline constexpr std::size_t kBackgroundChannel = 0;
inline constexpr std::size_t kGoalChannel = 1;
inline constexpr std::size_t kDistractorChannel = 2;
inline constexpr std::size_t kWallChannel = 3;
inline constexpr std::size_t kSceneChannels = 4;

struct TaskFamily {
  FamilyId id = FamilyId::reach;
  std::size_t distractors = 2;
  double blob_radius = 2.0;       // Gaussian sigma of object blobs, grid units
  double wall_radius = 2.0;       // bimodal-avoid: no point may come closer
  double detour_clearance = 2.5;  // extra lateral offset beyond the wall radius
  double arrival = 0.85;          // fraction of the motion spent approaching
  double max_yaw = 0.3;           // rad, rotation perturbation bound
  double tau_pos = 1.5;
  double tau_grasp = 0.5;

  static TaskFamily defaults(FamilyId id);
  bool grasping() const noexcept { return id == FamilyId::reach_grasp; }
  void validate() const;
};

enum class DetourMode { none, left, right };
std::string to_string(DetourMode m);
DetourMode parse_detour_mode(const std::string& s);

struct GridShape {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = kSceneChannels;
};

struct Episode {
  SceneField scene;
  Motion gt_motion;
  FamilyId family = FamilyId::reach;
  std::uint64_t seed = 0;
  std::size_t index = 0;  // position in the generation stream
  double goal_u = 0.0;
  double goal_v = 0.0;
  DetourMode mode = DetourMode::none;
};

/// Centre of the wall blob for bimodal-avoid: midway between start and goal.
struct Point2 {
  double u = 0.0;
  double v = 0.0;
};
Point2 start_point(const GridShape& grid);
Point2 wall_center(const GridShape& grid, double goal_u, double goal_v);

/// Episode `index` of the stream for (family, seed). Depends on nothing else,
/// so episodes can be generated in any order.
Episode generate_episode(const TaskFamily& family, std::size_t T, const GridShape& grid,
                         std::uint64_t seed, std::size_t index);

struct GeneratedData {
  MotionDataset train;
  std::vector<Episode> train_episodes;
  std::vector<Episode> held_out;
};

/// Episodes 0..J-1 form the training set, J..J+held_out-1 the evaluation set.
GeneratedData generate_dataset(const TaskFamily& family, std::size_t J, std::size_t T,
                               const GridShape& grid, std::uint64_t seed,
                               std::size_t held_out = 128);

/// Episodes as a dataset (motion + scene per entry).
MotionDataset episodes_to_dataset(const std::vector<Episode>& eps, FamilyId family,
                                  std::size_t T, const GridShape& grid, std::uint64_t seed);

double final_position_error(const Motion& m, const Episode& ep);
bool evaluate_success(const Motion& m, const Episode& ep, const TaskFamily& family);

/// Text sidecar `id,family,seed,goal_u,goal_v,mode`, one row per episode.
void write_sidecar(const std::filesystem::path& path, const std::vector<Episode>& eps);

struct SidecarRow {
  std::size_t id = 0;
  FamilyId family = FamilyId::reach;
  std::uint64_t seed = 0;
  double goal_u = 0.0;
  double goal_v = 0.0;
  DetourMode mode = DetourMode::none;
};
std::vector<SidecarRow> read_sidecar(const std::filesystem::path& path);

/// Rebuilds episodes from a dataset and its sidecar rows (same order).
std::vector<Episode> episodes_from_files(const MotionDataset& ds,
                                         const std::vector<SidecarRow>& rows);

/// Paths written by save_generated for a dataset path "d.r2df":
/// d.r2df (training), d.test.r2df (held out), d.episodes.csv (both, train first).
struct GeneratedPaths {
  std::filesystem::path train;
  std::filesystem::path held_out;
  std::filesystem::path sidecar;
};
GeneratedPaths generated_paths(const std::filesystem::path& dataset);
void save_generated(const std::filesystem::path& dataset, const GeneratedData& data);

struct LoadedBenchmark {
  MotionDataset train;
  std::vector<Episode> held_out;
};
LoadedBenchmark load_generated(const std::filesystem::path& dataset);

}  // namespace r2diff
