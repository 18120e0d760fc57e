#pragma once

// Inference: optional retrieval, noising to n_start, and reverse steps with
// features re-extracted along the current noisy motion.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "r2diff/dataset.hpp"
#include "r2diff/denoiser.hpp"
#include "r2diff/retrieval.hpp"
#include "r2diff/schedule.hpp"

namespace r2diff {

enum class InferenceMode { rand, ret_ste, ret_mse, ret_cheat };
std::string to_string(InferenceMode m);
InferenceMode parse_inference_mode(const std::string& s);

struct InferenceConfig {
  InferenceMode mode = InferenceMode::ret_ste;
  std::size_t steps = 1000;  // N, must equal the schedule's
  std::size_t n_start = 500;  // ignored (treated as N) for rand
  std::uint64_t seed = 0;
  DistanceWeights weights;  // cheat retrieval
  double similarity_guard = kDefaultSimilarityGuard;

  /// n_start actually used: N for rand.
  std::size_t effective_start() const noexcept {
    return mode == InferenceMode::rand ? steps : n_start;
  }
  void validate(const NoiseSchedule& s) const;
};

struct InferenceQuery {
  const SceneField* scene = nullptr;
  const Motion* gt_motion = nullptr;  // needed by ret-cheat only
  std::uint64_t id = 0;               // selects the per-query RNG stream
};

struct InferenceResult {
  Motion motion;
  std::optional<RetrievalResult> retrieval;
};

/// Single query with a caller-supplied RNG. Draw order: the initial noise
/// (d_m normals), then d_m normals per reverse step n = start..2.
InferenceResult infer(const NoisePredictor& model, const NoiseSchedule& s,
                      const SceneField& query, const MotionDataset& ds,
                      const InferenceConfig& cfg, std::mt19937_64& rng,
                      const Motion* gt_motion = nullptr);

/// Per-query RNG seeded from (cfg.seed, query id).
std::mt19937_64 query_rng(std::uint64_t seed, std::uint64_t id);

/// All queries advance in lock-step so the predictor sees one batch per step.
/// Each query draws from query_rng(cfg.seed, id), so results do not depend on
/// which other queries share the batch.
std::vector<InferenceResult> infer_batch(const NoisePredictor& model, const NoiseSchedule& s,
                                         std::span<const InferenceQuery> queries,
                                         const MotionDataset& ds, const InferenceConfig& cfg);

}  // namespace r2diff
