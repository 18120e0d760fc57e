#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "r2diff/dataset.hpp"
#include "r2diff/motion.hpp"
#include "r2diff/scene_field.hpp"

namespace r2diff {

/// T x C features sampled from a scene field along a motion's (u, v) track.
struct STEFeature {
  std::size_t timesteps = 0;
  std::size_t channels = 0;
  std::vector<double> values;  // row t holds channels [t*C, (t+1)*C)

  double at(std::size_t t, std::size_t c) const { return values[t * channels + c]; }
};

/// Bilinear sample of all channels at (u, v), clamped to [0, W-1] x [0, H-1].
void sample_bilinear(const SceneField& field, double u, double v, double* out);

/// Row t = bilinear sample at the motion's (u_t, v_t). Total by clamping.
STEFeature ste_extract(const SceneField& field, const Motion& m);

inline constexpr double kDefaultSimilarityGuard = 1e-12;

/// 1 / (|| ste(train_field, m) - ste(query, m) || + guard), m = train_motion.
double ste_similarity(const SceneField& query, const SceneField& train_field,
                      const Motion& train_motion, double guard = kDefaultSimilarityGuard);

enum class RetrievalMethod { ste, mse, cheat };
std::string to_string(RetrievalMethod m);

struct RetrievalResult {
  std::size_t index = 0;
  double score = 0.0;  // similarity for ste, distance for mse / cheat
  RetrievalMethod method = RetrievalMethod::ste;
};

/// argmax_i ste_similarity(query, field_i, motion_i); ties -> lowest index.
RetrievalResult retrieve_ste(const SceneField& query, const MotionDataset& ds,
                             double guard = kDefaultSimilarityGuard);

/// argmin_i mean squared difference of the whole grids; ties -> lowest index.
RetrievalResult retrieve_mse(const SceneField& query, const MotionDataset& ds);

/// argmin_i motion_distance(gt, motion_i). No self-exclusion.
RetrievalResult retrieve_cheat(const Motion& gt_motion, const MotionDataset& ds,
                               const DistanceWeights& w);

/// STE retrieval with the training features f_i precomputed once.
class SteIndex {
 public:
  explicit SteIndex(const MotionDataset& ds, double guard = kDefaultSimilarityGuard);

  RetrievalResult retrieve(const SceneField& query) const;

 private:
  const MotionDataset* ds_;
  double guard_;
  std::vector<STEFeature> train_features_;
};

}  // namespace r2diff
