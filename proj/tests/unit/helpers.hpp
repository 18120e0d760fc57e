#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "r2diff/dataset.hpp"

namespace testing {

inline r2diff::Motion random_motion(std::size_t T, std::mt19937_64& rng, double spread = 1.0) {
  std::normal_distribution<double> normal(0.0, spread);
  std::vector<double> flat(T * r2diff::kStateDim);
  for (double& x : flat) x = normal(rng);
  return r2diff::Motion(std::move(flat));
}

inline r2diff::SceneField random_field(std::size_t H, std::size_t W, std::size_t C,
                                       std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  r2diff::SceneField f(H, W, C);
  for (double& x : f.values()) x = uni(rng);
  return f;
}

/// Motions with (u, v) inside the grid so STE sampling sees interior cells.
inline r2diff::Motion random_track(std::size_t T, std::size_t H, std::size_t W,
                                   std::mt19937_64& rng) {
  r2diff::Motion m = random_motion(T, rng);
  std::uniform_real_distribution<double> u(0.0, static_cast<double>(W - 1));
  std::uniform_real_distribution<double> v(0.0, static_cast<double>(H - 1));
  for (std::size_t t = 0; t < T; ++t) {
    m[t * r2diff::kStateDim] = u(rng);
    m[t * r2diff::kStateDim + 1] = v(rng);
  }
  return m;
}

inline r2diff::MotionDataset random_dataset(std::size_t J, std::size_t T, std::size_t H,
                                            std::size_t W, std::size_t C, std::mt19937_64& rng) {
  r2diff::MotionDataset ds;
  ds.meta.timesteps = static_cast<std::uint32_t>(T);
  ds.meta.height = static_cast<std::uint32_t>(H);
  ds.meta.width = static_cast<std::uint32_t>(W);
  ds.meta.channels = static_cast<std::uint32_t>(C);
  for (std::size_t j = 0; j < J; ++j) {
    ds.entries.push_back({random_track(T, H, W, rng), random_field(H, W, C, rng)});
  }
  return ds;
}

}  // namespace testing
