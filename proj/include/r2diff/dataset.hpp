#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "r2diff/motion.hpp"
#include "r2diff/scene_field.hpp"

namespace r2diff {

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

struct DatasetMeta {
  std::uint64_t seed = 0;
  std::uint32_t family_id = 0;
  std::uint32_t timesteps = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;

  std::uint32_t motion_dim() const noexcept {
    return timesteps * static_cast<std::uint32_t>(kStateDim);
  }

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct DatasetEntry {
  Motion motion;
  SceneField scene;

  friend bool operator==(const DatasetEntry&, const DatasetEntry&) = default;
};

/// J (motion, scene) pairs sharing T and grid shape.
struct MotionDataset {
  DatasetMeta meta;
  std::vector<DatasetEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  const Motion& motion(std::size_t i) const { return entries.at(i).motion; }
  const SceneField& scene(std::size_t i) const { return entries.at(i).scene; }

  /// Checks every entry against meta (T, grid shape, finiteness).
  void validate() const;

  friend bool operator==(const MotionDataset&, const MotionDataset&) = default;
};

/// Rounds every motion and scene value to float32 so an in-memory dataset
/// equals what read_dataset returns after write_dataset.
void round_to_storage_precision(MotionDataset& ds);

/// Binary container, little-endian: "R2DF", version, J, T, d_m, H, W, C,
/// seed (u64), family id, then per record d_m + H*W*C float32 values.
void write_dataset(const std::filesystem::path& path, const MotionDataset& ds);
MotionDataset read_dataset(const std::filesystem::path& path);

/// Header only, without loading records.
struct DatasetHeader {
  std::uint32_t version = 0;
  std::uint32_t entries = 0;
  std::uint32_t motion_dim = 0;
  DatasetMeta meta;
};
DatasetHeader read_dataset_header(const std::filesystem::path& path);

/// Index of the k-th nearest entry (k >= 1) to entry i by motion_distance,
/// excluding i itself; ties go to the lowest index.
std::size_t kth_nearest_index(const MotionDataset& ds, std::size_t i, std::size_t k,
                              const DistanceWeights& w);

/// kth_nearest_index for every entry at once.
std::vector<std::size_t> kth_nearest_table(const MotionDataset& ds, std::size_t k,
                                           const DistanceWeights& w);

}  // namespace r2diff
