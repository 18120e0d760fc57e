#include "r2diff/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "binary_io.hpp"
#include "r2diff/error.hpp"

namespace r2diff {

SceneField::SceneField(std::size_t height, std::size_t width, std::size_t channels, double fill)
    : height_(height), width_(width), channels_(channels),
      values_(height * width * channels, fill) {}

SceneField::SceneField(std::size_t height, std::size_t width, std::size_t channels,
                       std::vector<double> values)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
  if (values_.size() != height * width * channels) {
    throw InvalidInput("scene field has " + std::to_string(values_.size()) +
                       " values, expected " + std::to_string(height * width * channels));
  }
}

void SceneField::validate() const {
  if (height_ < 2 || width_ < 2 || channels_ < 1) {
    throw InvalidInput("scene field must be at least 2x2 with one channel");
  }
  if (!std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); })) {
    throw InvalidInput("scene field contains non-finite values");
  }
}

void MotionDataset::validate() const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.motion.timesteps() != meta.timesteps || e.motion.dim() != meta.motion_dim()) {
      throw InvalidInput("entry " + std::to_string(i) + " has T=" +
                         std::to_string(e.motion.timesteps()) + ", dataset T=" +
                         std::to_string(meta.timesteps));
    }
    if (e.scene.height() != meta.height || e.scene.width() != meta.width ||
        e.scene.channels() != meta.channels) {
      throw InvalidInput("entry " + std::to_string(i) + " scene shape differs from dataset");
    }
    e.scene.validate();
  }
}

void round_to_storage_precision(MotionDataset& ds) {
  auto round = [](double& v) { v = static_cast<double>(static_cast<float>(v)); };
  for (auto& e : ds.entries) {
    std::ranges::for_each(e.motion.flat(), round);
    std::ranges::for_each(e.scene.values(), round);
  }
}

namespace {

constexpr std::string_view kMagic = "R2DF";

DatasetHeader parse_header(detail::ByteReader& in) {
  in.expect_magic(kMagic);
  DatasetHeader h;
  h.version = in.u32();
  if (h.version != kDatasetFormatVersion) {
    throw FormatError("'" + in.name() + "' has unsupported dataset version " +
                      std::to_string(h.version));
  }
  h.entries = in.u32();
  h.meta.timesteps = in.u32();
  h.motion_dim = in.u32();
  h.meta.height = in.u32();
  h.meta.width = in.u32();
  h.meta.channels = in.u32();
  h.meta.seed = in.u64();
  h.meta.family_id = in.u32();
  if (h.motion_dim != h.meta.motion_dim()) {
    throw FormatError("'" + in.name() + "' declares d_m=" + std::to_string(h.motion_dim) +
                      " inconsistent with T=" + std::to_string(h.meta.timesteps));
  }
  return h;
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const MotionDataset& ds) {
  ds.validate();
  detail::ByteWriter out;
  out.magic(kMagic);
  out.u32(kDatasetFormatVersion);
  out.u32(static_cast<std::uint32_t>(ds.size()));
  out.u32(ds.meta.timesteps);
  out.u32(ds.meta.motion_dim());
  out.u32(ds.meta.height);
  out.u32(ds.meta.width);
  out.u32(ds.meta.channels);
  out.u64(ds.meta.seed);
  out.u32(ds.meta.family_id);
  for (const auto& e : ds.entries) {
    for (double v : e.motion.flat()) out.f32(static_cast<float>(v));
    for (double v : e.scene.values()) out.f32(static_cast<float>(v));
  }
  out.save(path);
}

DatasetHeader read_dataset_header(const std::filesystem::path& path) {
  detail::ByteReader in(path);
  return parse_header(in);
}

MotionDataset read_dataset(const std::filesystem::path& path) {
  detail::ByteReader in(path);
  const DatasetHeader h = parse_header(in);
  MotionDataset ds;
  ds.meta = h.meta;
  ds.entries.reserve(h.entries);
  const std::size_t grid = std::size_t{h.meta.height} * h.meta.width * h.meta.channels;
  for (std::uint32_t j = 0; j < h.entries; ++j) {
    std::vector<double> motion(h.motion_dim);
    for (auto& v : motion) v = in.f32();
    std::vector<double> field(grid);
    for (auto& v : field) v = in.f32();
    ds.entries.push_back({Motion(std::move(motion)),
                          SceneField(h.meta.height, h.meta.width, h.meta.channels,
                                     std::move(field))});
  }
  if (!in.at_end()) throw FormatError("'" + path.string() + "' has trailing bytes");
  ds.validate();
  return ds;
}

namespace {

void check_rank(const MotionDataset& ds, std::size_t k) {
  if (ds.size() < 2) throw InvalidInput("nearest-neighbor search needs at least 2 entries");
  if (k < 1 || k > ds.size() - 1) {
    throw InvalidInput("rank " + std::to_string(k) + " outside [1, " +
                       std::to_string(ds.size() - 1) + "]");
  }
}

std::size_t select_kth(std::vector<std::pair<double, std::size_t>>& candidates, std::size_t k) {
  // Pairs compare by (distance, index), which is exactly the tie rule.
  std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   candidates.end());
  return candidates[k - 1].second;
}

}  // namespace

std::size_t kth_nearest_index(const MotionDataset& ds, std::size_t i, std::size_t k,
                              const DistanceWeights& w) {
  check_rank(ds, k);
  if (i >= ds.size()) throw InvalidInput("entry index out of range");
  w.validate();
  std::vector<std::pair<double, std::size_t>> candidates;
  candidates.reserve(ds.size() - 1);
  for (std::size_t j = 0; j < ds.size(); ++j) {
    if (j == i) continue;
    candidates.emplace_back(motion_distance(ds.motion(i), ds.motion(j), w), j);
  }
  return select_kth(candidates, k);
}

std::vector<std::size_t> kth_nearest_table(const MotionDataset& ds, std::size_t k,
                                           const DistanceWeights& w) {
  check_rank(ds, k);
  w.validate();
  const std::size_t n = ds.size();
  // Symmetric distance matrix, computed once per unordered pair.
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = motion_distance(ds.motion(i), ds.motion(j), w);
      dist[i * n + j] = d;
      dist[j * n + i] = d;
    }
  }
  std::vector<std::size_t> out(n);
  std::vector<std::pair<double, std::size_t>> candidates;
  candidates.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    candidates.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) candidates.emplace_back(dist[i * n + j], j);
    }
    out[i] = select_kth(candidates, k);
  }
  return out;
}

}  // namespace r2diff
