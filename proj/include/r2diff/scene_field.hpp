#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace r2diff {

/// H x W x C feature grid, row-major and channel-last. Stands in for the
/// image feature map the denoiser and the retrieval operate on.
class SceneField {
 public:
  SceneField() = default;
  SceneField(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0);
  SceneField(std::size_t height, std::size_t width, std::size_t channels,
             std::vector<double> values);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return values_.size(); }

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return values_[(y * width_ + x) * channels_ + c];
  }
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return values_[(y * width_ + x) * channels_ + c];
  }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  bool same_shape(const SceneField& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  /// Throws InvalidInput unless H, W >= 2, C >= 1 and all values are finite.
  void validate() const;

  friend bool operator==(const SceneField&, const SceneField&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> values_;
};

}  // namespace r2diff
