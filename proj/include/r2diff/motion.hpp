#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace r2diff {

/// Entries per hand state in the flat motion vector: u, v, z, r1..r6, g.
inline constexpr std::size_t kStateDim = 10;
inline constexpr std::size_t kGraspSlot = 9;

struct HandState {
  std::array<double, 3> position{};  // u, v in grid units; z dimensionless depth
  std::array<double, 6> rotation{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
  double grasp = 0.0;
};

/// A sequence of T hand states stored as one flat vector of 10*T values,
/// laid out per timestep as [u, v, z, r1..r6, g].
class Motion {
 public:
  Motion() = default;
  explicit Motion(std::size_t timesteps);
  explicit Motion(std::vector<double> flat);

  static Motion from_states(std::span<const HandState> states);

  std::size_t timesteps() const noexcept { return flat_.size() / kStateDim; }
  std::size_t dim() const noexcept { return flat_.size(); }
  bool empty() const noexcept { return flat_.empty(); }

  HandState state(std::size_t t) const;
  void set_state(std::size_t t, const HandState& s);
  std::vector<HandState> states() const;

  double u(std::size_t t) const { return flat_[t * kStateDim]; }
  double v(std::size_t t) const { return flat_[t * kStateDim + 1]; }
  double z(std::size_t t) const { return flat_[t * kStateDim + 2]; }
  double grasp(std::size_t t) const { return flat_[t * kStateDim + kGraspSlot]; }

  std::span<const double> flat() const noexcept { return flat_; }
  std::span<double> flat() noexcept { return flat_; }
  double operator[](std::size_t d) const { return flat_[d]; }
  double& operator[](std::size_t d) { return flat_[d]; }

  friend bool operator==(const Motion&, const Motion&) = default;

 private:
  std::vector<double> flat_;
};

enum class DimKind { position, rotation, grasp };

/// Which part of a hand state the (0-based) flat index d belongs to.
DimKind dim_kind(std::size_t d) noexcept;

/// Weights of the per-dimension motion distance; position weight is fixed at 1.
struct DistanceWeights {
  double rotation = 0.01;
  double grasp = 0.0;

  void validate() const;
  double weight(DimKind kind) const noexcept;
};

/// D0(a, b, d): weighted squared difference in flat dimension d (0-based).
double per_dim_sq_distance(const Motion& a, const Motion& b, std::size_t d,
                           const DistanceWeights& w);

/// sqrt of the sum of per_dim_sq_distance over all dimensions.
double motion_distance(const Motion& a, const Motion& b, const DistanceWeights& w);

/// Gram-Schmidt on the two 3-vectors of a 6D rotation; columns are [b1 b2 b3].
/// Throws DegenerateRotation when either vector vanishes or they are parallel.
Eigen::Matrix3d rot6d_to_matrix(std::span<const double, 6> r);

}  // namespace r2diff
