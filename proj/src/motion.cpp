#include "r2diff/motion.hpp"

#include <cmath>
#include <string>

#include <Eigen/Geometry>

#include "r2diff/error.hpp"

namespace r2diff {

Motion::Motion(std::size_t timesteps) : flat_(timesteps * kStateDim, 0.0) {
  for (std::size_t t = 0; t < timesteps; ++t) set_state(t, HandState{});
}

Motion::Motion(std::vector<double> flat) : flat_(std::move(flat)) {
  if (flat_.size() % kStateDim != 0) {
    throw InvalidInput("motion vector length " + std::to_string(flat_.size()) +
                       " is not a multiple of " + std::to_string(kStateDim));
  }
}

Motion Motion::from_states(std::span<const HandState> states) {
  Motion m;
  m.flat_.resize(states.size() * kStateDim);
  for (std::size_t t = 0; t < states.size(); ++t) m.set_state(t, states[t]);
  return m;
}

HandState Motion::state(std::size_t t) const {
  if (t >= timesteps()) throw InvalidInput("timestep out of range");
  const double* p = flat_.data() + t * kStateDim;
  HandState s;
  for (std::size_t i = 0; i < 3; ++i) s.position[i] = p[i];
  for (std::size_t i = 0; i < 6; ++i) s.rotation[i] = p[3 + i];
  s.grasp = p[kGraspSlot];
  return s;
}

void Motion::set_state(std::size_t t, const HandState& s) {
  if (t >= timesteps()) throw InvalidInput("timestep out of range");
  double* p = flat_.data() + t * kStateDim;
  for (std::size_t i = 0; i < 3; ++i) p[i] = s.position[i];
  for (std::size_t i = 0; i < 6; ++i) p[3 + i] = s.rotation[i];
  p[kGraspSlot] = s.grasp;
}

std::vector<HandState> Motion::states() const {
  std::vector<HandState> out(timesteps());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = state(t);
  return out;
}

DimKind dim_kind(std::size_t d) noexcept {
  const std::size_t slot = d % kStateDim;
  if (slot < 3) return DimKind::position;
  if (slot < kGraspSlot) return DimKind::rotation;
  return DimKind::grasp;
}

void DistanceWeights::validate() const {
  if (!(rotation >= 0.0) || !(grasp >= 0.0)) {
    throw InvalidInput("distance weights must be nonnegative");
  }
}

double DistanceWeights::weight(DimKind kind) const noexcept {
  switch (kind) {
    case DimKind::position: return 1.0;
    case DimKind::rotation: return rotation;
    case DimKind::grasp: return grasp;
  }
  return 1.0;
}

namespace {

void check_same_dim(const Motion& a, const Motion& b) {
  if (a.dim() != b.dim()) {
    throw InvalidInput("motion dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                       std::to_string(b.dim()));
  }
}

}  // namespace

double per_dim_sq_distance(const Motion& a, const Motion& b, std::size_t d,
                           const DistanceWeights& w) {
  check_same_dim(a, b);
  if (d >= a.dim()) throw InvalidInput("dimension index out of range");
  const double diff = a[d] - b[d];
  return w.weight(dim_kind(d)) * diff * diff;
}

double motion_distance(const Motion& a, const Motion& b, const DistanceWeights& w) {
  check_same_dim(a, b);
  const auto fa = a.flat();
  const auto fb = b.flat();
  double sum = 0.0;
  for (std::size_t d = 0; d < fa.size(); ++d) {
    const double diff = fa[d] - fb[d];
    sum += w.weight(dim_kind(d)) * diff * diff;
  }
  return std::sqrt(sum);
}

Eigen::Matrix3d rot6d_to_matrix(std::span<const double, 6> r) {
  const Eigen::Vector3d a1(r[0], r[1], r[2]);
  const Eigen::Vector3d a2(r[3], r[4], r[5]);
  const double n1 = a1.norm();
  if (!(n1 > 1e-12)) throw DegenerateRotation("first rotation vector is zero");
  const Eigen::Vector3d b1 = a1 / n1;
  const Eigen::Vector3d ortho = a2 - b1.dot(a2) * b1;
  const double n2 = ortho.norm();
  if (!(n2 > 1e-12 * std::max(1.0, a2.norm()))) {
    throw DegenerateRotation("rotation vectors are zero or parallel");
  }
  const Eigen::Vector3d b2 = ortho / n2;
  Eigen::Matrix3d out;
  out.col(0) = b1;
  out.col(1) = b2;
  out.col(2) = b1.cross(b2);
  return out;
}

}  // namespace r2diff
