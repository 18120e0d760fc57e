#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include <Eigen/LU>

#include "doctest.h"
#include "helpers.hpp"
#include "r2diff/dataset.hpp"
#include "r2diff/error.hpp"
#include "r2diff/motion.hpp"

using namespace r2diff;

namespace {

// Weighted squared distance written out slot by slot.
double oracle_sq_distance(const Motion& a, const Motion& b, const DistanceWeights& w) {
  double sum = 0.0;
  for (std::size_t t = 0; t < a.timesteps(); ++t) {
    for (std::size_t s = 0; s < kStateDim; ++s) {
      const double weight = s < 3 ? 1.0 : (s < 9 ? w.rotation : w.grasp);
      const double diff = a[t * kStateDim + s] - b[t * kStateDim + s];
      sum += weight * diff * diff;
    }
  }
  return sum;
}

std::size_t oracle_kth(const MotionDataset& ds, std::size_t i, std::size_t k,
                       const DistanceWeights& w) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t j = 0; j < ds.size(); ++j) {
    if (j != i) all.emplace_back(oracle_sq_distance(ds.motion(i), ds.motion(j), w), j);
  }
  std::sort(all.begin(), all.end());
  return all[k - 1].second;
}

}  // namespace

TEST_CASE("per-dimension distance by slot kind") {
  Motion a(2), b(2);
  const DistanceWeights w;
  CHECK(per_dim_sq_distance(a, b, 4, w) == 0.0);
  b[1] = 0.1;
  CHECK(per_dim_sq_distance(a, b, 1, w) == doctest::Approx(0.01).epsilon(1e-12));
  b[13] = a[13] + 0.2;  // rotation slot of timestep 1
  CHECK(per_dim_sq_distance(a, b, 13, w) == doctest::Approx(0.0004).epsilon(1e-12));
  b[19] = 1.0;  // grasp slot, w_g = 0
  CHECK(per_dim_sq_distance(a, b, 19, w) == 0.0);
  CHECK(dim_kind(0) == DimKind::position);
  CHECK(dim_kind(12) == DimKind::position);
  CHECK(dim_kind(3) == DimKind::rotation);
  CHECK(dim_kind(9) == DimKind::grasp);
}

TEST_CASE("motion distance hand examples") {
  Motion a(3), b(3);
  const DistanceWeights w;
  CHECK(motion_distance(a, a, w) == 0.0);
  b[0] = 0.1;
  b[4] = 0.2;
  b[29] = 1.0;
  CHECK(motion_distance(a, b, w) == doctest::Approx(std::sqrt(0.0104)).epsilon(1e-12));
  CHECK(motion_distance(a, b, w) == doctest::Approx(0.101980).epsilon(1e-5));

  Motion c(3);
  for (std::size_t t = 0; t < 3; ++t) c[t * kStateDim + kGraspSlot] = 1.0;
  CHECK(motion_distance(a, c, w) == 0.0);
}

TEST_CASE("motion distance properties on random motions") {
  std::mt19937_64 rng(11);
  const DistanceWeights w{0.01, 0.0};
  for (int rep = 0; rep < 50; ++rep) {
    const Motion a = testing::random_motion(7, rng);
    const Motion b = testing::random_motion(7, rng);
    const double ab = motion_distance(a, b, w);
    CHECK(ab >= 0.0);
    CHECK(ab == motion_distance(b, a, w));
    CHECK(ab * ab == doctest::Approx(oracle_sq_distance(a, b, w)).epsilon(1e-12));
    Motion g = b;
    for (std::size_t t = 0; t < 7; ++t) g[t * kStateDim + kGraspSlot] += 3.0;
    CHECK(motion_distance(a, g, w) == ab);
  }
}

TEST_CASE("distance weights reject negatives") {
  CHECK_THROWS_AS((DistanceWeights{-0.1, 0.0}).validate(), InvalidInput);
  CHECK_THROWS_AS((DistanceWeights{0.01, -1.0}).validate(), InvalidInput);
}

TEST_CASE("motion state accessors round trip") {
  std::vector<HandState> states(3);
  states[1].position = {4.0, 5.0, 0.5};
  states[1].grasp = 1.0;
  const Motion m = Motion::from_states(states);
  CHECK(m.dim() == 30);
  CHECK(m.u(1) == 4.0);
  CHECK(m.v(1) == 5.0);
  CHECK(m.z(1) == 0.5);
  CHECK(m.grasp(1) == 1.0);
  CHECK(m[13] == 1.0);  // r1 of timestep 1 defaults to the identity 6D vector
  CHECK(m.states()[1].position == states[1].position);
  CHECK_THROWS_AS(Motion(std::vector<double>(11)), InvalidInput);
}

TEST_CASE("6D rotation to matrix") {
  const std::array<double, 6> id{1, 0, 0, 0, 1, 0};
  CHECK(rot6d_to_matrix(id).isApprox(Eigen::Matrix3d::Identity(), 1e-15));
  const std::array<double, 6> scaled{2, 0, 0, 0, 3, 0};
  CHECK(rot6d_to_matrix(scaled).isApprox(Eigen::Matrix3d::Identity(), 1e-15));

  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  for (int rep = 0; rep < 100; ++rep) {
    std::array<double, 6> r;
    for (double& x : r) x = normal(rng);
    const Eigen::Matrix3d R = rot6d_to_matrix(r);
    CHECK((R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::abs(R.determinant() - 1.0) < 1e-10);
    // Feeding back the first two columns reproduces them.
    const std::array<double, 6> again{R(0, 0), R(1, 0), R(2, 0), R(0, 1), R(1, 1), R(2, 1)};
    CHECK((rot6d_to_matrix(again) - R).cwiseAbs().maxCoeff() < 1e-12);
  }

  CHECK_THROWS_AS(rot6d_to_matrix(std::array<double, 6>{0, 0, 0, 0, 1, 0}), DegenerateRotation);
  CHECK_THROWS_AS(rot6d_to_matrix(std::array<double, 6>{1, 2, 3, 2, 4, 6}), DegenerateRotation);
}

TEST_CASE("k-th nearest index examples") {
  std::mt19937_64 rng(3);
  MotionDataset ds = testing::random_dataset(2, 4, 4, 4, 1, rng);
  const DistanceWeights w;
  CHECK(kth_nearest_index(ds, 0, 1, w) == 1);
  CHECK(kth_nearest_index(ds, 1, 1, w) == 0);
  CHECK_THROWS_AS(kth_nearest_index(ds, 0, 2, w), InvalidInput);

  MotionDataset dup = testing::random_dataset(6, 4, 4, 4, 1, rng);
  dup.entries[4].motion = dup.entries[1].motion;
  CHECK(kth_nearest_index(dup, 1, 1, w) == 4);
  CHECK(kth_nearest_index(dup, 4, 1, w) == 1);
}

TEST_CASE("k-th nearest index matches a full-sort oracle") {
  std::mt19937_64 rng(17);
  const DistanceWeights w{0.01, 0.0};
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t J = 5 + rep * 2;
    const MotionDataset ds = testing::random_dataset(J, 5, 4, 4, 1, rng);
    for (std::size_t k : {std::size_t{1}, std::size_t{2}, J - 1}) {
      const auto table = kth_nearest_table(ds, k, w);
      for (std::size_t i = 0; i < J; ++i) {
        const std::size_t got = kth_nearest_index(ds, i, k, w);
        CHECK(got == oracle_kth(ds, i, k, w));
        CHECK(table[i] == got);
        CHECK(got != i);
      }
    }
    for (std::size_t i = 0; i < J; ++i) {
      double prev = 0.0;
      for (std::size_t k = 1; k < J; ++k) {
        const double d = motion_distance(ds.motion(i), ds.motion(kth_nearest_index(ds, i, k, w)), w);
        CHECK(d >= prev);
        prev = d;
      }
    }
  }
}

TEST_CASE("dataset container round trip") {
  std::mt19937_64 rng(23);
  MotionDataset ds = testing::random_dataset(3, 6, 5, 4, 2, rng);
  ds.meta.seed = 0x123456789abcULL;
  ds.meta.family_id = 2;
  round_to_storage_precision(ds);
  const auto path = std::filesystem::temp_directory_path() / "r2diff_unit_roundtrip.r2df";
  write_dataset(path, ds);
  const MotionDataset back = read_dataset(path);
  CHECK(back == ds);
  const DatasetHeader h = read_dataset_header(path);
  CHECK(h.entries == 3);
  CHECK(h.motion_dim == 60);
  CHECK(h.meta.width == 4);
  CHECK(h.meta.seed == ds.meta.seed);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_dataset(path), NotFound);
}

TEST_CASE("dataset validation rejects shape mismatches") {
  std::mt19937_64 rng(29);
  MotionDataset ds = testing::random_dataset(2, 4, 4, 4, 1, rng);
  ds.entries[1].motion = Motion(5);
  CHECK_THROWS_AS(ds.validate(), InvalidInput);
}
