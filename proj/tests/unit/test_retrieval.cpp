#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "r2diff/error.hpp"
#include "r2diff/retrieval.hpp"

using namespace r2diff;

namespace {

// Bilinear sample written as a weighted sum over the four surrounding nodes.
double oracle_sample(const SceneField& f, double u, double v, std::size_t c) {
  u = std::min(std::max(u, 0.0), static_cast<double>(f.width() - 1));
  v = std::min(std::max(v, 0.0), static_cast<double>(f.height() - 1));
  double sum = 0.0;
  for (std::size_t y = 0; y < f.height(); ++y) {
    for (std::size_t x = 0; x < f.width(); ++x) {
      const double wx = 1.0 - std::abs(u - static_cast<double>(x));
      const double wy = 1.0 - std::abs(v - static_cast<double>(y));
      if (wx > 0.0 && wy > 0.0) sum += wx * wy * f.at(y, x, c);
    }
  }
  return sum;
}

double oracle_similarity(const SceneField& q, const SceneField& f, const Motion& m) {
  double sum = 0.0;
  for (std::size_t t = 0; t < m.timesteps(); ++t) {
    for (std::size_t c = 0; c < f.channels(); ++c) {
      const double d = oracle_sample(f, m.u(t), m.v(t), c) - oracle_sample(q, m.u(t), m.v(t), c);
      sum += d * d;
    }
  }
  return 1.0 / (std::sqrt(sum) + kDefaultSimilarityGuard);
}

}  // namespace

TEST_CASE("bilinear sampling") {
  SceneField f(3, 3, 1);
  f.at(1, 1, 0) = 4.0;
  double out = 0.0;
  sample_bilinear(f, 0.5, 0.5, &out);
  CHECK(out == doctest::Approx(1.0).epsilon(1e-15));
  sample_bilinear(f, 1.0, 1.0, &out);
  CHECK(out == 4.0);
  sample_bilinear(f, -3.0, 1.0, &out);  // clamps to column 0
  CHECK(out == 0.0);
  sample_bilinear(f, 1.0, 17.0, &out);  // clamps to row 2
  CHECK(out == 0.0);

  SceneField c(4, 5, 3, 0.7);
  std::mt19937_64 rng(1);
  const Motion m = testing::random_motion(6, rng, 10.0);
  const STEFeature feat = ste_extract(c, m);
  CHECK(feat.timesteps == 6);
  CHECK(feat.channels == 3);
  for (double x : feat.values) CHECK(x == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("sampling matches the node-sum oracle") {
  std::mt19937_64 rng(2);
  const SceneField f = testing::random_field(6, 7, 2, rng);
  std::uniform_real_distribution<double> coord(-1.0, 8.0);
  double out[2];
  for (int rep = 0; rep < 200; ++rep) {
    const double u = coord(rng), v = coord(rng);
    sample_bilinear(f, u, v, out);
    for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(out[c] - oracle_sample(f, u, v, c)) < 1e-12);
  }
}

TEST_CASE("feature extraction is linear in the field and local") {
  std::mt19937_64 rng(3);
  const SceneField a = testing::random_field(8, 8, 2, rng);
  const SceneField b = testing::random_field(8, 8, 2, rng);
  SceneField mix(8, 8, 2);
  for (std::size_t k = 0; k < mix.size(); ++k) mix.values()[k] = 2.5 * a.values()[k] - 0.75 * b.values()[k];
  const Motion m = testing::random_track(9, 8, 8, rng);
  const STEFeature fa = ste_extract(a, m), fb = ste_extract(b, m), fm = ste_extract(mix, m);
  for (std::size_t k = 0; k < fm.values.size(); ++k) {
    CHECK(std::abs(fm.values[k] - (2.5 * fa.values[k] - 0.75 * fb.values[k])) < 1e-10);
  }

  // Cells more than one cell away from every track point do not matter.
  Motion near(3);
  for (std::size_t t = 0; t < 3; ++t) {
    near[t * kStateDim] = 1.3 + 0.2 * static_cast<double>(t);
    near[t * kStateDim + 1] = 1.6;
  }
  SceneField far = a;
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) {
      if (x >= 4 || y >= 4) far.at(y, x, 0) += 100.0;
    }
  }
  CHECK(ste_extract(far, near).values == ste_extract(a, near).values);
}

TEST_CASE("STE similarity hand values") {
  std::mt19937_64 rng(4);
  const SceneField f = testing::random_field(5, 5, 3, rng);
  const Motion m = testing::random_track(7, 5, 5, rng);
  CHECK(ste_similarity(f, f, m) == doctest::Approx(1e12).epsilon(1e-12));

  SceneField shifted = f;
  const double delta = 0.3;
  for (double& x : shifted.values()) x += delta;
  const double expected = 1.0 / (delta * std::sqrt(7.0 * 3.0) + kDefaultSimilarityGuard);
  CHECK(ste_similarity(shifted, f, m) == doctest::Approx(expected).epsilon(1e-9));
  CHECK_THROWS_AS(ste_similarity(SceneField(4, 5, 3), f, m), InvalidInput);
}

TEST_CASE("retrieval examples and tie rules") {
  std::mt19937_64 rng(5);
  MotionDataset ds = testing::random_dataset(6, 5, 6, 6, 2, rng);
  const auto ste = retrieve_ste(ds.scene(3), ds);
  CHECK(ste.index == 3);
  CHECK(ste.method == RetrievalMethod::ste);
  const auto mse = retrieve_mse(ds.scene(4), ds);
  CHECK(mse.index == 4);
  CHECK(mse.score == 0.0);
  const auto cheat = retrieve_cheat(ds.motion(2), ds, {});
  CHECK(cheat.index == 2);
  CHECK(cheat.score == 0.0);

  MotionDataset same = ds;
  for (auto& e : same.entries) e.scene = ds.scene(0);
  CHECK(retrieve_ste(ds.scene(0), same).index == 0);
  CHECK(retrieve_mse(ds.scene(0), same).index == 0);

  MotionDataset grasp_only = ds;
  for (std::size_t i = 0; i < grasp_only.size(); ++i) {
    Motion m = ds.motion(0);
    for (std::size_t t = 0; t < m.timesteps(); ++t) m[t * kStateDim + kGraspSlot] = static_cast<double>(i);
    grasp_only.entries[i].motion = m;
  }
  CHECK(retrieve_cheat(ds.motion(0), grasp_only, DistanceWeights{0.01, 0.0}).index == 0);

  // Two entries, query nearer in grid MSE to the second.
  MotionDataset two;
  two.meta = ds.meta;
  two.entries = {{ds.motion(0), SceneField(6, 6, 2, 0.0)}, {ds.motion(1), SceneField(6, 6, 2, 1.0)}};
  CHECK(retrieve_mse(SceneField(6, 6, 2, 0.8), two).index == 1);

  CHECK_THROWS_AS(retrieve_mse(SceneField(5, 6, 2), ds), InvalidInput);
  MotionDataset empty;
  CHECK_THROWS_AS(retrieve_ste(ds.scene(0), empty), InvalidInput);
}

TEST_CASE("retrieval equals exhaustive scans") {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t J = 2 + static_cast<std::size_t>(rep) * 2;
    const MotionDataset ds = testing::random_dataset(J, 6, 5, 6, 2, rng);
    const SteIndex index(ds);
    for (int q = 0; q < 3; ++q) {
      const SceneField query = testing::random_field(5, 6, 2, rng);
      const Motion gt = testing::random_track(6, 5, 6, rng);
      std::size_t best_ste = 0, best_mse = 0, best_cheat = 0;
      double s_ste = -1.0, s_mse = 1e300, s_cheat = 1e300;
      for (std::size_t i = 0; i < J; ++i) {
        const double s = oracle_similarity(query, ds.scene(i), ds.motion(i));
        if (s > s_ste) s_ste = s, best_ste = i;
        double e = 0.0;
        for (std::size_t k = 0; k < query.size(); ++k) {
          e += std::pow(query.values()[k] - ds.scene(i).values()[k], 2);
        }
        if (e < s_mse) s_mse = e, best_mse = i;
        double d = 0.0;
        for (std::size_t k = 0; k < gt.dim(); ++k) {
          const double w = dim_kind(k) == DimKind::position ? 1.0
                           : dim_kind(k) == DimKind::rotation ? 0.01 : 0.0;
          d += w * std::pow(gt[k] - ds.motion(i)[k], 2);
        }
        if (d < s_cheat) s_cheat = d, best_cheat = i;
      }
      CHECK(retrieve_ste(query, ds).index == best_ste);
      CHECK(index.retrieve(query).index == best_ste);
      CHECK(retrieve_mse(query, ds).index == best_mse);
      CHECK(retrieve_cheat(gt, ds, {}).index == best_cheat);
      CHECK(retrieve_ste(query, ds).score == doctest::Approx(s_ste).epsilon(1e-9));
    }
  }
}

TEST_CASE("self retrieval on training fields") {
  std::mt19937_64 rng(7);
  const MotionDataset ds = testing::random_dataset(40, 8, 8, 8, 3, rng);
  const SteIndex index(ds);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(index.retrieve(ds.scene(i)).index == i);
    CHECK(retrieve_mse(ds.scene(i), ds).index == i);
  }
}
