#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "r2diff/error.hpp"
#include "r2diff/pipeline.hpp"

using namespace r2diff;

namespace {

// Returns the noise that maps m0 to the current state, i.e. the exact eps.
class ExactNoise final : public NoisePredictor {
 public:
  ExactNoise(const Motion& m0, const NoiseSchedule& s) : m0_(m0), s_(s) {}
  std::vector<double> predict(const Motion& mn, const STEFeature&, std::size_t n) const override {
    std::vector<double> eps(mn.dim());
    const double a = std::sqrt(s_.alpha_bar(n)), b = std::sqrt(1.0 - s_.alpha_bar(n));
    for (std::size_t d = 0; d < eps.size(); ++d) eps[d] = (mn[d] - a * m0_[d]) / b;
    return eps;
  }

 private:
  Motion m0_;
  NoiseSchedule s_;
};

class NanNoise final : public NoisePredictor {
 public:
  std::vector<double> predict(const Motion& mn, const STEFeature&, std::size_t) const override {
    return std::vector<double>(mn.dim(), std::numeric_limits<double>::quiet_NaN());
  }
};

class Damped final : public NoisePredictor {
 public:
  std::vector<double> predict(const Motion& mn, const STEFeature& f, std::size_t n) const override {
    std::vector<double> eps(mn.dim());
    for (std::size_t d = 0; d < eps.size(); ++d) {
      eps[d] = 0.1 * mn[d] + 0.01 * f.values[(d / kStateDim) * f.channels] + 1e-4 * static_cast<double>(n);
    }
    return eps;
  }
};

}  // namespace

TEST_CASE("mode names") {
  CHECK(parse_inference_mode("ret-ste") == InferenceMode::ret_ste);
  CHECK(parse_inference_mode("ret") == InferenceMode::ret_ste);
  CHECK(parse_inference_mode(to_string(InferenceMode::ret_cheat)) == InferenceMode::ret_cheat);
  CHECK_THROWS_AS(parse_inference_mode("guess"), InvalidConfig);
}

TEST_CASE("configuration checks") {
  const NoiseSchedule s = basic_schedule(20);
  InferenceConfig cfg;
  cfg.steps = 20;
  cfg.n_start = 21;
  CHECK_THROWS_AS(cfg.validate(s), InvalidConfig);
  cfg.n_start = 10;
  cfg.steps = 30;
  CHECK_THROWS_AS(cfg.validate(s), InvalidConfig);
  cfg.steps = 20;
  cfg.mode = InferenceMode::rand;
  CHECK(cfg.effective_start() == 20);
}

TEST_CASE("zero refinement returns the retrieved motion") {
  std::mt19937_64 rng(1);
  const MotionDataset ds = testing::random_dataset(8, 6, 6, 6, 2, rng);
  const NoiseSchedule s = basic_schedule(30);
  InferenceConfig cfg;
  cfg.steps = 30;
  cfg.n_start = 0;
  for (InferenceMode mode : {InferenceMode::ret_ste, InferenceMode::ret_mse, InferenceMode::ret_cheat}) {
    cfg.mode = mode;
    std::mt19937_64 r(2);
    const auto out = infer(NanNoise(), s, ds.scene(5), ds, cfg, r, &ds.motion(5));
    REQUIRE(out.retrieval.has_value());
    CHECK(out.retrieval->index == 5);
    CHECK(out.motion == ds.motion(5));
  }
  cfg.mode = InferenceMode::ret_cheat;
  std::mt19937_64 r(3);
  CHECK_THROWS_AS(infer(NanNoise(), s, ds.scene(5), ds, cfg, r), InvalidInput);
}

TEST_CASE("exact-noise oracle recovers the clean motion") {
  std::mt19937_64 rng(4);
  MotionDataset ds = testing::random_dataset(1, 6, 6, 6, 2, rng);
  const NoiseSchedule s = basic_schedule(40);
  const ExactNoise oracle(ds.motion(0), s);
  InferenceConfig cfg;
  cfg.steps = 40;
  cfg.mode = InferenceMode::ret_ste;
  cfg.n_start = 1;
  std::mt19937_64 r(5);
  const auto one = infer(oracle, s, ds.scene(0), ds, cfg, r);
  for (std::size_t d = 0; d < one.motion.dim(); ++d) CHECK(std::abs(one.motion[d] - ds.motion(0)[d]) < 1e-6);

  cfg.mode = InferenceMode::rand;
  const auto full = infer(oracle, s, ds.scene(0), ds, cfg, r);
  CHECK_FALSE(full.retrieval.has_value());
  for (std::size_t d = 0; d < full.motion.dim(); ++d) CHECK(std::abs(full.motion[d] - ds.motion(0)[d]) < 1e-6);
}

TEST_CASE("non-finite predictions are reported") {
  std::mt19937_64 rng(6);
  const MotionDataset ds = testing::random_dataset(3, 4, 6, 6, 2, rng);
  const NoiseSchedule s = basic_schedule(10);
  InferenceConfig cfg;
  cfg.steps = 10;
  cfg.n_start = 5;
  std::mt19937_64 r(7);
  CHECK_THROWS_AS(infer(NanNoise(), s, ds.scene(0), ds, cfg, r), InferenceDiverged);
}

TEST_CASE("batched inference is deterministic and batch independent") {
  std::mt19937_64 rng(8);
  const MotionDataset ds = testing::random_dataset(10, 5, 6, 6, 2, rng);
  const NoiseSchedule s = basic_schedule(25);
  std::vector<SceneField> scenes;
  for (int q = 0; q < 5; ++q) scenes.push_back(testing::random_field(6, 6, 2, rng));
  std::vector<InferenceQuery> queries;
  for (std::size_t q = 0; q < scenes.size(); ++q) queries.push_back({&scenes[q], nullptr, 100 + q});

  for (InferenceMode mode : {InferenceMode::rand, InferenceMode::ret_ste}) {
    InferenceConfig cfg;
    cfg.mode = mode;
    cfg.steps = 25;
    cfg.n_start = 12;
    cfg.seed = 99;
    const auto a = infer_batch(Damped(), s, queries, ds, cfg);
    const auto b = infer_batch(Damped(), s, queries, ds, cfg);
    const auto tail = infer_batch(Damped(), s, std::span(queries).subspan(3), ds, cfg);
    for (std::size_t q = 0; q < queries.size(); ++q) CHECK(a[q].motion == b[q].motion);
    CHECK(tail[0].motion == a[3].motion);
    CHECK(tail[1].motion == a[4].motion);

    auto r = query_rng(99, 103);
    const auto single = infer(Damped(), s, scenes[3], ds, cfg, r);
    CHECK(single.motion == a[3].motion);

    cfg.seed = 100;
    CHECK_FALSE(infer_batch(Damped(), s, queries, ds, cfg)[0].motion == a[0].motion);
  }
}
