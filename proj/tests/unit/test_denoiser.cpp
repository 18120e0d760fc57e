#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "r2diff/denoiser.hpp"
#include "r2diff/error.hpp"

using namespace r2diff;

namespace {

ArchConfig tiny_arch() {
  ArchConfig a;
  a.timesteps = 4;
  a.feature_channels = 2;
  a.hidden = 8;
  a.blocks = 1;
  a.heads = 2;
  a.time_embed = 4;
  a.ffn_multiplier = 2;
  return a;
}

STEFeature random_features(std::size_t T, std::size_t C, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  STEFeature f;
  f.timesteps = T;
  f.channels = C;
  f.values.resize(T * C);
  for (double& x : f.values) x = normal(rng);
  return f;
}

void randomize(DenoiserModel& m, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  for (double& p : m.parameters()) p = normal(rng);
}

double loss_of(const DenoiserModel& m, const std::vector<Motion>& x, const std::vector<STEFeature>& f,
               const std::vector<std::size_t>& n, const std::vector<std::vector<double>>& targets,
               double scale) {
  const auto y = m.predict_batch(x, f, n);
  double sum = 0.0;
  for (std::size_t b = 0; b < y.size(); ++b) {
    for (std::size_t d = 0; d < y[b].size(); ++d) sum += std::pow(y[b][d] - targets[b][d], 2);
  }
  return scale * sum;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("timestep embedding") {
  const auto zero = embed_timestep(0.0, 6);
  CHECK(zero == std::vector<double>{0, 1, 0, 1, 0, 1});
  const auto one = embed_timestep(1.0, 4);
  CHECK(one[0] == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
  CHECK(one[1] == doctest::Approx(std::cos(1.0)).epsilon(1e-15));
  CHECK(one[2] == doctest::Approx(std::sin(0.01)).epsilon(1e-15));
  CHECK(one[3] == doctest::Approx(std::cos(0.01)).epsilon(1e-15));
  for (double n : {3.0, 77.0, 999.0}) {
    for (double x : embed_timestep(n, 64)) CHECK(std::abs(x) <= 1.0);
  }
  CHECK_THROWS_AS(embed_timestep(1.0, 5), InvalidConfig);
}

TEST_CASE("architecture validation and parameter layout") {
  ArchConfig a = tiny_arch();
  a.heads = 3;
  CHECK_THROWS_AS(a.validate(), InvalidConfig);
  a = tiny_arch();
  a.time_embed = 3;
  CHECK_THROWS_AS(a.validate(), InvalidConfig);

  const DenoiserModel m(tiny_arch(), 1);
  CHECK(m.parameter_count() == parameter_count(tiny_arch()));
  std::size_t total = 0;
  for (const auto& b : m.blocks()) {
    CHECK(b.offset == total);
    total += b.size();
  }
  CHECK(total == m.parameter_count());
  CHECK(m.block("head.w").rows == 8);
  CHECK(m.block("head.w").cols == kStateDim);
  CHECK_THROWS_AS(m.block("nope"), InvalidInput);
}

TEST_CASE("fresh model predicts zero and is deterministic") {
  std::mt19937_64 rng(1);
  const DenoiserModel a(tiny_arch(), 9);
  const DenoiserModel b(tiny_arch(), 9);
  CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  const Motion x = testing::random_motion(4, rng);
  const STEFeature f = random_features(4, 2, rng);
  for (double e : a.predict(x, f, 17)) CHECK(e == 0.0);

  DenoiserModel r(tiny_arch(), 9);
  randomize(r, rng, 0.3);
  const auto y1 = r.predict(x, f, 17);
  const auto y2 = r.predict(x, f, 17);
  CHECK(y1 == y2);
  CHECK(y1.size() == 40);
}

TEST_CASE("batched prediction equals one-by-one prediction") {
  std::mt19937_64 rng(2);
  DenoiserModel m(tiny_arch(), 3);
  randomize(m, rng, 0.3);
  m.set_precision(Precision::float64);
  std::vector<Motion> x;
  std::vector<STEFeature> f;
  std::vector<std::size_t> n;
  for (int b = 0; b < 40; ++b) {
    x.push_back(testing::random_motion(4, rng));
    f.push_back(random_features(4, 2, rng));
    n.push_back(static_cast<std::size_t>(1 + b * 7));
  }
  const auto batch = m.predict_batch(x, f, n);
  for (std::size_t b = 0; b < x.size(); ++b) {
    const auto single = m.predict(x[b], f[b], n[b]);
    for (std::size_t d = 0; d < single.size(); ++d) CHECK(std::abs(batch[b][d] - single[d]) < 1e-12);
  }
}

TEST_CASE("analytic gradient matches central differences") {
  std::mt19937_64 rng(3);
  const ArchConfig arch = tiny_arch();
  double worst = 0.0;
  for (int set = 0; set < 5; ++set) {
    DenoiserModel m(arch, 100 + set);
    randomize(m, rng, 0.4);
    m.set_precision(Precision::float64);
    std::vector<Motion> x;
    std::vector<STEFeature> f;
    std::vector<std::size_t> n;
    std::vector<std::vector<double>> targets;
    for (int b = 0; b < 2; ++b) {
      x.push_back(testing::random_motion(4, rng));
      f.push_back(random_features(4, 2, rng));
      n.push_back(static_cast<std::size_t>(5 + 40 * b + set));
      const Motion t = testing::random_motion(4, rng);
      targets.emplace_back(t.flat().begin(), t.flat().end());
    }
    const double scale = 0.5;
    std::vector<double> grad(m.parameter_count());
    m.loss_and_gradient(x, f, n, targets, scale, grad);
    const double h = 1e-5;
    for (std::size_t k = 0; k < m.parameter_count(); ++k) {
      const double keep = m.parameters()[k];
      m.parameters()[k] = keep + h;
      const double up = loss_of(m, x, f, n, targets, scale);
      m.parameters()[k] = keep - h;
      const double down = loss_of(m, x, f, n, targets, scale);
      m.parameters()[k] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(numeric - grad[k]) / std::max({std::abs(numeric), std::abs(grad[k]), 1e-3});
      worst = std::max(worst, err);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("float32 and float64 paths agree") {
  std::mt19937_64 rng(4);
  DenoiserModel m(tiny_arch(), 5);
  randomize(m, rng, 0.3);
  const Motion x = testing::random_motion(4, rng);
  const STEFeature f = random_features(4, 2, rng);
  m.set_precision(Precision::float64);
  const auto y64 = m.predict(x, f, 30);
  m.set_precision(Precision::float32);
  const auto y32 = m.predict(x, f, 30);
  for (std::size_t d = 0; d < y64.size(); ++d) CHECK(std::abs(y64[d] - y32[d]) < 1e-4 * (1.0 + std::abs(y64[d])));
}

TEST_CASE("positional encoding breaks timestep permutation symmetry") {
  std::mt19937_64 rng(5);
  DenoiserModel m(tiny_arch(), 6);
  // A few optimizer steps move the zero head so outputs are informative.
  TrainConfig cfg;
  cfg.steps = 10;
  cfg.batch_size = 4;
  Trainer trainer(m, cfg);
  const MotionDataset ds = testing::random_dataset(6, 4, 5, 5, 2, rng);
  std::vector<TrainingItem> batch;
  for (std::size_t i = 0; i < 4; ++i) batch.push_back({&ds.motion(i), &ds.scene(i)});
  const NoiseSchedule s = basic_schedule(100);
  std::mt19937_64 train_rng(1);
  for (int step = 0; step < 10; ++step) trainer.training_step(batch, s, train_rng);

  for (int rep = 0; rep < 10; ++rep) {
    const Motion x = testing::random_motion(4, rng);
    const STEFeature f = random_features(4, 2, rng);
    Motion xs = x;
    STEFeature fs = f;
    for (std::size_t k = 0; k < kStateDim; ++k) std::swap(xs[k], xs[kStateDim + k]);
    for (std::size_t c = 0; c < 2; ++c) std::swap(fs.values[c], fs.values[2 + c]);
    const auto y = m.predict(x, f, 20);
    const auto ys = m.predict(xs, fs, 20);
    // Undo the swap on the output and compare.
    double diff = 0.0;
    for (std::size_t k = 0; k < kStateDim; ++k) {
      diff = std::max(diff, std::abs(y[k] - ys[kStateDim + k]));
      diff = std::max(diff, std::abs(y[kStateDim + k] - ys[k]));
    }
    CHECK(diff > 1e-8);
  }
}

TEST_CASE("outputs stay finite for large inputs") {
  std::mt19937_64 rng(6);
  DenoiserModel m(tiny_arch(), 7);
  randomize(m, rng, 0.3);
  for (double mag : {1.0, 1e2, 1e3}) {
    const Motion x = testing::random_motion(4, rng, mag);
    STEFeature f = random_features(4, 2, rng);
    for (double& v : f.values) v *= mag;
    const auto y = m.predict(x, f, 999);
    CHECK(y.size() == 40);
    for (double e : y) CHECK(std::isfinite(e));
  }
}

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 rng(7);
  ArchConfig arch = tiny_arch();
  arch.input_shift[0] = 16.0;
  arch.input_scale[0] = 8.0;
  DenoiserModel m(arch, 8);
  randomize(m, rng, 0.3);
  const auto dir = std::filesystem::temp_directory_path();
  write_checkpoint(dir / "r2diff_unit_a.r2dm", m);
  const DenoiserModel back = read_checkpoint(dir / "r2diff_unit_a.r2dm");
  CHECK(back.arch().hidden == 8);
  CHECK(back.arch().input_shift[0] == 16.0);
  CHECK(back.arch().input_scale[0] == 8.0);
  CHECK(read_checkpoint_arch(dir / "r2diff_unit_a.r2dm").timesteps == 4);
  for (std::size_t k = 0; k < m.parameter_count(); ++k) {
    CHECK(back.parameters()[k] == static_cast<double>(static_cast<float>(m.parameters()[k])));
  }
  write_checkpoint(dir / "r2diff_unit_b.r2dm", back);
  CHECK(slurp(dir / "r2diff_unit_a.r2dm") == slurp(dir / "r2diff_unit_b.r2dm"));

  std::ofstream(dir / "r2diff_unit_c.r2dm", std::ios::binary) << "R2DMxx";
  CHECK_THROWS_AS(read_checkpoint(dir / "r2diff_unit_c.r2dm"), FormatError);
  CHECK_THROWS_AS(read_checkpoint(dir / "r2diff_unit_missing.r2dm"), NotFound);
  for (const char* f : {"r2diff_unit_a.r2dm", "r2diff_unit_b.r2dm", "r2diff_unit_c.r2dm"}) {
    std::filesystem::remove(dir / f);
  }
}

TEST_CASE("input normalization statistics") {
  MotionDataset ds;
  ds.meta.timesteps = 2;
  ds.meta.height = ds.meta.width = 2;
  ds.meta.channels = 1;
  Motion a(2), b(2);
  a[0] = 0.0, a[10] = 4.0;
  b[0] = 8.0, b[10] = 12.0;
  a[2] = b[2] = 0.5;
  ds.entries = {{a, SceneField(2, 2, 1)}, {b, SceneField(2, 2, 1)}};
  ArchConfig arch;
  arch.timesteps = 2;
  fit_input_normalization(arch, ds);
  CHECK(arch.input_shift[0] == doctest::Approx(6.0));
  CHECK(arch.input_scale[0] == doctest::Approx(std::sqrt(20.0)));
  CHECK(arch.input_shift[2] == doctest::Approx(0.25));
  CHECK(arch.input_scale[2] == 1.0);
}
