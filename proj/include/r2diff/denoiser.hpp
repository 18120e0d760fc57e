#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "r2diff/dataset.hpp"
#include "r2diff/motion.hpp"
#include "r2diff/retrieval.hpp"
#include "r2diff/schedule.hpp"

namespace r2diff {

/// Sinusoidal embedding: entries (2k, 2k+1) = (sin(n / 10000^(2k/dim)),
/// cos(n / 10000^(2k/dim))). dim must be even.
std::vector<double> embed_timestep(double n, std::size_t dim);

enum class Precision { float32, float64 };

struct ArchConfig {
  std::size_t timesteps = 100;    // T, motion tokens per sample
  std::size_t feature_channels = 4;
  std::size_t hidden = 64;
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t time_embed = 64;
  std::size_t ffn_multiplier = 2;
  /// Fixed per-slot input standardization (state - shift) / scale.
  std::array<double, kStateDim> input_shift{};
  std::array<double, kStateDim> input_scale{1, 1, 1, 1, 1, 1, 1, 1, 1, 1};

  void validate() const;
  std::size_t motion_dim() const noexcept { return timesteps * kStateDim; }
};

/// Shift/scale from a dataset: per-slot mean, and max(std, 1).
void fit_input_normalization(ArchConfig& arch, const MotionDataset& ds);

struct ParameterBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
};

/// Anything that maps (noised motion, conditioning features, step) to a
/// noise estimate. Lets inference and loss code run against test oracles.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;

  virtual std::vector<double> predict(const Motion& mn, const STEFeature& feats,
                                      std::size_t n) const = 0;

  /// One estimate per item; the default loops over predict().
  virtual std::vector<std::vector<double>> predict_batch(std::span<const Motion> mn,
                                                         std::span<const STEFeature> feats,
                                                         std::span<const std::size_t> n) const;
};

/// Transformer noise predictor eps_theta(m_n, f_n, n). Tokens are one per
/// motion timestep (affine(state) + affine(feature) + PE(t)) plus one token
/// for the noise step n; a linear head reads 10 noise entries per timestep.
class DenoiserModel final : public NoisePredictor {
 public:
  DenoiserModel() = default;
  /// Random initialization from `seed`.
  DenoiserModel(const ArchConfig& arch, std::uint64_t seed);

  const ArchConfig& arch() const noexcept { return arch_; }
  std::span<const ParameterBlock> blocks() const noexcept { return blocks_; }
  const ParameterBlock& block(const std::string& name) const;

  std::span<const double> parameters() const noexcept { return params_; }
  std::span<double> parameters() noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  Precision precision() const noexcept { return precision_; }
  void set_precision(Precision p) noexcept { precision_ = p; }

  std::vector<double> predict(const Motion& mn, const STEFeature& feats,
                              std::size_t n) const override;
  std::vector<std::vector<double>> predict_batch(std::span<const Motion> mn,
                                                 std::span<const STEFeature> feats,
                                                 std::span<const std::size_t> n) const override;

  /// scale * sum_b ||target_b - eps_theta(b)||^2 and its gradient w.r.t. every
  /// parameter (written to grad, which must hold parameter_count() values).
  double loss_and_gradient(std::span<const Motion> mn, std::span<const STEFeature> feats,
                           std::span<const std::size_t> n,
                           std::span<const std::vector<double>> targets, double scale,
                           std::span<double> grad) const;

 private:
  void build_registry();

  ArchConfig arch_;
  std::vector<ParameterBlock> blocks_;
  std::vector<double> params_;
  Precision precision_ = Precision::float32;
};

/// Number of trainable scalars for an architecture.
std::size_t parameter_count(const ArchConfig& arch);

/// Checkpoint: "R2DM", version, architecture config, parameter count, then
/// the flat parameters as float32. Little-endian.
void write_checkpoint(const std::filesystem::path& path, const DenoiserModel& model);
DenoiserModel read_checkpoint(const std::filesystem::path& path);
ArchConfig read_checkpoint_arch(const std::filesystem::path& path);

enum class Optimizer { adam, sgd };
std::string to_string(Optimizer o);
Optimizer parse_optimizer(const std::string& s);

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  Optimizer optimizer = Optimizer::adam;
  double clip_norm = 1.0;
  /// Cosine decay of the learning rate to lr * final_lr_fraction.
  bool cosine_decay = true;
  double final_lr_fraction = 0.05;
  Precision precision = Precision::float32;

  void validate() const;
};

/// One training sample: clean motion plus the scene its features come from.
struct TrainingItem {
  const Motion* motion = nullptr;
  const SceneField* scene = nullptr;
};

/// Draws n ~ U{1..N} and eps ~ N(0, I) per item, noises the motion,
/// extracts features at the noised (u, v), and returns the mean over the
/// batch of ||eps - predict(m_n, f_n, n)||^2.
double batch_noise_loss(const NoisePredictor& predictor, std::span<const TrainingItem> batch,
                        const NoiseSchedule& s, std::mt19937_64& rng);

/// Adam / SGD state for one model, with global-norm gradient clipping.
class Trainer {
 public:
  Trainer(DenoiserModel& model, const TrainConfig& cfg);

  /// Same sampling as batch_noise_loss, then one parameter update.
  /// Returns the pre-update loss; throws TrainingDiverged on a non-finite loss.
  double training_step(std::span<const TrainingItem> batch, const NoiseSchedule& s,
                       std::mt19937_64& rng);

  std::size_t steps_taken() const noexcept { return step_; }
  double current_learning_rate() const noexcept;

 private:
  DenoiserModel* model_;
  TrainConfig cfg_;
  std::vector<double> grad_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t step_ = 0;
};

struct TrainingRun {
  DenoiserModel model;
  std::vector<double> loss_curve;
};

using TrainProgress = std::function<void(std::size_t step, double loss)>;

/// Trains a fresh model (initialized from cfg.seed) for cfg.steps steps.
TrainingRun train(const MotionDataset& ds, const NoiseSchedule& s, const ArchConfig& arch,
                  const TrainConfig& cfg, const TrainProgress& progress = {});

/// CSV "step,loss".
void write_loss_curve(const std::filesystem::path& path, std::span<const double> losses);

}  // namespace r2diff
