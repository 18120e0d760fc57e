#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "r2diff/denoiser.hpp"
#include "r2diff/error.hpp"

namespace r2diff {

std::string to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(const std::string& s) {
  if (s == "adam") return Optimizer::adam;
  if (s == "sgd") return Optimizer::sgd;
  throw InvalidConfig("unknown optimizer '" + s + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw InvalidConfig("batch size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidConfig("learning rate must be positive");
  }
  if (!(clip_norm >= 0.0)) throw InvalidConfig("clip norm must be non-negative");
  if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0)) {
    throw InvalidConfig("final learning-rate fraction must lie in [0, 1]");
  }
}

namespace {

struct NoisedBatch {
  std::vector<Motion> noised;
  std::vector<STEFeature> features;
  std::vector<std::size_t> steps;
  std::vector<std::vector<double>> eps;
};

NoisedBatch sample_noised_batch(std::span<const TrainingItem> batch, const NoiseSchedule& s,
                                std::mt19937_64& rng) {
  if (batch.empty()) throw InvalidInput("empty training batch");
  NoisedBatch out;
  std::uniform_int_distribution<std::size_t> step_dist(1, s.steps());
  for (const TrainingItem& item : batch) {
    if (item.motion == nullptr || item.scene == nullptr) {
      throw InvalidInput("training item without motion or scene");
    }
    const std::size_t n = step_dist(rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> eps(item.motion->dim());
    for (double& e : eps) e = normal(rng);
    Motion mn = forward_noise(*item.motion, n, eps, s);
    out.features.push_back(ste_extract(*item.scene, mn));
    out.noised.push_back(std::move(mn));
    out.steps.push_back(n);
    out.eps.push_back(std::move(eps));
  }
  return out;
}

}  // namespace

double batch_noise_loss(const NoisePredictor& predictor, std::span<const TrainingItem> batch,
                        const NoiseSchedule& s, std::mt19937_64& rng) {
  const NoisedBatch nb = sample_noised_batch(batch, s, rng);
  const auto pred = predictor.predict_batch(nb.noised, nb.features, nb.steps);
  double total = 0.0;
  for (std::size_t b = 0; b < pred.size(); ++b) {
    if (pred[b].size() != nb.eps[b].size()) throw InvalidInput("prediction has the wrong length");
    for (std::size_t d = 0; d < pred[b].size(); ++d) {
      const double r = nb.eps[b][d] - pred[b][d];
      total += r * r;
    }
  }
  return total / static_cast<double>(batch.size());
}

Trainer::Trainer(DenoiserModel& model, const TrainConfig& cfg) : model_(&model), cfg_(cfg) {
  cfg_.validate();
  grad_.assign(model.parameter_count(), 0.0);
  m_.assign(model.parameter_count(), 0.0);
  v_.assign(model.parameter_count(), 0.0);
  model.set_precision(cfg_.precision);
}

double Trainer::current_learning_rate() const noexcept {
  if (!cfg_.cosine_decay) return cfg_.learning_rate;
  const double progress =
      cfg_.steps == 0 ? 1.0
                      : std::min(1.0, static_cast<double>(step_) / static_cast<double>(cfg_.steps));
  const double f = cfg_.final_lr_fraction;
  return cfg_.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

double Trainer::training_step(std::span<const TrainingItem> batch, const NoiseSchedule& s,
                              std::mt19937_64& rng) {
  const NoisedBatch nb = sample_noised_batch(batch, s, rng);
  const double lr = current_learning_rate();
  const double loss =
      model_->loss_and_gradient(nb.noised, nb.features, nb.steps, nb.eps,
                                1.0 / static_cast<double>(batch.size()), grad_);
  double norm_sq = 0.0;
  for (double g : grad_) norm_sq += g * g;
  if (!std::isfinite(loss) || !std::isfinite(norm_sq)) {
    throw TrainingDiverged("training loss became non-finite at step " + std::to_string(step_ + 1) +
                               " (learning rate " + std::to_string(lr) + ")",
                           step_ + 1, lr);
  }
  const double norm = std::sqrt(norm_sq);
  const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

  auto params = model_->parameters();
  ++step_;
  if (cfg_.optimizer == Optimizer::sgd) {
    for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr * clip * grad_[k];
  } else {
    constexpr double b1 = 0.9;
    constexpr double b2 = 0.999;
    constexpr double eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double g = clip * grad_[k];
      m_[k] = b1 * m_[k] + (1.0 - b1) * g;
      v_[k] = b2 * v_[k] + (1.0 - b2) * g * g;
      params[k] -= lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps);
    }
  }
  return loss;
}

TrainingRun train(const MotionDataset& ds, const NoiseSchedule& s, const ArchConfig& arch,
                  const TrainConfig& cfg, const TrainProgress& progress) {
  cfg.validate();
  ds.validate();
  if (ds.size() == 0) throw InvalidInput("cannot train on an empty dataset");
  if (ds.meta.timesteps != arch.timesteps || ds.meta.channels != arch.feature_channels) {
    throw InvalidConfig("architecture does not match the dataset's T or channel count");
  }
  TrainingRun run{DenoiserModel(arch, cfg.seed), {}};
  Trainer trainer(run.model, cfg);
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    0x74726169u};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<std::size_t> pick(0, ds.size() - 1);
  std::vector<TrainingItem> batch(cfg.batch_size);
  run.loss_curve.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (auto& item : batch) {
      const std::size_t i = pick(rng);
      item = {&ds.entries[i].motion, &ds.entries[i].scene};
    }
    const double loss = trainer.training_step(batch, s, rng);
    run.loss_curve.push_back(loss);
    if (progress) progress(step + 1, loss);
  }
  return run;
}

void write_loss_curve(const std::filesystem::path& path, std::span<const double> losses) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw NotFound("cannot open '" + path.string() + "' for writing");
  out << "step,loss\n";
  out.precision(9);
  for (std::size_t i = 0; i < losses.size(); ++i) out << (i + 1) << ',' << losses[i] << '\n';
}

}  // namespace r2diff
