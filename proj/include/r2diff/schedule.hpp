#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "r2diff/dataset.hpp"
#include "r2diff/motion.hpp"

namespace r2diff {

/// Reverse-step variance convention.
///  ddpm:  beta_hat_n = (1 - abar_{n-1}) / (1 - abar_n) * beta_n
///  paper: beta_hat_n = (1 - abar_{n-1}) / (1 - abar_n)   (no beta_n factor)
enum class PosteriorVariance { ddpm, paper };

std::string to_string(PosteriorVariance v);
PosteriorVariance parse_posterior_variance(const std::string& s);

/// beta_1..beta_N with alpha_n = 1 - beta_n and abar_n = prod_{i<=n} alpha_i.
/// Steps are 1-based; alpha_bar(0) == 1. Immutable after construction.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  /// Throws InvalidSchedule unless every beta lies in (0, 1).
  static NoiseSchedule from_betas(std::vector<double> betas, double beta0, double gamma,
                                  PosteriorVariance variance = PosteriorVariance::ddpm);

  std::size_t steps() const noexcept { return betas_.size(); }
  double beta(std::size_t n) const { return betas_.at(n - 1); }
  double alpha(std::size_t n) const { return 1.0 - beta(n); }
  double alpha_bar(std::size_t n) const { return alpha_bars_.at(n); }
  double alpha_bar_final() const { return alpha_bars_.back(); }

  /// beta_hat_n for 1 <= n <= N under the schedule's variance convention.
  double posterior_variance(std::size_t n) const;

  std::span<const double> betas() const noexcept { return betas_; }
  /// abar_0 .. abar_N (N + 1 values).
  std::span<const double> alpha_bars() const noexcept { return alpha_bars_; }

  double beta0() const noexcept { return beta0_; }
  double gamma() const noexcept { return gamma_; }
  PosteriorVariance variance() const noexcept { return variance_; }
  NoiseSchedule with_variance(PosteriorVariance v) const;

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  double beta0_ = 0.0;
  double gamma_ = 0.0;
  PosteriorVariance variance_ = PosteriorVariance::ddpm;
};

/// beta_n = beta0 + gamma * n for n = 1..N.
NoiseSchedule linear_schedule(double beta0, double gamma, std::size_t steps,
                              PosteriorVariance variance = PosteriorVariance::ddpm);

/// Conventional DDPM schedule: beta rises linearly from beta_start (n = 1)
/// to beta_end (n = N), expressed as an equivalent (beta0, gamma) pair.
NoiseSchedule basic_schedule(std::size_t steps, double beta_start = 1e-4, double beta_end = 0.02,
                             PosteriorVariance variance = PosteriorVariance::ddpm);

/// sqrt(abar_n) * m0 + sqrt(1 - abar_n) * eps; n = 0 returns m0 unchanged.
Motion forward_noise(const Motion& m0, std::size_t n, std::span<const double> eps,
                     const NoiseSchedule& s);

/// One ancestral step: mu(mn, eps_hat) + sqrt(beta_hat_n) * z.
Motion reverse_step(const Motion& mn, std::span<const double> eps_hat, std::size_t n,
                    const NoiseSchedule& s, std::span<const double> z);

struct TargetOptions {
  std::size_t rank = 1;
  DistanceWeights weights;
  double delta_min = 1e-6;
};

struct AlphaBarTarget {
  double alpha_bar = 1.0;
  /// max over (i, d) of D0(m_i, m_{k_i}, d), clamped below at delta_min.
  double max_nn_sq_distance = 0.0;
  /// Same maximum before clamping.
  double raw_max_nn_sq_distance = 0.0;
};

/// abar_N = 1 / (1 + max_{i,d} D0(m_i, m_{k_i}, d)), k_i the rank-th neighbor.
AlphaBarTarget target_alpha_bar(const MotionDataset& ds, const TargetOptions& opts);

/// gamma with prod_{n=1..N} (1 - beta0 - gamma n) = target, by bisection.
double solve_gamma(double beta0, std::size_t steps, double target);

struct TuningResult {
  double gamma = 0.0;
  double beta0 = 0.0;
  double target_alpha_bar = 1.0;
  double max_nn_sq_distance = 0.0;
  double raw_max_nn_sq_distance = 0.0;
  std::size_t rank = 1;
};

struct TuneOptions {
  TargetOptions target;
  double beta0 = 1e-4;
  std::size_t steps = 1000;
  PosteriorVariance variance = PosteriorVariance::ddpm;
};

struct TunedSchedule {
  NoiseSchedule schedule;
  TuningResult result;
};

/// target_alpha_bar -> solve_gamma -> linear_schedule.
TunedSchedule tune(const MotionDataset& ds, const TuneOptions& opts);

/// Text format: header "N beta0 gamma posterior_variance", then N lines
/// "n beta_n alpha_bar_n" at 17 significant digits.
void write_schedule(const std::filesystem::path& path, const NoiseSchedule& s);
NoiseSchedule read_schedule(const std::filesystem::path& path);

}  // namespace r2diff
