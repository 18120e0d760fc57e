#include "r2diff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "r2diff/error.hpp"

namespace r2diff {

std::string to_string(PosteriorVariance v) {
  return v == PosteriorVariance::paper ? "paper" : "ddpm";
}

PosteriorVariance parse_posterior_variance(const std::string& s) {
  if (s == "ddpm") return PosteriorVariance::ddpm;
  if (s == "paper") return PosteriorVariance::paper;
  throw InvalidConfig("posterior_variance must be 'ddpm' or 'paper', got '" + s + "'");
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas, double beta0, double gamma,
                                        PosteriorVariance variance) {
  if (betas.empty()) throw InvalidSchedule("schedule needs at least one step");
  NoiseSchedule s;
  s.alpha_bars_.reserve(betas.size() + 1);
  s.alpha_bars_.push_back(1.0);
  for (std::size_t n = 0; n < betas.size(); ++n) {
    const double b = betas[n];
    if (!(b > 0.0 && b < 1.0)) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "beta_" << n + 1 << " = " << b << " is outside (0, 1)";
      throw InvalidSchedule(msg.str());
    }
    s.alpha_bars_.push_back(s.alpha_bars_.back() * (1.0 - b));
  }
  s.betas_ = std::move(betas);
  s.beta0_ = beta0;
  s.gamma_ = gamma;
  s.variance_ = variance;
  return s;
}

double NoiseSchedule::posterior_variance(std::size_t n) const {
  if (n < 1 || n > steps()) throw InvalidInput("posterior variance needs 1 <= n <= N");
  const double ratio = (1.0 - alpha_bars_[n - 1]) / (1.0 - alpha_bars_[n]);
  return variance_ == PosteriorVariance::ddpm ? ratio * betas_[n - 1] : ratio;
}

NoiseSchedule NoiseSchedule::with_variance(PosteriorVariance v) const {
  NoiseSchedule s = *this;
  s.variance_ = v;
  return s;
}

NoiseSchedule linear_schedule(double beta0, double gamma, std::size_t steps,
                              PosteriorVariance variance) {
  if (steps == 0) throw InvalidSchedule("schedule needs N >= 1");
  std::vector<double> betas(steps);
  for (std::size_t n = 1; n <= steps; ++n) betas[n - 1] = beta0 + gamma * static_cast<double>(n);
  return NoiseSchedule::from_betas(std::move(betas), beta0, gamma, variance);
}

NoiseSchedule basic_schedule(std::size_t steps, double beta_start, double beta_end,
                             PosteriorVariance variance) {
  if (steps < 2) return linear_schedule(beta_start, 0.0, std::max<std::size_t>(steps, 1), variance);
  const double gamma = (beta_end - beta_start) / static_cast<double>(steps - 1);
  return linear_schedule(beta_start - gamma, gamma, steps, variance);
}

Motion forward_noise(const Motion& m0, std::size_t n, std::span<const double> eps,
                     const NoiseSchedule& s) {
  if (n > s.steps()) throw InvalidInput("noise step exceeds schedule length");
  if (eps.size() != m0.dim()) throw InvalidInput("noise vector length differs from motion");
  if (n == 0) return m0;
  const double a = std::sqrt(s.alpha_bar(n));
  const double b = std::sqrt(1.0 - s.alpha_bar(n));
  Motion out = m0;
  auto flat = out.flat();
  for (std::size_t d = 0; d < flat.size(); ++d) flat[d] = a * flat[d] + b * eps[d];
  return out;
}

Motion reverse_step(const Motion& mn, std::span<const double> eps_hat, std::size_t n,
                    const NoiseSchedule& s, std::span<const double> z) {
  if (n < 1 || n > s.steps()) throw InvalidInput("reverse step needs 1 <= n <= N");
  if (eps_hat.size() != mn.dim() || z.size() != mn.dim()) {
    throw InvalidInput("noise vector length differs from motion");
  }
  const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(n));
  const double eps_coef = s.beta(n) / std::sqrt(1.0 - s.alpha_bar(n));
  const double sigma = std::sqrt(s.posterior_variance(n));
  Motion out = mn;
  auto flat = out.flat();
  for (std::size_t d = 0; d < flat.size(); ++d) {
    flat[d] = inv_sqrt_alpha * (flat[d] - eps_coef * eps_hat[d]) + sigma * z[d];
  }
  return out;
}

AlphaBarTarget target_alpha_bar(const MotionDataset& ds, const TargetOptions& opts) {
  if (ds.size() == 0) throw InvalidInput("cannot tune on an empty dataset");
  if (!(opts.delta_min > 0.0)) throw InvalidConfig("delta_min must be positive");
  const auto neighbors = kth_nearest_table(ds, opts.rank, opts.weights);
  double max_d = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Motion& a = ds.motion(i);
    const Motion& b = ds.motion(neighbors[i]);
    for (std::size_t d = 0; d < a.dim(); ++d) {
      max_d = std::max(max_d, per_dim_sq_distance(a, b, d, opts.weights));
    }
  }
  AlphaBarTarget out;
  out.raw_max_nn_sq_distance = max_d;
  out.max_nn_sq_distance = std::max(max_d, opts.delta_min);
  out.alpha_bar = 1.0 / (1.0 + out.max_nn_sq_distance);
  return out;
}

namespace {

double product_of_alphas(double beta0, double gamma, std::size_t steps) {
  double p = 1.0;
  for (std::size_t n = 1; n <= steps; ++n) p *= 1.0 - beta0 - gamma * static_cast<double>(n);
  return p;
}

double log_product_of_alphas(double beta0, double gamma, std::size_t steps) {
  double s = 0.0;
  for (std::size_t n = 1; n <= steps; ++n) {
    const double f = 1.0 - beta0 - gamma * static_cast<double>(n);
    if (!(f > 0.0)) return -std::numeric_limits<double>::infinity();
    s += std::log(f);
  }
  return s;
}

double suggest_beta0(double target, std::size_t steps) {
  // Any beta0 below 1 - target^(1/N) makes (1 - beta0)^N exceed the target.
  const double bound = 1.0 - std::pow(target, 1.0 / static_cast<double>(steps));
  return bound > 0.0 ? 0.5 * bound : 0.0;
}

}  // namespace

double solve_gamma(double beta0, std::size_t steps, double target) {
  if (steps == 0) throw InvalidInput("solve_gamma needs N >= 1");
  if (!(target > 0.0 && target < 1.0)) throw InvalidInput("target alpha_bar must lie in (0, 1)");
  if (!(beta0 >= 0.0 && beta0 < 1.0)) throw InvalidInput("beta0 must lie in [0, 1)");

  const double log_target = std::log(target);
  if (!(log_product_of_alphas(beta0, 0.0, steps) > log_target)) {
    throw UnreachableTarget("target alpha_bar " + std::to_string(target) +
                                " is not below (1 - beta0)^N; lower beta0",
                            suggest_beta0(target, steps));
  }

  // beta_N < 1 requires gamma < (1 - beta0) / N; keep a relative margin.
  const double gamma_max = (1.0 - beta0) / static_cast<double>(steps);
  double lo = 0.0;
  double hi = gamma_max * (1.0 - 1e-12);
  if (log_product_of_alphas(beta0, hi, steps) > log_target) {
    throw UnreachableTarget("target alpha_bar " + std::to_string(target) +
                                " is too small for any gamma with beta_N < 1",
                            0.0);
  }
  // log prod is strictly decreasing in gamma on [lo, hi].
  for (int iter = 0; iter < 400 && hi > lo; ++iter) {
    const double mid = lo + 0.5 * (hi - lo);
    if (mid <= lo || mid >= hi) break;
    if (log_product_of_alphas(beta0, mid, steps) > log_target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double err_lo = std::abs(product_of_alphas(beta0, lo, steps) - target);
  const double err_hi = std::abs(product_of_alphas(beta0, hi, steps) - target);
  const double gamma = err_lo <= err_hi ? lo : hi;
  if (std::min(err_lo, err_hi) > 1e-9) {
    throw Error("gamma bisection did not reach 1e-9 on the product");
  }
  return gamma;
}

TunedSchedule tune(const MotionDataset& ds, const TuneOptions& opts) {
  const AlphaBarTarget target = target_alpha_bar(ds, opts.target);
  double gamma = 0.0;
  try {
    gamma = solve_gamma(opts.beta0, opts.steps, target.alpha_bar);
  } catch (const UnreachableTarget& e) {
    throw UnreachableTarget(std::string(e.what()) + " (suggested beta0 <= " +
                                std::to_string(e.suggested_beta0()) + ")",
                            e.suggested_beta0());
  }
  TunedSchedule out;
  out.schedule = linear_schedule(opts.beta0, gamma, opts.steps, opts.variance);
  out.result.gamma = gamma;
  out.result.beta0 = opts.beta0;
  out.result.target_alpha_bar = target.alpha_bar;
  out.result.max_nn_sq_distance = target.max_nn_sq_distance;
  out.result.raw_max_nn_sq_distance = target.raw_max_nn_sq_distance;
  out.result.rank = opts.target.rank;
  return out;
}

void write_schedule(const std::filesystem::path& path, const NoiseSchedule& s) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw NotFound("cannot open '" + path.string() + "' for writing");
  char line[160];
  std::snprintf(line, sizeof line, "%zu %.17g %.17g %s\n", s.steps(), s.beta0(), s.gamma(),
                to_string(s.variance()).c_str());
  out << line;
  for (std::size_t n = 1; n <= s.steps(); ++n) {
    std::snprintf(line, sizeof line, "%zu %.17g %.17g\n", n, s.beta(n), s.alpha_bar(n));
    out << line;
  }
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

NoiseSchedule read_schedule(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open schedule '" + path.string() + "'");
  std::size_t steps = 0;
  double beta0 = 0.0;
  double gamma = 0.0;
  std::string variance;
  if (!(in >> steps >> beta0 >> gamma >> variance)) {
    throw FormatError("'" + path.string() + "' has a malformed schedule header");
  }
  std::vector<double> betas(steps);
  for (std::size_t n = 1; n <= steps; ++n) {
    std::size_t idx = 0;
    double beta = 0.0;
    double alpha_bar = 0.0;
    if (!(in >> idx >> beta >> alpha_bar) || idx != n) {
      throw FormatError("'" + path.string() + "' schedule line " + std::to_string(n) +
                        " is malformed");
    }
    betas[n - 1] = beta;
  }
  return NoiseSchedule::from_betas(std::move(betas), beta0, gamma,
                                   parse_posterior_variance(variance));
}

}  // namespace r2diff
