#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "szlab/rng.hpp"
#include "szlab/tensor.hpp"

namespace szlab {

/// Variance-preserving noise schedule over timesteps 0..T.
///
/// beta is indexed 1..T (beta(0) is undefined); alpha_bar(0) == 1 and
/// alpha_bar(t) is the running product of (1 - beta) accumulated in double.
class Schedule {
 public:
  static Schedule linear(int steps, double beta_start, double beta_end);
  static Schedule from_betas(std::vector<double> betas);

  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  double beta(int t) const;
  double alpha_bar(int t) const;
  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }
  double beta_start() const noexcept { return betas_.front(); }
  double beta_end() const noexcept { return betas_.back(); }

  void save(const std::filesystem::path& dir) const;
  static Schedule load(const std::filesystem::path& dir);

 private:
  explicit Schedule(std::vector<double> betas);

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

inline Schedule make_linear_schedule(int steps, double beta_start, double beta_end) {
  return Schedule::linear(steps, beta_start, beta_end);
}

/// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps
template <typename Real>
BasicTensor<Real> add_noise(const BasicTensor<Real>& z0, const BasicTensor<Real>& eps, int t, const Schedule& sched) {
  require_same_shape(z0, eps, "add_noise");
  const double ab = sched.alpha_bar(t);
  const auto a = static_cast<Real>(std::sqrt(ab));
  const auto b = static_cast<Real>(std::sqrt(1.0 - ab));
  BasicTensor<Real> out(z0.shape());
  for (std::size_t i = 0; i < z0.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

enum class SamplerKind { uniform, threshold_high, threshold_low, power, tanh };

std::string to_string(SamplerKind kind);
SamplerKind sampler_kind_from_string(const std::string& name);

/// Timestep distribution on normalised time s in [0, 1), rescaled to integer
/// steps in [0, T-1].
class TimestepSampler {
 public:
  TimestepSampler() = default;
  static TimestepSampler uniform() { return {}; }
  static TimestepSampler make(SamplerKind kind, double rho);

  SamplerKind kind() const noexcept { return kind_; }
  double rho() const noexcept { return rho_; }

  int sample(const Schedule& sched, Rng& rng) const;
  /// Maps a uniform draw u in [0,1) to a timestep; sample() is sample_from_uniform(rng.uniform()).
  int sample_from_uniform(double u, int steps) const;
  /// CDF of the continuous normalised-time density (used for KS checks).
  double cdf(double s) const;

 private:
  TimestepSampler(SamplerKind kind, double rho);
  double tanh_inverse_cdf(double u) const;

  SamplerKind kind_ = SamplerKind::uniform;
  double rho_ = 0.0;
  std::vector<double> tanh_cdf_;  // 4096-point cumulative table for the tanh family
};

}  // namespace szlab
