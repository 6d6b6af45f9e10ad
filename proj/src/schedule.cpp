#include "szlab/schedule.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "szlab/tensor_io.hpp"

namespace szlab {

namespace {
constexpr std::size_t kTanhTablePoints = 4096;
}

Schedule::Schedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw InvalidArgument("schedule: need at least one step");
  alpha_bars_.resize(betas_.size() + 1);
  alpha_bars_[0] = 1.0;
  for (std::size_t t = 0; t < betas_.size(); ++t) {
    if (!(betas_[t] > 0.0 && betas_[t] < 1.0)) throw InvalidArgument("schedule: beta must lie in (0, 1)");
    alpha_bars_[t + 1] = alpha_bars_[t] * (1.0 - betas_[t]);
    if (!(alpha_bars_[t + 1] < alpha_bars_[t])) throw InvalidArgument("schedule: alpha_bar not strictly decreasing");
  }
}

Schedule Schedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw InvalidArgument("schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw InvalidArgument("schedule: require 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + frac * (beta_end - beta_start);
  }
  return Schedule(std::move(betas));
}

Schedule Schedule::from_betas(std::vector<double> betas) { return Schedule(std::move(betas)); }

double Schedule::beta(int t) const {
  if (t < 1 || t > steps()) throw InvalidArgument("schedule: beta index out of range");
  return betas_[static_cast<std::size_t>(t - 1)];
}

double Schedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) throw InvalidArgument("schedule: timestep " + std::to_string(t) + " out of range");
  return alpha_bars_[static_cast<std::size_t>(t)];
}

void Schedule::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_tensor(dir / "beta.tnsr", Tensor({betas_.size()}, std::vector<float>(betas_.begin(), betas_.end())));
  write_tensor(dir / "alpha_bar.tnsr",
               Tensor({alpha_bars_.size()}, std::vector<float>(alpha_bars_.begin(), alpha_bars_.end())));
  std::ofstream side(dir / "schedule.txt");
  side.precision(17);
  side << "T " << steps() << "\nbeta_start " << beta_start() << "\nbeta_end " << beta_end() << "\n";
}

Schedule Schedule::load(const std::filesystem::path& dir) {
  std::ifstream side(dir / "schedule.txt");
  if (!side) throw InvalidArgument("schedule: missing sidecar in " + dir.string());
  int steps = 0;
  double b0 = 0, b1 = 0;
  std::string key;
  while (side >> key) {
    if (key == "T") side >> steps;
    else if (key == "beta_start") side >> b0;
    else if (key == "beta_end") side >> b1;
    else throw InvalidArgument("schedule: unknown sidecar key " + key);
  }
  Schedule s = linear(steps, b0, b1);
  const Tensor stored = read_tensor(dir / "beta.tnsr");
  if (stored.size() != static_cast<std::size_t>(steps)) throw InvalidArgument("schedule: beta file length mismatch");
  for (int t = 0; t < steps; ++t) {
    if (stored[static_cast<std::size_t>(t)] != static_cast<float>(s.betas_[static_cast<std::size_t>(t)])) {
      throw InvalidArgument("schedule: stored betas are not the linear schedule named in the sidecar");
    }
  }
  return s;
}

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::uniform: return "uniform";
    case SamplerKind::threshold_high: return "threshold_high";
    case SamplerKind::threshold_low: return "threshold_low";
    case SamplerKind::power: return "power";
    case SamplerKind::tanh: return "tanh";
  }
  return "?";
}

SamplerKind sampler_kind_from_string(const std::string& name) {
  for (auto k : {SamplerKind::uniform, SamplerKind::threshold_high, SamplerKind::threshold_low, SamplerKind::power,
                 SamplerKind::tanh}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidArgument("unknown timestep sampler '" + name + "'");
}

TimestepSampler TimestepSampler::make(SamplerKind kind, double rho) { return TimestepSampler(kind, rho); }

TimestepSampler::TimestepSampler(SamplerKind kind, double rho) : kind_(kind), rho_(rho) {
  switch (kind) {
    case SamplerKind::uniform:
      break;
    case SamplerKind::threshold_high:
      if (!(rho >= 0.0 && rho < 1.0)) throw InvalidArgument("threshold_high requires 0 <= rho < 1");
      break;
    case SamplerKind::threshold_low:
      if (!(rho > 0.0 && rho < 1.0)) throw InvalidArgument("threshold_low requires 0 < rho < 1");
      break;
    case SamplerKind::power:
      if (!(rho >= 0.0)) throw InvalidArgument("power sampler requires rho >= 0");
      break;
    case SamplerKind::tanh: {
      if (!(rho > 0.0)) throw InvalidArgument("tanh sampler requires rho > 0");
      tanh_cdf_.resize(kTanhTablePoints);
      auto pdf = [rho](double s) { return std::tanh(rho * (s - 0.5)) / 2.0 + 0.5; };
      tanh_cdf_[0] = 0.0;
      const double ds = 1.0 / (kTanhTablePoints - 1);
      for (std::size_t k = 1; k < kTanhTablePoints; ++k) {
        const double s0 = (k - 1) * ds, s1 = k * ds;
        tanh_cdf_[k] = tanh_cdf_[k - 1] + 0.5 * (pdf(s0) + pdf(s1)) * ds;
      }
      const double total = tanh_cdf_.back();
      for (auto& c : tanh_cdf_) c /= total;
      break;
    }
  }
}

double TimestepSampler::tanh_inverse_cdf(double u) const {
  const auto it = std::upper_bound(tanh_cdf_.begin(), tanh_cdf_.end(), u);
  if (it == tanh_cdf_.end()) return 1.0;
  const std::size_t k = static_cast<std::size_t>(it - tanh_cdf_.begin());  // cdf[k-1] <= u < cdf[k]
  const double c0 = tanh_cdf_[k - 1], c1 = tanh_cdf_[k];
  const double frac = c1 > c0 ? (u - c0) / (c1 - c0) : 0.0;
  return (static_cast<double>(k - 1) + frac) / (kTanhTablePoints - 1);
}

int TimestepSampler::sample_from_uniform(double u, int steps) const {
  const double T = steps;
  auto clamp_step = [steps](double v) { return std::clamp(static_cast<int>(std::floor(v)), 0, steps - 1); };
  switch (kind_) {
    case SamplerKind::uniform:
      return clamp_step(u * T);
    case SamplerKind::threshold_high: {
      const int lo = std::min(steps - 1, static_cast<int>(std::ceil(rho_ * T - 1e-9)));
      return std::clamp(lo + static_cast<int>(std::floor(u * (steps - lo))), lo, steps - 1);
    }
    case SamplerKind::threshold_low: {
      const int hi = std::max(1, static_cast<int>(std::ceil(rho_ * T - 1e-9)));  // exclusive
      return std::clamp(static_cast<int>(std::floor(u * hi)), 0, hi - 1);
    }
    case SamplerKind::power:
      return clamp_step(std::pow(u, 1.0 / (rho_ + 1.0)) * T);
    case SamplerKind::tanh:
      return clamp_step(tanh_inverse_cdf(u) * T);
  }
  return 0;
}

int TimestepSampler::sample(const Schedule& sched, Rng& rng) const {
  return sample_from_uniform(rng.uniform(), sched.steps());
}

double TimestepSampler::cdf(double s) const {
  s = std::clamp(s, 0.0, 1.0);
  switch (kind_) {
    case SamplerKind::uniform:
      return s;
    case SamplerKind::threshold_high:
      return s < rho_ ? 0.0 : (s - rho_) / (1.0 - rho_);
    case SamplerKind::threshold_low:
      return s >= rho_ ? 1.0 : s / rho_;
    case SamplerKind::power:
      return std::pow(s, rho_ + 1.0);
    case SamplerKind::tanh:
      // Closed form of the normalised density 2 * (tanh(rho (s - 1/2)) / 2 + 1/2).
      return s + (std::log(std::cosh(rho_ * (s - 0.5))) - std::log(std::cosh(rho_ * 0.5))) / rho_;
  }
  return 0.0;
}

}  // namespace szlab
