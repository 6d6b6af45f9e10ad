#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "szlab/rng.hpp"
#include "szlab/schedule.hpp"

using namespace szlab;

namespace {

// Largest gap between the empirical CDF of integer draws t and a continuous
// normalised-time CDF. t = floor(s T), so P(t <= k - 1) = F(k / T) exactly.
double ks_distance(const TimestepSampler& sampler, const std::function<double(double)>& F, int T, int n,
                   std::uint64_t seed) {
  const Schedule sched = Schedule::linear(T, 1e-4, 0.02);
  std::vector<int> counts(static_cast<std::size_t>(T), 0);
  Rng rng({seed, 1});
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sampler.sample(sched, rng))];
  double worst = 0.0, cum = 0.0;
  for (int k = 1; k <= T; ++k) {
    cum += counts[static_cast<std::size_t>(k - 1)];
    worst = std::max(worst, std::abs(cum / n - F(static_cast<double>(k) / T)));
  }
  return worst;
}

// Composite Simpson integral of the tanh density, normalised on [0, 1].
double tanh_cdf_oracle(double rho, double s) {
  auto pdf = [rho](double x) { return std::tanh(rho * (x - 0.5)) / 2.0 + 0.5; };
  auto integrate = [&](double b) {
    const int n = 2000;
    const double h = b / n;
    double acc = pdf(0.0) + pdf(b);
    for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * pdf(i * h);
    return acc * h / 3.0;
  };
  return integrate(s) / integrate(1.0);
}

}  // namespace

TEST(Schedule, SingleStep) {
  const Schedule s = Schedule::from_betas({0.5});
  ASSERT_EQ(s.alpha_bars().size(), 2u);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  EXPECT_EQ(s.alpha_bar(1), 0.5);
}

TEST(Schedule, TwoSteps) {
  const Schedule s = Schedule::from_betas({0.1, 0.2});
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bar(2), 0.72, 1e-15);
}

TEST(Schedule, DefaultLinearMatchesProduct) {
  const Schedule s = Schedule::linear(1000, 1e-4, 0.02);
  double prod = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    const double beta = 1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0;
    EXPECT_NEAR(s.beta(t), beta, 1e-15);
    prod *= 1.0 - beta;
    EXPECT_NEAR(s.alpha_bar(t), prod, 1e-12);
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  }
  EXPECT_LT(s.alpha_bar(1000), 1e-4);
  EXPECT_EQ(s.beta_start(), 1e-4);
  EXPECT_EQ(s.beta_end(), 0.02);
}

TEST(Schedule, InvalidRangesRejected) {
  EXPECT_THROW(Schedule::linear(0, 1e-4, 0.02), InvalidArgument);
  EXPECT_THROW(Schedule::linear(10, 0.0, 0.02), InvalidArgument);
  EXPECT_THROW(Schedule::linear(10, 0.03, 0.02), InvalidArgument);
  EXPECT_THROW(Schedule::linear(10, 1e-4, 1.0), InvalidArgument);
  EXPECT_THROW(Schedule::from_betas({}), InvalidArgument);
  EXPECT_THROW(Schedule::from_betas({0.1, 1.5}), InvalidArgument);
  EXPECT_THROW(Schedule::from_betas({0.1, 0.0}), InvalidArgument);  // alpha_bar would not strictly decrease
  const Schedule s = Schedule::linear(10, 1e-4, 0.02);
  EXPECT_THROW(s.alpha_bar(11), InvalidArgument);
  EXPECT_THROW(s.alpha_bar(-1), InvalidArgument);
}

TEST(Schedule, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "szlab_schedule_rt";
  std::filesystem::remove_all(dir);
  const Schedule s = Schedule::linear(50, 2e-4, 0.03);
  s.save(dir);
  const Schedule back = Schedule::load(dir);
  EXPECT_EQ(back.steps(), 50);
  for (int t = 0; t <= 50; ++t) EXPECT_NEAR(back.alpha_bar(t), s.alpha_bar(t), 1e-7);
  std::filesystem::remove_all(dir);
}

TEST(AddNoise, TimeZeroIsIdentity) {
  const Schedule s = Schedule::linear(1000, 1e-4, 0.02);
  const Tensor z0 = randn(RngStream{1, 1}, {4, 8, 8}), eps = randn(RngStream{1, 2}, {4, 8, 8});
  EXPECT_EQ(add_noise(z0, eps, 0, s).buffer(), z0.buffer());
}

TEST(AddNoise, FinalStepIsNearlyNoise) {
  const Schedule s = Schedule::linear(1000, 1e-4, 0.02);
  const Tensor z0 = randn(RngStream{1, 1}, {4, 8, 8}), eps = randn(RngStream{1, 2}, {4, 8, 8});
  const Tensor out = add_noise(z0, eps, 1000, s);
  // out - eps = sqrt(ab) z0 + (sqrt(1 - ab) - 1) eps; the second term is O(ab) and
  // sits well below the first, plus float rounding.
  const double ab = s.alpha_bar(1000);
  EXPECT_LE(max_abs(out - eps), std::sqrt(ab) * max_abs(z0) + (1.0 - std::sqrt(1.0 - ab)) * max_abs(eps) + 1e-6);
  EXPECT_LT(max_abs(out - eps), 1.01 * std::sqrt(ab) * max_abs(z0));
}

TEST(AddNoise, ZeroSignalScalesNoise) {
  const Schedule s = Schedule::linear(1000, 1e-4, 0.02);
  const Tensor eps = randn(RngStream{1, 2}, {4, 8, 8});
  const Tensor out = add_noise(Tensor::zeros({4, 8, 8}), eps, 400, s);
  const float b = static_cast<float>(std::sqrt(1.0 - s.alpha_bar(400)));
  for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_EQ(out[i], b * eps[i]);
}

TEST(AddNoise, ShapeMismatch) {
  const Schedule s = Schedule::linear(10, 1e-4, 0.02);
  EXPECT_THROW(add_noise(Tensor({4}), Tensor({5}), 1, s), InvalidArgument);
}

TEST(AddNoise, VariancePreserving) {
  const Schedule s = Schedule::linear(1000, 1e-4, 0.02);
  const Tensor z0 = randn(RngStream{2, 1}, {200000}), eps = randn(RngStream{2, 2}, {200000});
  for (int t : {1, 250, 500, 750, 1000}) {
    const Tensor zt = add_noise(z0, eps, t, s);
    const double m = mean(zt);
    EXPECT_NEAR(squared_norm(zt) / zt.size() - m * m, 1.0, 0.015) << "t=" << t;
  }
}

TEST(Sampler, ThresholdHighStaysAbove) {
  const Schedule s = Schedule::linear(1000, 1e-4, 0.02);
  const auto sampler = TimestepSampler::make(SamplerKind::threshold_high, 0.6);
  Rng rng({3, 3});
  int lo = 1000, hi = 0;
  for (int i = 0; i < 100000; ++i) {
    const int t = sampler.sample(s, rng);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  EXPECT_GE(lo, 600);
  EXPECT_EQ(lo, 600);
  EXPECT_LT(hi, 1000);  // half-open
}

TEST(Sampler, ThresholdLowStaysBelow) {
  const auto sampler = TimestepSampler::make(SamplerKind::threshold_low, 0.3);
  for (double u : {0.0, 0.5, 0.999999}) {
    const int t = sampler.sample_from_uniform(u, 1000);
    EXPECT_GE(t, 0);
    EXPECT_LT(t, 300);
  }
}

TEST(Sampler, PowerZeroIsUniform) {
  const auto sampler = TimestepSampler::make(SamplerKind::power, 0.0);
  EXPECT_LT(ks_distance(sampler, [](double s) { return s; }, 1000, 100000, 5), 0.01);
}

TEST(Sampler, PowerOneMedian) {
  const Schedule s = Schedule::linear(1000, 1e-4, 0.02);
  const auto sampler = TimestepSampler::make(SamplerKind::power, 1.0);
  Rng rng({4, 4});
  std::vector<int> draws(100000);
  for (auto& d : draws) d = sampler.sample(s, rng);
  std::nth_element(draws.begin(), draws.begin() + 50000, draws.end());
  EXPECT_NEAR(draws[50000], std::sqrt(0.5) * 1000, 0.01 * 1000);
}

TEST(Sampler, AllFamiliesMatchTheirDensity) {
  struct Case {
    SamplerKind kind;
    double rho;
    std::function<double(double)> F;
  };
  const std::vector<Case> cases = {
      {SamplerKind::uniform, 0.0, [](double s) { return s; }},
      {SamplerKind::threshold_high, 0.6, [](double s) { return s < 0.6 ? 0.0 : (s - 0.6) / 0.4; }},
      {SamplerKind::threshold_low, 0.4, [](double s) { return s >= 0.4 ? 1.0 : s / 0.4; }},
      {SamplerKind::power, 0.5, [](double s) { return std::pow(s, 1.5); }},
      {SamplerKind::power, 3.0, [](double s) { return s * s * s * s; }},
      {SamplerKind::tanh, 2.0, [](double s) { return tanh_cdf_oracle(2.0, s); }},
      {SamplerKind::tanh, 8.0, [](double s) { return tanh_cdf_oracle(8.0, s); }},
  };
  std::uint64_t seed = 100;
  for (const auto& c : cases) {
    const auto sampler = TimestepSampler::make(c.kind, c.rho);
    EXPECT_LT(ks_distance(sampler, c.F, 1000, 100000, ++seed), 0.02) << to_string(c.kind) << " rho=" << c.rho;
    for (double sv : {0.1, 0.35, 0.5, 0.8}) EXPECT_NEAR(sampler.cdf(sv), c.F(sv), 1e-6) << to_string(c.kind);
  }
}

TEST(Sampler, InvalidParametersRejected) {
  EXPECT_THROW(TimestepSampler::make(SamplerKind::threshold_high, 1.0), InvalidArgument);
  EXPECT_THROW(TimestepSampler::make(SamplerKind::threshold_low, 0.0), InvalidArgument);
  EXPECT_THROW(TimestepSampler::make(SamplerKind::power, -1.0), InvalidArgument);
  EXPECT_THROW(TimestepSampler::make(SamplerKind::tanh, 0.0), InvalidArgument);
  EXPECT_THROW(sampler_kind_from_string("cosine"), InvalidArgument);
  EXPECT_EQ(sampler_kind_from_string("threshold_high"), SamplerKind::threshold_high);
}
