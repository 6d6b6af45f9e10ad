#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "szlab/analysis.hpp"
#include "szlab/dataset.hpp"
#include "szlab/parallel.hpp"

using namespace szlab;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.hidden = 48;
  c.vocab = 64;
  return c;
}

ToyModel fitted(std::uint64_t seed) {
  const ModelConfig cfg = small_config();
  ToyModel m = init_model(cfg, {seed, 1});
  m.autoencoder = fit_autoencoder(cfg, make_pretrain_corpus(50, 32, 0.0, {seed, 2}).images);
  m.mixer.bias = randn(RngStream{seed, 3}, {cfg.cond_dim});
  return m;
}

// Zero the first-layer weights that read the condition block.
void blind_to_condition(ToyModel& m) {
  const auto& c = m.config;
  const std::size_t start = c.latent_size() + c.time_features;
  for (std::size_t r = 0; r < m.denoiser.hidden(); ++r)
    for (std::size_t k = start; k < m.denoiser.input_size(); ++k) m.denoiser.w1(r, k) = 0.0f;
}

std::vector<Tensor> images(std::size_t n, std::uint64_t seed) {
  return make_pretrain_corpus(n, 32, 0.0, {seed, 9}).images;
}

}  // namespace

TEST(Ssm, OwnEmbeddingGivesZeroMap) {
  const ToyModel m = fitted(1);
  const auto ids = m.concept_prompt();
  const std::vector<Tensor> same = {m.embeddings.learned, m.embeddings.learned};
  const SSMap s = ssm_with_replacements(m, images(1, 1)[0], 500, ids, 1, same, {1, 1});
  EXPECT_EQ(max_abs(s.map), 0.0);
  EXPECT_THROW(ssm_ratio(s, Tensor::ones({4, 8, 8})), UndefinedRatio);
}

TEST(Ssm, ConditionBlindModelGivesZeroMap) {
  ToyModel m = fitted(2);
  blind_to_condition(m);
  const SSMap s = compute_ssm(m, images(1, 2)[0], 500, m.concept_prompt(), 1, 8, {2, 2});
  EXPECT_EQ(max_abs(s.map), 0.0);
}

TEST(Ssm, NonNegativeLatentResolutionAndDeterministic) {
  const ToyModel m = fitted(3);
  const Tensor x = images(1, 3)[0];
  const SSMap a = compute_ssm(m, x, 400, m.concept_prompt(), 1, 8, {3, 3});
  EXPECT_EQ(a.map.shape(), (Shape{1, 8, 8}));
  EXPECT_EQ(a.replacements, 8);
  for (float v : a.map.values()) EXPECT_GE(v, 0.0f);
  EXPECT_GT(max_abs(a.map), 0.0);
  set_thread_count(4);
  const SSMap b = compute_ssm(m, x, 400, m.concept_prompt(), 1, 8, {3, 3});
  set_thread_count(1);
  EXPECT_EQ(a.map.buffer(), b.map.buffer());
  EXPECT_THROW(compute_ssm(m, x, 400, m.concept_prompt(), 99, 8, {3, 3}), InvalidArgument);
  EXPECT_THROW(compute_ssm(m, x, 400, m.concept_prompt(), 1, 0, {3, 3}), InvalidArgument);
}

TEST(Ssm, RatioExamples) {
  SSMap s;
  s.map = Tensor({1, 8, 8}, 2.0f);
  EXPECT_DOUBLE_EQ(ssm_ratio(s, Tensor::ones({4, 8, 8})), 1.0);
  Tensor quarter({4, 8, 8});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) quarter(c, i, j) = 1.0f;
  EXPECT_DOUBLE_EQ(ssm_ratio(s, quarter), 0.25);
  EXPECT_THROW(ssm_ratio(s, Tensor({1, 5, 5})), InvalidArgument);
}

TEST(Profiles, GridAndQuantiles) {
  const auto g = timestep_grid(1000);
  ASSERT_EQ(g.size(), 21u);
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_EQ(g[k], static_cast<int>(50 * k));
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(quantile({7}, 0.3), 7.0);
  EXPECT_THROW(quantile({}, 0.5), InvalidArgument);
  EXPECT_THROW(quantile({1}, 1.5), InvalidArgument);
}

TEST(Profiles, OrderedBandsAndParallelMatchesSerial) {
  const ToyModel m = fitted(4);
  const auto imgs = images(5, 4);
  const auto grid = timestep_grid(1000, 6);
  const auto ids = m.concept_prompt();
  set_thread_count(1);
  const auto ls = loss_profile(m, imgs, ids, grid, 30, {4, 4});
  const auto gs = grad_profile(m, imgs, ids, m.embeddings.concept_token(), grid, 30, {4, 4});
  set_thread_count(4);
  const auto lp = loss_profile(m, imgs, ids, grid, 30, {4, 4});
  const auto gp = grad_profile(m, imgs, ids, m.embeddings.concept_token(), grid, 30, {4, 4});
  set_thread_count(1);
  EXPECT_EQ(ls.median, lp.median);
  EXPECT_EQ(ls.p97_5, lp.p97_5);
  EXPECT_EQ(gs.median, gp.median);
  EXPECT_EQ(gs.p2_5, gp.p2_5);
  for (const auto* c : {&ls, &gs}) {
    ASSERT_EQ(c->timesteps, grid);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      EXPECT_LE(c->p2_5[k], c->p25[k]);
      EXPECT_LE(c->p25[k], c->median[k]);
      EXPECT_LE(c->median[k], c->p75[k]);
      EXPECT_LE(c->p75[k], c->p97_5[k]);
    }
  }
}

TEST(Profiles, ConditionBlindModelHasZeroGradientProfile) {
  ToyModel m = fitted(5);
  blind_to_condition(m);
  const auto grid = timestep_grid(1000, 5);
  const auto c = grad_profile(m, images(3, 5), m.concept_prompt(), m.embeddings.concept_token(), grid, 10, {5, 5});
  for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_EQ(c.p97_5[k], 0.0);
}

TEST(Histogram, ZeroDeltasLandInCenterBin) {
  const std::vector<Tensor> deltas = {Tensor({1, 8, 8}), Tensor({1, 8, 8})};
  const Histogram h = perturbation_histogram(deltas, 32, 0.0625);
  EXPECT_EQ(h.total, 128u);
  EXPECT_EQ(h.counts[16], 128u);
  EXPECT_DOUBLE_EQ(h.center_mass, 1.0);
  EXPECT_DOUBLE_EQ(h.edge_mass, 0.0);
}

TEST(Histogram, CountsMatchBruteForce) {
  Rng rng({6, 6});
  Tensor d({1, 32, 32});
  for (auto& v : d.values()) v = static_cast<float>((rng.uniform() * 2 - 1) * 0.08);
  const double range = 0.0625;
  const Histogram h = perturbation_histogram(std::vector<Tensor>{d}, 20, range);
  std::vector<std::size_t> want(20, 0);
  std::size_t edge = 0, center = 0;
  for (float fv : d.values()) {
    const double v = fv;
    std::size_t bin = 0;
    while (bin + 1 < 20 && v >= h.bin_lo(bin + 1)) ++bin;
    ++want[bin];
    edge += std::abs(v) > 0.75 * range;
    center += std::abs(v) < 0.25 * range;
  }
  EXPECT_EQ(h.counts, want);
  EXPECT_DOUBLE_EQ(h.edge_mass, static_cast<double>(edge) / d.size());
  EXPECT_DOUBLE_EQ(h.center_mass, static_cast<double>(center) / d.size());
  EXPECT_DOUBLE_EQ(h.bin_lo(0), -range);
  EXPECT_NEAR(h.bin_hi(19), range, 1e-15);
  EXPECT_THROW(perturbation_histogram(std::vector<Tensor>{d}, 8, range), InvalidArgument);
}

TEST(Rapsd, ConstantFieldIsAllDc) {
  const auto p = rapsd(Tensor({16, 16}, 0.7f));
  ASSERT_EQ(p.size(), 8u);
  EXPECT_NEAR(p[0], 0.7 * 0.7 * 256, 1e-3);
  for (std::size_t r = 1; r < p.size(); ++r) EXPECT_NEAR(p[r], 0.0, 1e-9);
  EXPECT_NEAR(total_power(Tensor({16, 16}, 0.7f)), 0.0, 1e-9);
  EXPECT_THROW(rapsd(Tensor({8, 16})), InvalidArgument);
}

TEST(Rapsd, WhiteNoiseIsFlat) {
  std::vector<double> acc(8, 0.0);
  const int trials = 10000;
  Rng rng({7, 7});
  for (int k = 0; k < trials; ++k) {
    const auto p = rapsd(randn(rng, {16, 16}));
    for (std::size_t r = 0; r < 8; ++r) acc[r] += p[r] / trials;
  }
  // Orthonormal DFT of unit white noise has unit expected power everywhere.
  for (std::size_t r = 0; r < 8; ++r) EXPECT_NEAR(acc[r], 1.0, 0.05) << "radius " << r;
}

TEST(Rapsd, ParsevalTotalPower) {
  Rng rng({8, 8});
  for (int k = 0; k < 10; ++k) {
    Tensor f({1, 32, 32});
    for (auto& v : f.values()) v = static_cast<float>(rng.uniform() + 0.1 * rng.normal());
    double m = 0.0, v2 = 0.0;
    for (float v : f.values()) m += v;
    m /= f.size();
    for (float v : f.values()) v2 += (v - m) * (v - m);
    EXPECT_NEAR(total_power(f), v2, 1e-4 * v2);  // n^2 * variance
  }
}

TEST(Rapsd, ChannelMean) {
  Tensor z({2, 2, 2}, std::vector<float>{1, 2, 3, 4, 3, 4, 5, 6});
  const Tensor m = channel_mean(z);
  EXPECT_EQ(m.shape(), (Shape{2, 2}));
  EXPECT_EQ(m.buffer(), (std::vector<float>{2, 3, 4, 5}));
}

TEST(Gaussian, LimitCases) {
  const Eigen::VectorXd mu = Eigen::VectorXd::LinSpaced(3, -1, 1), var = Eigen::VectorXd::LinSpaced(3, 0.5, 2);
  const auto spec = GaussianLatentSpec::diagonal(mu, var);
  const Eigen::VectorXd zt = Eigen::VectorXd::LinSpaced(3, 0.3, -0.4);
  const auto one = conditional_noise_stats(spec, 1.0, zt);
  EXPECT_LT(one.mean.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((one.covariance - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
  const auto zero = conditional_noise_stats(spec, 0.0, zt);
  EXPECT_LT((zero.mean - zt).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(zero.covariance.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gaussian, IdentityAtHalf) {
  const Eigen::VectorXd mu = Eigen::VectorXd::Constant(2, 0.4);
  const auto spec = GaussianLatentSpec::diagonal(mu, Eigen::VectorXd::Ones(2));
  const Eigen::VectorXd zt = Eigen::Vector2d(1.0, -0.5);
  const auto r = conditional_noise_stats(spec, 0.5, zt);
  const double h = std::sqrt(0.5);
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(r.mean(i), h * (zt(i) - h * mu(i)), 1e-12);
    EXPECT_NEAR(r.covariance(i, i), 0.5, 1e-12);
  }
  EXPECT_NEAR(noise_error_covariance(spec, 0.5)(0, 0), 1.5, 1e-12);
  EXPECT_NEAR(noisy_latent_covariance(spec, 0.5)(1, 1), 1.0, 1e-12);
}

TEST(Gaussian, FullCovarianceMatchesDirectInverse) {
  Eigen::MatrixXd A(3, 3);
  A << 1.0, 0.3, -0.2, 0.3, 2.0, 0.5, -0.2, 0.5, 1.5;
  const GaussianLatentSpec spec{Eigen::Vector3d(0.1, -0.2, 0.3), A};
  const Eigen::VectorXd zt = Eigen::Vector3d(0.5, 0.0, -1.0);
  const double ab = 0.3;
  const Eigen::MatrixXd szt = ab * A + (1 - ab) * Eigen::MatrixXd::Identity(3, 3);
  const Eigen::MatrixXd inv = szt.inverse();
  const auto r = conditional_noise_stats(spec, ab, zt);
  EXPECT_LT((r.mean - std::sqrt(1 - ab) * inv * (zt - std::sqrt(ab) * spec.mean)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((r.covariance - (Eigen::MatrixXd::Identity(3, 3) - (1 - ab) * inv)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gaussian, SingularAndInvalidInputs) {
  const auto spec = GaussianLatentSpec::diagonal(Eigen::Vector2d(0, 0), Eigen::Vector2d(0.0, 1.0));
  EXPECT_THROW(conditional_noise_stats(spec, 1.0, Eigen::Vector2d(0, 0)), SingularMatrix);
  EXPECT_NO_THROW(conditional_noise_stats(spec, 0.9, Eigen::Vector2d(0, 0)));
  EXPECT_THROW(GaussianLatentSpec::diagonal(Eigen::Vector2d(0, 0), Eigen::Vector2d(-1.0, 1.0)), InvalidArgument);
  EXPECT_THROW(conditional_noise_stats(spec, 0.5, Eigen::Vector3d(0, 0, 0)), InvalidArgument);
}

TEST(Gaussian, MonteCarloAgreesInOneCell) {
  const auto spec = GaussianLatentSpec::diagonal(Eigen::Vector2d(0.3, -0.2), Eigen::Vector2d(1.0, 2.0));
  const Eigen::VectorXd zt = Eigen::Vector2d(0.4, -0.6);
  const auto exact = conditional_noise_stats(spec, 0.5, zt);
  const auto mc = monte_carlo_noise_stats(spec, 0.5, zt, 0.25, 100000, {9, 9});
  const Eigen::MatrixXd err = noise_error_covariance(spec, 0.5);
  for (int i = 0; i < 2; ++i) {
    EXPECT_LT(std::abs(mc.mean(i) - exact.mean(i)), 3 * mc.mean_se(i));
    EXPECT_NEAR(mc.covariance(i, i) / exact.covariance(i, i), 1.0, 0.05);
    EXPECT_NEAR(mc.error_variance(i) / err(i, i), 1.0, 0.05);
  }
}

TEST(Gaussian, MonteCarloIndependenceAtAlphaOne) {
  const auto spec = GaussianLatentSpec::diagonal(Eigen::Vector2d(0, 0), Eigen::Vector2d(1.0, 1.0));
  const auto mc = monte_carlo_noise_stats(spec, 1.0, Eigen::Vector2d(0.1, -0.1), 0.25, 100000, {10, 10});
  for (int i = 0; i < 2; ++i) {
    EXPECT_LT(std::abs(mc.mean(i)), 3 * mc.mean_se(i));
    EXPECT_NEAR(mc.covariance(i, i), 1.0, 0.05);
  }
}

TEST(Gaussian, EmptyBinReportsCount) {
  const auto spec = GaussianLatentSpec::diagonal(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1));
  try {
    monte_carlo_noise_stats(spec, 0.5, Eigen::VectorXd::Constant(1, 50.0), 0.25, 10000, {11, 11});
    FAIL() << "expected InsufficientSamples";
  } catch (const InsufficientSamples& e) {
    EXPECT_EQ(e.count(), 0u);
  }
}

TEST(NoiseNorm, ExpectedAndExact) {
  EXPECT_DOUBLE_EQ(expected_noise_norm(16384), 128.0);
  EXPECT_DOUBLE_EQ(expected_noise_norm(256), 16.0);
  EXPECT_DOUBLE_EQ(expected_noise_norm(1), 1.0);
  EXPECT_NEAR(exact_noise_norm(1), std::sqrt(2.0 / std::numbers::pi), 1e-12);
  EXPECT_THROW(expected_noise_norm(0), InvalidArgument);
  Rng rng({12, 12});
  double acc = 0.0;
  const int n = 100000;
  for (int k = 0; k < n; ++k) acc += std::sqrt(squared_norm(randn(rng, {256}))) / n;
  EXPECT_NEAR(acc / 16.0, 1.0, 0.005);
  EXPECT_NEAR(acc, exact_noise_norm(256), 0.01);
}
