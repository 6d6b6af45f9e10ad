#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <span>
#include <vector>

#include "szlab/model.hpp"

namespace szlab {

// ---------------------------------------------------------------- sensitivity maps

/// Per-cell sensitivity of the noise prediction to one prompt position.
struct SSMap {
  Tensor map;  // [1, h, w], channel sum of squares
  std::size_t position = 0;
  int t = 0;
  int replacements = 0;
};

/// Mean over `replacements` of sum_c (eps(z_t, c) - eps(z_t, c with e_position := r))^2
/// where each r is a given vector. One z_t (one eps draw) is shared by all of them.
SSMap ssm_with_replacements(const ToyModel& model, const Tensor& x, int t, std::span<const int> token_ids,
                            std::size_t position, std::span<const Tensor> replacements, const RngStream& stream);

/// Same with `count` replacements drawn uniformly from the embedding dictionary.
SSMap compute_ssm(const ToyModel& model, const Tensor& x, int t, std::span<const int> token_ids, std::size_t position,
                  int count, const RngStream& stream);

/// sum(map * mask) / sum(map). The mask may carry several identical channels;
/// only the first is read. Throws UndefinedRatio for an all-zero map.
double ssm_ratio(const SSMap& ssm, const Tensor& latent_mask);

// ---------------------------------------------------------------- timestep profiles

struct ProfileCurve {
  std::vector<int> timesteps;
  std::vector<double> median, p25, p75, p2_5, p97_5;
};

/// k * T / (points - 1) for k = 0..points-1.
std::vector<int> timestep_grid(int steps, int points = 21);

/// Linear-interpolation quantile (the usual "type 7"). `values` need not be sorted.
double quantile(std::vector<double> values, double q);

/// Distribution of the noise-prediction loss per grid timestep. Each sample
/// draws an image index and eps from stream.derive(grid index, sample index).
ProfileCurve loss_profile(const ToyModel& model, std::span<const Tensor> images, std::span<const int> token_ids,
                          std::span<const int> grid, int per_t, const RngStream& stream);

/// Distribution of ||d loss / d e_token||_2 per grid timestep, same draws as loss_profile.
ProfileCurve grad_profile(const ToyModel& model, std::span<const Tensor> images, std::span<const int> token_ids,
                          int token, std::span<const int> grid, int per_t, const RngStream& stream);

void write_profile_csv(const std::filesystem::path& path, const ProfileCurve& curve);

// ---------------------------------------------------------------- perturbation histograms

struct Histogram {
  double range = 0.0;  // bins cover [-range, range]
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  double edge_mass = 0.0;    // fraction with |v| > 0.75 range
  double center_mass = 0.0;  // fraction with |v| < 0.25 range

  double bin_lo(std::size_t i) const;
  double bin_hi(std::size_t i) const;
};

/// Pools every value of `deltas`; values beyond the range land in the end bins.
Histogram perturbation_histogram(std::span<const Tensor> deltas, std::size_t bins, double range);

void write_histogram_csv(const std::filesystem::path& path, const Histogram& hist);

// ---------------------------------------------------------------- spectra

/// Radially averaged power spectrum of a square [n, n] (or [1, n, n]) field.
/// Orthonormal DFT, |F|^2 averaged over rounded-radius annuli, radii 0..n/2-1.
std::vector<double> rapsd(const Tensor& field);

/// Orthonormal spectral power excluding DC, which equals n^2 times the field variance.
double total_power(const Tensor& field);

/// Channel mean of a [C, h, w] latent as [h, w].
Tensor channel_mean(const Tensor& latent);

/// Mean RAPSD of the channel-mean latents of `images`.
std::vector<double> latent_rapsd(const ToyModel& model, std::span<const Tensor> images);

void write_rapsd_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                     const std::vector<std::vector<double>>& curves);

// ---------------------------------------------------------------- Gaussian latents

/// z0 ~ N(mean, covariance).
struct GaussianLatentSpec {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  static GaussianLatentSpec diagonal(const Eigen::VectorXd& mean, const Eigen::VectorXd& variances);
  Eigen::Index dim() const { return mean.size(); }
  bool is_diagonal() const;
  void validate() const;
};

struct NoiseStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd mean_se;           // Monte-Carlo only
  Eigen::VectorXd error_variance;    // Monte-Carlo only: variance of (conditional draw - independent eps)
  std::vector<std::size_t> accepted;  // Monte-Carlo only, per coordinate
};

/// Covariance of z_t: a * Sigma + (1 - a) I.
Eigen::MatrixXd noisy_latent_covariance(const GaussianLatentSpec& spec, double alpha_bar);

/// Closed-form distribution of eps given z_t. Throws SingularMatrix when the
/// covariance of z_t cannot be inverted.
NoiseStats conditional_noise_stats(const GaussianLatentSpec& spec, double alpha_bar, const Eigen::VectorXd& z_t);
NoiseStats conditional_noise_stats(const GaussianLatentSpec& spec, const Schedule& sched, int t,
                                   const Eigen::VectorXd& z_t);

/// Covariance of (conditional draw - eps): 2I - (1 - a) Sigma_zt^-1.
Eigen::MatrixXd noise_error_covariance(const GaussianLatentSpec& spec, double alpha_bar);

/// Empirical oracle for conditional_noise_stats with a diagonal Sigma. Draws
/// (z0, eps) pairs and, coordinate by coordinate, keeps the pairs whose z_t
/// falls in the width-`bin_width` bin around the query. The in-bin trend of eps
/// against z_t is regressed out, so the intercept estimates the conditional
/// mean at the query itself. Off-diagonal covariance is zero by construction.
NoiseStats monte_carlo_noise_stats(const GaussianLatentSpec& spec, double alpha_bar, const Eigen::VectorXd& z_t,
                                   double bin_width, std::size_t samples, const RngStream& stream);

/// sqrt(dim), the usual large-d approximation of E||eps||.
double expected_noise_norm(std::size_t dim);
/// sqrt(2) Gamma((d + 1) / 2) / Gamma(d / 2).
double exact_noise_norm(std::size_t dim);

}  // namespace szlab
