#include "szlab/analysis.hpp"

#include <fftw3.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>

#include "szlab/parallel.hpp"
#include "szlab/report.hpp"
#include "szlab/train.hpp"

namespace szlab {

// ---------------------------------------------------------------- sensitivity maps

SSMap ssm_with_replacements(const ToyModel& model, const Tensor& x, int t, std::span<const int> token_ids,
                            std::size_t position, std::span<const Tensor> replacements, const RngStream& stream) {
  const auto& mc = model.config;
  if (position >= mc.prompt_length) throw InvalidArgument("ssm: token position out of range");
  if (replacements.empty()) throw InvalidArgument("ssm: need at least one replacement");
  if (t < 0 || t > model.schedule.steps()) throw InvalidArgument("ssm: timestep out of range");
  const Tensor eps = randn<float>(stream, mc.latent_shape());
  const Tensor zt = add_noise(encode(model.autoencoder, x.reshaped(mc.image_shape())), eps, t, model.schedule);
  const Tensor base = denoiser_forward(model.denoiser, zt, t, model.condition(token_ids));

  const std::size_t ch = mc.latent_depth(), side = mc.latent_side(), cells = side * side;
  std::vector<Tensor> per(replacements.size());
  parallel_for(replacements.size(), [&](std::size_t m) {
    const auto cond = text_condition_replaced(model.embeddings, model.mixer, token_ids, mc.prompt_length, position,
                                              replacements[m]);
    const Tensor other = denoiser_forward(model.denoiser, zt, t, cond);
    Tensor map({1, side, side});
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t k = 0; k < cells; ++k) {
        const float d = base[c * cells + k] - other[c * cells + k];
        map[k] += d * d;
      }
    per[m] = std::move(map);
  });
  Tensor map({1, side, side});
  for (const auto& p : per) axpy(1.0f, p, map);
  for (auto& v : map.values()) v /= static_cast<float>(replacements.size());
  return {std::move(map), position, t, static_cast<int>(replacements.size())};
}

SSMap compute_ssm(const ToyModel& model, const Tensor& x, int t, std::span<const int> token_ids, std::size_t position,
                  int count, const RngStream& stream) {
  if (count < 1) throw InvalidArgument("ssm: replacement count must be >= 1");
  const auto padded = pad_prompt(model.embeddings, token_ids, model.config.prompt_length);
  if (position >= padded.size()) throw InvalidArgument("ssm: token position out of range");
  Rng rng(stream.derive(1));
  std::vector<Tensor> rows;
  for (int m = 0; m < count; ++m)
    rows.push_back(model.embeddings.row(static_cast<int>(rng.uniform_index(model.embeddings.vocab()))));
  return ssm_with_replacements(model, x, t, token_ids, position, rows, stream.derive(0));
}

double ssm_ratio(const SSMap& ssm, const Tensor& latent_mask) {
  const std::size_t cells = ssm.map.size();
  if (latent_mask.size() % cells != 0 || latent_mask.size() == 0) {
    throw InvalidArgument("ssm_ratio: mask " + shape_string(latent_mask.shape()) + " does not match map " +
                          shape_string(ssm.map.shape()));
  }
  double inside = 0.0, total = 0.0;
  for (std::size_t k = 0; k < cells; ++k) {
    total += ssm.map[k];
    inside += static_cast<double>(ssm.map[k]) * latent_mask[k];
  }
  if (!(total > 0.0)) throw UndefinedRatio("ssm_ratio: sensitivity map is identically zero");
  return inside / total;
}

// ---------------------------------------------------------------- timestep profiles

std::vector<int> timestep_grid(int steps, int points) {
  if (steps < 1 || points < 2) throw InvalidArgument("timestep_grid: need steps >= 1 and points >= 2");
  std::vector<int> grid;
  for (int k = 0; k < points; ++k)
    grid.push_back(static_cast<int>(std::lround(static_cast<double>(k) * steps / (points - 1))));
  return grid;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgument("quantile: no values");
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("quantile: q must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

void append_quantiles(ProfileCurve& curve, int t, const std::vector<double>& v) {
  curve.timesteps.push_back(t);
  curve.median.push_back(quantile(v, 0.5));
  curve.p25.push_back(quantile(v, 0.25));
  curve.p75.push_back(quantile(v, 0.75));
  curve.p2_5.push_back(quantile(v, 0.025));
  curve.p97_5.push_back(quantile(v, 0.975));
}

template <typename F>
ProfileCurve profile(const ToyModel& model, std::span<const Tensor> images, std::span<const int> grid, int per_t,
                     const RngStream& stream, F sample_value) {
  if (images.empty()) throw InvalidArgument("profile: no images");
  if (per_t < 1) throw InvalidArgument("profile: samples per timestep must be >= 1");
  for (int t : grid)
    if (t < 0 || t > model.schedule.steps()) throw InvalidArgument("profile: grid timestep out of range");
  std::vector<Tensor> z0(images.size());
  for (std::size_t i = 0; i < images.size(); ++i)
    z0[i] = encode(model.autoencoder, images[i].reshaped(model.config.image_shape()));
  ProfileCurve curve;
  const auto n = static_cast<std::size_t>(per_t);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    std::vector<double> values(n);
    parallel_for(n, [&](std::size_t j) {
      Rng rng(stream.derive(g, j));
      const std::size_t pick = rng.uniform_index(images.size());
      const Tensor eps = randn<float>(rng, model.config.latent_shape());
      values[j] = sample_value(add_noise(z0[pick], eps, grid[g], model.schedule), eps, grid[g]);
    });
    append_quantiles(curve, grid[g], values);
  }
  return curve;
}

}  // namespace

ProfileCurve loss_profile(const ToyModel& model, std::span<const Tensor> images, std::span<const int> token_ids,
                          std::span<const int> grid, int per_t, const RngStream& stream) {
  const auto cond = model.condition(token_ids);
  return profile(model, images, grid, per_t, stream, [&](const Tensor& zt, const Tensor& eps, int t) {
    return squared_norm(denoiser_forward(model.denoiser, zt, t, cond) - eps);
  });
}

ProfileCurve grad_profile(const ToyModel& model, std::span<const Tensor> images, std::span<const int> token_ids,
                          int token, std::span<const int> grid, int per_t, const RngStream& stream) {
  if (!model.embeddings.valid_token(token)) throw InvalidArgument("grad_profile: invalid token id");
  const auto padded = pad_prompt(model.embeddings, token_ids, model.config.prompt_length);
  const auto cond = model.condition(token_ids);
  return profile(model, images, grid, per_t, stream, [&](const Tensor& zt, const Tensor& eps, int t) {
    const Tensor upstream = scaled(denoiser_forward(model.denoiser, zt, t, cond) - eps, 2.0f);
    const auto grads = denoiser_backward(model.denoiser, zt, t, cond, upstream);
    return std::sqrt(squared_norm(token_embedding_grad(model.mixer, padded, token, grads.cond)));
  });
}

void write_profile_csv(const std::filesystem::path& path, const ProfileCurve& c) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < c.timesteps.size(); ++i)
    rows.push_back({static_cast<double>(c.timesteps[i]), c.median[i], c.p25[i], c.p75[i], c.p2_5[i], c.p97_5[i]});
  write_csv(path, {"t", "median", "p25", "p75", "p2.5", "p97.5"}, rows);
}

// ---------------------------------------------------------------- perturbation histograms

double Histogram::bin_lo(std::size_t i) const {
  return -range + 2.0 * range * static_cast<double>(i) / static_cast<double>(counts.size());
}
double Histogram::bin_hi(std::size_t i) const { return bin_lo(i + 1); }

Histogram perturbation_histogram(std::span<const Tensor> deltas, std::size_t bins, double range) {
  if (bins < 16) throw InvalidArgument("perturbation_histogram: need at least 16 bins");
  if (!(range > 0.0)) throw InvalidArgument("perturbation_histogram: range must be positive");
  Histogram h;
  h.range = range;
  h.counts.assign(bins, 0);
  std::size_t edge = 0, center = 0;
  const double width = 2.0 * range / static_cast<double>(bins);
  for (const auto& d : deltas) {
    for (float fv : d.values()) {
      const double v = fv;
      const auto raw = static_cast<long long>(std::floor((v + range) / width));
      h.counts[static_cast<std::size_t>(std::clamp<long long>(raw, 0, static_cast<long long>(bins) - 1))]++;
      if (std::abs(v) > 0.75 * range) ++edge;
      if (std::abs(v) < 0.25 * range) ++center;
      ++h.total;
    }
  }
  if (h.total > 0) {
    h.edge_mass = static_cast<double>(edge) / static_cast<double>(h.total);
    h.center_mass = static_cast<double>(center) / static_cast<double>(h.total);
  }
  return h;
}

void write_histogram_csv(const std::filesystem::path& path, const Histogram& hist) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < hist.counts.size(); ++i)
    rows.push_back({hist.bin_lo(i), hist.bin_hi(i), static_cast<double>(hist.counts[i])});
  write_csv(path, {"bin_lo", "bin_hi", "count"}, rows);
}

// ---------------------------------------------------------------- spectra

namespace {

std::mutex fftw_planner_mutex;  // FFTW planning is not thread safe

// Orthonormal |F|^2 on the [n, n] grid, row-major in natural (uncentred) order.
std::vector<double> power_spectrum(const Tensor& field, std::size_t& n) {
  if (field.rank() == 3 && field.dim(0) == 1) return power_spectrum(field.reshaped({field.dim(1), field.dim(2)}), n);
  if (field.rank() != 2 || field.dim(0) != field.dim(1)) {
    throw InvalidArgument("rapsd: expected a square 2-D field, got " + shape_string(field.shape()));
  }
  n = field.dim(0);
  const std::size_t cells = n * n;
  auto* buf = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * cells));
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex);
    plan = fftw_plan_dft_2d(static_cast<int>(n), static_cast<int>(n), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
  }
  for (std::size_t i = 0; i < cells; ++i) {
    buf[i][0] = field[i];
    buf[i][1] = 0.0;
  }
  fftw_execute(plan);
  std::vector<double> power(cells);
  const double norm = static_cast<double>(cells);
  for (std::size_t i = 0; i < cells; ++i) power[i] = (buf[i][0] * buf[i][0] + buf[i][1] * buf[i][1]) / norm;
  {
    std::lock_guard lock(fftw_planner_mutex);
    fftw_destroy_plan(plan);
  }
  fftw_free(buf);
  return power;
}

long signed_frequency(std::size_t k, std::size_t n) {
  return k < (n + 1) / 2 ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(n);
}

}  // namespace

std::vector<double> rapsd(const Tensor& field) {
  std::size_t n = 0;
  const auto power = power_spectrum(field, n);
  const std::size_t radii = n / 2;
  if (radii == 0) throw InvalidArgument("rapsd: field must be at least 2x2");
  std::vector<double> acc(radii, 0.0);
  std::vector<std::size_t> count(radii, 0);
  for (std::size_t ky = 0; ky < n; ++ky)
    for (std::size_t kx = 0; kx < n; ++kx) {
      const double fy = static_cast<double>(signed_frequency(ky, n));
      const double fx = static_cast<double>(signed_frequency(kx, n));
      const auto r = static_cast<std::size_t>(std::lround(std::hypot(fx, fy)));
      if (r >= radii) continue;
      acc[r] += power[ky * n + kx];
      ++count[r];
    }
  for (std::size_t r = 0; r < radii; ++r) acc[r] /= static_cast<double>(count[r]);
  return acc;
}

double total_power(const Tensor& field) {
  std::size_t n = 0;
  const auto power = power_spectrum(field, n);
  double acc = 0.0;
  for (std::size_t i = 1; i < power.size(); ++i) acc += power[i];
  return acc;
}

Tensor channel_mean(const Tensor& latent) {
  if (latent.rank() != 3) throw InvalidArgument("channel_mean: expected [C, h, w]");
  const std::size_t ch = latent.dim(0), cells = latent.dim(1) * latent.dim(2);
  Tensor out({latent.dim(1), latent.dim(2)});
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t k = 0; k < cells; ++k) out[k] += latent[c * cells + k];
  for (auto& v : out.values()) v /= static_cast<float>(ch);
  return out;
}

std::vector<double> latent_rapsd(const ToyModel& model, std::span<const Tensor> images) {
  if (images.empty()) throw InvalidArgument("latent_rapsd: no images");
  std::vector<double> mean;
  for (const auto& x : images) {
    const auto curve = rapsd(channel_mean(encode(model.autoencoder, x.reshaped(model.config.image_shape()))));
    if (mean.empty()) mean.assign(curve.size(), 0.0);
    for (std::size_t r = 0; r < curve.size(); ++r) mean[r] += curve[r];
  }
  for (auto& v : mean) v /= static_cast<double>(images.size());
  return mean;
}

void write_rapsd_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                     const std::vector<std::vector<double>>& curves) {
  if (names.size() != curves.size()) throw InvalidArgument("write_rapsd_csv: one name per curve");
  std::vector<std::string> header{"radius"};
  header.insert(header.end(), names.begin(), names.end());
  const std::size_t len = curves.empty() ? 0 : curves.front().size();
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < len; ++r) {
    std::vector<double> row{static_cast<double>(r)};
    for (const auto& c : curves) row.push_back(c.at(r));
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

// ---------------------------------------------------------------- Gaussian latents

GaussianLatentSpec GaussianLatentSpec::diagonal(const Eigen::VectorXd& mean, const Eigen::VectorXd& variances) {
  if (mean.size() != variances.size()) throw InvalidArgument("gaussian spec: mean and variances differ in length");
  GaussianLatentSpec s{mean, variances.asDiagonal()};
  s.validate();
  return s;
}

bool GaussianLatentSpec::is_diagonal() const {
  const Eigen::MatrixXd off = covariance - Eigen::MatrixXd(covariance.diagonal().asDiagonal());
  return off.cwiseAbs().maxCoeff() == 0.0;
}

void GaussianLatentSpec::validate() const {
  if (mean.size() < 1) throw InvalidArgument("gaussian spec: dimension must be >= 1");
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size()) {
    throw InvalidArgument("gaussian spec: covariance must be d x d");
  }
  if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw InvalidArgument("gaussian spec: covariance must be symmetric");
  }
  if ((covariance.diagonal().array() < 0.0).any()) throw InvalidArgument("gaussian spec: negative variance");
  if (!is_diagonal()) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariance, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-12) throw InvalidArgument("gaussian spec: covariance is not PSD");
  }
}

Eigen::MatrixXd noisy_latent_covariance(const GaussianLatentSpec& spec, double alpha_bar) {
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw InvalidArgument("alpha_bar must be in [0, 1]");
  const auto d = spec.dim();
  return alpha_bar * spec.covariance + (1.0 - alpha_bar) * Eigen::MatrixXd::Identity(d, d);
}

namespace {

Eigen::MatrixXd inverse_noisy_covariance(const GaussianLatentSpec& spec, double alpha_bar) {
  const Eigen::MatrixXd szt = noisy_latent_covariance(spec, alpha_bar);
  const auto d = spec.dim();
  if (spec.is_diagonal()) {
    const Eigen::VectorXd diag = szt.diagonal();
    if ((diag.array() <= 0.0).any()) throw SingularMatrix("covariance of z_t is singular");
    return diag.cwiseInverse().asDiagonal();
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(szt);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 1e-14) {
    throw SingularMatrix("covariance of z_t is singular");
  }
  return ldlt.solve(Eigen::MatrixXd::Identity(d, d));
}

}  // namespace

NoiseStats conditional_noise_stats(const GaussianLatentSpec& spec, double alpha_bar, const Eigen::VectorXd& z_t) {
  spec.validate();
  if (z_t.size() != spec.dim()) throw InvalidArgument("conditional_noise_stats: z_t has the wrong dimension");
  const Eigen::MatrixXd inv = inverse_noisy_covariance(spec, alpha_bar);
  const auto d = spec.dim();
  NoiseStats out;
  out.mean = std::sqrt(1.0 - alpha_bar) * (inv * (z_t - std::sqrt(alpha_bar) * spec.mean));
  out.covariance = Eigen::MatrixXd::Identity(d, d) - (1.0 - alpha_bar) * inv;
  return out;
}

NoiseStats conditional_noise_stats(const GaussianLatentSpec& spec, const Schedule& sched, int t,
                                   const Eigen::VectorXd& z_t) {
  return conditional_noise_stats(spec, sched.alpha_bar(t), z_t);
}

Eigen::MatrixXd noise_error_covariance(const GaussianLatentSpec& spec, double alpha_bar) {
  const auto d = spec.dim();
  return 2.0 * Eigen::MatrixXd::Identity(d, d) - (1.0 - alpha_bar) * inverse_noisy_covariance(spec, alpha_bar);
}

NoiseStats monte_carlo_noise_stats(const GaussianLatentSpec& spec, double alpha_bar, const Eigen::VectorXd& z_t,
                                   double bin_width, std::size_t samples, const RngStream& stream) {
  spec.validate();
  if (!spec.is_diagonal()) throw InvalidArgument("monte_carlo_noise_stats: covariance must be diagonal");
  if (z_t.size() != spec.dim()) throw InvalidArgument("monte_carlo_noise_stats: z_t has the wrong dimension");
  if (!(bin_width > 0.0)) throw InvalidArgument("monte_carlo_noise_stats: bin width must be positive");
  if (samples < 10000) throw InvalidArgument("monte_carlo_noise_stats: need at least 1e4 samples");
  if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw InvalidArgument("alpha_bar must be in [0, 1]");
  const auto d = spec.dim();
  const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar), half = bin_width / 2;

  NoiseStats out;
  out.mean = Eigen::VectorXd::Zero(d);
  out.covariance = Eigen::MatrixXd::Zero(d, d);
  out.mean_se = Eigen::VectorXd::Zero(d);
  out.error_variance = Eigen::VectorXd::Zero(d);
  out.accepted.assign(static_cast<std::size_t>(d), 0);
  for (Eigen::Index i = 0; i < d; ++i) {
    Rng rng(stream.derive(static_cast<std::uint64_t>(i)));
    Rng fresh(stream.derive(static_cast<std::uint64_t>(i), 1));
    const double sd = std::sqrt(spec.covariance(i, i));
    // Sums for the in-bin least-squares fit eps = b0 + b1 * (z_t - query).
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    double se = 0, see = 0;
    for (std::size_t k = 0; k < samples; ++k) {
      const double z0 = spec.mean(i) + sd * rng.normal();
      const double eps = rng.normal();
      const double offset = a * z0 + s * eps - z_t(i);
      if (std::abs(offset) > half) continue;
      n += 1;
      sx += offset;
      sy += eps;
      sxx += offset * offset;
      sxy += offset * eps;
      syy += eps * eps;
      const double e = eps - fresh.normal();
      se += e;
      see += e * e;
    }
    const auto count = static_cast<std::size_t>(n);
    out.accepted[static_cast<std::size_t>(i)] = count;
    if (count < 8) {
      throw InsufficientSamples("monte_carlo_noise_stats: too few samples in the bin of coordinate " +
                                    std::to_string(i),
                                count);
    }
    const double mx = sx / n, my = sy / n;
    const double cxx = sxx / n - mx * mx, cxy = sxy / n - mx * my, cyy = syy / n - my * my;
    // With no spread in z_t (alpha_bar = 1 and a point mass) there is no trend to remove.
    const double slope = cxx > 1e-300 ? cxy / cxx : 0.0;
    const double intercept = my - slope * mx;
    const double resid = std::max(0.0, (cyy - slope * cxy) * n / (n - 2));
    out.mean(i) = intercept;
    out.covariance(i, i) = resid;
    out.mean_se(i) = std::sqrt(resid / n * (1.0 + (cxx > 1e-300 ? mx * mx / cxx : 0.0)));
    // The trend inflates the raw error variance the same way it does the residual.
    const double raw_err = see / n - (se / n) * (se / n);
    out.error_variance(i) = raw_err - (cyy - resid);
  }
  return out;
}

double expected_noise_norm(std::size_t dim) {
  if (dim < 1) throw InvalidArgument("expected_noise_norm: dim must be >= 1");
  return std::sqrt(static_cast<double>(dim));
}

double exact_noise_norm(std::size_t dim) {
  if (dim < 1) throw InvalidArgument("exact_noise_norm: dim must be >= 1");
  const double d = static_cast<double>(dim);
  return std::sqrt(2.0) * std::exp(std::lgamma((d + 1) / 2) - std::lgamma(d / 2));
}

}  // namespace szlab
