#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "szlab/model.hpp"

namespace szlab {

enum class LrSchedule { constant, linear, cosine };
enum class MaskMode { none, lm, im, lim, zm };

std::string to_string(LrSchedule s);
std::string to_string(MaskMode m);
LrSchedule lr_schedule_from_string(const std::string& name);
MaskMode mask_mode_from_string(const std::string& name);

/// Textual-inversion hyperparameters and defenses.
struct TrainConfig {
  double learning_rate = 5e-4;
  LrSchedule schedule = LrSchedule::constant;
  int steps = 5000;
  int batch_size = 1;
  TimestepSampler sampler;
  MaskMode mask_mode = MaskMode::none;
  int dilation_px = 0;
  std::optional<int> jpeg_quality;
  std::vector<int> snapshot_steps;  // record R* after these many completed steps

  void validate() const;
  double lr_at(int step) const;
};

/// Diffusion pretraining hyperparameters (Adam on denoiser and text mixer).
struct PretrainConfig {
  double learning_rate = 1e-3;
  LrSchedule schedule = LrSchedule::cosine;
  int steps = 8000;
  int batch_size = 64;
  std::size_t autoencoder_fit_images = 2000;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

  void validate() const;
};

struct MaskPair {
  Tensor pixel;   // [1, S, S]
  Tensor latent;  // latent shape, broadcast over channels
};

/// Square max filter of half-width `radius_px`, border clamped.
Tensor dilate_mask(const Tensor& mask, int radius_px);
/// Block average then threshold at 0.5 (ties to 1), broadcast over `channels`.
Tensor resize_mask(const Tensor& mask, std::size_t latent_side, std::size_t channels);
MaskPair make_mask_pair(const Tensor& pixel_mask, int dilation_px, const ModelConfig& cfg);

template <typename Real>
struct DmLoss {
  double loss = 0.0;
  BasicTensor<Real> z_t;
  BasicTensor<Real> eps_hat;
  DenoiserGrads<Real> grads;  // of the loss; grads.z is wrt z_t
};

/// ||eps_theta(z_t, t, cond) - eps||^2 summed over latent coordinates, with exact gradients.
template <typename Real>
DmLoss<Real> dm_loss(const BasicToyModel<Real>& model, const BasicTensor<Real>& x, int t, const BasicTensor<Real>& eps,
                     const BasicCondition<Real>& cond);

/// Loss for a given masking mode. LM and LIM weight the residual by the latent
/// mask; IM and ZM mask upstream (image and z_t) and use the plain residual here.
double masked_loss(const Tensor& eps_hat, const Tensor& eps, const MaskPair* masks, MaskMode mode);

struct RegionLoss {
  double loss = 0.0;      // loss_in + loss_out
  double loss_in = 0.0;   // residual energy on latent-mask cells
  double loss_out = 0.0;  // residual energy elsewhere
};
RegionLoss region_loss(const Tensor& eps_hat, const Tensor& eps, const Tensor& latent_mask);

struct TiLogRow {
  int step = 0;
  int t = 0;
  double loss = 0.0, loss_in = 0.0, loss_out = 0.0, grad_norm_embedding = 0.0;
};

struct TiResult {
  ToyModel model;
  std::vector<TiLogRow> log;
  std::vector<std::pair<int, Tensor>> snapshots;  // (completed steps, R*)
};

/// Images seen by textual inversion after the up-front JPEG stage.
std::vector<Tensor> ti_inputs(const std::vector<Tensor>& images, const TrainConfig& cfg);

/// Textual inversion on the R* row only. `masks` may be empty when mask_mode is none,
/// in which case the region split counts every cell as inside.
TiResult train_ti(const ToyModel& model, const std::vector<Tensor>& images, const std::vector<Tensor>& masks,
                  const std::vector<int>& prompt_tokens, const TrainConfig& cfg, const RngStream& stream);

void write_ti_log(const std::filesystem::path& path, const std::vector<TiLogRow>& log);

struct PretrainResult {
  ToyModel model;
  std::vector<double> losses;  // mean per-sample loss of every step
};

/// Fits the autoencoder (when still the identity), then trains denoiser and
/// mixer on captioned images. The embedding table is not modified.
PretrainResult pretrain_dm(const ToyModel& model, const std::vector<Tensor>& images,
                           const std::vector<std::vector<int>>& captions, const PretrainConfig& cfg,
                           const RngStream& stream);

}  // namespace szlab
