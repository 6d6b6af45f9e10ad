#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "szlab/rng.hpp"
#include "szlab/schedule.hpp"
#include "szlab/tensor.hpp"

namespace szlab {

/// Static dimensions of the toy latent diffusion stack.
/// Where the denoiser applies the fixed sqrt(1 - alpha_bar_t) factor besides the
/// pass-through: nowhere, on the learned output, or on the condition input.
enum class DenoiserGate { none, output, condition };

std::string to_string(DenoiserGate g);
DenoiserGate denoiser_gate_from_string(const std::string& name);

struct ModelConfig {
  std::size_t image_side = 32;
  std::size_t patch = 4;  // pixel block edge per latent cell
  std::size_t latent_channels = 4;
  bool pixel_space = false;  // encoder is the identity, latent = image
  bool whiten_latents = true;  // per-channel unit variance, else one shared scale
  DenoiserGate gate = DenoiserGate::condition;
  std::size_t embed_dim = 16;
  std::size_t vocab = 1024;
  std::size_t prompt_length = 8;
  std::size_t cond_dim = 32;
  std::size_t hidden = 256;
  std::size_t time_features = 16;
  int timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  Shape image_shape() const { return {1, image_side, image_side}; }
  std::size_t latent_side() const { return pixel_space ? image_side : image_side / patch; }
  std::size_t latent_depth() const { return pixel_space ? 1 : latent_channels; }
  Shape latent_shape() const { return {latent_depth(), latent_side(), latent_side()}; }
  std::size_t latent_size() const { return shape_size(latent_shape()); }
  std::size_t denoiser_input_size() const { return latent_size() + time_features + cond_dim; }

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// ---------------------------------------------------------------- embeddings

/// Token-embedding dictionary plus the start/end tokens and the trainable
/// concept token R*. Ids 0..vocab-1 are dictionary rows.
template <typename Real>
struct BasicEmbeddingTable {
  BasicTensor<Real> dictionary;  // [vocab, dim], frozen
  BasicTensor<Real> start;       // [dim]
  BasicTensor<Real> end;         // [dim]
  BasicTensor<Real> learned;     // [dim], the only row textual inversion may change

  std::size_t vocab() const { return dictionary.dim(0); }
  std::size_t dim() const { return dictionary.dim(1); }
  int start_token() const { return static_cast<int>(vocab()); }
  int end_token() const { return static_cast<int>(vocab()) + 1; }
  int concept_token() const { return static_cast<int>(vocab()) + 2; }
  bool valid_token(int id) const { return id >= 0 && id <= concept_token(); }

  /// Row of token `id` (copy).
  BasicTensor<Real> row(int id) const;

  template <typename To>
  BasicEmbeddingTable<To> cast() const {
    return {dictionary.template cast<To>(), start.template cast<To>(), end.template cast<To>(),
            learned.template cast<To>()};
  }
};

template <typename Real>
struct BasicTextMixer {
  BasicTensor<Real> weight;  // [cond_dim, embed_dim]
  BasicTensor<Real> bias;    // [cond_dim]

  template <typename To>
  BasicTextMixer<To> cast() const {
    return {weight.template cast<To>(), bias.template cast<To>()};
  }
};

template <typename Real>
struct BasicCondition {
  BasicTensor<Real> vector;  // [cond_dim]
};

using EmbeddingTable = BasicEmbeddingTable<float>;
using TextMixer = BasicTextMixer<float>;
using Condition = BasicCondition<float>;

/// [start, content..., end, end, ...] padded to `length`.
std::vector<int> make_prompt(std::span<const int> content, int start_token, int end_token, std::size_t length);

/// Pads `token_ids` to the prompt length with the end token.
template <typename Real>
std::vector<int> pad_prompt(const BasicEmbeddingTable<Real>& table, std::span<const int> token_ids,
                            std::size_t length);

/// Mean of the (padded) token embeddings.
template <typename Real>
BasicTensor<Real> pool_embeddings(const BasicEmbeddingTable<Real>& table, std::span<const int> token_ids,
                                  std::size_t length);

/// c = W * mean(e_0..e_{L-1}) + b. Differentiable in every e_n.
template <typename Real>
BasicCondition<Real> text_condition(const BasicEmbeddingTable<Real>& table, const BasicTextMixer<Real>& mixer,
                                    std::span<const int> token_ids, std::size_t length);

/// Same, with the embedding of token position `position` replaced by `replacement`.
template <typename Real>
BasicCondition<Real> text_condition_replaced(const BasicEmbeddingTable<Real>& table, const BasicTextMixer<Real>& mixer,
                                             std::span<const int> token_ids, std::size_t length, std::size_t position,
                                             const BasicTensor<Real>& replacement);

/// d<grad_cond, c>/d(row of `token`): every occurrence of the token in the
/// padded prompt contributes W^T grad_cond / L.
template <typename Real>
BasicTensor<Real> token_embedding_grad(const BasicTextMixer<Real>& mixer, std::span<const int> padded_ids, int token,
                                       const BasicTensor<Real>& grad_cond);

/// Gradient of sum_b <grad_cond_b, W pooled_b + b> wrt the mixer, for pooled
/// embeddings [B, E] and condition gradients [B, C].
template <typename Real>
BasicTextMixer<Real> mixer_grad(const BasicTensor<Real>& pooled, const BasicTensor<Real>& grad_cond);

// ---------------------------------------------------------------- denoiser

/// Two tanh hidden layers over [z_t, time features, condition] plus a fixed
/// pass-through. With s = skip[t] = sqrt(1 - alpha_bar_t), eps_hat is
/// mlp(z_t, c) + s * z_t, s * (mlp(z_t, c) + z_t) under the output gate, or
/// mlp(z_t, s * c) + s * z_t under the condition gate.
template <typename Real>
struct BasicDenoiserParams {
  BasicTensor<Real> w1, b1;  // [H, in], [H]
  BasicTensor<Real> w2, b2;  // [H, H], [H]
  BasicTensor<Real> w3, b3;  // [D, H], [D]
  BasicTensor<Real> skip;    // [T + 1], not trained
  DenoiserGate gate = DenoiserGate::none;
  std::size_t time_features = 0;  // width of the time block in the input; 0 skips the check

  static BasicDenoiserParams zeros(const ModelConfig& cfg);
  static BasicDenoiserParams init(const ModelConfig& cfg, Rng& rng);

  std::size_t input_size() const { return w1.dim(1); }
  std::size_t hidden() const { return w1.dim(0); }
  std::size_t output_size() const { return w3.dim(0); }

  std::vector<BasicTensor<Real>*> tensors() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
  std::vector<const BasicTensor<Real>*> tensors() const { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
  static std::vector<std::string> names() { return {"w1", "b1", "w2", "b2", "w3", "b3"}; }

  template <typename To>
  BasicDenoiserParams<To> cast() const {
    return {w1.template cast<To>(), b1.template cast<To>(), w2.template cast<To>(),
            b2.template cast<To>(), w3.template cast<To>(), b3.template cast<To>(),
            skip.template cast<To>(),       gate, time_features};
  }
};

using DenoiserParams = BasicDenoiserParams<float>;

/// Sinusoidal timestep features: sin/cos of t * 10000^(-k/(F/2)).
template <typename Real>
void time_features(int t, std::span<Real> out);

/// Activations kept from a batched forward pass for the reverse pass.
template <typename Real>
struct DenoiserTape {
  BasicTensor<Real> input;  // [B, in]
  BasicTensor<Real> h1;     // [B, H]
  BasicTensor<Real> h2;     // [B, H]
  std::vector<int> timesteps;
  std::size_t cond_dim = 0;
};

template <typename Real>
struct DenoiserGrads {
  BasicDenoiserParams<Real> params;  // empty tensors unless requested
  BasicTensor<Real> z;               // [B, D]
  BasicTensor<Real> cond;            // [B, C]
};

/// Batched noise prediction. z: [B, D], cond: [B, C], one timestep per row.
template <typename Real>
BasicTensor<Real> denoiser_forward_batch(const BasicDenoiserParams<Real>& params, const BasicTensor<Real>& z,
                                         std::span<const int> timesteps, const BasicTensor<Real>& cond,
                                         DenoiserTape<Real>* tape = nullptr);

/// Exact gradients of sum_b <upstream_b, eps_hat_b>.
template <typename Real>
DenoiserGrads<Real> denoiser_backward_batch(const BasicDenoiserParams<Real>& params, const DenoiserTape<Real>& tape,
                                            const BasicTensor<Real>& upstream, bool want_param_grads);

template <typename Real>
BasicTensor<Real> denoiser_forward(const BasicDenoiserParams<Real>& params, const BasicTensor<Real>& z_t, int t,
                                   const BasicCondition<Real>& cond);

/// Single-sample reverse pass. grads.z has z_t's shape, grads.cond is [C].
template <typename Real>
DenoiserGrads<Real> denoiser_backward(const BasicDenoiserParams<Real>& params, const BasicTensor<Real>& z_t, int t,
                                      const BasicCondition<Real>& cond, const BasicTensor<Real>& upstream);

// ---------------------------------------------------------------- autoencoder

/// Patchwise linear autoencoder: every patch x patch pixel block maps to one
/// latent cell with `latent_channels` channels through a shared matrix.
template <typename Real>
struct BasicAutoencoderParams {
  bool identity = false;
  std::size_t patch = 4;
  BasicTensor<Real> enc, enc_b;  // [C, P*P], [C]
  BasicTensor<Real> dec, dec_b;  // [P*P, C], [P*P]

  template <typename To>
  BasicAutoencoderParams<To> cast() const {
    if (identity) return {true, patch, {}, {}, {}, {}};
    return {false, patch, enc.template cast<To>(), enc_b.template cast<To>(), dec.template cast<To>(),
            dec_b.template cast<To>()};
  }
};

using AutoencoderParams = BasicAutoencoderParams<float>;

template <typename Real>
BasicTensor<Real> encode(const BasicAutoencoderParams<Real>& ae, const BasicTensor<Real>& x);
template <typename Real>
BasicTensor<Real> decode(const BasicAutoencoderParams<Real>& ae, const BasicTensor<Real>& z);
/// Pullback of a latent gradient to pixel space (encode is affine).
template <typename Real>
BasicTensor<Real> encode_backward(const BasicAutoencoderParams<Real>& ae, const BasicTensor<Real>& grad_z,
                                  std::size_t image_side);

/// Least-squares fit of the patch autoencoder (PCA of patches). Latents are
/// scaled to unit mean variance over the fitting set, by one shared factor or
/// per channel when cfg.whiten_latents is set.
AutoencoderParams fit_autoencoder(const ModelConfig& cfg, std::span<const Tensor> images);

/// Mean squared reconstruction error, and its gradient wrt enc/dec (for
/// verifying the fit is stationary).
struct ReconstructionGrads {
  double mse = 0.0;
  Tensor enc, enc_b, dec, dec_b;
};
ReconstructionGrads reconstruction_loss(const AutoencoderParams& ae, std::span<const Tensor> images);

// ---------------------------------------------------------------- bundle

template <typename Real>
struct BasicToyModel {
  ModelConfig config;
  Schedule schedule = Schedule::linear(1000, 1e-4, 0.02);
  BasicEmbeddingTable<Real> embeddings;
  BasicTextMixer<Real> mixer;
  BasicDenoiserParams<Real> denoiser;
  BasicAutoencoderParams<Real> autoencoder;

  std::vector<int> prompt(std::span<const int> content) const {
    return make_prompt(content, embeddings.start_token(), embeddings.end_token(), config.prompt_length);
  }
  /// Prompt holding only R*.
  std::vector<int> concept_prompt() const {
    const int id = embeddings.concept_token();
    return prompt(std::span<const int>(&id, 1));
  }
  std::vector<int> null_prompt() const { return prompt({}); }

  BasicCondition<Real> condition(std::span<const int> token_ids) const {
    return text_condition(embeddings, mixer, token_ids, config.prompt_length);
  }

  template <typename To>
  BasicToyModel<To> cast() const {
    return {config, schedule, embeddings.template cast<To>(), mixer.template cast<To>(),
            denoiser.template cast<To>(), autoencoder.template cast<To>()};
  }
};

using ToyModel = BasicToyModel<float>;

/// Fresh model: Gaussian dictionary, random concept row copied from the
/// dictionary, small random mixer and denoiser, identity autoencoder until fitted.
ToyModel init_model(const ModelConfig& cfg, const RngStream& stream);

/// Ancestral sampling on `steps` evenly strided timesteps, decoded and clamped to [0, 1].
Tensor generate(const ToyModel& model, const Condition& cond, int steps, const RngStream& stream);

/// Names and tensors in checkpoint order.
std::vector<std::pair<std::string, const Tensor*>> named_parameters(const ToyModel& model);

/// Writes one TNSR1 file per parameter plus `model.txt` (config, names, shapes, frozen flags).
void save_model(const std::filesystem::path& dir, const ToyModel& model, bool concept_only_trainable = true);
ToyModel load_model(const std::filesystem::path& dir);

}  // namespace szlab
