#include "szlab/train.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>

#include "szlab/defense.hpp"

namespace szlab {

std::string to_string(LrSchedule s) {
  switch (s) {
    case LrSchedule::constant: return "constant";
    case LrSchedule::linear: return "linear";
    case LrSchedule::cosine: return "cosine";
  }
  return "?";
}

std::string to_string(MaskMode m) {
  switch (m) {
    case MaskMode::none: return "none";
    case MaskMode::lm: return "LM";
    case MaskMode::im: return "IM";
    case MaskMode::lim: return "LIM";
    case MaskMode::zm: return "ZM";
  }
  return "?";
}

LrSchedule lr_schedule_from_string(const std::string& name) {
  for (auto s : {LrSchedule::constant, LrSchedule::linear, LrSchedule::cosine})
    if (to_string(s) == name) return s;
  throw InvalidArgument("unknown learning-rate schedule '" + name + "'");
}

MaskMode mask_mode_from_string(const std::string& name) {
  for (auto m : {MaskMode::none, MaskMode::lm, MaskMode::im, MaskMode::lim, MaskMode::zm}) {
    auto lower = to_string(m);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (to_string(m) == name || lower == name) return m;
  }
  throw InvalidArgument("unknown mask mode '" + name + "'");
}

static double scheduled_lr(double base, LrSchedule s, int step, int steps) {
  const double frac = steps > 0 ? static_cast<double>(step) / steps : 0.0;
  switch (s) {
    case LrSchedule::constant: return base;
    case LrSchedule::linear: return base * (1.0 - frac);
    case LrSchedule::cosine: return base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  }
  return base;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw InvalidArgument("learning_rate must be >= 0");
  if (steps < 0) throw InvalidArgument("steps must be >= 0");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (dilation_px < 0) throw InvalidArgument("dilation_px must be >= 0");
  if (jpeg_quality) JpegConfig{*jpeg_quality}.validate();
}

double TrainConfig::lr_at(int step) const { return scheduled_lr(learning_rate, schedule, step, steps); }

void PretrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("pretrain learning_rate must be > 0");
  if (steps < 0 || batch_size < 1) throw InvalidArgument("pretrain steps >= 0 and batch_size >= 1 required");
}

// ---------------------------------------------------------------- masks

Tensor dilate_mask(const Tensor& mask, int radius_px) {
  if (radius_px < 0) throw InvalidArgument("dilation radius must be >= 0");
  if (mask.rank() < 2) throw InvalidArgument("dilate_mask: need a 2-D mask");
  if (radius_px == 0) return mask;
  const std::size_t h = mask.dim(mask.rank() - 2), w = mask.dim(mask.rank() - 1);
  const auto r = static_cast<std::ptrdiff_t>(radius_px);
  Tensor out(mask.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      float m = 0.0f;
      for (std::ptrdiff_t dy = -r; dy <= r && m < 1.0f; ++dy) {
        const auto yy = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(y) + dy, 0, static_cast<std::ptrdiff_t>(h) - 1);
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
          const auto xx = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(x) + dx, 0, static_cast<std::ptrdiff_t>(w) - 1);
          m = std::max(m, mask[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)]);
        }
      }
      out[y * w + x] = m;
    }
  }
  return out;
}

Tensor resize_mask(const Tensor& mask, std::size_t latent_side, std::size_t channels) {
  if (mask.rank() < 2 || latent_side == 0 || channels == 0) throw InvalidArgument("resize_mask: bad arguments");
  const std::size_t h = mask.dim(mask.rank() - 2), w = mask.dim(mask.rank() - 1);
  if (h % latent_side != 0 || w % latent_side != 0 || h != w) {
    throw InvalidArgument("resize_mask: latent side " + std::to_string(latent_side) + " does not divide mask " +
                          shape_string(mask.shape()));
  }
  const std::size_t f = h / latent_side;
  Tensor out({channels, latent_side, latent_side});
  for (std::size_t i = 0; i < latent_side; ++i) {
    for (std::size_t j = 0; j < latent_side; ++j) {
      double acc = 0;
      for (std::size_t a = 0; a < f; ++a)
        for (std::size_t b = 0; b < f; ++b) acc += mask[(i * f + a) * w + j * f + b];
      const float v = acc / static_cast<double>(f * f) >= 0.5 ? 1.0f : 0.0f;
      for (std::size_t c = 0; c < channels; ++c) out(c, i, j) = v;
    }
  }
  return out;
}

MaskPair make_mask_pair(const Tensor& pixel_mask, int dilation_px, const ModelConfig& cfg) {
  Tensor px = dilate_mask(pixel_mask, dilation_px).reshaped(cfg.image_shape());
  Tensor lat = resize_mask(px, cfg.latent_side(), cfg.latent_depth());
  return {std::move(px), std::move(lat)};
}

// ---------------------------------------------------------------- losses

template <typename Real>
DmLoss<Real> dm_loss(const BasicToyModel<Real>& model, const BasicTensor<Real>& x, int t, const BasicTensor<Real>& eps,
                     const BasicCondition<Real>& cond) {
  DmLoss<Real> out;
  const auto z0 = encode(model.autoencoder, x);
  out.z_t = add_noise(z0, eps, t, model.schedule);
  out.eps_hat = denoiser_forward(model.denoiser, out.z_t, t, cond);
  BasicTensor<Real> upstream(out.eps_hat.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < upstream.size(); ++i) {
    const Real r = out.eps_hat[i] - eps[i];
    loss += static_cast<double>(r) * static_cast<double>(r);
    upstream[i] = Real{2} * r;
  }
  out.loss = loss;
  out.grads = denoiser_backward(model.denoiser, out.z_t, t, cond, upstream);
  return out;
}

double masked_loss(const Tensor& eps_hat, const Tensor& eps, const MaskPair* masks, MaskMode mode) {
  require_same_shape(eps_hat, eps, "masked_loss");
  if (mode != MaskMode::none && masks == nullptr) {
    throw InvalidArgument("masked_loss: mask mode " + to_string(mode) + " needs a mask");
  }
  const bool weighted = mode == MaskMode::lm || mode == MaskMode::lim;
  if (weighted) require_same_shape(eps_hat, masks->latent, "masked_loss mask");
  double acc = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double r = static_cast<double>(eps_hat[i]) - eps[i];
    const double m = weighted ? masks->latent[i] : 1.0;
    acc += (r * m) * (r * m);
  }
  return acc;
}

RegionLoss region_loss(const Tensor& eps_hat, const Tensor& eps, const Tensor& latent_mask) {
  require_same_shape(eps_hat, eps, "region_loss");
  require_same_shape(eps_hat, latent_mask, "region_loss mask");
  RegionLoss out;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double r = static_cast<double>(eps_hat[i]) - eps[i];
    (latent_mask[i] > 0.5f ? out.loss_in : out.loss_out) += r * r;
  }
  out.loss = out.loss_in + out.loss_out;
  return out;
}

// ---------------------------------------------------------------- textual inversion

std::vector<Tensor> ti_inputs(const std::vector<Tensor>& images, const TrainConfig& cfg) {
  if (!cfg.jpeg_quality) return images;
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (const auto& x : images) out.push_back(jpeg_compress(x, JpegConfig{*cfg.jpeg_quality}));
  return out;
}

TiResult train_ti(const ToyModel& model, const std::vector<Tensor>& images, const std::vector<Tensor>& masks,
                  const std::vector<int>& prompt_tokens, const TrainConfig& cfg, const RngStream& stream) {
  cfg.validate();
  if (images.empty()) throw InvalidArgument("train_ti: no training images");
  if (cfg.mask_mode != MaskMode::none && masks.size() != images.size()) {
    throw InvalidArgument("train_ti: mask mode " + to_string(cfg.mask_mode) + " needs one mask per image");
  }
  if (!masks.empty() && masks.size() != images.size()) throw InvalidArgument("train_ti: mask count mismatch");
  const auto& mc = model.config;
  const int concept_id = model.embeddings.concept_token();
  const auto padded = pad_prompt(model.embeddings, prompt_tokens, mc.prompt_length);
  if (std::find(padded.begin(), padded.end(), concept_id) == padded.end()) {
    throw InvalidArgument("train_ti: prompt does not contain the concept token");
  }

  TiResult result{model, {}, {}};
  auto& table = result.model.embeddings;
  const auto inputs = ti_inputs(images, cfg);
  const std::size_t n = inputs.size(), d = mc.latent_size(), cdim = mc.cond_dim;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  std::vector<MaskPair> pairs;
  std::vector<Tensor> z0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!masks.empty()) pairs.push_back(make_mask_pair(masks[i], cfg.dilation_px, mc));
    Tensor x = inputs[i].reshaped(mc.image_shape());
    if (cfg.mask_mode == MaskMode::im || cfg.mask_mode == MaskMode::lim) x = hadamard(x, pairs[i].pixel);
    z0.push_back(encode(model.autoencoder, x));
    if (z0.back().size() != d) throw InvalidArgument("train_ti: encoder output does not match the latent shape");
  }
  const bool weight_loss = cfg.mask_mode == MaskMode::lm || cfg.mask_mode == MaskMode::lim;
  const bool mask_latent = cfg.mask_mode == MaskMode::zm;

  auto snapshot_at = [&](int done) {
    if (std::find(cfg.snapshot_steps.begin(), cfg.snapshot_steps.end(), done) != cfg.snapshot_steps.end()) {
      result.snapshots.emplace_back(done, table.learned);
    }
  };
  snapshot_at(0);

  Tensor zt({batch, d}), eps({batch, d});
  std::vector<int> ts(batch);
  std::vector<std::size_t> picks(batch);
  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng(stream.derive(static_cast<std::uint64_t>(step)));
    for (std::size_t b = 0; b < batch; ++b) {
      picks[b] = rng.uniform_index(n);
      ts[b] = cfg.sampler.sample(model.schedule, rng);
      const double ab = model.schedule.alpha_bar(ts[b]);
      const float a = static_cast<float>(std::sqrt(ab)), s = static_cast<float>(std::sqrt(1.0 - ab));
      const Tensor& src = z0[picks[b]];
      for (std::size_t k = 0; k < d; ++k) {
        const auto e = static_cast<float>(rng.normal());
        eps[b * d + k] = e;
        float v = a * src[k] + s * e;
        if (mask_latent) v *= pairs[picks[b]].latent[k];
        zt[b * d + k] = v;
      }
    }
    const auto cond = text_condition(table, result.model.mixer, padded, mc.prompt_length);
    Tensor conds({batch, cdim});
    for (std::size_t b = 0; b < batch; ++b) std::copy_n(cond.vector.data(), cdim, conds.data() + b * cdim);

    DenoiserTape<float> tape;
    const Tensor eps_hat = denoiser_forward_batch(model.denoiser, zt, ts, conds, &tape);
    Tensor upstream({batch, d});
    double loss_in = 0.0, loss_out = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t k = 0; k < d; ++k) {
        const std::size_t i = b * d + k;
        const float r = eps_hat[i] - eps[i];
        const float m = pairs.empty() ? 1.0f : pairs[picks[b]].latent[k];
        (m > 0.5f ? loss_in : loss_out) += static_cast<double>(r) * r;
        upstream[i] = 2.0f * (weight_loss ? r * m : r) / static_cast<float>(batch);
      }
    }
    loss_in /= static_cast<double>(batch);
    loss_out /= static_cast<double>(batch);
    const double loss = loss_in + loss_out;
    if (!std::isfinite(loss)) throw NumericFailure("train_ti: non-finite loss at step " + std::to_string(step));

    const auto grads = denoiser_backward_batch(model.denoiser, tape, upstream, false);
    Tensor grad_cond({cdim});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < cdim; ++c) grad_cond[c] += grads.cond[b * cdim + c];
    const Tensor g = token_embedding_grad(result.model.mixer, padded, concept_id, grad_cond);
    const double lr = cfg.lr_at(step);
    axpy(static_cast<float>(-lr), g, table.learned);

    result.log.push_back({step, ts[0], loss, loss_in, loss_out, std::sqrt(squared_norm(g))});
    snapshot_at(step + 1);
  }
  return result;
}

void write_ti_log(const std::filesystem::path& path, const std::vector<TiLogRow>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << "step,t,loss,loss_in,loss_out,grad_norm_embedding\n" << std::setprecision(9);
  for (const auto& r : log) {
    out << r.step << "," << r.t << "," << r.loss << "," << r.loss_in << "," << r.loss_out << "," << r.grad_norm_embedding
        << "\n";
  }
}

// ---------------------------------------------------------------- pretraining

namespace {

struct AdamSlot {
  Tensor* param;
  std::vector<double> m, v;
};

}  // namespace

PretrainResult pretrain_dm(const ToyModel& model, const std::vector<Tensor>& images,
                           const std::vector<std::vector<int>>& captions, const PretrainConfig& cfg,
                           const RngStream& stream) {
  cfg.validate();
  if (images.empty()) throw InvalidArgument("pretrain_dm: empty dataset");
  if (captions.size() != images.size()) throw InvalidArgument("pretrain_dm: one caption per image required");
  PretrainResult result{model, {}};
  if (cfg.steps == 0) return result;
  auto& m = result.model;
  const auto& mc = m.config;
  if (!mc.pixel_space && m.autoencoder.identity) {
    const std::size_t nfit = std::min(cfg.autoencoder_fit_images, images.size());
    m.autoencoder = fit_autoencoder(mc, std::span<const Tensor>(images.data(), nfit));
  }

  const std::size_t n = images.size(), d = mc.latent_size(), e = mc.embed_dim, cdim = mc.cond_dim;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<Tensor> z0;
  z0.reserve(n);
  Tensor pooled({n, e});
  for (std::size_t i = 0; i < n; ++i) {
    z0.push_back(encode(m.autoencoder, images[i]));
    const auto ids = make_prompt(captions[i], m.embeddings.start_token(), m.embeddings.end_token(), mc.prompt_length);
    const auto p = pool_embeddings(m.embeddings, ids, mc.prompt_length);
    std::copy_n(p.data(), e, pooled.data() + i * e);
  }

  std::vector<AdamSlot> slots;
  for (auto* p : m.denoiser.tensors()) slots.push_back({p, std::vector<double>(p->size()), std::vector<double>(p->size())});
  slots.push_back({&m.mixer.weight, std::vector<double>(m.mixer.weight.size()), std::vector<double>(m.mixer.weight.size())});
  slots.push_back({&m.mixer.bias, std::vector<double>(m.mixer.bias.size()), std::vector<double>(m.mixer.bias.size())});

  Tensor zt({batch, d}), eps({batch, d}), conds({batch, cdim}), pb({batch, e});
  std::vector<int> ts(batch);
  std::vector<std::size_t> picks(batch);
  const int T = m.schedule.steps();
  result.losses.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng(stream.derive(static_cast<std::uint64_t>(step)));
    for (std::size_t b = 0; b < batch; ++b) {
      picks[b] = rng.uniform_index(n);
      ts[b] = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(T)));
      const double ab = m.schedule.alpha_bar(ts[b]);
      const float a = static_cast<float>(std::sqrt(ab)), s = static_cast<float>(std::sqrt(1.0 - ab));
      for (std::size_t k = 0; k < d; ++k) {
        const auto v = static_cast<float>(rng.normal());
        eps[b * d + k] = v;
        zt[b * d + k] = a * z0[picks[b]][k] + s * v;
      }
      std::copy_n(pooled.data() + picks[b] * e, e, pb.data() + b * e);
    }
    using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> P(pb.data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(e));
    Eigen::Map<const Mat> W(m.mixer.weight.data(), static_cast<Eigen::Index>(cdim), static_cast<Eigen::Index>(e));
    Eigen::Map<Mat> C(conds.data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(cdim));
    C.noalias() = P * W.transpose();
    C.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(m.mixer.bias.data(), static_cast<Eigen::Index>(cdim));

    DenoiserTape<float> tape;
    const Tensor eps_hat = denoiser_forward_batch(m.denoiser, zt, ts, conds, &tape);
    Tensor upstream({batch, d});
    double loss = 0.0;
    for (std::size_t i = 0; i < upstream.size(); ++i) {
      const float r = eps_hat[i] - eps[i];
      loss += static_cast<double>(r) * r;
      upstream[i] = 2.0f * r / static_cast<float>(batch);
    }
    loss /= static_cast<double>(batch);
    if (!std::isfinite(loss)) throw NumericFailure("pretrain_dm: non-finite loss at step " + std::to_string(step));
    result.losses.push_back(loss);

    auto grads = denoiser_backward_batch(m.denoiser, tape, upstream, true);
    const auto mg = mixer_grad(pb, grads.cond);

    std::vector<const Tensor*> gradients;
    for (auto* g : grads.params.tensors()) gradients.push_back(g);
    gradients.push_back(&mg.weight);
    gradients.push_back(&mg.bias);

    const double lr = scheduled_lr(cfg.learning_rate, cfg.schedule, step, cfg.steps);
    const double c1 = 1.0 - std::pow(cfg.beta1, step + 1), c2 = 1.0 - std::pow(cfg.beta2, step + 1);
    for (std::size_t s = 0; s < slots.size(); ++s) {
      auto& slot = slots[s];
      const Tensor& g = *gradients[s];
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = g[i];
        slot.m[i] = cfg.beta1 * slot.m[i] + (1 - cfg.beta1) * gi;
        slot.v[i] = cfg.beta2 * slot.v[i] + (1 - cfg.beta2) * gi * gi;
        const double upd = lr * (slot.m[i] / c1) / (std::sqrt(slot.v[i] / c2) + cfg.epsilon);
        (*slot.param)[i] = static_cast<float>((*slot.param)[i] - upd);
      }
    }
  }
  return result;
}

template DmLoss<float> dm_loss(const BasicToyModel<float>&, const BasicTensor<float>&, int, const BasicTensor<float>&,
                               const BasicCondition<float>&);
template DmLoss<double> dm_loss(const BasicToyModel<double>&, const BasicTensor<double>&, int,
                                const BasicTensor<double>&, const BasicCondition<double>&);

}  // namespace szlab
