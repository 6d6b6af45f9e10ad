#pragma once

// Randomised finite-difference trials over every hand-written backward pass,
// shared by the model unit tests and the acceptance binary.

#include <algorithm>
#include <string>
#include <vector>

#include "szlab/gradcheck.hpp"
#include "szlab/model.hpp"
#include "szlab/train.hpp"

namespace szlab::testing {

struct GradTrialSummary {
  std::string op;
  int trials = 0;
  double worst = 0.0;
};

inline ModelConfig tiny_model_config(DenoiserGate gate) {
  ModelConfig c;
  c.image_side = 8;
  c.patch = 4;
  c.latent_channels = 2;
  c.embed_dim = 4;
  c.vocab = 16;
  c.prompt_length = 4;
  c.cond_dim = 5;
  c.hidden = 12;
  c.time_features = 4;
  c.timesteps = 50;
  c.gate = gate;
  return c;
}

inline TensorD random_like(Rng& rng, const Shape& shape, double scale) {
  TensorD t(shape);
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

/// Double-precision model with every parameter randomised, including biases
/// and a fitted (non-identity) autoencoder.
inline BasicToyModel<double> random_double_model(DenoiserGate gate, Rng& rng) {
  const ModelConfig cfg = tiny_model_config(gate);
  ToyModel m = init_model(cfg, RngStream{rng.next_u64(), 1});
  std::vector<Tensor> images;
  for (int i = 0; i < 8; ++i) {
    Tensor x(cfg.image_shape());
    for (auto& v : x.values()) v = static_cast<float>(rng.uniform());
    images.push_back(x);
  }
  m.autoencoder = fit_autoencoder(cfg, images);
  auto d = m.cast<double>();
  d.denoiser.b1 = random_like(rng, d.denoiser.b1.shape(), 0.3);
  d.denoiser.b2 = random_like(rng, d.denoiser.b2.shape(), 0.3);
  d.denoiser.b3 = random_like(rng, d.denoiser.b3.shape(), 0.3);
  d.mixer.bias = random_like(rng, d.mixer.bias.shape(), 0.3);
  return d;
}

inline int random_timestep(Rng& rng, int T) { return static_cast<int>(rng.uniform_index(static_cast<std::size_t>(T) + 1)); }

/// Runs `trials` randomised checks per backward op and reports the worst
/// relative error seen for each.
inline std::vector<GradTrialSummary> run_gradient_trials(int trials, std::uint64_t seed) {
  constexpr double h = 1e-5;
  std::vector<GradTrialSummary> out;
  auto record = [&out](const std::string& op, double err) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.op == op; });
    if (it == out.end()) {
      out.push_back({op, 0, 0.0});
      it = out.end() - 1;
    }
    ++it->trials;
    it->worst = std::max(it->worst, err);
  };

  for (auto gate : {DenoiserGate::none, DenoiserGate::output, DenoiserGate::condition}) {
    const std::string tag = "[" + to_string(gate) + "]";
    for (int trial = 0; trial < trials; ++trial) {
      Rng rng(RngStream{seed, 1}.derive(static_cast<std::uint64_t>(gate), static_cast<std::uint64_t>(trial)));
      const auto model = random_double_model(gate, rng);
      const auto& P = model.denoiser;
      const ModelConfig& cfg = model.config;
      const int t = random_timestep(rng, cfg.timesteps);
      const TensorD z = random_like(rng, cfg.latent_shape(), 1.0);
      const BasicCondition<double> cond{random_like(rng, {cfg.cond_dim}, 1.0)};
      const TensorD up = random_like(rng, cfg.latent_shape(), 1.0);
      const auto g = denoiser_backward(P, z, t, cond, up);

      record("denoiser d/dz " + tag, finite_diff_check<double>(
                                          [&](const TensorD& v) { return dot(up, denoiser_forward(P, v, t, cond)); },
                                          z, g.z, h));
      record("denoiser d/dcond " + tag,
             finite_diff_check<double>(
                 [&](const TensorD& v) { return dot(up, denoiser_forward(P, z, t, BasicCondition<double>{v})); },
                 cond.vector, g.cond, h));
      const auto grad_tensors = g.params.tensors();
      for (std::size_t k = 0; k < grad_tensors.size(); ++k) {
        auto probe = P;
        const double err = finite_diff_check<double>(
            [&](const TensorD& v) {
              *probe.tensors()[k] = v;
              return dot(up, denoiser_forward(probe, z, t, cond));
            },
            *P.tensors()[k], *grad_tensors[k], h);
        record("denoiser d/d" + P.names()[k] + " " + tag, err);
      }

      // Batched pass with mixed timesteps.
      const std::size_t B = 3, D = cfg.latent_size(), C = cfg.cond_dim;
      const TensorD zb = random_like(rng, {B, D}, 1.0), cb = random_like(rng, {B, C}, 1.0),
                    ub = random_like(rng, {B, D}, 1.0);
      const std::vector<int> tb = {random_timestep(rng, cfg.timesteps), random_timestep(rng, cfg.timesteps),
                                   random_timestep(rng, cfg.timesteps)};
      DenoiserTape<double> tape;
      denoiser_forward_batch(P, zb, tb, cb, &tape);
      const auto gb = denoiser_backward_batch(P, tape, ub, true);
      record("denoiser batch d/dz " + tag,
             finite_diff_check<double>([&](const TensorD& v) { return dot(ub, denoiser_forward_batch(P, v, tb, cb)); },
                                       zb, gb.z, h));
      record("denoiser batch d/dcond " + tag,
             finite_diff_check<double>([&](const TensorD& v) { return dot(ub, denoiser_forward_batch(P, zb, tb, v)); },
                                       cb, gb.cond, h));
      {
        auto probe = P;
        record("denoiser batch d/dw1 " + tag, finite_diff_check<double>(
                                                  [&](const TensorD& v) {
                                                    probe.w1 = v;
                                                    return dot(ub, denoiser_forward_batch(probe, zb, tb, cb));
                                                  },
                                                  P.w1, gb.params.w1, h));
      }
      if (gate != DenoiserGate::condition) continue;

      // Gate-independent ops, once per trial.
      const std::vector<int> content = {static_cast<int>(rng.uniform_index(cfg.vocab)),
                                        model.embeddings.concept_token()};
      const auto ids = pad_prompt(model.embeddings, model.prompt(content), cfg.prompt_length);
      const int concept_id = model.embeddings.concept_token();
      const TensorD gc = random_like(rng, {cfg.cond_dim}, 1.0);
      record("text condition d/dembedding",
             finite_diff_check<double>(
                 [&](const TensorD& v) {
                   auto table = model.embeddings;
                   table.learned = v;
                   return dot(gc, text_condition(table, model.mixer, ids, cfg.prompt_length).vector);
                 },
                 model.embeddings.learned, token_embedding_grad(model.mixer, ids, concept_id, gc), h));

      const TensorD pooled = random_like(rng, {B, cfg.embed_dim}, 1.0), gcb = random_like(rng, {B, C}, 1.0);
      const auto mg = mixer_grad(pooled, gcb);
      auto mixer_objective = [&](const BasicTextMixer<double>& mx) {
        double acc = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
          const TensorD p({cfg.embed_dim}, std::vector<double>(pooled.data() + b * cfg.embed_dim,
                                                               pooled.data() + (b + 1) * cfg.embed_dim));
          for (std::size_t r = 0; r < C; ++r) {
            double c = mx.bias[r];
            for (std::size_t k = 0; k < cfg.embed_dim; ++k) c += mx.weight(r, k) * p[k];
            acc += gcb[b * C + r] * c;
          }
        }
        return acc;
      };
      record("text mixer d/dweight", finite_diff_check<double>(
                                          [&](const TensorD& v) {
                                            auto mx = model.mixer;
                                            mx.weight = v;
                                            return mixer_objective(mx);
                                          },
                                          model.mixer.weight, mg.weight, h));
      record("text mixer d/dbias", finite_diff_check<double>(
                                        [&](const TensorD& v) {
                                          auto mx = model.mixer;
                                          mx.bias = v;
                                          return mixer_objective(mx);
                                        },
                                        model.mixer.bias, mg.bias, h));

      TensorD x(cfg.image_shape());
      for (auto& v : x.values()) v = rng.uniform();
      const TensorD uz = random_like(rng, cfg.latent_shape(), 1.0);
      record("encoder pullback d/dx",
             finite_diff_check<double>([&](const TensorD& v) { return dot(uz, encode(model.autoencoder, v)); }, x,
                                       encode_backward(model.autoencoder, uz, cfg.image_side), h));

      const TensorD eps = random_like(rng, cfg.latent_shape(), 1.0);
      const auto cond_of = [&](const BasicToyModel<double>& m) {
        return text_condition(m.embeddings, m.mixer, ids, cfg.prompt_length);
      };
      const auto base = dm_loss(model, x, t, eps, cond_of(model));
      record("noise-prediction loss d/dembedding",
             finite_diff_check<double>(
                 [&](const TensorD& v) {
                   auto m = model;
                   m.embeddings.learned = v;
                   return dm_loss(m, x, t, eps, cond_of(m)).loss;
                 },
                 model.embeddings.learned, token_embedding_grad(model.mixer, ids, concept_id, base.grads.cond), h));
      const double a = std::sqrt(model.schedule.alpha_bar(t));
      record("noise-prediction loss d/dx",
             finite_diff_check<double>([&](const TensorD& v) { return dm_loss(model, v, t, eps, cond_of(model)).loss; },
                                       x, encode_backward(model.autoencoder, scaled(base.grads.z, a), cfg.image_side),
                                       h));
    }
  }
  return out;
}

}  // namespace szlab::testing
