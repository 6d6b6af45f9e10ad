#include "szlab/attack.hpp"

#include <cmath>

#include "szlab/train.hpp"

namespace szlab {

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::adm_plus: return "ADM+";
    case AttackKind::adm_minus: return "ADM-";
    case AttackKind::sds_plus: return "SDS+";
    case AttackKind::sds_minus: return "SDS-";
    case AttackKind::ea: return "EA";
  }
  return "?";
}

AttackKind attack_kind_from_string(const std::string& name) {
  std::string n;
  for (char c : name) n += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (n == "ADM+" || n == "ADM_PLUS") return AttackKind::adm_plus;
  if (n == "ADM-" || n == "ADM_MINUS") return AttackKind::adm_minus;
  if (n == "SDS+" || n == "SDS_PLUS") return AttackKind::sds_plus;
  if (n == "SDS-" || n == "SDS_MINUS") return AttackKind::sds_minus;
  if (n == "EA") return AttackKind::ea;
  throw InvalidArgument("unknown attack kind '" + name + "'");
}

void PoisonSpec::validate() const {
  if (!(eta > 0.0 && eta <= kappa)) throw InvalidArgument("poison spec: require 0 < eta <= kappa");
  if (steps < 0) throw InvalidArgument("poison spec: steps must be >= 0");
  if (kind == AttackKind::ea && !target) throw InvalidArgument("poison spec: the encoder attack needs a target image");
}

Tensor project_linf(const Tensor& delta, const Tensor& x, double kappa) {
  require_same_shape(delta, x, "project_linf");
  const auto k = static_cast<float>(kappa);
  Tensor out(delta.shape());
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const float d = std::clamp(delta[i], -k, k);
    const float v = x[i] + d;
    out[i] = v < 0.0f ? -x[i] : v > 1.0f ? 1.0f - x[i] : d;
  }
  return out;
}

Tensor checkerboard_target(std::size_t side, std::size_t cell) {
  if (side == 0 || cell == 0) throw InvalidArgument("checkerboard_target: sizes must be positive");
  Tensor t({1, side, side});
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) t(0, y, x) = ((y / cell + x / cell) % 2 == 0) ? 1.0f : 0.0f;
  return t;
}

namespace {

Tensor apply(const Tensor& x, const Tensor& delta) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i] + delta[i], 0.0f, 1.0f);
  return out;
}

void signed_step(Tensor& delta, const Tensor& grad, double step) {
  if (!all_finite(grad)) throw NumericFailure("poison: non-finite gradient");
  const auto s = static_cast<float>(step);
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (grad[i] > 0) delta[i] += s;
    else if (grad[i] < 0) delta[i] -= s;
  }
}

}  // namespace

Tensor craft_diffuser_poison(const ToyModel& model, const Tensor& x, const PoisonSpec& spec, const RngStream& stream,
                             std::vector<double>* objective) {
  spec.validate();
  if (spec.kind == AttackKind::ea) throw InvalidArgument("craft_diffuser_poison: encoder attack requested");
  const bool ascend = spec.kind == AttackKind::adm_plus || spec.kind == AttackKind::sds_plus;
  const bool full_jacobian = spec.kind == AttackKind::adm_plus || spec.kind == AttackKind::adm_minus;
  const auto& mc = model.config;
  const Tensor xi = x.reshaped(mc.image_shape());
  const auto cond = model.condition(model.null_prompt());
  Tensor delta(xi.shape());
  for (int step = 0; step < spec.steps; ++step) {
    Rng rng(stream.derive(static_cast<std::uint64_t>(step)));
    const int t = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(model.schedule.steps())));
    const Tensor eps = randn<float>(rng, mc.latent_shape());
    const Tensor xp = apply(xi, delta);
    const float a = static_cast<float>(std::sqrt(model.schedule.alpha_bar(t)));
    Tensor grad_z;
    if (full_jacobian) {
      const auto r = dm_loss(model, xp, t, eps, cond);
      if (objective) objective->push_back(r.loss);
      grad_z = scaled(r.grads.z, a);
    } else {
      const Tensor zt = add_noise(encode(model.autoencoder, xp), eps, t, model.schedule);
      const Tensor residual = denoiser_forward(model.denoiser, zt, t, cond) - eps;
      if (objective) objective->push_back(squared_norm(residual));
      grad_z = scaled(residual, 2.0f * a);
    }
    Tensor gx = encode_backward(model.autoencoder, grad_z, mc.image_side);
    signed_step(delta, gx, ascend ? spec.eta : -spec.eta);
    delta = project_linf(delta, xi, spec.kappa);
  }
  return apply(xi, delta).reshaped(x.shape());
}

Tensor craft_encoder_poison(const ToyModel& model, const Tensor& x, const PoisonSpec& spec, const RngStream&,
                            std::vector<double>* objective) {
  spec.validate();
  if (spec.kind != AttackKind::ea) throw InvalidArgument("craft_encoder_poison: not an encoder attack");
  const auto& mc = model.config;
  const Tensor xi = x.reshaped(mc.image_shape());
  const Tensor zg = encode(model.autoencoder, spec.target->reshaped(mc.image_shape()));
  auto eval = [&](const Tensor& delta, Tensor* grad) {
    const Tensor diff = encode(model.autoencoder, apply(xi, delta)) - zg;
    if (grad) *grad = encode_backward(model.autoencoder, scaled(diff, 2.0f), mc.image_side);
    return squared_norm(diff);
  };
  constexpr int kMaxHalvings = 12;
  Tensor delta(xi.shape());
  Tensor grad;
  double current = eval(delta, &grad);
  if (objective) objective->push_back(current);
  for (int step = 0; step < spec.steps; ++step) {
    double eta = spec.eta;
    for (int h = 0; h <= kMaxHalvings; ++h, eta /= 2) {
      Tensor trial = delta;
      signed_step(trial, grad, -eta);
      trial = project_linf(trial, xi, spec.kappa);
      Tensor trial_grad;
      const double value = eval(trial, &trial_grad);
      if (value <= current) {
        delta = std::move(trial);
        grad = std::move(trial_grad);
        current = value;
        break;
      }
    }
    if (objective) objective->push_back(current);
  }
  return apply(xi, delta).reshaped(x.shape());
}

Tensor craft_poison(const ToyModel& model, const Tensor& x, const PoisonSpec& spec, const RngStream& stream) {
  return spec.kind == AttackKind::ea ? craft_encoder_poison(model, x, spec, stream)
                                     : craft_diffuser_poison(model, x, spec, stream);
}

Tensor perturbation(const Tensor& x_clean, const Tensor& x_poisoned) {
  require_same_shape(x_clean, x_poisoned, "perturbation");
  return x_poisoned - x_clean;
}

}  // namespace szlab
