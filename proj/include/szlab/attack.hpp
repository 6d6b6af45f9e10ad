#pragma once

#include <optional>
#include <string>
#include <vector>

#include "szlab/model.hpp"

namespace szlab {

enum class AttackKind { adm_plus, adm_minus, sds_plus, sds_minus, ea };

std::string to_string(AttackKind kind);
AttackKind attack_kind_from_string(const std::string& name);

struct PoisonSpec {
  AttackKind kind = AttackKind::adm_plus;
  double kappa = 16.0 / 256.0;  // l-inf budget in pixel units
  double eta = 1.0 / 256.0;     // signed step size
  int steps = 100;
  std::optional<Tensor> target;  // encoder attack only

  void validate() const;
};

/// Clips delta to [-kappa, kappa], then x + delta to [0, 1], and returns the
/// resulting (feasible) delta.
Tensor project_linf(const Tensor& delta, const Tensor& x, double kappa);

/// High-contrast stand-in target for the encoder attack.
Tensor checkerboard_target(std::size_t side, std::size_t cell = 4);

/// Signed-gradient PGD on the unconditional noise-prediction loss, one (t, eps)
/// draw per step. `objective`, when given, receives the loss of every step.
Tensor craft_diffuser_poison(const ToyModel& model, const Tensor& x, const PoisonSpec& spec, const RngStream& stream,
                             std::vector<double>* objective = nullptr);

/// Signed-gradient descent on ||E(x + delta) - E(target)||^2. A step that would
/// raise the objective is retried at half size.
Tensor craft_encoder_poison(const ToyModel& model, const Tensor& x, const PoisonSpec& spec, const RngStream& stream,
                            std::vector<double>* objective = nullptr);

/// Dispatches on spec.kind.
Tensor craft_poison(const ToyModel& model, const Tensor& x, const PoisonSpec& spec, const RngStream& stream);

/// x_poisoned - x_clean.
Tensor perturbation(const Tensor& x_clean, const Tensor& x_poisoned);

}  // namespace szlab
