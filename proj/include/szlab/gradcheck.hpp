#pragma once

#include <cmath>
#include <functional>

#include "szlab/tensor.hpp"

namespace szlab {

/// Central-difference gradient check.
///
/// Returns max_i |fd_i - g_i| / (|g_i| + 1e-8). The denominator of each
/// difference is the step actually realised in the tensor's precision, so a
/// power-of-two `h` gives exact steps.
template <typename Real>
double finite_diff_check(const std::function<double(const BasicTensor<Real>&)>& f, const BasicTensor<Real>& x,
                         const BasicTensor<Real>& analytic_grad, double h) {
  require_same_shape(x, analytic_grad, "finite_diff_check");
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_check: step must be positive");
  BasicTensor<Real> probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real orig = x[i];
    probe[i] = static_cast<Real>(orig + h);
    const Real up = probe[i];
    const double f_up = f(probe);
    probe[i] = static_cast<Real>(orig - h);
    const Real down = probe[i];
    const double f_down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(f_up) || !std::isfinite(f_down)) throw NumericFailure("finite_diff_check: f is not finite");
    const double fd = (f_up - f_down) / (static_cast<double>(up) - static_cast<double>(down));
    const double g = static_cast<double>(analytic_grad[i]);
    worst = std::max(worst, std::abs(fd - g) / (std::abs(g) + 1e-8));
  }
  return worst;
}

}  // namespace szlab
