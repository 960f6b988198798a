#pragma once

#include "recondet/schedule.hpp"
#include "recondet/tensor.hpp"

namespace recondet {

// Deterministic one-step transport between noise levels with the noise
// estimate held fixed:
//   x0_hat = (x - sqrt(1 - abar_from) * eps) / sqrt(abar_from)
//   out    = sqrt(abar_to) * x0_hat + sqrt(1 - abar_to) * eps
// Running it back with the same eps recovers x exactly, which is what the
// whole reconstruction pipeline leans on.
double ddim_transport(double x, double eps, double abar_from, double abar_to);

// Closed-form forward diffusion x_t = sqrt(abar) * x0 + sqrt(1 - abar) * eps.
double forward_diffuse(double x0, double eps, double abar);

// Elementwise ddim_transport over a batch, eps shaped like x.
nn::Tensor ddim_transport_batch(const nn::Tensor& x, const nn::Tensor& eps, double abar_from,
                                double abar_to);

}  // namespace recondet
