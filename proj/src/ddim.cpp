#include "recondet/ddim.hpp"

#include <cmath>
#include <stdexcept>

namespace recondet {

double ddim_transport(double x, double eps, double abar_from, double abar_to) {
  if (!(abar_from > 0.0 && abar_from <= 1.0) || !(abar_to > 0.0 && abar_to <= 1.0))
    throw std::invalid_argument("alpha_bar values must lie in (0, 1]");
  const double x0_hat = (x - std::sqrt(1.0 - abar_from) * eps) / std::sqrt(abar_from);
  return std::sqrt(abar_to) * x0_hat + std::sqrt(1.0 - abar_to) * eps;
}

double forward_diffuse(double x0, double eps, double abar) {
  if (!(abar > 0.0 && abar <= 1.0))
    throw std::invalid_argument("alpha_bar must lie in (0, 1]");
  return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * eps;
}

nn::Tensor ddim_transport_batch(const nn::Tensor& x, const nn::Tensor& eps, double abar_from,
                                double abar_to) {
  if (!x.same_shape(eps))
    throw std::invalid_argument("ddim_transport_batch: eps shape mismatch");
  const double root_from = std::sqrt(abar_from);
  const double root_to = std::sqrt(abar_to);
  const double noise_from = std::sqrt(1.0 - abar_from);
  const double noise_to = std::sqrt(1.0 - abar_to);
  if (!(abar_from > 0.0 && abar_from <= 1.0) || !(abar_to > 0.0 && abar_to <= 1.0))
    throw std::invalid_argument("alpha_bar values must lie in (0, 1]");
  nn::Tensor out(x.n, x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double x0_hat = (x.data[i] - noise_from * eps.data[i]) / root_from;
    out.data[i] = static_cast<float>(root_to * x0_hat + noise_to * eps.data[i]);
  }
  return out;
}

}  // namespace recondet
