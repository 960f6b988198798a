#include "recondet/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace recondet {

double DiffusionSchedule::abar(int t) const {
  if (t < 0 || t > T)
    throw std::invalid_argument("timestep out of range: " + std::to_string(t));
  return alpha_bar[static_cast<std::size_t>(t)];
}

std::vector<int> DiffusionSchedule::subset(int S) const {
  if (S < 2 || S > T)
    throw std::invalid_argument("subset size must lie in [2, T]");
  std::vector<int> taus(static_cast<std::size_t>(S));
  for (int i = 0; i < S; ++i) {
    double pos = 1.0 + static_cast<double>(i) * (T - 1) / (S - 1);
    taus[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(pos));
  }
  for (int i = 1; i < S; ++i)
    if (taus[static_cast<std::size_t>(i)] <= taus[static_cast<std::size_t>(i - 1)])
      throw std::invalid_argument("subset timesteps are not strictly increasing");
  return taus;
}

DiffusionSchedule DiffusionSchedule::linear(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("schedule length must be positive");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
    throw std::invalid_argument("betas must satisfy 0 < beta_start <= beta_end < 1");
  DiffusionSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.resize(static_cast<std::size_t>(T));
  s.alpha_bar.resize(static_cast<std::size_t>(T) + 1);
  s.alpha_bar[0] = 1.0;
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    double b = T == 1 ? beta_start
                      : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
    s.beta[static_cast<std::size_t>(t - 1)] = b;
    prod *= 1.0 - b;
    if (!(prod > 0.0 && prod < 1.0))
      throw std::invalid_argument("alpha_bar left (0, 1); check the beta range");
    s.alpha_bar[static_cast<std::size_t>(t)] = prod;
  }
  return s;
}

}  // namespace recondet
