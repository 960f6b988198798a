#pragma once

#include <vector>

namespace recondet {

// Linear-beta diffusion schedule. Index convention: beta[t-1] belongs to
// step t for t in 1..T, alpha_bar(0) == 1 exactly (the image level) and
// alpha_bar(t) is the cumulative product of (1 - beta) up to step t.
struct DiffusionSchedule {
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> beta;       // size T
  std::vector<double> alpha_bar;  // size T + 1, alpha_bar[0] == 1

  double abar(int t) const;

  // tau_1 < ... < tau_S evenly spaced over [1, T] with tau_S == T.
  std::vector<int> subset(int S) const;

  static DiffusionSchedule linear(int T = 1000, double beta_start = 1e-4,
                                  double beta_end = 0.02);
};

}  // namespace recondet
