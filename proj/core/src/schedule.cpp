// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "dragpd/schedule.hpp"

#include <cmath>

#include "dragpd/error.hpp"

namespace dragpd {

DiffusionSchedule DiffusionSchedule::uniform(int num_steps, int train_steps,
                                             double beta_start, double beta_end) {
  if (num_steps < 1 || train_steps < num_steps) {
    fail(ErrorKind::kInvalidArgument, "schedule needs 1 <= num_steps <= train_steps");
  }
  std::vector<double> cumulative(train_steps);
  const double s0 = std::sqrt(beta_start);
  const double s1 = std::sqrt(beta_end);
  double prod = 1.0;
  for (int i = 0; i < train_steps; ++i) {
    const double s = train_steps == 1 ? s0 : s0 + (s1 - s0) * i / (train_steps - 1);
    prod *= 1.0 - s * s;
    cumulative[i] = prod;
  }
  DiffusionSchedule out;
  const int stride = train_steps / num_steps;
  for (int k = 1; k <= num_steps; ++k) {
    // Step k maps to training timestep (k - 1) * stride + 1, as in the
    // latent-diffusion DDIM scheduler with steps_offset = 1.
    const int t = (k - 1) * stride + 1;
    out.train_timesteps_.push_back(t);
    out.alpha_bars_.push_back(cumulative[t]);
    out.noise_levels_.push_back(std::sqrt(1.0 - cumulative[t]));
  }
  return out;
}

double DiffusionSchedule::alpha_bar(int step) const {
  if (!contains(step)) {
    fail(ErrorKind::kInvalidArgument,
         "step " + std::to_string(step) + " outside schedule [0, " +
             std::to_string(num_steps()) + "]");
  }
  return step == 0 ? 1.0 : alpha_bars_[step - 1];
}

int DiffusionSchedule::train_timestep(int step) const {
  if (!contains(step)) {
    fail(ErrorKind::kInvalidArgument,
         "step " + std::to_string(step) + " outside schedule [0, " +
             std::to_string(num_steps()) + "]");
  }
  return step == 0 ? 0 : train_timesteps_[step - 1];
}

}  // namespace dragpd
