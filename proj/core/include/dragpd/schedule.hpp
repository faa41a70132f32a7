// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

namespace dragpd {

// Discrete DDIM schedule. Step index 0 is the clean latent (alpha_bar = 1);
// indices 1..num_steps are increasingly noisy. noise_levels[k - 1] is
// sqrt(1 - alpha_bar) at step k.
class DiffusionSchedule {
 public:
  DiffusionSchedule() = default;

  // Scaled-linear beta schedule over `train_steps`, subsampled uniformly to
  // `num_steps` inference steps (the latent-diffusion convention).
  static DiffusionSchedule uniform(int num_steps, int train_steps = 1000,
                                   double beta_start = 0.00085,
                                   double beta_end = 0.012);

  int num_steps() const noexcept { return static_cast<int>(noise_levels_.size()); }
  const std::vector<double>& noise_levels() const noexcept { return noise_levels_; }

  // Valid for 0 <= step <= num_steps.
  double alpha_bar(int step) const;
  int train_timestep(int step) const;
  bool contains(int step) const noexcept { return step >= 0 && step <= num_steps(); }

  friend bool operator==(const DiffusionSchedule&, const DiffusionSchedule&) = default;

 private:
  std::vector<double> noise_levels_;
  std::vector<double> alpha_bars_;     // index k - 1
  std::vector<int> train_timesteps_;   // index k - 1
};

}  // namespace dragpd
