// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "dragpd/backend.hpp"

namespace dragpd {

// Each inversion step solves the implicit DDIM equation by fixed-point
// iteration, so sampling the result walks back to the input exactly (up to
// `tolerance`), rather than the first-order approximation of plain DDIM
// inversion.
struct InversionOptions {
  int max_iterations = 60;
  double tolerance = 1e-10;
};

// Deterministic DDIM update z_from -> z_to (to < from).
Tensor ddim_step(const Backend& backend, const Tensor& z, int from, int to,
                 const DiffusionSchedule& schedule);
Tensor ddim_step_vjp(const Backend& backend, const Tensor& z, int from, int to,
                     const DiffusionSchedule& schedule, const Tensor& grad_out);

LatentCode ddim_invert(const Backend& backend, const LatentCode& z0, int target_t,
                       const DiffusionSchedule& schedule, const InversionOptions& options = {});
LatentCode ddim_sample(const Backend& backend, const LatentCode& zt,
                       const DiffusionSchedule& schedule);

// Truncated deterministic sampling from step t to 0 in `num_steps` jumps,
// then the differentiable decoder. Keeps the intermediate states so the
// reverse pass can run without recomputation of the chain.
struct PreviewPath {
  std::vector<int> steps;      // t = steps[0] > ... > steps.back() = 0
  std::vector<Tensor> states;  // latent at each entry of steps
  Tensor rgb;
};

PreviewPath preview_forward(const Backend& backend, const Tensor& zt, int t, int num_steps,
                            const DiffusionSchedule& schedule);
Tensor preview_vjp(const Backend& backend, const PreviewPath& path, const Tensor& grad_rgb,
                   const DiffusionSchedule& schedule);

}  // namespace dragpd
