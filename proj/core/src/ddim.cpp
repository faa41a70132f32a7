// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "dragpd/ddim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dragpd/error.hpp"

namespace dragpd {

namespace {

struct StepCoefficients {
  double a;  // multiplies z_from
  double b;  // multiplies eps(z_from)
};

StepCoefficients coefficients(int from, int to, const DiffusionSchedule& schedule) {
  const double ab_from = schedule.alpha_bar(from);
  const double ab_to = schedule.alpha_bar(to);
  const double a = std::sqrt(ab_to / ab_from);
  return {a, std::sqrt(1.0 - ab_to) - a * std::sqrt(1.0 - ab_from)};
}

void require_finite(const Tensor& z, const char* what) {
  if (!z.all_finite()) fail(ErrorKind::kNumerical, std::string(what) + ": non-finite latent");
}

}  // namespace

Tensor ddim_step(const Backend& backend, const Tensor& z, int from, int to,
                 const DiffusionSchedule& schedule) {
  if (to >= from) fail(ErrorKind::kInvalidArgument, "ddim_step must move toward t = 0");
  const auto [a, b] = coefficients(from, to, schedule);
  Tensor out = backend.predict_noise(z, schedule.train_timestep(from));
  out *= b;
  out.add_scaled(z, a);
  return out;
}

Tensor ddim_step_vjp(const Backend& backend, const Tensor& z, int from, int to,
                     const DiffusionSchedule& schedule, const Tensor& grad_out) {
  const auto [a, b] = coefficients(from, to, schedule);
  Tensor g = backend.predict_noise_vjp(z, schedule.train_timestep(from), grad_out);
  g *= b;
  g.add_scaled(grad_out, a);
  return g;
}

LatentCode ddim_invert(const Backend& backend, const LatentCode& z0, int target_t,
                       const DiffusionSchedule& schedule, const InversionOptions& options) {
  if (z0.timestep != 0) {
    fail(ErrorKind::kInvalidArgument, "ddim_invert expects a clean latent (t = 0)");
  }
  if (target_t < 0 || target_t > schedule.num_steps()) {
    fail(ErrorKind::kInvalidArgument,
         "inversion target t = " + std::to_string(target_t) + " outside schedule [0, " +
             std::to_string(schedule.num_steps()) + "]");
  }
  require_finite(z0.data, "ddim_invert");
  Tensor z = z0.data;
  for (int to = 0; to < target_t; ++to) {
    const int from = to + 1;
    const auto [a, b] = coefficients(from, to, schedule);
    const int train_t = schedule.train_timestep(from);
    // Solve z_to = a * x + b * eps(x) for x.
    auto map = [&](const Tensor& x) {
      Tensor g = backend.predict_noise(x, train_t);
      g *= -b / a;
      g.add_scaled(z, 1.0 / a);
      return g;
    };
    Tensor x = map(z);
    double change = std::numeric_limits<double>::infinity();
    for (int it = 0; it < options.max_iterations && change > options.tolerance; ++it) {
      Tensor next = map(x);
      change = max_abs_diff(next, x);
      x = std::move(next);
      if (!std::isfinite(change)) break;
    }
    if (!(change <= options.tolerance)) {
      fail(ErrorKind::kNumerical, "DDIM inversion did not converge at step " +
                                      std::to_string(from) + " (last update " +
                                      std::to_string(change) + ")");
    }
    z = std::move(x);
  }
  LatentCode out;
  out.data = std::move(z);
  out.timestep = target_t;
  out.step_index = z0.step_index;
  return out;
}

LatentCode ddim_sample(const Backend& backend, const LatentCode& zt,
                       const DiffusionSchedule& schedule) {
  if (!schedule.contains(zt.timestep)) {
    fail(ErrorKind::kInvalidArgument,
         "latent timestep " + std::to_string(zt.timestep) + " outside schedule");
  }
  require_finite(zt.data, "ddim_sample");
  Tensor z = zt.data;
  for (int from = zt.timestep; from > 0; --from) {
    z = ddim_step(backend, z, from, from - 1, schedule);
  }
  LatentCode out;
  out.data = std::move(z);
  out.timestep = 0;
  out.step_index = zt.step_index;
  return out;
}

PreviewPath preview_forward(const Backend& backend, const Tensor& zt, int t, int num_steps,
                            const DiffusionSchedule& schedule) {
  if (!schedule.contains(t)) fail(ErrorKind::kInvalidArgument, "preview start outside schedule");
  if (num_steps < 1) fail(ErrorKind::kInvalidArgument, "preview needs at least one step");
  PreviewPath path;
  const int jumps = std::min(num_steps, std::max(t, 1));
  path.steps.push_back(t);
  for (int j = 1; j <= jumps; ++j) {
    const int s = static_cast<int>(std::lround(t * (1.0 - static_cast<double>(j) / jumps)));
    if (s < path.steps.back()) path.steps.push_back(s);
  }
  path.states.push_back(zt);
  for (std::size_t j = 1; j < path.steps.size(); ++j) {
    path.states.push_back(
        ddim_step(backend, path.states.back(), path.steps[j - 1], path.steps[j], schedule));
  }
  path.rgb = backend.decode_preview(path.states.back());
  return path;
}

Tensor preview_vjp(const Backend& backend, const PreviewPath& path, const Tensor& grad_rgb,
                   const DiffusionSchedule& schedule) {
  Tensor g = backend.decode_preview_vjp(path.states.back(), grad_rgb);
  for (std::size_t j = path.steps.size() - 1; j > 0; --j) {
    g = ddim_step_vjp(backend, path.states[j - 1], path.steps[j - 1], path.steps[j], schedule, g);
  }
  return g;
}

}  // namespace dragpd
