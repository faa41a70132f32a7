// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "dragpd/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "dragpd/ddim.hpp"
#include "dragpd/error.hpp"
#include "dragpd/synthetic_backend.hpp"

namespace dragpd {

const char* to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::kReady: return "ready";
    case SessionStatus::kConverged: return "converged";
    case SessionStatus::kCapped: return "capped";
    case SessionStatus::kFailed: return "failed";
  }
  return "unknown";
}

void OptimizerConfig::validate() const {
  if (max_steps < 1) fail(ErrorKind::kInvalidArgument, "optimizer.max_steps must be >= 1");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) {
    fail(ErrorKind::kInvalidArgument, "optimizer.step_size must be > 0");
  }
  if (!(convergence_radius >= 0.0)) {
    fail(ErrorKind::kInvalidArgument, "optimizer.convergence_radius must be >= 0");
  }
  if (reward_interval < 1) fail(ErrorKind::kInvalidArgument, "optimizer.reward_interval must be >= 1");
  if (preview_steps < 1) fail(ErrorKind::kInvalidArgument, "optimizer.preview_steps must be >= 1");
  if (inversion_t < 1) fail(ErrorKind::kInvalidArgument, "optimizer.inversion_t must be >= 1");
  if (patch.r1 < 1) fail(ErrorKind::kInvalidArgument, "patch.r1 must be >= 1");
  tracker.validate();
}

OptimizerConfig synthetic_profile() {
  OptimizerConfig c;
  c.step_size = 0.01;
  c.optimizer_kind = OptimizerKind::kSgd;
  c.inversion_t = 20;
  c.feature_layer = "hypercolumn";
  c.reference = ReferenceMode::kCurrentStep;
  c.patch.r1 = 2;
  return c;
}

void EditRequest::validate(int latent_height, int latent_width) const {
  if (pairs.empty()) fail(ErrorKind::kInvalidArgument, "points: at least one pair is required");
  auto inside = [&](Coord c) {
    return c.row >= 0 && c.row < latent_height && c.col >= 0 && c.col < latent_width;
  };
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!inside(pairs[i].handle) || !inside(pairs[i].original_handle)) {
      fail(ErrorKind::kInvalidArgument, "points[" + std::to_string(i) + "].handle " +
                                            to_string(pairs[i].handle) + " is out of bounds");
    }
    if (!inside(pairs[i].target)) {
      fail(ErrorKind::kInvalidArgument, "points[" + std::to_string(i) + "].target " +
                                            to_string(pairs[i].target) + " is out of bounds");
    }
  }
  if (mask.height() != latent_height || mask.width() != latent_width) {
    fail(ErrorKind::kInvalidArgument,
         "mask: expected " + std::to_string(latent_height) + "x" + std::to_string(latent_width) +
             ", got " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()));
  }
  if (toggles.reward_on && prompt_target.empty()) {
    fail(ErrorKind::kInvalidArgument, "prompt_target: required when reward is on");
  }
  if (toggles.reward_on && prompt_initial.empty()) {
    fail(ErrorKind::kInvalidArgument, "prompt_initial: required when reward is on");
  }
  weights.validate();
}

std::vector<Coord> EditSession::handles() const {
  std::vector<Coord> out;
  for (const auto& p : request.pairs) out.push_back(p.handle);
  return out;
}

double mean_handle_distance(const std::vector<PointPair>& pairs, const std::vector<Coord>& handles) {
  if (pairs.empty() || pairs.size() != handles.size()) {
    fail(ErrorKind::kInvalidArgument, "mean distance needs equal, non-empty handle lists");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    sum += std::hypot(handles[i].row - pairs[i].target.row, handles[i].col - pairs[i].target.col);
  }
  return sum / static_cast<double>(pairs.size());
}

void bind_session(EditSession& s, const BackendPtr& base_backend, const EncoderPtr& encoder) {
  s.backend = base_backend->without_adapters()->with_adapters(s.adapters);
  s.encoder = encoder;
  const std::string& layer = s.config.feature_layer;
  s.inversion_features = s.backend->extract_features(s.inversion_code, layer);
  s.reference_features.clear();
  for (const auto& p : s.request.pairs) {
    s.reference_features.push_back(s.inversion_features.data.pixel(p.original_handle));
  }
  s.prior_moments = estimate_moments(s.inversion_code.data, s.config.moment_mode);
  s.target_embedding.clear();
  s.initial_embedding.clear();
  if (encoder && !s.request.prompt_target.empty() && !s.request.prompt_initial.empty()) {
    s.target_embedding = encoder->embed_text(s.request.prompt_target);
    s.initial_embedding = encoder->embed_text(s.request.prompt_initial);
  }
}

EditSession prepare_session(EditRequest request, const BackendPtr& backend,
                            const EncoderPtr& encoder, const OptimizerConfig& config) {
  config.validate();
  const auto& shape = backend->descriptor().latent_shape;
  request.validate(shape[1], shape[2]);
  if (!backend->has_feature_layer(config.feature_layer)) {
    fail(ErrorKind::kInvalidArgument,
         "optimizer.feature_layer: backend has no layer '" + config.feature_layer + "'");
  }
  if (!backend->schedule().contains(config.inversion_t)) {
    fail(ErrorKind::kInvalidArgument, "optimizer.inversion_t: outside the backend schedule");
  }

  EditSession s;
  s.request = std::move(request);
  s.config = config;
  s.backend_name = backend->descriptor().name;
  if (const auto* synthetic = dynamic_cast<const SyntheticBackend*>(backend.get())) {
    s.backend_options = synthetic->options();
  }
  s.encoder_name = encoder ? encoder->name() : std::string();

  const BackendPtr base = backend->without_adapters();
  try {
    s.source_latent = base->encode_image(s.request.image);
    s.adapters = finetune_identity(s.request.image, base, config.adaptation, &s.adaptation_report);
    const BackendPtr adapted = base->with_adapters(s.adapters);
    s.inversion_code =
        ddim_invert(*adapted, s.source_latent, config.inversion_t, adapted->schedule());
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNumerical) throw;
    s.status = SessionStatus::kFailed;
    s.failure_cause = e.what();
    s.backend = base;
    return s;
  }
  s.latent = s.inversion_code;
  s.latent.step_index = 0;
  s.adam.m = Tensor(shape[0], shape[1], shape[2]);
  s.adam.v = Tensor(shape[0], shape[1], shape[2]);
  s.adam.t = 0;
  bind_session(s, base, encoder);
  return s;
}

EditSession prepare_session(EditRequest request, const std::string& backend_name,
                            const BackendOptions& backend_options,
                            const std::string& encoder_name, const OptimizerConfig& config) {
  const BackendPtr backend = make_backend(backend_name, backend_options);
  EncoderPtr encoder;
  if (!encoder_name.empty()) {
    const auto& shape = backend->descriptor().latent_shape;
    const int ds = backend->descriptor().downsample;
    encoder = make_encoder(encoder_name, shape[1] * ds, shape[2] * ds);
  }
  EditSession s = prepare_session(std::move(request), backend, encoder, config);
  s.backend_name = backend_name;
  s.backend_options = backend_options;
  s.encoder_name = encoder_name;
  return s;
}

bool check_convergence(const EditSession& session, double radius) {
  for (const auto& p : session.request.pairs) {
    if (std::hypot(p.handle.row - p.target.row, p.handle.col - p.target.col) > radius) {
      return false;
    }
  }
  return true;
}

namespace {

// Marks the session terminal when it has converged or used its budget.
void settle(EditSession& s) {
  if (s.status != SessionStatus::kReady) return;
  if (check_convergence(s, s.config.convergence_radius)) {
    s.status = SessionStatus::kConverged;
  } else if (s.step_index() >= s.config.max_steps) {
    s.status = SessionStatus::kCapped;
  }
}

Tensor optimizer_update(const Tensor& z, const Tensor& grad, const OptimizerConfig& config,
                        AdamState& state) {
  Tensor next = z;
  if (config.optimizer_kind == OptimizerKind::kSgd) {
    next.add_scaled(grad, -config.step_size);
    return next;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  state.t += 1;
  const double c1 = 1.0 - std::pow(b1, state.t);
  const double c2 = 1.0 - std::pow(b2, state.t);
  auto m = state.m.values();
  auto v = state.v.values();
  auto g = grad.values();
  auto x = next.values();
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = b1 * m[i] + (1 - b1) * g[i];
    v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
    x[i] -= config.step_size * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
  return next;
}

[[noreturn]] void abort_step(EditSession& s, const std::string& cause) {
  s.status = SessionStatus::kFailed;
  s.failure_cause = cause;
  fail(ErrorKind::kNumerical, cause);
}

}  // namespace

StepReport drag_step(EditSession& s) {
  if (s.status != SessionStatus::kReady) {
    fail(ErrorKind::kConflict, std::string("session is ") + to_string(s.status));
  }
  if (s.step_index() >= s.config.max_steps) {
    fail(ErrorKind::kConflict, "step budget exhausted");
  }
  const auto started = std::chrono::steady_clock::now();
  const Backend& backend = *s.backend;
  const OptimizerConfig& cfg = s.config;
  const EditRequest& req = s.request;
  const int k = s.step_index();

  const FeatureMap reference = cfg.reference == ReferenceMode::kInversion
                                   ? s.inversion_features
                                   : backend.extract_features(s.latent, cfg.feature_layer);
  LossComponents components;
  components.motion =
      motion_supervision_objective(backend, cfg.feature_layer, s.latent, reference,
                                   s.inversion_code, req.pairs, req.mask, cfg.patch, req.weights);
  if (req.toggles.ppr_on) {
    components.prior = prior_preservation_loss(s.latent, s.prior_moments, cfg.moment_mode);
  }
  StepReport report;
  if (req.toggles.reward_on && k % cfg.reward_interval == 0 && !s.target_embedding.empty()) {
    RewardTerm reward =
        reward_guidance(backend, s.latent, s.target_embedding, s.initial_embedding,
                        s.encoder.get(), req.weights.lambda_contrast, cfg.preview_steps);
    if (reward.enabled) {
      components.reward = std::move(reward.loss);
      report.reward_evaluated = true;
    }
  }
  const TotalLoss total = total_loss(components, req.weights, req.toggles);
  if (!std::isfinite(total.value) || !total.grad.all_finite()) {
    abort_step(s, "non-finite loss at step " + std::to_string(k));
  }

  AdamState adam = s.adam;
  Tensor next = optimizer_update(s.latent.data, total.grad, cfg, adam);
  if (!next.all_finite()) abort_step(s, "non-finite latent after update at step " + std::to_string(k));
  s.latent.data = std::move(next);
  s.latent.step_index = k + 1;
  s.adam = std::move(adam);

  const FeatureMap features = backend.extract_features(s.latent, cfg.feature_layer);
  for (std::size_t i = 0; i < s.request.pairs.size(); ++i) {
    PointPair& pair = s.request.pairs[i];
    const TrackResult r =
        req.toggles.dwpt_on
            ? dwpt_track(features, s.reference_features[i], pair.handle, pair.target, cfg.tracker)
            : baseline_track(features, s.reference_features[i], pair.handle, cfg.tracker);
    pair.handle = r.new_handle;
  }

  report.step_index = k + 1;
  report.loss = total.breakdown;
  report.handles = s.handles();
  report.mean_distance = mean_handle_distance(s.request.pairs, report.handles);
  report.kl_value = gaussian_kl(estimate_moments(s.latent.data, cfg.moment_mode), s.prior_moments);
  report.wall_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - started)
                       .count();
  s.history.push_back(report);
  settle(s);
  return report;
}

Image render_result(const EditSession& s) {
  LatentCode z = s.latent;
  z.timestep = s.config.inversion_t;
  const LatentCode z0 = ddim_sample(*s.backend, z, s.backend->schedule());
  return s.backend->decode_latent(z0);
}

Image render_preview(const EditSession& s) {
  const PreviewPath path = preview_forward(*s.backend, s.latent.data, s.latent.timestep,
                                           s.config.preview_steps, s.backend->schedule());
  Tensor rgb = path.rgb;
  for (double& v : rgb.values()) v = std::clamp(v, 0.0, 1.0);
  return Image(std::move(rgb));
}

DragResult run_drag(EditSession& s, const StepObserver& observer) {
  DragResult result;
  settle(s);
  while (s.status == SessionStatus::kReady) {
    StepReport report;
    try {
      report = drag_step(s);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumerical) throw;
      break;  // drag_step already flagged the session
    }
    if (observer && !observer(report) && s.status == SessionStatus::kReady) {
      s.status = SessionStatus::kCapped;
    }
  }
  result.history = s.history;
  result.status = s.status;
  if (s.status != SessionStatus::kFailed) result.image = render_result(s);
  return result;
}

}  // namespace dragpd
