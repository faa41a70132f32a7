// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dragpd/adapter.hpp"
#include "dragpd/backend.hpp"
#include "dragpd/encoder.hpp"
#include "dragpd/objective.hpp"
#include "dragpd/tracking.hpp"

namespace dragpd {

enum class OptimizerKind { kAdam, kSgd };

// Which latent supplies the stop-gradient reference features of the motion
// term: the inversion code z_t^0, or the current iterate z_t^k.
enum class ReferenceMode { kInversion, kCurrentStep };

struct OptimizerConfig {
  int max_steps = 80;
  double step_size = 0.01;
  double convergence_radius = 1.0;
  int reward_interval = 5;
  OptimizerKind optimizer_kind = OptimizerKind::kAdam;
  int inversion_t = 35;
  std::string feature_layer = "conv2";
  ReferenceMode reference = ReferenceMode::kInversion;
  MomentMode moment_mode = MomentMode::kGlobal;
  int preview_steps = 4;
  PatchSpec patch;
  TrackerConfig tracker;
  AdaptationConfig adaptation;

  void validate() const;
};

// Settings for the synthetic backbone. Its features see a 5x5 latent window,
// so drags use the current-step reference, a 5x5 motion patch, the stacked
// "hypercolumn" features, plain gradient steps of 0.01 and a shallower
// inversion (t = 20).
OptimizerConfig synthetic_profile();

// Pairs are in latent coordinates.
struct EditRequest {
  Image image;
  std::vector<PointPair> pairs;
  EditMask mask;
  std::string prompt_target;
  std::string prompt_initial;
  LossWeights weights;
  LossToggles toggles;

  // Throws kInvalidArgument naming the offending field or pair index.
  void validate(int latent_height, int latent_width) const;
};

struct StepReport {
  int step_index = 0;  // k after the step
  LossBreakdown loss;
  bool reward_evaluated = false;
  std::vector<Coord> handles;
  double mean_distance = 0.0;
  double kl_value = 0.0;  // KL of current moments vs. prior, whether or not PPR is on
  double wall_ms = 0.0;

  friend bool operator==(const StepReport&, const StepReport&) = default;
};

enum class SessionStatus { kReady, kConverged, kCapped, kFailed };

const char* to_string(SessionStatus s);

struct AdamState {
  Tensor m;
  Tensor v;
  int t = 0;
};

// Everything one edit needs between steps. Owned by a single thread at a time.
struct EditSession {
  EditRequest request;
  OptimizerConfig config;
  std::string backend_name;
  BackendOptions backend_options;
  std::string encoder_name;

  BackendPtr backend;  // with adapters applied
  EncoderPtr encoder;  // may be null when reward is off

  LatentCode source_latent;   // z_0, clean
  LatentCode inversion_code;  // z_t^0
  LatentCode latent;          // z_t^k
  AdapterWeights adapters;
  AdaptationReport adaptation_report;

  FeatureMap inversion_features;                     // F(z_t^0)
  std::vector<std::vector<double>> reference_features;  // f_i at original handles
  Embedding target_embedding;
  Embedding initial_embedding;
  GaussianMoments prior_moments;
  AdamState adam;

  std::vector<StepReport> history;
  SessionStatus status = SessionStatus::kReady;
  std::string failure_cause;

  int step_index() const { return latent.step_index; }
  std::vector<Coord> handles() const;
};

// Builds backend and encoder from the registries.
EditSession prepare_session(EditRequest request, const std::string& backend_name,
                            const BackendOptions& backend_options,
                            const std::string& encoder_name, const OptimizerConfig& config);
// Uses the given handles; `encoder` may be null when reward is off.
EditSession prepare_session(EditRequest request, const BackendPtr& backend,
                            const EncoderPtr& encoder, const OptimizerConfig& config);

// Re-derives adapted backend, reference features, prompt embeddings and
// prior moments from the persisted fields (inversion code, adapters).
void bind_session(EditSession& session, const BackendPtr& base_backend, const EncoderPtr& encoder);

// One motion-supervision update followed by point tracking.
StepReport drag_step(EditSession& session);

bool check_convergence(const EditSession& session, double radius);

struct DragResult {
  Image image;
  std::vector<StepReport> history;
  SessionStatus status = SessionStatus::kReady;
};

// Observer returns false to stop early; the session then ends capped.
using StepObserver = std::function<bool(const StepReport&)>;

DragResult run_drag(EditSession& session, const StepObserver& observer = {});

// Samples z_t^k to t = 0 with adapters applied and decodes it.
Image render_result(const EditSession& session);
// Cheap preview from the truncated decode path.
Image render_preview(const EditSession& session);

double mean_handle_distance(const std::vector<PointPair>& pairs, const std::vector<Coord>& handles);

}  // namespace dragpd
