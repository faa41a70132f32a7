// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dragpd/backend.hpp"
#include "dragpd/encoder.hpp"

namespace dragpd {

struct PointPair {
  Coord handle;
  Coord target;
  Coord original_handle;

  static PointPair start(Coord handle, Coord target) { return {handle, target, handle}; }
};

// Binary editable-region indicator; 1 = editable.
class EditMask {
 public:
  EditMask() = default;
  EditMask(int height, int width, bool editable = true);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool editable(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool editable) {
    bits_[static_cast<std::size_t>(y) * width_ + x] = editable ? 1 : 0;
  }
  std::size_t editable_count() const;

  friend bool operator==(const EditMask&, const EditMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<unsigned char> bits_;
};

enum class MomentMode { kGlobal, kPerChannel };

inline constexpr double kSigmaFloor = 1e-4;

// One (mu, sigma) per channel in per-channel mode, a single pair otherwise.
struct GaussianMoments {
  std::vector<double> mu;
  std::vector<double> sigma;
  std::size_t sample_count = 0;

  friend bool operator==(const GaussianMoments&, const GaussianMoments&) = default;
};

enum class LogBase { kNatural, kTen };

struct LossWeights {
  double lambda_clip = 150.0;
  double lambda_kl = 54.598150033144236;  // e^4
  double lambda_contrast = 0.3;
  double mask_term_weight = 1.0;

  static double lambda_kl_from_log(double log_value, LogBase base);
  void validate() const;
};

enum class PatchShape { kSquare, kDisc };

struct PatchSpec {
  int r1 = 1;
  PatchShape shape = PatchShape::kSquare;
};

struct LossToggles {
  bool ppr_on = true;
  bool reward_on = false;
  bool dwpt_on = true;
};

struct LossValue {
  double value = 0.0;
  Tensor grad;  // w.r.t. the optimized latent
};

// Unit pixel offset (Chebyshev norm <= 1) whose direction has the largest
// cosine with target - handle; (0, 0) iff handle == target.
Coord step_direction(const PointPair& pair);

// Offsets of the supervision patch around a point, before border clipping.
std::vector<Coord> patch_offsets(const PatchSpec& patch);

struct MotionLoss {
  double value = 0.0;
  double feature_term = 0.0;
  double mask_term = 0.0;
  Tensor grad_features;  // w.r.t. `current`
  Tensor grad_latent;    // direct term, w.r.t. z_k
};

// sum_i sum_{q in patch(p_i)} |current(q + d_i) - reference(q)|_1
//   + mask_term_weight * |(z_k - z_0) * (1 - M)|_1
// `reference` and `z_0` are treated as constants. Patch points whose shifted
// position leaves the map are dropped.
MotionLoss motion_supervision_loss(const FeatureMap& current, const FeatureMap& reference,
                                   const LatentCode& z_k, const LatentCode& z_0,
                                   std::span<const PointPair> pairs, const EditMask& mask,
                                   const PatchSpec& patch, const LossWeights& weights);

// Same loss with the feature gradient chained through the backend.
LossValue motion_supervision_objective(const Backend& backend, std::string_view layer,
                                       const LatentCode& z_k, const FeatureMap& reference,
                                       const LatentCode& z_0, std::span<const PointPair> pairs,
                                       const EditMask& mask, const PatchSpec& patch,
                                       const LossWeights& weights);

// Population mean and standard deviation, sigma floored at kSigmaFloor.
GaussianMoments estimate_moments(const Tensor& z, MomentMode mode);

// KL(N(post) || N(prior)), averaged over channels.
double gaussian_kl(const GaussianMoments& post, const GaussianMoments& prior);

LossValue prior_preservation_loss(const LatentCode& z_k, const GaussianMoments& prior,
                                  MomentMode mode);
LossValue prior_preservation_loss(const LatentCode& z_k, const LatentCode& z_0, MomentMode mode);

// 1 - cos(image, target) + lambda * cos(image, initial). Inputs need not be
// normalized.
double reward_loss(std::span<const double> image_embedding, std::span<const double> target,
                   std::span<const double> initial, double lambda_contrast);
// Gradient of reward_loss w.r.t. the image embedding.
Embedding reward_loss_grad(std::span<const double> image_embedding,
                           std::span<const double> target, std::span<const double> initial,
                           double lambda_contrast);

struct RewardTerm {
  bool enabled = false;
  std::string disabled_reason;
  LossValue loss;
  Embedding image_embedding;
};

// Decodes a truncated deterministic preview of z_k, embeds it, and scores it
// against the prompt embeddings, with the gradient carried back to z_k.
RewardTerm reward_guidance(const Backend& backend, const LatentCode& z_k,
                           const Embedding& target_embedding,
                           const Embedding& initial_embedding,
                           const VisionLanguageEncoder* encoder, double lambda_contrast,
                           int preview_steps);
RewardTerm reward_guidance(const Backend& backend, const LatentCode& z_k,
                           std::string_view prompt_target, std::string_view prompt_initial,
                           const VisionLanguageEncoder* encoder, double lambda_contrast,
                           int preview_steps);

struct LossComponents {
  LossValue motion;
  std::optional<LossValue> prior;
  std::optional<LossValue> reward;
};

struct LossBreakdown {
  double ms = 0.0;
  double kl = 0.0;
  double reward = 0.0;
  double total = 0.0;

  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

struct TotalLoss {
  double value = 0.0;
  Tensor grad;
  LossBreakdown breakdown;
};

// ms + lambda_kl * kl [ppr_on] + lambda_clip * reward [reward_on]. Disabled or
// absent terms are never touched, so the result with both toggles off is
// exactly the motion term.
TotalLoss total_loss(const LossComponents& components, const LossWeights& weights,
                     const LossToggles& toggles);

}  // namespace dragpd
