// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "dragpd/objective.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "dragpd/ddim.hpp"
#include "dragpd/error.hpp"

namespace dragpd {

EditMask::EditMask(int height, int width, bool editable)
    : height_(height),
      width_(width),
      bits_(static_cast<std::size_t>(height) * width, editable ? 1 : 0) {}

std::size_t EditMask::editable_count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

double LossWeights::lambda_kl_from_log(double log_value, LogBase base) {
  return base == LogBase::kNatural ? std::exp(log_value) : std::pow(10.0, log_value);
}

void LossWeights::validate() const {
  const std::array<std::pair<const char*, double>, 4> fields = {{
      {"lambda_clip", lambda_clip},
      {"lambda_kl", lambda_kl},
      {"lambda_contrast", lambda_contrast},
      {"mask_term_weight", mask_term_weight},
  }};
  for (const auto& [name, v] : fields) {
    if (!std::isfinite(v) || v < 0.0) {
      fail(ErrorKind::kInvalidArgument,
           std::string("weights.") + name + " must be finite and >= 0");
    }
  }
}

Coord step_direction(const PointPair& pair) {
  const int dr = pair.target.row - pair.handle.row;
  const int dc = pair.target.col - pair.handle.col;
  if (dr == 0 && dc == 0) return {0, 0};
  static constexpr std::array<Coord, 8> kOffsets = {{
      {-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1},
  }};
  Coord best{0, 0};
  double best_cos = -2.0;
  for (const Coord& o : kOffsets) {
    const double c = (o.row * dr + o.col * dc) /
                     std::sqrt(static_cast<double>(o.row * o.row + o.col * o.col));
    if (c > best_cos) {
      best_cos = c;
      best = o;
    }
  }
  return best;
}

std::vector<Coord> patch_offsets(const PatchSpec& patch) {
  if (patch.r1 < 1) fail(ErrorKind::kInvalidArgument, "patch radius r1 must be >= 1");
  std::vector<Coord> out;
  for (int dy = -patch.r1; dy <= patch.r1; ++dy) {
    for (int dx = -patch.r1; dx <= patch.r1; ++dx) {
      if (patch.shape == PatchShape::kDisc && dy * dy + dx * dx > patch.r1 * patch.r1) continue;
      out.push_back({dy, dx});
    }
  }
  return out;
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

MotionLoss motion_supervision_loss(const FeatureMap& current, const FeatureMap& reference,
                                   const LatentCode& z_k, const LatentCode& z_0,
                                   std::span<const PointPair> pairs, const EditMask& mask,
                                   const PatchSpec& patch, const LossWeights& weights) {
  if (!current.data.same_shape(reference.data)) {
    fail(ErrorKind::kGeometry, "feature maps differ: " + current.data.shape_string() + " vs " +
                                   reference.data.shape_string());
  }
  if (!z_k.data.same_shape(z_0.data)) {
    fail(ErrorKind::kGeometry, "latents differ in shape");
  }
  if (mask.height() != z_k.data.height() || mask.width() != z_k.data.width()) {
    fail(ErrorKind::kGeometry, "mask is " + std::to_string(mask.height()) + "x" +
                                   std::to_string(mask.width()) + " but the latent is " +
                                   z_k.data.shape_string());
  }
  const Tensor& f = current.data;
  const Tensor& ref = reference.data;
  MotionLoss out;
  out.grad_features = Tensor(f.channels(), f.height(), f.width());
  out.grad_latent = Tensor(z_k.data.channels(), z_k.data.height(), z_k.data.width());

  const auto offsets = patch_offsets(patch);
  for (const PointPair& pair : pairs) {
    const Coord d = step_direction(pair);
    for (const Coord& o : offsets) {
      const Coord q{pair.handle.row + o.row, pair.handle.col + o.col};
      const Coord qd{q.row + d.row, q.col + d.col};
      if (!f.contains(q) || !f.contains(qd)) continue;
      for (int c = 0; c < f.channels(); ++c) {
        const double diff = f.at(c, qd.row, qd.col) - ref.at(c, q.row, q.col);
        out.feature_term += std::abs(diff);
        out.grad_features.at(c, qd.row, qd.col) += sign(diff);
      }
    }
  }

  const double w = weights.mask_term_weight;
  for (int c = 0; c < z_k.data.channels(); ++c) {
    for (int y = 0; y < z_k.data.height(); ++y) {
      for (int x = 0; x < z_k.data.width(); ++x) {
        if (mask.editable(y, x)) continue;
        const double diff = z_k.data.at(c, y, x) - z_0.data.at(c, y, x);
        out.mask_term += std::abs(diff);
        out.grad_latent.at(c, y, x) = w * sign(diff);
      }
    }
  }
  out.value = out.feature_term + w * out.mask_term;
  return out;
}

LossValue motion_supervision_objective(const Backend& backend, std::string_view layer,
                                       const LatentCode& z_k, const FeatureMap& reference,
                                       const LatentCode& z_0, std::span<const PointPair> pairs,
                                       const EditMask& mask, const PatchSpec& patch,
                                       const LossWeights& weights) {
  const FeatureMap current = backend.extract_features(z_k, layer);
  MotionLoss ms =
      motion_supervision_loss(current, reference, z_k, z_0, pairs, mask, patch, weights);
  LossValue out;
  out.value = ms.value;
  out.grad = backend.features_vjp(z_k, layer, ms.grad_features);
  out.grad += ms.grad_latent;
  return out;
}

namespace {

struct ChannelView {
  int groups;
  std::size_t group_size;
};

ChannelView view(const Tensor& z, MomentMode mode) {
  if (mode == MomentMode::kPerChannel) return {z.channels(), z.plane_size()};
  return {1, z.size()};
}

}  // namespace

GaussianMoments estimate_moments(const Tensor& z, MomentMode mode) {
  if (z.size() < 2) fail(ErrorKind::kInvalidArgument, "moments need at least 2 samples");
  const auto [groups, n] = view(z, mode);
  if (n < 2) fail(ErrorKind::kInvalidArgument, "moments need at least 2 samples per channel");
  GaussianMoments m;
  m.sample_count = n;
  const auto values = z.values();
  for (int g = 0; g < groups; ++g) {
    const auto s = values.subspan(g * n, n);
    double sum = 0.0;
    for (double v : s) sum += v;
    const double mu = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double v : s) ss += (v - mu) * (v - mu);
    m.mu.push_back(mu);
    m.sigma.push_back(std::max(std::sqrt(ss / static_cast<double>(n)), kSigmaFloor));
  }
  return m;
}

namespace {

void check_moments(const GaussianMoments& post, const GaussianMoments& prior) {
  if (post.mu.size() != prior.mu.size() || post.sigma.size() != post.mu.size() ||
      prior.sigma.size() != prior.mu.size() || post.mu.empty()) {
    fail(ErrorKind::kInvalidArgument, "moment sets have different granularity");
  }
  for (std::size_t i = 0; i < post.sigma.size(); ++i) {
    if (!(post.sigma[i] > 0.0) || !(prior.sigma[i] > 0.0)) {
      fail(ErrorKind::kInvalidArgument, "gaussian_kl needs positive sigmas");
    }
  }
}

}  // namespace

double gaussian_kl(const GaussianMoments& post, const GaussianMoments& prior) {
  check_moments(post, prior);
  double total = 0.0;
  for (std::size_t i = 0; i < post.mu.size(); ++i) {
    const double sk = post.sigma[i];
    const double s0 = prior.sigma[i];
    const double dm = post.mu[i] - prior.mu[i];
    total += std::log(s0 / sk) + (sk * sk + dm * dm) / (2.0 * s0 * s0) - 0.5;
  }
  // Rounding can leave a tiny negative value when the moments coincide.
  return std::max(0.0, total / static_cast<double>(post.mu.size()));
}

LossValue prior_preservation_loss(const LatentCode& z_k, const GaussianMoments& prior,
                                  MomentMode mode) {
  const GaussianMoments post = estimate_moments(z_k.data, mode);
  LossValue out;
  out.value = gaussian_kl(post, prior);
  out.grad = Tensor(z_k.data.channels(), z_k.data.height(), z_k.data.width());
  const auto [groups, n] = view(z_k.data, mode);
  const auto x = z_k.data.values();
  auto g = out.grad.values();
  const double nd = static_cast<double>(n);
  for (int grp = 0; grp < groups; ++grp) {
    const double mu = post.mu[grp];
    const double sk = post.sigma[grp];
    const double s0 = prior.sigma[grp];
    const double d_mu = (mu - prior.mu[grp]) / (s0 * s0) / groups;
    const double d_sigma = (-1.0 / sk + sk / (s0 * s0)) / groups;
    // The floor is flat, so sigma contributes nothing while it is active.
    double raw = 0.0;
    for (std::size_t i = 0; i < n; ++i) raw += (x[grp * n + i] - mu) * (x[grp * n + i] - mu);
    const bool floored = std::sqrt(raw / nd) < kSigmaFloor;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = grp * n + i;
      g[j] = d_mu / nd;
      if (!floored) g[j] += d_sigma * (x[j] - mu) / (nd * sk);
    }
  }
  return out;
}

LossValue prior_preservation_loss(const LatentCode& z_k, const LatentCode& z_0, MomentMode mode) {
  if (!z_k.data.same_shape(z_0.data)) fail(ErrorKind::kGeometry, "latents differ in shape");
  return prior_preservation_loss(z_k, estimate_moments(z_0.data, mode), mode);
}

double reward_loss(std::span<const double> image_embedding, std::span<const double> target,
                   std::span<const double> initial, double lambda_contrast) {
  return 1.0 - cosine_similarity(image_embedding, target) +
         lambda_contrast * cosine_similarity(image_embedding, initial);
}

namespace {

// d cos(a, b) / da = b / (|a||b|) - cos(a, b) * a / |a|^2
void add_cosine_grad(std::span<const double> a, std::span<const double> b, double scale,
                     Embedding& out) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  const double c = cosine_similarity(a, b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] += scale * (b[i] / (na * nb) - c * a[i] / (na * na));
  }
}

}  // namespace

Embedding reward_loss_grad(std::span<const double> image_embedding,
                           std::span<const double> target, std::span<const double> initial,
                           double lambda_contrast) {
  Embedding g(image_embedding.size(), 0.0);
  add_cosine_grad(image_embedding, target, -1.0, g);
  add_cosine_grad(image_embedding, initial, lambda_contrast, g);
  return g;
}

RewardTerm reward_guidance(const Backend& backend, const LatentCode& z_k,
                           const Embedding& target_embedding,
                           const Embedding& initial_embedding,
                           const VisionLanguageEncoder* encoder, double lambda_contrast,
                           int preview_steps) {
  RewardTerm term;
  if (encoder == nullptr) {
    term.disabled_reason = "no vision-language encoder configured";
    return term;
  }
  const auto& schedule = backend.schedule();
  const PreviewPath path =
      preview_forward(backend, z_k.data, z_k.timestep, preview_steps, schedule);
  term.image_embedding = encoder->embed_image(path.rgb);
  term.loss.value =
      reward_loss(term.image_embedding, target_embedding, initial_embedding, lambda_contrast);
  const Embedding g_embed =
      reward_loss_grad(term.image_embedding, target_embedding, initial_embedding, lambda_contrast);
  const Tensor g_rgb = encoder->embed_image_vjp(path.rgb, g_embed);
  term.loss.grad = preview_vjp(backend, path, g_rgb, schedule);
  term.enabled = true;
  return term;
}

RewardTerm reward_guidance(const Backend& backend, const LatentCode& z_k,
                           std::string_view prompt_target, std::string_view prompt_initial,
                           const VisionLanguageEncoder* encoder, double lambda_contrast,
                           int preview_steps) {
  if (encoder == nullptr) {
    RewardTerm term;
    term.disabled_reason = "no vision-language encoder configured";
    return term;
  }
  return reward_guidance(backend, z_k, encoder->embed_text(prompt_target),
                         encoder->embed_text(prompt_initial), encoder, lambda_contrast,
                         preview_steps);
}

TotalLoss total_loss(const LossComponents& components, const LossWeights& weights,
                     const LossToggles& toggles) {
  TotalLoss out;
  out.breakdown.ms = components.motion.value;
  out.value = components.motion.value;
  out.grad = components.motion.grad;
  if (toggles.ppr_on && components.prior) {
    out.breakdown.kl = components.prior->value;
    if (weights.lambda_kl != 0.0) {
      out.value += weights.lambda_kl * components.prior->value;
      out.grad.add_scaled(components.prior->grad, weights.lambda_kl);
    }
  }
  if (toggles.reward_on && components.reward) {
    out.breakdown.reward = components.reward->value;
    if (weights.lambda_clip != 0.0) {
      out.value += weights.lambda_clip * components.reward->value;
      out.grad.add_scaled(components.reward->grad, weights.lambda_clip);
    }
  }
  out.breakdown.total = out.value;
  return out;
}

}  // namespace dragpd
