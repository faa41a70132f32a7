// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dragpd/adapter_weights.hpp"
#include "dragpd/image.hpp"
#include "dragpd/schedule.hpp"
#include "dragpd/tensor.hpp"

namespace dragpd {

using Embedding = std::vector<double>;

// Noised latent at DDIM step `timestep`, after `step_index` edit iterations.
struct LatentCode {
  Tensor data;
  int timestep = 0;
  int step_index = 0;
};

struct FeatureMap {
  Tensor data;
  std::string source_layer;
  int timestep = 0;
};

struct BackendDescriptor {
  std::string name;
  std::array<int, 3> latent_shape{};  // channels, height, width
  std::vector<std::string> feature_layer_ids;
  bool deterministic = true;
  // Image pixels per latent pixel along each axis.
  int downsample = 1;
  // Declared max per-pixel error of decode(encode(x)).
  double reconstruction_tolerance = 0.0;
};

// Generative backbone. Implementations are immutable once constructed; every
// method is const and safe to call concurrently.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual const BackendDescriptor& descriptor() const = 0;
  virtual const DiffusionSchedule& schedule() const = 0;

  virtual LatentCode encode_image(const Image& image) const = 0;
  // Refuses latents with timestep > 0.
  virtual Image decode_latent(const LatentCode& z) const = 0;

  // Differentiable decoder used for reward previews: unclamped RGB tensor.
  virtual Tensor decode_preview(const Tensor& z0) const = 0;
  virtual Tensor decode_preview_vjp(const Tensor& z0, const Tensor& grad_rgb) const = 0;

  // Noise prediction eps(z, t) and its vector-Jacobian product.
  virtual Tensor predict_noise(const Tensor& z, int train_timestep) const = 0;
  virtual Tensor predict_noise_vjp(const Tensor& z, int train_timestep,
                                   const Tensor& grad_eps) const = 0;

  // Features resampled to latent resolution. `condition` may be null (empty
  // prompt).
  virtual FeatureMap extract_features(const LatentCode& z, std::string_view layer,
                                      const Embedding* condition = nullptr) const = 0;
  virtual Tensor features_vjp(const LatentCode& z, std::string_view layer,
                              const Tensor& grad_features,
                              const Embedding* condition = nullptr) const = 0;

  // Low-rank adaptation hooks.
  virtual std::vector<AdapterSlot> adapter_slots() const = 0;
  virtual std::shared_ptr<const Backend> with_adapters(const AdapterWeights& weights) const = 0;
  // The unadapted handle this one was derived from (itself when unadapted).
  virtual std::shared_ptr<const Backend> without_adapters() const = 0;
  virtual bool adapted() const = 0;
  // Mean squared noise-prediction error for one draw, with gradients of that
  // loss w.r.t. each adapter slot's effective weight matrix (row-major).
  virtual double noise_loss_and_grads(const Tensor& z_t, int train_timestep,
                                      const Tensor& target_noise,
                                      std::vector<std::vector<double>>& slot_grads) const = 0;

  bool has_feature_layer(std::string_view layer) const;
};

using BackendPtr = std::shared_ptr<const Backend>;

// Options understood by registry factories; unknown keys are ignored.
struct BackendOptions {
  int channels = 4;
  int height = 32;
  int width = 32;
  int hidden = 8;
  unsigned long long seed = 0x5eed'd1ffULL;
  int num_steps = 50;
  std::string checkpoint_dir;
};

using BackendFactory = std::function<BackendPtr(const BackendOptions&)>;

// Process-wide plug-in registry keyed by name. "synthetic" is always present.
void register_backend(const std::string& name, BackendFactory factory);
BackendPtr make_backend(const std::string& name, const BackendOptions& options);
std::vector<std::string> registered_backends();

}  // namespace dragpd
