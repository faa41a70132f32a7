// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <vector>

#include "dragpd/backend.hpp"

namespace dragpd {

// Deterministic desk-scale backbone. The codec is the identity on RGB (extra
// latent channels carry the pixel mean), and the denoiser is a fixed stack of
// three 3x3 convolutions with edge-replicated borders:
//
//   h1  = tanh(K1 * z + b1 + temb(t))   layer "conv1"
//   h2  = tanh(K2 * h1 + b2)            layer "conv2"
//   eps = K3 * h2 + b3                  layer "out"
//
// Feature layers are "conv1", "conv2" and "hypercolumn" (z, h1 and h2 stacked
// along channels).
//
// Kernels are drawn from a seeded generator using only raw engine output, so
// they are identical on every platform.
class SyntheticBackend final : public Backend,
                               public std::enable_shared_from_this<SyntheticBackend> {
 public:
  static std::shared_ptr<const SyntheticBackend> create(const BackendOptions& options = {});

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  const DiffusionSchedule& schedule() const override { return schedule_; }
  const BackendOptions& options() const noexcept { return options_; }

  LatentCode encode_image(const Image& image) const override;
  Image decode_latent(const LatentCode& z) const override;
  Tensor decode_preview(const Tensor& z0) const override;
  Tensor decode_preview_vjp(const Tensor& z0, const Tensor& grad_rgb) const override;

  Tensor predict_noise(const Tensor& z, int train_timestep) const override;
  Tensor predict_noise_vjp(const Tensor& z, int train_timestep,
                           const Tensor& grad_eps) const override;

  FeatureMap extract_features(const LatentCode& z, std::string_view layer,
                              const Embedding* condition = nullptr) const override;
  Tensor features_vjp(const LatentCode& z, std::string_view layer,
                      const Tensor& grad_features,
                      const Embedding* condition = nullptr) const override;

  std::vector<AdapterSlot> adapter_slots() const override;
  std::shared_ptr<const Backend> with_adapters(const AdapterWeights& weights) const override;
  std::shared_ptr<const Backend> without_adapters() const override;
  bool adapted() const override { return base_ != nullptr; }
  double noise_loss_and_grads(const Tensor& z_t, int train_timestep,
                              const Tensor& target_noise,
                              std::vector<std::vector<double>>& slot_grads) const override;

  struct Layer;
  SyntheticBackend(const SyntheticBackend&) = delete;
  SyntheticBackend& operator=(const SyntheticBackend&) = delete;
  ~SyntheticBackend() override;

  struct Private;  // construction key
  SyntheticBackend(Private, BackendOptions options);

 private:
  void check_latent(const Tensor& z, const char* what) const;
  std::vector<double> time_embedding(int train_timestep) const;

  BackendOptions options_;
  BackendDescriptor descriptor_;
  DiffusionSchedule schedule_;
  std::vector<Layer> layers_;
  std::vector<double> time_freq_;
  std::vector<double> time_phase_;
  std::shared_ptr<const SyntheticBackend> base_;
};

}  // namespace dragpd
