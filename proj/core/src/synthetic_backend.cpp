// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "dragpd/synthetic_backend.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "conv.hpp"
#include "dragpd/error.hpp"
#include "dragpd/random.hpp"

namespace dragpd {

struct SyntheticBackend::Layer {
  std::string id;
  detail::Conv3x3 conv;
};

struct SyntheticBackend::Private {};

namespace {

constexpr double kTimeAmplitude = 0.5;

detail::Conv3x3 random_conv(Rng& rng, int out, int in, double gain) {
  detail::Conv3x3 k;
  k.out = out;
  k.in = in;
  k.weight.resize(k.weight_count());
  k.bias.resize(out);
  // Uniform with variance gain^2 / fan_in.
  const double a = gain * std::sqrt(3.0 / (9.0 * in));
  for (double& w : k.weight) w = rng.uniform(-a, a);
  for (double& b : k.bias) b = rng.uniform(-0.1, 0.1);
  return k;
}

struct ForwardPass {
  Tensor h1;
  Tensor h2;
  Tensor eps;
};

void tanh_inplace(Tensor& t) {
  for (double& v : t.values()) v = std::tanh(v);
}

// grad *= 1 - act^2
void tanh_backward(Tensor& grad, const Tensor& act) {
  auto g = grad.values();
  auto a = act.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - a[i] * a[i];
}

// Channel-wise concatenation of same-sized maps.
Tensor stack(std::initializer_list<const Tensor*> parts) {
  int channels = 0;
  for (const Tensor* t : parts) channels += t->channels();
  const Tensor& first = **parts.begin();
  Tensor out(channels, first.height(), first.width());
  auto dst = out.values().begin();
  for (const Tensor* t : parts) dst = std::copy(t->values().begin(), t->values().end(), dst);
  return out;
}

Tensor slice(const Tensor& t, int first_channel, int count) {
  Tensor out(count, t.height(), t.width());
  const auto begin = t.values().begin() + static_cast<std::ptrdiff_t>(first_channel * t.plane_size());
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(out.size()), out.values().begin());
  return out;
}

}  // namespace

SyntheticBackend::~SyntheticBackend() = default;

SyntheticBackend::SyntheticBackend(Private, BackendOptions options)
    : options_(std::move(options)) {
  if (options_.channels < 3 || options_.height < 1 || options_.width < 1 ||
      options_.hidden < 1) {
    fail(ErrorKind::kInvalidArgument,
         "synthetic backend needs >= 3 latent channels and positive geometry");
  }
  descriptor_.name = "synthetic";
  descriptor_.latent_shape = {options_.channels, options_.height, options_.width};
  descriptor_.feature_layer_ids = {"conv1", "conv2", "hypercolumn"};
  descriptor_.deterministic = true;
  descriptor_.downsample = 1;
  descriptor_.reconstruction_tolerance = 1e-12;
  schedule_ = DiffusionSchedule::uniform(options_.num_steps);

  Rng rng(options_.seed);
  layers_.push_back({"conv1", random_conv(rng, options_.hidden, options_.channels, 1.5)});
  layers_.push_back({"conv2", random_conv(rng, options_.hidden, options_.hidden, 1.5)});
  layers_.push_back({"out", random_conv(rng, options_.channels, options_.hidden, 0.5)});
  for (int h = 0; h < options_.hidden; ++h) {
    time_freq_.push_back(rng.uniform(0.5, 4.0));
    time_phase_.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
  }
}

std::shared_ptr<const SyntheticBackend> SyntheticBackend::create(const BackendOptions& options) {
  return std::make_shared<const SyntheticBackend>(Private{}, options);
}

void SyntheticBackend::check_latent(const Tensor& z, const char* what) const {
  const auto& s = descriptor_.latent_shape;
  if (z.channels() != s[0] || z.height() != s[1] || z.width() != s[2]) {
    fail(ErrorKind::kGeometry, std::string(what) + ": latent " + z.shape_string() +
                                   " does not match backend geometry " +
                                   std::to_string(s[0]) + "x" + std::to_string(s[1]) +
                                   "x" + std::to_string(s[2]));
  }
}

std::vector<double> SyntheticBackend::time_embedding(int train_timestep) const {
  const double tau = 2.0 * std::numbers::pi * train_timestep / 1000.0;
  std::vector<double> out(time_freq_.size());
  for (std::size_t h = 0; h < out.size(); ++h) {
    out[h] = kTimeAmplitude * std::sin(time_freq_[h] * tau + time_phase_[h]);
  }
  return out;
}

LatentCode SyntheticBackend::encode_image(const Image& image) const {
  if (image.height() != options_.height || image.width() != options_.width) {
    fail(ErrorKind::kGeometry,
         "image is " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
             " but the synthetic backend expects " + std::to_string(options_.height) + "x" +
             std::to_string(options_.width));
  }
  LatentCode z;
  z.data = Tensor(options_.channels, options_.height, options_.width);
  for (int y = 0; y < options_.height; ++y) {
    for (int x = 0; x < options_.width; ++x) {
      double mean = 0.0;
      for (int c = 0; c < 3; ++c) {
        z.data.at(c, y, x) = image.at(c, y, x);
        mean += image.at(c, y, x);
      }
      mean /= 3.0;
      for (int c = 3; c < options_.channels; ++c) z.data.at(c, y, x) = mean;
    }
  }
  return z;
}

Image SyntheticBackend::decode_latent(const LatentCode& z) const {
  if (z.timestep != 0) {
    fail(ErrorKind::kInvalidArgument, "decode_latent needs a clean latent (t = 0), got t = " +
                                          std::to_string(z.timestep));
  }
  check_latent(z.data, "decode_latent");
  if (!z.data.all_finite()) fail(ErrorKind::kNumerical, "decode_latent: non-finite latent");
  Image out(options_.height, options_.width);
  for (int c = 0; c < 3; ++c) {
    auto src = z.data.plane(c);
    auto dst = out.pixels().plane(c);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::clamp(src[i], 0.0, 1.0);
  }
  return out;
}

Tensor SyntheticBackend::decode_preview(const Tensor& z0) const {
  check_latent(z0, "decode_preview");
  Tensor rgb(3, z0.height(), z0.width());
  for (int c = 0; c < 3; ++c) {
    std::copy(z0.plane(c).begin(), z0.plane(c).end(), rgb.plane(c).begin());
  }
  return rgb;
}

Tensor SyntheticBackend::decode_preview_vjp(const Tensor& z0, const Tensor& grad_rgb) const {
  check_latent(z0, "decode_preview_vjp");
  Tensor g(z0.channels(), z0.height(), z0.width());
  for (int c = 0; c < 3; ++c) {
    std::copy(grad_rgb.plane(c).begin(), grad_rgb.plane(c).end(), g.plane(c).begin());
  }
  return g;
}

namespace {

ForwardPass run_forward(const std::vector<SyntheticBackend::Layer>& layers, const Tensor& z,
                        const std::vector<double>& temb) {
  ForwardPass f;
  f.h1 = detail::conv3x3(z, layers[0].conv);
  for (int c = 0; c < f.h1.channels(); ++c) {
    for (double& v : f.h1.plane(c)) v += temb[c];
  }
  tanh_inplace(f.h1);
  f.h2 = detail::conv3x3(f.h1, layers[1].conv);
  tanh_inplace(f.h2);
  f.eps = detail::conv3x3(f.h2, layers[2].conv);
  return f;
}

}  // namespace

Tensor SyntheticBackend::predict_noise(const Tensor& z, int train_timestep) const {
  check_latent(z, "predict_noise");
  return run_forward(layers_, z, time_embedding(train_timestep)).eps;
}

Tensor SyntheticBackend::predict_noise_vjp(const Tensor& z, int train_timestep,
                                           const Tensor& grad_eps) const {
  check_latent(z, "predict_noise_vjp");
  const ForwardPass f = run_forward(layers_, z, time_embedding(train_timestep));
  Tensor g2 = detail::conv3x3_input_vjp(grad_eps, layers_[2].conv);
  tanh_backward(g2, f.h2);
  Tensor g1 = detail::conv3x3_input_vjp(g2, layers_[1].conv);
  tanh_backward(g1, f.h1);
  return detail::conv3x3_input_vjp(g1, layers_[0].conv);
}

FeatureMap SyntheticBackend::extract_features(const LatentCode& z, std::string_view layer,
                                              const Embedding* /*condition*/) const {
  if (!has_feature_layer(layer)) {
    fail(ErrorKind::kInvalidArgument, "unknown feature layer '" + std::string(layer) + "'");
  }
  check_latent(z.data, "extract_features");
  const ForwardPass f =
      run_forward(layers_, z.data, time_embedding(schedule_.train_timestep(z.timestep)));
  FeatureMap out;
  if (layer == "hypercolumn") {
    out.data = stack({&z.data, &f.h1, &f.h2});
  } else {
    out.data = layer == "conv1" ? f.h1 : f.h2;
  }
  out.source_layer = std::string(layer);
  out.timestep = z.timestep;
  return out;
}

Tensor SyntheticBackend::features_vjp(const LatentCode& z, std::string_view layer,
                                      const Tensor& grad_features,
                                      const Embedding* /*condition*/) const {
  if (!has_feature_layer(layer)) {
    fail(ErrorKind::kInvalidArgument, "unknown feature layer '" + std::string(layer) + "'");
  }
  check_latent(z.data, "features_vjp");
  const ForwardPass f =
      run_forward(layers_, z.data, time_embedding(schedule_.train_timestep(z.timestep)));
  const int nz = z.data.channels();
  const int nh = f.h1.channels();
  Tensor g1;
  Tensor direct;
  if (layer == "hypercolumn") {
    direct = slice(grad_features, 0, nz);
    g1 = slice(grad_features, nz, nh);
    Tensor g2 = slice(grad_features, nz + nh, f.h2.channels());
    tanh_backward(g2, f.h2);
    g1 += detail::conv3x3_input_vjp(g2, layers_[1].conv);
  } else if (layer == "conv2") {
    Tensor g2 = grad_features;
    tanh_backward(g2, f.h2);
    g1 = detail::conv3x3_input_vjp(g2, layers_[1].conv);
  } else {
    g1 = grad_features;
  }
  tanh_backward(g1, f.h1);
  Tensor g = detail::conv3x3_input_vjp(g1, layers_[0].conv);
  if (!direct.empty()) g += direct;
  return g;
}

std::vector<AdapterSlot> SyntheticBackend::adapter_slots() const {
  std::vector<AdapterSlot> slots;
  for (const auto& l : layers_) slots.push_back({l.id, l.conv.out, l.conv.in * 9});
  return slots;
}

std::shared_ptr<const Backend> SyntheticBackend::with_adapters(
    const AdapterWeights& weights) const {
  weights.validate();
  auto adapted = std::make_shared<SyntheticBackend>(Private{}, options_);
  adapted->base_ = base_ ? base_ : shared_from_this();
  adapted->layers_ = adapted->base_->layers_;
  for (const auto& delta : weights.deltas) {
    auto it = std::find_if(adapted->layers_.begin(), adapted->layers_.end(),
                           [&](const Layer& l) { return l.id == delta.layer_id; });
    if (it == adapted->layers_.end()) {
      fail(ErrorKind::kInvalidArgument,
           "adapter targets unknown layer '" + delta.layer_id + "'");
    }
    if (delta.rows != it->conv.out || delta.cols != it->conv.in * 9) {
      fail(ErrorKind::kInvalidArgument, "adapter shape mismatch on layer '" +
                                            delta.layer_id + "'");
    }
    const std::vector<double> d = delta.product(weights.rank);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d[i] != 0.0) it->conv.weight[i] += d[i];
    }
  }
  return adapted;
}

std::shared_ptr<const Backend> SyntheticBackend::without_adapters() const {
  if (base_) return base_;
  return shared_from_this();
}

double SyntheticBackend::noise_loss_and_grads(const Tensor& z_t, int train_timestep,
                                              const Tensor& target_noise,
                                              std::vector<std::vector<double>>& slot_grads) const {
  check_latent(z_t, "noise_loss_and_grads");
  check_latent(target_noise, "noise_loss_and_grads");
  const ForwardPass f = run_forward(layers_, z_t, time_embedding(train_timestep));
  const double n = static_cast<double>(z_t.size());
  Tensor g_eps = f.eps - target_noise;
  double loss = 0.0;
  for (double v : g_eps.values()) loss += v * v;
  loss /= n;
  g_eps *= 2.0 / n;

  slot_grads.assign(layers_.size(), {});
  std::vector<std::vector<double>> bias_scratch(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    slot_grads[i].assign(layers_[i].conv.weight_count(), 0.0);
    bias_scratch[i].assign(layers_[i].conv.out, 0.0);
  }
  detail::conv3x3_param_vjp(f.h2, g_eps, layers_[2].conv, slot_grads[2], bias_scratch[2]);
  Tensor g2 = detail::conv3x3_input_vjp(g_eps, layers_[2].conv);
  tanh_backward(g2, f.h2);
  detail::conv3x3_param_vjp(f.h1, g2, layers_[1].conv, slot_grads[1], bias_scratch[1]);
  Tensor g1 = detail::conv3x3_input_vjp(g2, layers_[1].conv);
  tanh_backward(g1, f.h1);
  detail::conv3x3_param_vjp(z_t, g1, layers_[0].conv, slot_grads[0], bias_scratch[0]);
  return loss;
}

}  // namespace dragpd
