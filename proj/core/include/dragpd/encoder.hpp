// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include "dragpd/backend.hpp"

namespace dragpd {

// Paired image/text encoder into a shared embedding space. Both embed
// methods return unit vectors.
class VisionLanguageEncoder {
 public:
  virtual ~VisionLanguageEncoder() = default;

  virtual std::string name() const = 0;
  virtual int dimension() const = 0;
  virtual Embedding embed_text(std::string_view prompt) const = 0;
  virtual Embedding embed_image(const Tensor& rgb) const = 0;
  // Pulls a gradient on the unit image embedding back to the RGB tensor.
  virtual Tensor embed_image_vjp(const Tensor& rgb, const Embedding& grad_embedding) const = 0;
};

using EncoderPtr = std::shared_ptr<const VisionLanguageEncoder>;

// Deterministic stand-in: image embedding = normalize(P * vec(rgb) + b) with a
// seeded Gaussian P; text embedding = seeded Gaussian keyed by an FNV-1a hash
// of the prompt.
class LinearProjectionEncoder final : public VisionLanguageEncoder {
 public:
  LinearProjectionEncoder(int height, int width, int dimension = 64,
                          std::uint64_t seed = 0xc11b'5eedULL);

  std::string name() const override { return "linear-stub"; }
  int dimension() const override { return dimension_; }
  Embedding embed_text(std::string_view prompt) const override;
  Embedding embed_image(const Tensor& rgb) const override;
  Tensor embed_image_vjp(const Tensor& rgb, const Embedding& grad_embedding) const override;

  // Unnormalized projection, exposed for tests.
  Embedding project(const Tensor& rgb) const;

 private:
  int height_;
  int width_;
  int dimension_;
  std::uint64_t seed_;
  std::vector<double> projection_;  // dimension x (3 * height * width)
  std::vector<double> bias_;
};

// "linear-stub" is built in; "clip-vit-b16" needs an external runtime and
// reports kUnavailable.
EncoderPtr make_encoder(const std::string& name, int height, int width);

double cosine_similarity(std::span<const double> a, std::span<const double> b);
Embedding normalized(std::span<const double> v);

}  // namespace dragpd
