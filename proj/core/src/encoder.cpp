// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "dragpd/encoder.hpp"

#include <cmath>

#include "dragpd/error.hpp"
#include "dragpd/random.hpp"

namespace dragpd {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Embedding normalized(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) {
    fail(ErrorKind::kInvalidArgument, "cannot normalize a zero-norm embedding");
  }
  Embedding out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    fail(ErrorKind::kInvalidArgument, "embedding dimensions differ");
  }
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) {
    fail(ErrorKind::kInvalidArgument, "cosine similarity of a zero-norm embedding");
  }
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] * b[i];
  return d / (na * nb);
}

LinearProjectionEncoder::LinearProjectionEncoder(int height, int width, int dimension,
                                                 std::uint64_t seed)
    : height_(height), width_(width), dimension_(dimension), seed_(seed) {
  if (height < 1 || width < 1 || dimension < 1) {
    fail(ErrorKind::kInvalidArgument, "encoder geometry must be positive");
  }
  Rng rng(seed);
  const std::size_t inputs = 3ULL * height * width;
  projection_.resize(static_cast<std::size_t>(dimension) * inputs);
  const double scale = 1.0 / std::sqrt(static_cast<double>(inputs));
  for (double& p : projection_) p = scale * rng.normal();
  bias_.resize(dimension);
  for (double& b : bias_) b = 0.05 * rng.normal();
}

Embedding LinearProjectionEncoder::embed_text(std::string_view prompt) const {
  Rng rng(fnv1a(prompt) ^ seed_);
  Embedding e(dimension_);
  for (double& v : e) v = rng.normal();
  return normalized(e);
}

Embedding LinearProjectionEncoder::project(const Tensor& rgb) const {
  if (rgb.channels() != 3 || rgb.height() != height_ || rgb.width() != width_) {
    fail(ErrorKind::kGeometry, "encoder expects 3x" + std::to_string(height_) + "x" +
                                   std::to_string(width_) + ", got " + rgb.shape_string());
  }
  const auto x = rgb.values();
  Embedding e(bias_);
  for (int d = 0; d < dimension_; ++d) {
    const double* row = &projection_[static_cast<std::size_t>(d) * x.size()];
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += row[i] * x[i];
    e[d] += acc;
  }
  return e;
}

Embedding LinearProjectionEncoder::embed_image(const Tensor& rgb) const {
  return normalized(project(rgb));
}

Tensor LinearProjectionEncoder::embed_image_vjp(const Tensor& rgb,
                                                const Embedding& grad_embedding) const {
  const Embedding e = project(rgb);
  const double n = l2_norm(e);
  if (!(n > 0.0)) fail(ErrorKind::kNumerical, "image embedding has zero norm");
  // d(e/|e|)/de = (I - u u^T) / |e|
  double radial = 0.0;
  for (int d = 0; d < dimension_; ++d) radial += grad_embedding[d] * e[d] / n;
  Tensor g(3, height_, width_);
  auto gx = g.values();
  for (int d = 0; d < dimension_; ++d) {
    const double ge = (grad_embedding[d] - radial * e[d] / n) / n;
    const double* row = &projection_[static_cast<std::size_t>(d) * gx.size()];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ge * row[i];
  }
  return g;
}

EncoderPtr make_encoder(const std::string& name, int height, int width) {
  if (name == "linear-stub") return std::make_shared<LinearProjectionEncoder>(height, width);
  if (name == "clip-vit-b16") {
    fail(ErrorKind::kUnavailable, "clip-vit-b16 needs a neural-network runtime not in this build");
  }
  fail(ErrorKind::kNotFound, "unknown encoder '" + name + "'");
}

}  // namespace dragpd
