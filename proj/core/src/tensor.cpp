// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "dragpd/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "dragpd/error.hpp"

namespace dragpd {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kGeometry: return "geometry";
    case ErrorKind::kNotFound: return "not_found";
    case ErrorKind::kConflict: return "conflict";
    case ErrorKind::kNotReady: return "not_ready";
    case ErrorKind::kNumerical: return "numerical";
    case ErrorKind::kUnavailable: return "unavailable";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

std::string to_string(const Coord& c) {
  return "(" + std::to_string(c.row) + ", " + std::to_string(c.col) + ")";
}

Tensor::Tensor(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels < 0 || height < 0 || width < 0) {
    fail(ErrorKind::kInvalidArgument, "negative tensor dimension");
  }
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

std::span<double> Tensor::plane(int c) {
  return std::span<double>(data_).subspan(c * plane_size(), plane_size());
}

std::span<const double> Tensor::plane(int c) const {
  return std::span<const double>(data_).subspan(c * plane_size(), plane_size());
}

std::string Tensor::shape_string() const {
  return std::to_string(channels_) + "x" + std::to_string(height_) + "x" +
         std::to_string(width_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

static void require_same_shape(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::kGeometry,
         "tensor shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
  }
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor& Tensor::add_scaled(const Tensor& other, double s) {
  require_same_shape(*this, other);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
  return *this;
}

std::vector<double> Tensor::pixel(const Coord& p) const {
  std::vector<double> out(channels_);
  for (int c = 0; c < channels_; ++c) out[c] = at(c, p.row, p.col);
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

Tensor resample_bilinear(const Tensor& in, int height, int width) {
  if (in.height() == height && in.width() == width) return in;
  if (in.height() == 0 || in.width() == 0) {
    fail(ErrorKind::kGeometry, "cannot resample an empty tensor");
  }
  Tensor out(in.channels(), height, width);
  const double sy = static_cast<double>(in.height()) / height;
  const double sx = static_cast<double>(in.width()) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, in.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, in.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, in.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, in.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < in.channels(); ++c) {
        const double top = in.at(c, y0, x0) * (1 - wx) + in.at(c, y0, x1) * wx;
        const double bot = in.at(c, y1, x0) * (1 - wx) + in.at(c, y1, x1) * wx;
        out.at(c, y, x) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Tensor shift(const Tensor& in, int drow, int dcol) {
  Tensor out(in.channels(), in.height(), in.width());
  for (int c = 0; c < in.channels(); ++c) {
    for (int y = 0; y < in.height(); ++y) {
      const int sy = std::clamp(y - drow, 0, in.height() - 1);
      for (int x = 0; x < in.width(); ++x) {
        const int sx = std::clamp(x - dcol, 0, in.width() - 1);
        out.at(c, y, x) = in.at(c, sy, sx);
      }
    }
  }
  return out;
}

}  // namespace dragpd
