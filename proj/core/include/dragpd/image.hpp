// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dragpd/tensor.hpp"

namespace dragpd {

// RGB raster with planar channels and values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, double fill = 0.0)
      : pixels_(3, height, width, fill) {}
  // Takes the first three planes of `rgb`; throws if it has fewer.
  explicit Image(Tensor rgb);

  int height() const noexcept { return pixels_.height(); }
  int width() const noexcept { return pixels_.width(); }
  bool empty() const noexcept { return pixels_.empty(); }

  const Tensor& pixels() const noexcept { return pixels_; }
  Tensor& pixels() noexcept { return pixels_; }

  double& at(int c, int y, int x) { return pixels_.at(c, y, x); }
  double at(int c, int y, int x) const { return pixels_.at(c, y, x); }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  Tensor pixels_;
};

// 8-bit PNG codec. Grey and palette inputs are expanded to RGB; alpha is
// dropped.
Image decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Image& image);
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes);

}  // namespace dragpd
