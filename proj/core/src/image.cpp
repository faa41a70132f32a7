// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "dragpd/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dragpd/error.hpp"

namespace dragpd {

Image::Image(Tensor rgb) {
  if (rgb.channels() < 3) {
    fail(ErrorKind::kGeometry, "image needs 3 channels, got " + rgb.shape_string());
  }
  if (rgb.channels() == 3) {
    pixels_ = std::move(rgb);
    return;
  }
  pixels_ = Tensor(3, rgb.height(), rgb.width());
  for (int c = 0; c < 3; ++c) {
    std::copy(rgb.plane(c).begin(), rgb.plane(c).end(), pixels_.plane(c).begin());
  }
}

namespace {

// RAII wrapper around libpng's simplified API state.
struct PngImage {
  png_image image{};
  PngImage() {
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Image decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) fail(ErrorKind::kInvalidArgument, "empty PNG payload");
  PngImage png;
  if (!png_image_begin_read_from_memory(&png.image, bytes.data(), bytes.size())) {
    fail(ErrorKind::kInvalidArgument,
         std::string("undecodable PNG: ") + png.image.message);
  }
  png.image.format = PNG_FORMAT_RGB;
  const int width = static_cast<int>(png.image.width);
  const int height = static_cast<int>(png.image.height);
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, buffer.data(), 0, nullptr)) {
    fail(ErrorKind::kInvalidArgument,
         std::string("undecodable PNG: ") + png.image.message);
  }
  Image out(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * width + x) * 3;
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = buffer[base + c] / 255.0;
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.empty()) fail(ErrorKind::kInvalidArgument, "cannot encode an empty image");
  const int width = image.width();
  const int height = image.height();
  std::vector<std::uint8_t> buffer(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * width + x) * 3;
      for (int c = 0; c < 3; ++c) buffer[base + c] = quantize(image.at(c, y, x));
    }
  }
  PngImage png;
  png.image.width = static_cast<png_uint_32>(width);
  png.image.height = static_cast<png_uint_32>(height);
  png.image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png.image, nullptr, &size, 0, buffer.data(), 0,
                                 nullptr)) {
    fail(ErrorKind::kIo, std::string("PNG encode failed: ") + png.image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png.image, out.data(), &size, 0, buffer.data(), 0,
                                 nullptr)) {
    fail(ErrorKind::kIo, std::string("PNG encode failed: ") + png.image.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes) {
  // Write-then-rename so readers never observe a torn file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::kIo, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Image read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    fail(ErrorKind::kNotFound, "image file not found: " + path.string());
  }
  return decode_png(read_file_bytes(path));
}

void write_png(const std::filesystem::path& path, const Image& image) {
  write_file_bytes(path, encode_png(image));
}

}  // namespace dragpd
