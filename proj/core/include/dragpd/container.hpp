// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dragpd {

// Versioned binary container of named sections (text or float64 arrays),
// little-endian, terminated by an FNV-1a checksum over everything before it.
//
//   "DPDC" | u32 version | str kind | u32 count | count x section | u64 fnv
//   section = str name | u8 type | u64 byte_length | payload
//   str     = u32 length | bytes
class Container {
 public:
  static constexpr std::uint32_t kVersion = 1;

  explicit Container(std::string kind = {}) : kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

  void put_text(const std::string& name, std::string text);
  void put_doubles(const std::string& name, std::span<const double> values);

  bool has(const std::string& name) const;
  const std::string& text(const std::string& name) const;
  const std::vector<double>& doubles(const std::string& name) const;

  std::vector<std::uint8_t> serialize() const;
  static Container parse(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  // Throws kIo on missing file, bad magic, version skew or checksum mismatch.
  static Container load(const std::filesystem::path& path, const std::string& expected_kind);

 private:
  std::string kind_;
  std::map<std::string, std::string> texts_;
  std::map<std::string, std::vector<double>> arrays_;
};

}  // namespace dragpd
