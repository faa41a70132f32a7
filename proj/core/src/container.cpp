// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "dragpd/container.hpp"

#include <bit>
#include <cstring>

#include "dragpd/error.hpp"
#include "dragpd/image.hpp"

namespace dragpd {

namespace {

constexpr char kMagic[4] = {'D', 'P', 'D', 'C'};
constexpr std::uint8_t kText = 0;
constexpr std::uint8_t kFloat64 = 1;

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
    }
  }
  void str(const std::string& s) {
    le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) fail(ErrorKind::kIo, "container truncated");
  }
  template <typename T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::string str() {
    const auto n = le<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

void Container::put_text(const std::string& name, std::string text) {
  arrays_.erase(name);
  texts_[name] = std::move(text);
}

void Container::put_doubles(const std::string& name, std::span<const double> values) {
  texts_.erase(name);
  arrays_[name] = std::vector<double>(values.begin(), values.end());
}

bool Container::has(const std::string& name) const {
  return texts_.count(name) || arrays_.count(name);
}

const std::string& Container::text(const std::string& name) const {
  auto it = texts_.find(name);
  if (it == texts_.end()) fail(ErrorKind::kIo, "container has no text section '" + name + "'");
  return it->second;
}

const std::vector<double>& Container::doubles(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) fail(ErrorKind::kIo, "container has no array section '" + name + "'");
  return it->second;
}

std::vector<std::uint8_t> Container::serialize() const {
  Writer w;
  w.raw(kMagic, 4);
  w.le<std::uint32_t>(kVersion);
  w.str(kind_);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(texts_.size() + arrays_.size()));
  for (const auto& [name, text] : texts_) {
    w.str(name);
    w.le<std::uint8_t>(kText);
    w.le<std::uint64_t>(text.size());
    w.raw(text.data(), text.size());
  }
  for (const auto& [name, values] : arrays_) {
    w.str(name);
    w.le<std::uint8_t>(kFloat64);
    w.le<std::uint64_t>(values.size() * 8);
    for (double v : values) w.le<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
  }
  const std::uint64_t sum = fnv1a(w.bytes());
  w.le<std::uint64_t>(sum);
  return std::move(w.bytes());
}

Container Container::parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(ErrorKind::kIo, "not a dragpd container");
  }
  const auto body = bytes.first(bytes.size() - 8);
  Reader tail(bytes.last(8));
  if (tail.le<std::uint64_t>() != fnv1a(body)) {
    fail(ErrorKind::kIo, "container checksum mismatch");
  }
  Reader r(body);
  r.take(4);
  const auto version = r.le<std::uint32_t>();
  if (version != kVersion) {
    fail(ErrorKind::kIo, "unsupported container version " + std::to_string(version));
  }
  Container c(r.str());
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto type = r.le<std::uint8_t>();
    const auto length = r.le<std::uint64_t>();
    auto payload = r.take(length);
    if (type == kText) {
      c.texts_[name] = std::string(reinterpret_cast<const char*>(payload.data()), payload.size());
    } else if (type == kFloat64 && length % 8 == 0) {
      std::vector<double> values(length / 8);
      Reader pr(payload);
      for (double& v : values) v = std::bit_cast<double>(pr.le<std::uint64_t>());
      c.arrays_[name] = std::move(values);
    } else {
      fail(ErrorKind::kIo, "bad section '" + name + "'");
    }
  }
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  write_file_bytes(path, serialize());
}

Container Container::load(const std::filesystem::path& path, const std::string& expected_kind) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::kIo, "no such file: " + path.string());
  Container c = parse(read_file_bytes(path));
  if (c.kind() != expected_kind) {
    fail(ErrorKind::kIo, path.string() + " holds '" + c.kind() + "', expected '" +
                             expected_kind + "'");
  }
  return c;
}

}  // namespace dragpd
