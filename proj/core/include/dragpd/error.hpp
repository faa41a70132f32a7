// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace dragpd {

enum class ErrorKind {
  kInvalidArgument,
  kGeometry,
  kNotFound,
  kConflict,
  kNotReady,
  kNumerical,
  kUnavailable,
  kIo,
};

const char* to_string(ErrorKind kind);

// Single exception type for the engine; callers switch on kind() when they
// need to map failures onto exit codes or HTTP statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace dragpd
