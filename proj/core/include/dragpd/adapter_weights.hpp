// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace dragpd {

// Shape of one adaptable weight, viewed as a rows x cols matrix.
struct AdapterSlot {
  std::string layer_id;
  int rows = 0;
  int cols = 0;
};

// delta = up (rows x rank) * down (rank x cols), both row-major.
struct LowRankDelta {
  std::string layer_id;
  int rows = 0;
  int cols = 0;
  std::vector<double> up;
  std::vector<double> down;

  std::vector<double> product(int rank) const;

  friend bool operator==(const LowRankDelta&, const LowRankDelta&) = default;
};

struct AdapterWeights {
  int rank = 16;
  int train_steps = 0;
  std::vector<LowRankDelta> deltas;

  std::vector<std::string> target_layer_ids() const;
  bool is_zero() const;
  // Throws kInvalidArgument on rank < 1, factor size mismatch or non-finite
  // entries.
  void validate() const;

  friend bool operator==(const AdapterWeights&, const AdapterWeights&) = default;
};

}  // namespace dragpd
