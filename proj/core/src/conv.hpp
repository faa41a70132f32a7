// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "dragpd/tensor.hpp"

namespace dragpd::detail {

// 3x3 same-size convolution with edge-replicated borders.
// weight layout: [out][in][ky][kx].
struct Conv3x3 {
  int out = 0;
  int in = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  std::size_t weight_count() const { return static_cast<std::size_t>(out) * in * 9; }
};

Tensor replicate_pad(const Tensor& x);

Tensor conv3x3(const Tensor& x, const Conv3x3& k);
Tensor conv3x3_input_vjp(const Tensor& grad_out, const Conv3x3& k);
// Accumulates into grad_weight (size k.weight_count()) and grad_bias (k.out).
void conv3x3_param_vjp(const Tensor& x, const Tensor& grad_out, const Conv3x3& k,
                       std::span<double> grad_weight, std::span<double> grad_bias);

}  // namespace dragpd::detail
