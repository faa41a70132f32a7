// Copyright 2026 The dragpd Authors
// SPDX-License-Identifier: Apache-2.0

#include "conv.hpp"

#include <algorithm>

#include "dragpd/error.hpp"

namespace dragpd::detail {

Tensor replicate_pad(const Tensor& x) {
  const int h = x.height();
  const int w = x.width();
  Tensor p(x.channels(), h + 2, w + 2);
  for (int c = 0; c < x.channels(); ++c) {
    for (int y = 0; y < h + 2; ++y) {
      const int sy = std::clamp(y - 1, 0, h - 1);
      for (int xx = 0; xx < w + 2; ++xx) {
        p.at(c, y, xx) = x.at(c, sy, std::clamp(xx - 1, 0, w - 1));
      }
    }
  }
  return p;
}

Tensor conv3x3(const Tensor& x, const Conv3x3& k) {
  if (x.channels() != k.in) {
    fail(ErrorKind::kGeometry, "conv input has " + std::to_string(x.channels()) +
                                   " channels, kernel expects " + std::to_string(k.in));
  }
  const int h = x.height();
  const int w = x.width();
  const int pw = w + 2;
  const Tensor pad = replicate_pad(x);
  Tensor out(k.out, h, w);
  for (int o = 0; o < k.out; ++o) {
    double* dst = out.plane(o).data();
    std::fill(dst, dst + out.plane_size(), k.bias[o]);
    for (int i = 0; i < k.in; ++i) {
      const double* src = pad.plane(i).data();
      const double* wk = &k.weight[(static_cast<std::size_t>(o) * k.in + i) * 9];
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = wk[ky * 3 + kx];
          for (int y = 0; y < h; ++y) {
            const double* row = src + (y + ky) * pw + kx;
            double* drow = dst + y * w;
            for (int xx = 0; xx < w; ++xx) drow[xx] += wv * row[xx];
          }
        }
      }
    }
  }
  return out;
}

Tensor conv3x3_input_vjp(const Tensor& grad_out, const Conv3x3& k) {
  const int h = grad_out.height();
  const int w = grad_out.width();
  const int pw = w + 2;
  Tensor gpad(k.in, h + 2, w + 2);
  for (int o = 0; o < k.out; ++o) {
    const double* g = grad_out.plane(o).data();
    for (int i = 0; i < k.in; ++i) {
      double* dst = gpad.plane(i).data();
      const double* wk = &k.weight[(static_cast<std::size_t>(o) * k.in + i) * 9];
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = wk[ky * 3 + kx];
          for (int y = 0; y < h; ++y) {
            double* row = dst + (y + ky) * pw + kx;
            const double* grow = g + y * w;
            for (int xx = 0; xx < w; ++xx) row[xx] += wv * grow[xx];
          }
        }
      }
    }
  }
  // Fold the replicated border back onto the edge pixels it copied.
  Tensor gx(k.in, h, w);
  for (int i = 0; i < k.in; ++i) {
    for (int y = 0; y < h + 2; ++y) {
      const int sy = std::clamp(y - 1, 0, h - 1);
      for (int xx = 0; xx < w + 2; ++xx) {
        gx.at(i, sy, std::clamp(xx - 1, 0, w - 1)) += gpad.at(i, y, xx);
      }
    }
  }
  return gx;
}

void conv3x3_param_vjp(const Tensor& x, const Tensor& grad_out, const Conv3x3& k,
                       std::span<double> grad_weight, std::span<double> grad_bias) {
  const int h = x.height();
  const int w = x.width();
  const int pw = w + 2;
  const Tensor pad = replicate_pad(x);
  for (int o = 0; o < k.out; ++o) {
    const double* g = grad_out.plane(o).data();
    double gb = 0.0;
    for (std::size_t j = 0; j < grad_out.plane_size(); ++j) gb += g[j];
    grad_bias[o] += gb;
    for (int i = 0; i < k.in; ++i) {
      const double* src = pad.plane(i).data();
      double* gw = &grad_weight[(static_cast<std::size_t>(o) * k.in + i) * 9];
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          double acc = 0.0;
          for (int y = 0; y < h; ++y) {
            const double* row = src + (y + ky) * pw + kx;
            const double* grow = g + y * w;
            for (int xx = 0; xx < w; ++xx) acc += grow[xx] * row[xx];
          }
          gw[ky * 3 + kx] += acc;
        }
      }
    }
  }
}

}  // namespace dragpd::detail
