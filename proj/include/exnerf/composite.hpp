// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>

namespace exnerf {

/// Discretized emission-absorption quadrature for one ray of `n` samples.
///
/// delta_j = t_{j+1} - t_j (last interval runs to t_far), a_j = 1 - exp(-sigma_j delta_j),
/// T_j = prod_{k<j} (1 - a_k), w_j = T_j a_j and
/// color = sum_j w_j c_j + (1 - sum_j w_j) * background.
///
/// `color` is n x 3 row-major. `weights` and `trans_next` (T_{j+1}) receive n values.
template <typename T>
void composite_kernel(const T *t, const T *sigma, const T *color, int n, T t_far, T background,
                      T *weights, T *trans_next, T out_rgb[3], T &depth, T &opacity) {
  T trans = T(1);
  T acc[3] = {T(0), T(0), T(0)};
  T wsum = T(0);
  T wt = T(0);
  for (int j = 0; j < n; ++j) {
    const T delta = (j + 1 < n ? t[j + 1] : t_far) - t[j];
    const T tau = sigma[j] * delta;
    const T alpha = -std::expm1(-tau);
    const T w = trans * alpha;
    weights[j] = w;
    trans = trans * std::exp(-tau);
    trans_next[j] = trans;
    acc[0] += w * color[3 * j + 0];
    acc[1] += w * color[3 * j + 1];
    acc[2] += w * color[3 * j + 2];
    wsum += w;
    wt += w * t[j];
  }
  for (int c = 0; c < 3; ++c) out_rgb[c] = acc[c] + (T(1) - wsum) * background;
  opacity = wsum;
  depth = wt / std::max(wsum, T(1e-10));
}

/// Gradient of composite_kernel. `grad_rgb` is d(loss)/d(color output);
/// accumulates into grad_sigma (n) and grad_color (n x 3).
template <typename T>
void composite_kernel_backward(const T *t, const T *color, int n, T t_far, T background,
                               const T *weights, const T *trans_next, const T grad_rgb[3],
                               T *grad_sigma, T *grad_color) {
  // suffix = sum_{j>i} w_j g_j with g_j = (c_j - bg) . grad_rgb
  T suffix = T(0);
  for (int i = n - 1; i >= 0; --i) {
    const T g = (color[3 * i + 0] - background) * grad_rgb[0] +
                (color[3 * i + 1] - background) * grad_rgb[1] +
                (color[3 * i + 2] - background) * grad_rgb[2];
    const T delta = (i + 1 < n ? t[i + 1] : t_far) - t[i];
    grad_sigma[i] += delta * (trans_next[i] * g - suffix);
    suffix += weights[i] * g;
    grad_color[3 * i + 0] += weights[i] * grad_rgb[0];
    grad_color[3 * i + 1] += weights[i] * grad_rgb[1];
    grad_color[3 * i + 2] += weights[i] * grad_rgb[2];
  }
}

}  // namespace exnerf
