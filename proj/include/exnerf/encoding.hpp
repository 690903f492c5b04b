// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "exnerf/types.hpp"

namespace exnerf {

/// Frequency positional encoding of a 3-vector:
/// (x, sin(2^0 x), cos(2^0 x), ..., sin(2^{m-1} x), cos(2^{m-1} x)).
struct EncodingSpec {
  int bands = 10;
  bool include_identity = true;
  static constexpr int component_dim = 3;

  int output_dim() const { return component_dim * (include_identity ? 1 : 0) + 6 * bands; }
  void validate() const;
};

/// Coarse-to-fine schedule over `bands` frequency bands reaching full
/// bandwidth at iteration `horizon`.
struct CtfSchedule {
  int bands = 6;
  std::int64_t horizon = 1;

  double alpha(std::int64_t iteration) const;
  std::vector<double> weights(std::int64_t iteration) const;
};

/// Encodes x. `band_weights` must be empty or hold one weight in [0,1] per band.
std::vector<double> positional_encode(const Vec3 &x, const EncodingSpec &spec,
                                      std::span<const double> band_weights = {});

/// (1 - cos(pi * clamp(alpha - l, 0, 1))) / 2
double ctf_weight(int band, double alpha, int bands);

/// m * t / N
double ctf_alpha(std::int64_t iteration, const CtfSchedule &schedule);

namespace detail {

/// sin(2^k v), cos(2^k v) for k = 0..m-1 via the double-angle recurrence,
/// carried in double so the error stays near 2^m ulp(double).
inline void octave_sincos(double v, int m, double *s, double *c) {
  double sk = std::sin(v);
  double ck = std::cos(v);
  for (int k = 0; k < m; ++k) {
    s[k] = sk;
    c[k] = ck;
    const double s2 = 2.0 * sk * ck;
    ck = (ck - sk) * (ck + sk);
    sk = s2;
  }
}

inline constexpr int kMaxBands = 32;

}  // namespace detail

/// Batched encoding of an N x 3 matrix into N x spec.output_dim().
template <typename T>
void encode_rows(const Mat<T> &x, const EncodingSpec &spec, std::span<const T> band_weights,
                 Mat<T> &out) {
  const auto n = x.rows();
  const int m = spec.bands;
  const int off = spec.include_identity ? 3 : 0;
  out.resize(n, spec.output_dim());
  double s[3][detail::kMaxBands], c[3][detail::kMaxBands];
  for (Eigen::Index r = 0; r < n; ++r) {
    const T *xr = x.row(r).data();
    T *o = out.row(r).data();
    if (spec.include_identity) {
      o[0] = xr[0];
      o[1] = xr[1];
      o[2] = xr[2];
    }
    for (int comp = 0; comp < 3; ++comp) detail::octave_sincos(static_cast<double>(xr[comp]), m, s[comp], c[comp]);
    for (int k = 0; k < m; ++k) {
      const T w = band_weights.empty() ? T(1) : band_weights[k];
      T *blk = o + off + 6 * k;
      blk[0] = w * static_cast<T>(s[0][k]);
      blk[1] = w * static_cast<T>(s[1][k]);
      blk[2] = w * static_cast<T>(s[2][k]);
      blk[3] = w * static_cast<T>(c[0][k]);
      blk[4] = w * static_cast<T>(c[1][k]);
      blk[5] = w * static_cast<T>(c[2][k]);
    }
  }
}

/// Accumulates d(loss)/dx given d(loss)/d(encoding) for encode_rows.
template <typename T>
void encode_rows_backward(const Mat<T> &x, const EncodingSpec &spec,
                          std::span<const T> band_weights, const Mat<T> &grad_out,
                          Mat<T> &grad_x) {
  const auto n = x.rows();
  const int m = spec.bands;
  const int off = spec.include_identity ? 3 : 0;
  double s[detail::kMaxBands], c[detail::kMaxBands];
  for (Eigen::Index r = 0; r < n; ++r) {
    const T *xr = x.row(r).data();
    const T *g = grad_out.row(r).data();
    T *gx = grad_x.row(r).data();
    if (spec.include_identity) {
      gx[0] += g[0];
      gx[1] += g[1];
      gx[2] += g[2];
    }
    for (int comp = 0; comp < 3; ++comp) {
      detail::octave_sincos(static_cast<double>(xr[comp]), m, s, c);
      double acc = 0.0;
      double freq = 1.0;
      for (int k = 0; k < m; ++k) {
        const double w = band_weights.empty() ? 1.0 : static_cast<double>(band_weights[k]);
        const T *blk = g + off + 6 * k;
        acc += w * freq * (blk[comp] * c[k] - blk[3 + comp] * s[k]);
        freq *= 2.0;
      }
      gx[comp] += static_cast<T>(acc);
    }
  }
}

}  // namespace exnerf
