// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/encoding.hpp"

#include <algorithm>
#include <numbers>
#include <string>

#include "exnerf/error.hpp"

namespace exnerf {

void EncodingSpec::validate() const {
  if (bands < 1) throw InvalidArgument("encoding needs at least one frequency band");
  if (bands > detail::kMaxBands) throw InvalidArgument("encoding supports at most 32 frequency bands");
}

double CtfSchedule::alpha(std::int64_t iteration) const { return ctf_alpha(iteration, *this); }

std::vector<double> CtfSchedule::weights(std::int64_t iteration) const {
  const double a = alpha(iteration);
  std::vector<double> w(bands);
  for (int l = 0; l < bands; ++l) w[l] = ctf_weight(l, a, bands);
  return w;
}

std::vector<double> positional_encode(const Vec3 &x, const EncodingSpec &spec,
                                      std::span<const double> band_weights) {
  spec.validate();
  if (!x.allFinite()) throw InvalidArgument("positional_encode: non-finite input");
  if (!band_weights.empty()) {
    if (static_cast<int>(band_weights.size()) != spec.bands)
      throw InvalidArgument("positional_encode: expected " + std::to_string(spec.bands) +
                            " band weights, got " + std::to_string(band_weights.size()));
    for (double w : band_weights)
      if (!(w >= 0.0 && w <= 1.0)) throw InvalidArgument("positional_encode: band weight outside [0,1]");
  }
  Mat<double> in(1, 3);
  in.row(0) = x.transpose();
  Mat<double> out;
  encode_rows<double>(in, spec, band_weights, out);
  return {out.data(), out.data() + out.size()};
}

double ctf_weight(int band, double alpha, int bands) {
  if (band < 0 || band >= bands)
    throw InvalidArgument("ctf_weight: band " + std::to_string(band) + " outside [0," +
                          std::to_string(bands) + ")");
  if (!(alpha >= 0.0)) throw InvalidArgument("ctf_weight: alpha must be non-negative");
  const double c = std::clamp(alpha - band, 0.0, 1.0);
  return (1.0 - std::cos(std::numbers::pi * c)) / 2.0;
}

double ctf_alpha(std::int64_t iteration, const CtfSchedule &schedule) {
  if (schedule.horizon <= 0) throw InvalidArgument("ctf_alpha: horizon must be positive");
  if (iteration < 0) throw InvalidArgument("ctf_alpha: negative iteration");
  return static_cast<double>(schedule.bands) * static_cast<double>(iteration) /
         static_cast<double>(schedule.horizon);
}

}  // namespace exnerf
