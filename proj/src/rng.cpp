// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/rng.hpp"

#include <cmath>
#include <numbers>

namespace exnerf {

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream_a, std::uint64_t stream_b)
    : key_(mix64(seed ^ mix64(stream_a ^ mix64(stream_b + 0x2545F4914F6CDD1DULL)))) {}

std::uint64_t CounterRng::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * 0xD1B54A32D192ED03ULL);
}

double CounterRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t CounterRng::below(std::uint64_t n) {
  // Lemire's multiply-shift; the bias is below 2^-40 for the sizes used here.
  const unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::uint64_t>(m >> 64);
}

double CounterRng::normal() {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace exnerf
