// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "exnerf/diffnet/parameters.hpp"

namespace exnerf {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments are kept per parameter in ParameterSet order.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  AdamState() = default;
  AdamState(const ParameterSet<T> &params, AdamConfig cfg);
};

/// One bias-corrected Adam update on every parameter, then zeroes the
/// gradients. Throws TrainingDivergence (before touching anything) if a
/// gradient is non-finite.
template <typename T>
void adam_step(AdamState<T> &state, ParameterSet<T> &params);

/// Exponential interpolation from lr_start (iteration 0) to lr_end
/// (iteration total-1).
double decayed_learning_rate(std::int64_t iteration, std::int64_t total, double lr_start, double lr_end);

extern template struct AdamState<float>;
extern template struct AdamState<double>;

}  // namespace exnerf
