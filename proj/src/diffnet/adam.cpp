// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/diffnet/adam.hpp"

#include <algorithm>
#include <cmath>

#include "exnerf/error.hpp"

namespace exnerf {

template <typename T>
AdamState<T>::AdamState(const ParameterSet<T> &params, AdamConfig cfg) : config(cfg) {
  for (const auto &p : params) {
    first_moment.emplace_back(p.size(), T(0));
    second_moment.emplace_back(p.size(), T(0));
  }
}

template <typename T>
void adam_step(AdamState<T> &state, ParameterSet<T> &params) {
  if (state.first_moment.size() != params.count())
    throw InvalidArgument("adam_step: optimizer state does not match parameter set");
  std::size_t i = 0;
  for (const auto &p : params) {
    if (state.first_moment[i].size() != p.size())
      throw InvalidArgument("adam_step: moment shape mismatch for '" + p.name + "'");
    for (T g : p.gradient)
      if (!std::isfinite(g))
        throw TrainingDivergence("non-finite gradient in parameter '" + p.name + "'", p.name);
    ++i;
  }

  ++state.step;
  const auto &c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T step_size = static_cast<T>(c.lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(c.eps);

  i = 0;
  for (auto &p : params) {
    auto &m = state.first_moment[i];
    auto &v = state.second_moment[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const T g = p.gradient[k];
      m[k] = b1 * m[k] + (T(1) - b1) * g;
      v[k] = b2 * v[k] + (T(1) - b2) * g * g;
      p.values[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
    }
    if (!p.all_finite())
      throw TrainingDivergence("non-finite value in parameter '" + p.name + "' after update", p.name);
    p.zero_grad();
    ++i;
  }
}

double decayed_learning_rate(std::int64_t iteration, std::int64_t total, double lr_start, double lr_end) {
  if (total <= 1) return lr_end;
  const double progress = std::clamp(static_cast<double>(iteration) / static_cast<double>(total - 1), 0.0, 1.0);
  if (progress >= 1.0) return lr_end;
  return lr_start * std::pow(lr_end / lr_start, progress);
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(AdamState<float> &, ParameterSet<float> &);
template void adam_step(AdamState<double> &, ParameterSet<double> &);

}  // namespace exnerf
