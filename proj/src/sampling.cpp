// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/sampling.hpp"

#include <algorithm>
#include <numeric>

#include "exnerf/error.hpp"

namespace exnerf {

SampleSet make_sample_set(const Ray &ray, std::vector<double> t) {
  SampleSet s;
  s.positions.reserve(t.size());
  for (double ti : t) s.positions.push_back(ray.origin + ti * ray.direction);
  s.t = std::move(t);
  return s;
}

std::vector<double> stratified_depths(double t_near, double t_far, int n, bool jitter, CounterRng *rng) {
  if (n < 2) throw InvalidArgument("stratified_samples: need at least two samples");
  if (jitter && !rng) throw InvalidArgument("stratified_samples: jitter requires an rng");
  std::vector<double> t(n);
  const double width = (t_far - t_near) / n;
  for (int i = 0; i < n; ++i) {
    const double u = jitter ? rng->uniform() : 0.5;
    t[i] = t_near + (i + u) * width;
  }
  return t;
}

SampleSet stratified_samples(const Ray &ray, int n, bool jitter, CounterRng *rng) {
  return make_sample_set(ray, stratified_depths(ray.t_near, ray.t_far, n, jitter, rng));
}

ImportanceDraw importance_samples(std::span<const double> bin_edges, std::span<const double> weights, int n,
                                  CounterRng *rng) {
  const std::size_t bins = weights.size();
  if (bins == 0 || bin_edges.size() != bins + 1)
    throw InvalidArgument("importance_samples: need weights.size() + 1 bin edges");
  if (n < 1) throw InvalidArgument("importance_samples: need at least one sample");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw InvalidArgument("importance_samples: weights must be non-negative");
    total += w;
  }
  ImportanceDraw out;
  std::vector<double> cdf(bins + 1, 0.0);
  if (total > 0.0) {
    for (std::size_t i = 0; i < bins; ++i) cdf[i + 1] = cdf[i] + weights[i] / total;
  } else {
    out.uniform_fallback = true;
    for (std::size_t i = 0; i < bins; ++i) cdf[i + 1] = static_cast<double>(i + 1) / bins;
  }
  cdf[bins] = 1.0;

  std::vector<double> u(n);
  for (int k = 0; k < n; ++k) u[k] = rng ? rng->uniform() : (k + 0.5) / n;
  std::sort(u.begin(), u.end());

  out.t.resize(n);
  for (int k = 0; k < n; ++k) {
    // first bin whose upper cdf exceeds u; zero-mass bins are never selected
    auto it = std::upper_bound(cdf.begin() + 1, cdf.end(), u[k]);
    std::size_t bin = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()) - 1, bins - 1);
    const double mass = cdf[bin + 1] - cdf[bin];
    const double frac = mass > 0 ? std::clamp((u[k] - cdf[bin]) / mass, 0.0, 1.0) : 0.5;
    out.t[k] = bin_edges[bin] + frac * (bin_edges[bin + 1] - bin_edges[bin]);
  }
  std::sort(out.t.begin(), out.t.end());
  return out;
}

std::vector<double> hierarchical_bin_edges(std::span<const double> coarse_t, double t_near, double t_far) {
  std::vector<double> edges;
  edges.reserve(coarse_t.size() + 1);
  edges.push_back(t_near);
  for (std::size_t i = 0; i + 1 < coarse_t.size(); ++i) edges.push_back(0.5 * (coarse_t[i] + coarse_t[i + 1]));
  edges.push_back(t_far);
  return edges;
}

std::vector<double> merge_depths(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), out.begin());
  return out;
}

}  // namespace exnerf
