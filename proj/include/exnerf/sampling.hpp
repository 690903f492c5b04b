// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "exnerf/camera.hpp"
#include "exnerf/rng.hpp"

namespace exnerf {

/// Sample depths along a ray (ascending) and the matching world points.
struct SampleSet {
  std::vector<double> t;
  std::vector<Vec3> positions;
};

SampleSet make_sample_set(const Ray &ray, std::vector<double> t);

/// One sample per equal-length bin of [t_near, t_far]: the bin midpoint, or
/// a uniform draw inside the bin when `jitter` is set (requires rng).
SampleSet stratified_samples(const Ray &ray, int n, bool jitter, CounterRng *rng);

/// Stratified depths only (no positions).
std::vector<double> stratified_depths(double t_near, double t_far, int n, bool jitter, CounterRng *rng);

struct ImportanceDraw {
  std::vector<double> t;  ///< ascending
  bool uniform_fallback = false;
};

/// Inverse-CDF draws from the piecewise-constant density with bin `i`
/// spanning [bin_edges[i], bin_edges[i+1]] and mass proportional to
/// weights[i]. With an rng the draws are i.i.d. uniform in CDF space;
/// without one they are the deterministic quantiles (k + 0.5) / n.
/// All-zero weights fall back to a uniform density and set the flag.
ImportanceDraw importance_samples(std::span<const double> bin_edges, std::span<const double> weights, int n,
                                  CounterRng *rng);

/// Bin edges for hierarchical sampling: t_near, midpoints of consecutive
/// coarse depths, t_far.
std::vector<double> hierarchical_bin_edges(std::span<const double> coarse_t, double t_near, double t_far);

/// Sorted union of two depth lists.
std::vector<double> merge_depths(std::span<const double> a, std::span<const double> b);

}  // namespace exnerf
