// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "exnerf/diffnet/adam.hpp"
#include "exnerf/field.hpp"
#include "exnerf/synth.hpp"
#include "json.hpp"

namespace exnerf {

struct TrainConfig {
  std::int64_t total_iterations = 20000;
  int rays_per_batch = 128;
  double lr_start = 1e-3;
  double lr_end = 5e-4;
  /// Coarse-to-fine horizon N; 0 selects min(50000, total / 2).
  std::int64_t ctf_horizon = 0;
  double frr_weight = 1.0;
  int frr_samples = 1024;
  bool use_prior = true;
  std::uint64_t seed = 0;
  /// Rays per tape; chunks are merged in a fixed order, so results do not
  /// depend on `threads`. 0 puts the whole batch on one tape.
  int chunk_rays = 0;
  int threads = 1;
  ModelConfig model = ModelConfig::desk();

  void validate() const;
  std::int64_t effective_ctf_horizon() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json &j);
};

nlohmann::json model_config_to_json(const ModelConfig &c);
ModelConfig model_config_from_json(const nlohmann::json &j);

/// Flattened training rays of every non-validation frame.
struct TrainingRays {
  int width = 0;
  int height = 0;
  double t_near = 2.0;
  double t_far = 7.0;
  std::vector<int> frames;                ///< training frame ids
  std::vector<std::vector<double>> beta;  ///< per dataset frame
  std::vector<Vec3> origins;              ///< per dataset frame
  std::vector<std::vector<float>> directions;  ///< per training frame: pixels x 3
  std::vector<std::vector<float>> targets;     ///< per training frame: pixels x 3
  std::vector<std::vector<std::uint8_t>> inside;  ///< per training frame
  TriangleMesh mesh;

  std::size_t pixels_per_frame() const { return static_cast<std::size_t>(width) * height; }
  std::size_t size() const { return frames.size() * pixels_per_frame(); }
};

TrainingRays prepare_training_rays(const OracleDataset &ds);

struct TrainState {
  TrainConfig config;
  std::unique_ptr<FieldModel<float>> model;
  AdamState<float> adam;
  std::int64_t iteration = 0;
  double running_photometric = 0;  ///< exponential moving average
};

/// Fresh parameters for `frames` dataset frames.
TrainState make_train_state(const TrainConfig &config, int frames);

/// Mean squared error over all channels.
template <typename T>
T photometric_loss(const Mat<T> &predicted, const Mat<T> &target);

/// Scalar on the tape: weight * mean over frames of the mean ||D(x; w_f) - x||
/// over that frame's points. `frame_rows[i]` is the code row of points.row(i).
template <typename T>
Var face_region_reg(const FieldModel<T> &model, Tape<T> &tape, const Mat<T> &points, const std::vector<int> &frame_rows,
                    double ctf_alpha, double weight);

struct StepStats {
  std::int64_t iteration = 0;  ///< iteration the step ran at
  double photometric = 0;
  double frr = 0;
  double lr = 0;
  double alpha = 0;
  std::vector<int> frames;
};

/// Ray indices (into TrainingRays) of the batch at `iteration`.
std::vector<std::size_t> batch_indices(const TrainingRays &data, std::uint64_t seed, std::int64_t iteration, int rays);

/// One forward/backward over the batch plus the FRR term and one Adam step.
/// Throws TrainingDivergence (parameters untouched) on a non-finite loss.
StepStats train_step(TrainState &state, const TrainingRays &data);

nlohmann::json step_stats_json(const StepStats &s);

struct TrainLoopOptions {
  std::filesystem::path metrics_path;  ///< JSON lines; empty disables
  std::int64_t log_every = 100;
  std::filesystem::path checkpoint_path;
  std::int64_t checkpoint_every = 0;
  std::function<void(const StepStats &)> on_step;
};

/// Runs until state.iteration reaches config.total_iterations.
void train(TrainState &state, const TrainingRays &data, const TrainLoopOptions &options = {});

/// Frame-0 conditioning with the prior applied per pixel: the rasterized
/// silhouette when `use_prior`, otherwise beta on every ray.
std::unique_ptr<SilhouetteMask> prior_mask(const TriangleMesh &mesh, const Camera &camera, bool use_prior);

}  // namespace exnerf
