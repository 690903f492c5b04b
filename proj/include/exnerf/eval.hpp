// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "exnerf/field.hpp"
#include "exnerf/synth.hpp"
#include "exnerf/training.hpp"
#include "json.hpp"

namespace exnerf {

struct ImageError {
  double mse = 0;
  double psnr = 0;  ///< +infinity when mse == 0
};

/// MSE over all channels and PSNR = -10 log10(MSE) for unit peak.
ImageError mse_psnr(const Image &pred, const Image &target);
double psnr_from_mse(double mse);

/// JSON number, or the string "inf" for an infinite PSNR.
nlohmann::json psnr_json(double psnr);

struct FrameMetric {
  int frame = 0;
  double initial_mse = 0;  ///< frame-0 code baseline
  double mse = 0;          ///< best evaluated iterate
  double psnr = 0;
  std::int64_t steps = 0;
  std::int64_t best_step = 0;
  double max_theta_grad = 0;  ///< largest |gradient| seen on the model parameters
};

struct MetricReport {
  std::vector<FrameMetric> frames;
  double mean_mse = 0;
  double mean_psnr = 0;
  double aggregate_psnr = 0;  ///< PSNR of mean_mse
  std::int64_t steps = 0;
  std::vector<std::string> frozen;

  void finalize();
  nlohmann::json to_json() const;
};

struct ValidateOptions {
  std::int64_t steps = 2000;
  int rays_per_step = 128;
  double lr = 1e-2;
  std::int64_t eval_every = 100;
  std::uint64_t seed = 0;
  bool use_prior = true;
  /// Coarse-to-fine alpha of the deformation encoding; negative selects
  /// full bandwidth.
  double ctf_alpha = -1;
  ImageRenderOptions render;
};

/// Test-time optimization of one held-out frame: a fresh deformation code
/// initialized from frame 0's is fitted to the frame's pixels with every
/// model parameter, the appearance code (frame 0's) and beta held fixed.
/// Full-frame error is measured at step 0, every `eval_every` steps and at
/// the end; the best measurement is reported.
FrameMetric validate_frame(FieldModel<float> &model, const OracleDataset &ds, int frame, const ValidateOptions &options);

MetricReport validate_frames(FieldModel<float> &model, const OracleDataset &ds, const std::vector<int> &frames,
                             const ValidateOptions &options);

struct DriveEntry {
  std::vector<double> beta;
  Camera camera;
};

std::vector<DriveEntry> read_drive_sequence(const std::filesystem::path &path);
std::vector<DriveEntry> drive_from_json(const nlohmann::json &j);
nlohmann::json drive_to_json(const std::vector<DriveEntry> &drive);

/// Per-component [min, max] of beta over the given frames.
struct BetaRange {
  std::vector<double> lo, hi;
  bool contains(const std::vector<double> &beta) const;
};
BetaRange beta_range(const OracleDataset &ds, const std::vector<int> &frames);

/// The two frames whose beta vectors are farthest apart (Euclidean); ties keep the first pair.
std::pair<int, int> most_distinct_beta_pair(const OracleDataset &ds, const std::vector<int> &frames);

/// Full bandwidth alpha for the model's deformation encoding.
double full_ctf_alpha(const ModelConfig &config);

struct ReanimatedFrame {
  RenderedImage render;
  SilhouetteMask mask;
  bool extrapolated = false;
};

/// Renders one drive entry with frame 0's codes, gating beta per ray by the
/// silhouette of `mesh` under the entry's camera (all rays when !use_prior).
ReanimatedFrame reanimate_frame(FieldModel<float> &model, const TriangleMesh &mesh, const DriveEntry &entry,
                                bool use_prior, const ImageRenderOptions &options,
                                const std::optional<BetaRange> &range = std::nullopt);

/// Writes frame_%04d.png, depth_%04d.png (+ sidecar) per entry and returns a
/// JSON report including extrapolation warnings.
nlohmann::json reanimate(FieldModel<float> &model, const TriangleMesh &mesh, const std::vector<DriveEntry> &drive,
                         const std::filesystem::path &out_dir, bool use_prior, const ImageRenderOptions &options,
                         const std::optional<BetaRange> &range = std::nullopt);

struct AblationResult {
  double prior_diff = 0;     ///< mean |C(beta_a) - C(beta_b)| outside the silhouette, prior model
  double no_prior_diff = 0;  ///< same for the prior-free model
  std::size_t outside_pixels = 0;
  nlohmann::json to_json() const;
};

/// Renders both models under beta_a and beta_b at `camera` and compares
/// outside-silhouette pixels. Writes renders and amplified diff PNGs when
/// `out_dir` is non-empty.
AblationResult ablate_background(FieldModel<float> &with_prior, FieldModel<float> &without_prior,
                                 const TriangleMesh &mesh, const Camera &camera, const std::vector<double> &beta_a,
                                 const std::vector<double> &beta_b, const std::filesystem::path &out_dir,
                                 const ImageRenderOptions &options);

/// Mean absolute channel difference over pixels where mask is 0.
double outside_mean_abs_diff(const Image &a, const Image &b, const SilhouetteMask &mask);

}  // namespace exnerf
