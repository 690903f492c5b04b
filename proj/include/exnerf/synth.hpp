// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "exnerf/camera.hpp"
#include "exnerf/field.hpp"
#include "exnerf/image.hpp"
#include "exnerf/prior.hpp"
#include "json.hpp"

namespace exnerf {

/// Analytic stand-in for a captured portrait: a soft sphere "head" with an
/// expression-driven mouth patch in front of a jittering checkerboard plane.
struct SceneConfig {
  Vec3 head_center = Vec3::Zero();
  double head_radius = 0.5;
  double density_scale = 40.0;  ///< k
  double shell_width = 0.02;    ///< epsilon

  /// Mouth patch: smooth cap around `mouth_axis`, full weight within
  /// `mouth_inner` radians, zero beyond `mouth_outer`.
  Vec3 mouth_axis = Vec3(0.0, -0.35, 0.94);
  double mouth_inner = 0.35;
  double mouth_outer = 0.7;

  std::vector<double> geometry_gain;               ///< g, 50 entries
  std::vector<std::array<double, 3>> color_gain;   ///< M, 50 rows of RGB
  std::array<double, 3> head_color{0.85, 0.62, 0.48};
  std::array<double, 3> mouth_color{0.65, 0.25, 0.3};
  double patch_color_limit = 0.3;  ///< clamp bound on M beta

  double plane_z = -1.2;
  double plane_density = 40.0;
  double plane_ramp = 0.1;
  double tile_size = 0.5;
  double tile_blend = 0.15;  ///< half-width of the tile transition, in tiles
  std::array<double, 3> tile_a{0.22, 0.32, 0.52};
  std::array<double, 3> tile_b{0.78, 0.76, 0.62};
  double jitter_amplitude = 0.06;

  int frames = 60;
  int width = 64;
  int height = 64;
  double focal = 98.5;
  double orbit_radius = 3.0;
  double elevation_deg = 10.0;
  double azimuth_start_deg = -20.0;
  double azimuth_end_deg = 20.0;
  double t_near = 2.0;
  double t_far = 7.0;

  int signal_components = 4;
  double signal_range = 1.0;    ///< signal beta entries in [-range, range]
  double nuisance_range = 0.5;  ///< remaining entries
  int validation_stride = 8;

  double mesh_margin = 0.1;
  std::uint64_t seed = 7;

  /// Default gains: g = (0.06, -0.04, 0, ...), M nonzero on components 0..3.
  static SceneConfig standard();
  void validate() const;

  /// Largest head radius reachable with beta in range.
  double max_radius() const;
  /// Background jitter (in-plane offset) of frame `t_frame`.
  std::array<double, 2> jitter(int t_frame) const;
  Camera frame_camera(int frame) const;
  Camera orbit_camera(double azimuth_deg, double elevation_deg) const;
  std::vector<double> frame_beta(int frame) const;
  bool is_validation(int frame) const { return frame % validation_stride == validation_stride - 1; }

  nlohmann::json to_json() const;
  static SceneConfig from_json(const nlohmann::json &j);
};

/// Head radius in direction `dir` (unit) for expression `beta`.
double head_radius_at(const SceneConfig &cfg, const Vec3 &dir, std::span<const double> beta);
/// Weight of the mouth patch in direction `dir` (unit), in [0, 1].
double mouth_weight(const SceneConfig &cfg, const Vec3 &dir);

RadianceSample analytic_scene_eval(const SceneConfig &cfg, const Vec3 &x, const Vec3 &d, std::span<const double> beta,
                                   int t_frame);

/// Plane color at world point x for frame t_frame.
std::array<double, 3> plane_color(const SceneConfig &cfg, const Vec3 &x, int t_frame);

/// Ground-truth render through the same quadrature with evenly spaced
/// (midpoint) samples.
Image oracle_render(const SceneConfig &cfg, const Camera &camera, std::span<const double> beta, int t_frame,
                    int samples_per_ray = 512);

/// Icosphere whose faces all lie outside the largest head in range by at
/// least `mesh_margin`.
TriangleMesh proxy_head_mesh(const SceneConfig &cfg);

struct OracleFrame {
  int index = 0;
  Camera camera;
  std::vector<double> beta;
  bool validation = false;
  Image image;
  SilhouetteMask mask;
};

struct OracleDataset {
  SceneConfig scene;
  std::vector<OracleFrame> frames;
  TriangleMesh mesh;
  double t_near = 2.0;
  double t_far = 7.0;

  std::vector<int> training_frames() const;
  std::vector<int> validation_frames() const;
};

/// Renders every frame, rasterizes masks from the proxy mesh and, when
/// `out_dir` is non-empty, writes meta.json, images/, masks/ and mesh.obj.
OracleDataset generate_dataset(const SceneConfig &cfg, const std::filesystem::path &out_dir, int threads = 1);

/// Loads a directory written by generate_dataset (images are re-read from PNG).
OracleDataset load_dataset(const std::filesystem::path &dir);

}  // namespace exnerf
