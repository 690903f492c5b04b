// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "exnerf/camera.hpp"
#include "exnerf/diffnet/mlp.hpp"
#include "exnerf/diffnet/parameters.hpp"
#include "exnerf/diffnet/tape.hpp"
#include "exnerf/image.hpp"
#include "exnerf/prior.hpp"
#include "exnerf/sampling.hpp"

namespace exnerf {

/// Architecture and sampling hyperparameters of the deformable,
/// expression-conditioned field.
struct ModelConfig {
  int position_bands = 10;
  int direction_bands = 4;
  int deformation_bands = 6;

  int trunk_width = 256;
  int trunk_depth = 8;
  int trunk_skip = 5;  ///< 0 disables the skip connection
  int color_width = 128;

  int deformation_width = 128;
  int deformation_depth = 6;
  int deformation_skip = 4;

  int deformation_code_dim = 128;
  int appearance_code_dim = 8;
  int beta_dim = kBetaDim;

  int coarse_samples = 64;
  int fine_samples = 64;

  /// Initial bias of the raw density output; softplus(-3) ~= 0.05.
  double density_bias = -3.0;
  double background = 0.0;

  /// Full-size configuration (NeRF-style 8x256 trunk, 6x128 deformation net).
  static ModelConfig reference();
  /// Reduced configuration for single-machine CPU training.
  static ModelConfig desk();

  void validate() const;
  int trunk_input_dim() const { return 3 + 6 * position_bands + beta_dim; }
  int color_extra_dim() const { return 3 + 6 * direction_bands + appearance_code_dim; }
  int deformation_input_dim() const { return 3 + 6 * deformation_bands + deformation_code_dim; }
};

enum class NetKind { coarse, fine };

/// Which block of the model a parameter belongs to.
enum class ParameterGroup { coarse_field, fine_field, deformation, deformation_code, appearance_code };

const char *to_string(ParameterGroup g);

/// All trainable state: coarse/fine canonical fields, the shared
/// deformation network and the per-frame code tables.
template <typename T>
class FieldModel {
 public:
  FieldModel(const ModelConfig &config, int frames);
  FieldModel(const FieldModel &) = delete;
  FieldModel &operator=(const FieldModel &) = delete;

  /// Uniform fan-in weights; zero codes; zero deformation output layer (so
  /// the deformation is the identity); density head zero with bias
  /// config.density_bias.
  void initialize(std::uint64_t seed);

  /// Copies parameter values (with conversion) from a model of identical layout.
  template <typename U>
  void copy_values_from(const FieldModel<U> &other) {
    auto it = other.parameters().begin();
    for (auto &p : params_) {
      for (std::size_t i = 0; i < p.size(); ++i) p.values[i] = static_cast<T>(it->values[i]);
      ++it;
    }
  }

  const ModelConfig &config() const { return config_; }
  int frames() const { return latents_.frames(); }
  ParameterSet<T> &parameters() { return params_; }
  const ParameterSet<T> &parameters() const { return params_; }

  const Mlp<T> &trunk(NetKind k) const { return k == NetKind::coarse ? coarse_trunk_ : fine_trunk_; }
  const Mlp<T> &color_head(NetKind k) const { return k == NetKind::coarse ? coarse_color_ : fine_color_; }
  const Mlp<T> &deformation_net() const { return deformation_; }
  const LatentTable<T> &latents() const { return latents_; }

  ParameterGroup group_of(const ParameterTensor<T> &p) const;

 private:
  ModelConfig config_;
  ParameterSet<T> params_;
  Mlp<T> coarse_trunk_, coarse_color_, fine_trunk_, fine_color_, deformation_;
  LatentTable<T> latents_;
};

/// Per-ray conditioning for a batch of rays.
template <typename T>
struct RayPack {
  Mat<T> origins;     ///< rays x 3
  Mat<T> directions;  ///< rays x 3, unit length
  Vec<T> t_near;
  Vec<T> t_far;
  Mat<T> beta;  ///< rays x beta_dim, already gated by the silhouette prior
  ParameterTensor<T> *deformation_table = nullptr;
  std::vector<int> deformation_rows;
  ParameterTensor<T> *appearance_table = nullptr;
  std::vector<int> appearance_rows;

  Eigen::Index rays() const { return origins.rows(); }
  void validate(const ModelConfig &cfg) const;
};

/// Tape handles for the per-ray inputs shared by every sample of a ray.
struct RayVars {
  Var deformation_code;
  Var appearance_code;
  Var beta;
  Var direction_encoding;
};

template <typename T>
RayVars bind_rays(const FieldModel<T> &model, Tape<T> &tape, RayPack<T> &pack);

/// x' = x + net(gamma_ctf(x), omega). `positions` holds `group` consecutive
/// rows per row of `deformation_code`. Returns (x', offset).
template <typename T>
std::pair<Var, Var> deform(const FieldModel<T> &model, Tape<T> &tape, Var positions, Var deformation_code,
                           int group, double ctf_alpha);

struct RadianceVars {
  Var sigma;  ///< N x 1, softplus
  Var color;  ///< N x 3, sigmoid
};

/// Canonical field at deformed points: the trunk sees (gamma_10(x'), beta),
/// the color head sees (trunk feature, gamma_4(d), phi).
template <typename T>
RadianceVars field_eval(const FieldModel<T> &model, NetKind net, Tape<T> &tape, Var deformed,
                        const RayVars &rays, int group);

template <typename T>
struct PassResult {
  Var color;  ///< rays x 3
  Var offsets;
  Mat<T> weights;
  Vec<T> depth;
  Vec<T> opacity;
};

/// Deform, evaluate and composite the samples `t` (rays x samples, ascending).
template <typename T>
PassResult<T> render_pass(const FieldModel<T> &model, NetKind net, Tape<T> &tape, const RayPack<T> &pack,
                          const RayVars &vars, const Mat<T> &t, double ctf_alpha);

/// Stream identifiers for per-ray sample jitter.
struct SampleJitter {
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  std::vector<std::uint64_t> ray_ids;
};

template <typename T>
struct HierarchicalResult {
  PassResult<T> coarse;
  PassResult<T> fine;
  Mat<T> coarse_t;
  Mat<T> fine_t;
};

/// Coarse pass on stratified depths (midpoints without jitter), inverse-CDF
/// fine depths from the coarse weights, fine pass on the sorted union.
template <typename T>
HierarchicalResult<T> render_hierarchical(const FieldModel<T> &model, Tape<T> &tape, RayPack<T> &pack,
                                          double ctf_alpha, const SampleJitter *jitter);

/// Fine depths for the given coarse depths and weights (sorted union).
Mat<double> hierarchical_fine_depths(const Mat<double> &coarse_t, const Mat<double> &coarse_weights,
                                     std::span<const double> t_near, std::span<const double> t_far, int n_fine,
                                     const SampleJitter *jitter);

struct RadianceSample {
  std::array<double, 3> color{0, 0, 0};
  double sigma = 0;
};

struct RenderOutput {
  std::array<double, 3> color{0, 0, 0};
  double depth = 0;
  std::vector<double> weights;
  double opacity = 0;
};

/// Conditioning of one ray: code rows, raw beta and the prior indicator.
template <typename T>
struct FieldInputs {
  ParameterTensor<T> *deformation_table = nullptr;
  int deformation_row = 0;
  ParameterTensor<T> *appearance_table = nullptr;
  int appearance_row = 0;
  std::vector<double> beta;  ///< before gating
  bool indicator = true;
  double ctf_alpha = 0;

  static FieldInputs for_frame(FieldModel<T> &model, int frame, std::vector<double> beta, bool indicator,
                               double ctf_alpha);
};

/// Value-level quadrature over one ray (no tape).
RenderOutput composite_ray(std::span<const double> t, std::span<const double> sigma,
                           std::span<const std::array<double, 3>> color, double t_far, double background = 0.0);

/// Single-point field query with its own no-grad tape.
template <typename T>
RadianceSample field_eval_point(FieldModel<T> &model, NetKind net, const Vec3 &deformed, const Vec3 &direction,
                                const FieldInputs<T> &inputs);

/// Renders one ray on the given samples, recording onto `tape`.
template <typename T>
RenderOutput render_ray(FieldModel<T> &model, NetKind net, Tape<T> &tape, const Ray &ray,
                        const SampleSet &samples, const FieldInputs<T> &inputs);

struct RenderedImage {
  Image color;
  ScalarImage depth;
  ScalarImage opacity;
};

struct ImageRenderOptions {
  double t_near = 2.0;
  double t_far = 7.0;
  int chunk_rays = 1024;
  int threads = 1;
};

/// Full-frame render: coarse pass, importance sampling, fine pass; the fine
/// color is the pixel value. With `mask` null the prior is disabled and beta
/// reaches every ray.
template <typename T>
RenderedImage render_image(FieldModel<T> &model, const Camera &camera, const FieldInputs<T> &inputs,
                           const SilhouetteMask *mask, const ImageRenderOptions &options);

extern template class FieldModel<float>;
extern template class FieldModel<double>;

}  // namespace exnerf
