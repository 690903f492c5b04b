// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/field.hpp"

#include <algorithm>
#include <cmath>
#include <new>
#include <string>
#include <thread>

#include "exnerf/composite.hpp"
#include "exnerf/error.hpp"

namespace exnerf {

ModelConfig ModelConfig::reference() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.trunk_width = 64;
  c.trunk_depth = 3;
  c.trunk_skip = 0;
  c.color_width = 32;
  c.deformation_width = 32;
  c.deformation_depth = 2;
  c.deformation_skip = 0;
  c.coarse_samples = 32;
  c.fine_samples = 32;
  return c;
}

void ModelConfig::validate() const {
  if (position_bands < 1 || direction_bands < 1 || deformation_bands < 1)
    throw InvalidArgument("model: encodings need at least one band");
  if (trunk_width < 1 || trunk_depth < 1 || color_width < 1 || deformation_width < 1 || deformation_depth < 1)
    throw InvalidArgument("model: network sizes must be positive");
  if (deformation_code_dim < 1 || appearance_code_dim < 1 || beta_dim < 1)
    throw InvalidArgument("model: code dimensions must be positive");
  if (coarse_samples < 2 || fine_samples < 1) throw InvalidArgument("model: sample counts too small");
  if (trunk_skip != 0 && (trunk_skip < 1 || trunk_skip >= trunk_depth))
    throw InvalidArgument("model: trunk skip must lie strictly inside (0, depth)");
  if (deformation_skip != 0 && (deformation_skip < 1 || deformation_skip >= deformation_depth))
    throw InvalidArgument("model: deformation skip must lie strictly inside (0, depth)");
}

const char *to_string(ParameterGroup g) {
  switch (g) {
    case ParameterGroup::coarse_field: return "coarse_field";
    case ParameterGroup::fine_field: return "fine_field";
    case ParameterGroup::deformation: return "deformation";
    case ParameterGroup::deformation_code: return "deformation_code";
    case ParameterGroup::appearance_code: return "appearance_code";
  }
  return "?";
}

namespace {

std::optional<int> skip_of(int s) { return s == 0 ? std::nullopt : std::optional<int>(s); }

MlpSpec trunk_spec(const ModelConfig &c) {
  return {c.trunk_input_dim(), c.trunk_width, c.trunk_depth, skip_of(c.trunk_skip), 1 + c.trunk_width,
          Activation::none};
}

MlpSpec color_spec(const ModelConfig &c) {
  return {c.trunk_width + c.color_extra_dim(), c.color_width, 1, std::nullopt, 3, Activation::sigmoid};
}

MlpSpec deformation_spec(const ModelConfig &c) {
  return {c.deformation_input_dim(), c.deformation_width, c.deformation_depth, skip_of(c.deformation_skip), 3,
          Activation::none};
}

bool starts_with(const std::string &s, const char *prefix) { return s.rfind(prefix, 0) == 0; }

template <typename T>
std::vector<T> ctf_weights_for(const ModelConfig &c, double alpha) {
  std::vector<T> w(c.deformation_bands);
  for (int l = 0; l < c.deformation_bands; ++l) w[l] = static_cast<T>(ctf_weight(l, alpha, c.deformation_bands));
  return w;
}

}  // namespace

template <typename T>
FieldModel<T>::FieldModel(const ModelConfig &config, int frames) : config_(config) {
  config_.validate();
  coarse_trunk_ = Mlp<T>(params_, "coarse.trunk", trunk_spec(config_));
  coarse_color_ = Mlp<T>(params_, "coarse.color", color_spec(config_));
  fine_trunk_ = Mlp<T>(params_, "fine.trunk", trunk_spec(config_));
  fine_color_ = Mlp<T>(params_, "fine.color", color_spec(config_));
  deformation_ = Mlp<T>(params_, "deform", deformation_spec(config_));
  latents_ = make_latent_table(params_, frames, config_.deformation_code_dim, config_.appearance_code_dim);
}

template <typename T>
void FieldModel<T>::initialize(std::uint64_t seed) {
  CounterRng rng(seed, 0x1417);
  for (Mlp<T> *net : {&coarse_trunk_, &coarse_color_, &fine_trunk_, &fine_color_, &deformation_})
    net->init_uniform(rng);
  deformation_.zero_output_layer();
  for (Mlp<T> *trunk : {&coarse_trunk_, &fine_trunk_}) {
    const int last = trunk->layers() - 1;
    auto w = trunk->weight(last).matrix();
    w.col(0).setZero();
    trunk->bias(last).values[0] = static_cast<T>(config_.density_bias);
  }
  std::fill(latents_.deformation->values.begin(), latents_.deformation->values.end(), T(0));
  std::fill(latents_.appearance->values.begin(), latents_.appearance->values.end(), T(0));
}

template <typename T>
ParameterGroup FieldModel<T>::group_of(const ParameterTensor<T> &p) const {
  if (starts_with(p.name, "coarse.")) return ParameterGroup::coarse_field;
  if (starts_with(p.name, "fine.")) return ParameterGroup::fine_field;
  if (starts_with(p.name, "deform.")) return ParameterGroup::deformation;
  if (p.name == "latent.deformation") return ParameterGroup::deformation_code;
  if (p.name == "latent.appearance") return ParameterGroup::appearance_code;
  throw InvalidArgument("unknown parameter '" + p.name + "'");
}

template <typename T>
void RayPack<T>::validate(const ModelConfig &cfg) const {
  const auto n = rays();
  if (directions.rows() != n || t_near.size() != n || t_far.size() != n || beta.rows() != n ||
      static_cast<Eigen::Index>(deformation_rows.size()) != n ||
      static_cast<Eigen::Index>(appearance_rows.size()) != n)
    throw InvalidArgument("RayPack: inconsistent ray counts");
  if (beta.cols() != cfg.beta_dim) throw InvalidArgument("RayPack: beta has the wrong dimension");
  if (!deformation_table || !appearance_table) throw InvalidArgument("RayPack: missing code tables");
}

template <typename T>
RayVars bind_rays(const FieldModel<T> &model, Tape<T> &tape, RayPack<T> &pack) {
  pack.validate(model.config());
  RayVars v;
  v.deformation_code = tape.gather_rows(*pack.deformation_table, pack.deformation_rows);
  v.appearance_code = tape.gather_rows(*pack.appearance_table, pack.appearance_rows);
  v.beta = tape.constant(pack.beta);
  EncodingSpec dir{model.config().direction_bands};
  Mat<T> enc;
  encode_rows<T>(pack.directions, dir, {}, enc);
  v.direction_encoding = tape.constant(std::move(enc));
  return v;
}

template <typename T>
std::pair<Var, Var> deform(const FieldModel<T> &model, Tape<T> &tape, Var positions, Var deformation_code,
                           int group, double ctf_alpha) {
  const auto &c = model.config();
  Var enc = tape.encode(positions, EncodingSpec{c.deformation_bands}, ctf_weights_for<T>(c, ctf_alpha));
  const LinearInput parts[] = {{enc, 1}, {deformation_code, group}};
  Var offset = model.deformation_net().forward(tape, parts);
  return {tape.add(positions, offset), offset};
}

template <typename T>
RadianceVars field_eval(const FieldModel<T> &model, NetKind net, Tape<T> &tape, Var deformed, const RayVars &rays,
                        int group) {
  const auto &c = model.config();
  Var enc = tape.encode(deformed, EncodingSpec{c.position_bands});
  const LinearInput trunk_in[] = {{enc, 1}, {rays.beta, group}};
  Var out = model.trunk(net).forward(tape, trunk_in);
  RadianceVars r;
  r.sigma = tape.softplus(tape.slice_cols(out, 0, 1));
  Var feature = tape.slice_cols(out, 1, c.trunk_width);
  const LinearInput color_in[] = {{feature, 1}, {rays.direction_encoding, group}, {rays.appearance_code, group}};
  r.color = model.color_head(net).forward(tape, color_in);
  return r;
}

template <typename T>
PassResult<T> render_pass(const FieldModel<T> &model, NetKind net, Tape<T> &tape, const RayPack<T> &pack,
                          const RayVars &vars, const Mat<T> &t, double ctf_alpha) {
  const Eigen::Index rays = pack.rays();
  const Eigen::Index samples = t.cols();
  if (t.rows() != rays) throw InvalidArgument("render_pass: depth matrix does not match ray count");
  Mat<T> pos(rays * samples, 3);
  for (Eigen::Index r = 0; r < rays; ++r) {
    for (Eigen::Index j = 0; j < samples; ++j) {
      if (j > 0 && t(r, j) < t(r, j - 1)) throw InvalidArgument("render_pass: samples are not sorted");
      pos.row(r * samples + j) = pack.origins.row(r) + t(r, j) * pack.directions.row(r);
    }
  }
  Var positions = tape.constant(std::move(pos));
  auto [deformed, offset] = deform(model, tape, positions, vars.deformation_code, static_cast<int>(samples), ctf_alpha);
  RadianceVars field = field_eval(model, net, tape, deformed, vars, static_cast<int>(samples));
  auto comp = tape.composite(field.sigma, field.color, t, pack.t_far, static_cast<T>(model.config().background));
  PassResult<T> res;
  res.color = comp.color;
  res.offsets = offset;
  res.weights = std::move(comp.weights);
  res.depth = std::move(comp.depth);
  res.opacity = std::move(comp.opacity);
  return res;
}

namespace {
constexpr std::uint64_t kFineStream = 0xF17E5A3B1ULL;
}

Mat<double> hierarchical_fine_depths(const Mat<double> &coarse_t, const Mat<double> &coarse_weights,
                                     std::span<const double> t_near, std::span<const double> t_far, int n_fine,
                                     const SampleJitter *jitter) {
  const Eigen::Index rays = coarse_t.rows();
  const Eigen::Index nc = coarse_t.cols();
  Mat<double> out(rays, nc + n_fine);
  for (Eigen::Index r = 0; r < rays; ++r) {
    std::span<const double> ct(coarse_t.row(r).data(), static_cast<std::size_t>(nc));
    const auto edges = hierarchical_bin_edges(ct, t_near[r], t_far[r]);
    std::span<const double> w(coarse_weights.row(r).data(), static_cast<std::size_t>(nc));
    for (double v : w)
      if (!std::isfinite(v)) throw TrainingDivergence("non-finite coarse weights on ray " + std::to_string(r), "sigma");
    std::optional<CounterRng> rng;
    if (jitter) rng.emplace(jitter->seed ^ kFineStream, jitter->iteration, jitter->ray_ids.at(r));
    const auto draw = importance_samples(edges, w, n_fine, rng ? &*rng : nullptr);
    const auto merged = merge_depths(ct, draw.t);
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(r, j) = merged[j];
  }
  return out;
}

template <typename T>
HierarchicalResult<T> render_hierarchical(const FieldModel<T> &model, Tape<T> &tape, RayPack<T> &pack,
                                          double ctf_alpha, const SampleJitter *jitter) {
  const auto &c = model.config();
  const Eigen::Index rays = pack.rays();
  if (jitter && static_cast<Eigen::Index>(jitter->ray_ids.size()) != rays)
    throw InvalidArgument("render_hierarchical: one jitter stream per ray required");
  Mat<double> coarse_t(rays, c.coarse_samples);
  std::vector<double> t_near(rays), t_far(rays);
  for (Eigen::Index r = 0; r < rays; ++r) {
    t_near[r] = static_cast<double>(pack.t_near[r]);
    t_far[r] = static_cast<double>(pack.t_far[r]);
    std::optional<CounterRng> rng;
    if (jitter) rng.emplace(jitter->seed, jitter->iteration, jitter->ray_ids[r]);
    const auto t = stratified_depths(t_near[r], t_far[r], c.coarse_samples, jitter != nullptr, rng ? &*rng : nullptr);
    for (int j = 0; j < c.coarse_samples; ++j) coarse_t(r, j) = t[j];
  }
  RayVars vars = bind_rays(model, tape, pack);
  HierarchicalResult<T> res;
  res.coarse_t = coarse_t.cast<T>();
  res.coarse = render_pass(model, NetKind::coarse, tape, pack, vars, res.coarse_t, ctf_alpha);
  const Mat<double> fine_t =
      hierarchical_fine_depths(coarse_t, res.coarse.weights.template cast<double>(), t_near, t_far, c.fine_samples, jitter);
  res.fine_t = fine_t.cast<T>();
  res.fine = render_pass(model, NetKind::fine, tape, pack, vars, res.fine_t, ctf_alpha);
  return res;
}

template <typename T>
FieldInputs<T> FieldInputs<T>::for_frame(FieldModel<T> &model, int frame, std::vector<double> beta, bool indicator,
                                         double ctf_alpha) {
  if (frame < 0 || frame >= model.frames()) throw InvalidArgument("FieldInputs: frame out of range");
  FieldInputs in;
  in.deformation_table = model.latents().deformation;
  in.deformation_row = frame;
  in.appearance_table = model.latents().appearance;
  in.appearance_row = frame;
  in.beta = std::move(beta);
  in.indicator = indicator;
  in.ctf_alpha = ctf_alpha;
  return in;
}

RenderOutput composite_ray(std::span<const double> t, std::span<const double> sigma,
                           std::span<const std::array<double, 3>> color, double t_far, double background) {
  const std::size_t n = t.size();
  if (sigma.size() != n || color.size() != n) throw InvalidArgument("composite_ray: size mismatch");
  for (std::size_t j = 1; j < n; ++j)
    if (t[j] < t[j - 1]) throw InvalidArgument("composite_ray: samples are not sorted");
  RenderOutput out;
  out.weights.resize(n);
  std::vector<double> trans(n);
  double rgb[3];
  composite_kernel<double>(t.data(), sigma.data(), color.data()->data(), static_cast<int>(n), t_far, background,
                           out.weights.data(), trans.data(), rgb, out.depth, out.opacity);
  out.color = {rgb[0], rgb[1], rgb[2]};
  return out;
}

namespace {

template <typename T>
RayPack<T> single_ray_pack(const FieldModel<T> &model, const Vec3 &origin, const Vec3 &direction, double t_near,
                           double t_far, const FieldInputs<T> &inputs) {
  const auto &c = model.config();
  if (static_cast<int>(inputs.beta.size()) != c.beta_dim)
    throw InvalidArgument("FieldInputs: beta must have " + std::to_string(c.beta_dim) + " entries");
  RayPack<T> pack;
  pack.origins = origin.transpose().cast<T>();
  pack.directions = direction.transpose().cast<T>();
  pack.t_near = Vec<T>::Constant(1, static_cast<T>(t_near));
  pack.t_far = Vec<T>::Constant(1, static_cast<T>(t_far));
  const auto gated = gate_expression(inputs.beta, inputs.indicator);
  pack.beta.resize(1, c.beta_dim);
  for (int k = 0; k < c.beta_dim; ++k) pack.beta(0, k) = static_cast<T>(gated[k]);
  pack.deformation_table = inputs.deformation_table;
  pack.deformation_rows = {inputs.deformation_row};
  pack.appearance_table = inputs.appearance_table;
  pack.appearance_rows = {inputs.appearance_row};
  return pack;
}

}  // namespace

template <typename T>
RadianceSample field_eval_point(FieldModel<T> &model, NetKind net, const Vec3 &deformed, const Vec3 &direction,
                                const FieldInputs<T> &inputs) {
  Tape<T> tape(false);
  RayPack<T> pack = single_ray_pack(model, Vec3::Zero(), direction, 1.0, 2.0, inputs);
  RayVars vars = bind_rays(model, tape, pack);
  Var x = tape.constant(Mat<T>(deformed.transpose().cast<T>()));
  RadianceVars r = field_eval(model, net, tape, x, vars, 1);
  RadianceSample s;
  s.sigma = static_cast<double>(tape.value(r.sigma)(0, 0));
  for (int k = 0; k < 3; ++k) s.color[k] = static_cast<double>(tape.value(r.color)(0, k));
  return s;
}

template <typename T>
RenderOutput render_ray(FieldModel<T> &model, NetKind net, Tape<T> &tape, const Ray &ray, const SampleSet &samples,
                        const FieldInputs<T> &inputs) {
  RayPack<T> pack = single_ray_pack(model, ray.origin, ray.direction, ray.t_near, ray.t_far, inputs);
  RayVars vars = bind_rays(model, tape, pack);
  Mat<T> t(1, static_cast<Eigen::Index>(samples.t.size()));
  for (std::size_t j = 0; j < samples.t.size(); ++j) t(0, static_cast<Eigen::Index>(j)) = static_cast<T>(samples.t[j]);
  PassResult<T> pass = render_pass(model, net, tape, pack, vars, t, inputs.ctf_alpha);
  RenderOutput out;
  for (int k = 0; k < 3; ++k) out.color[k] = static_cast<double>(tape.value(pass.color)(0, k));
  out.depth = static_cast<double>(pass.depth[0]);
  out.opacity = static_cast<double>(pass.opacity[0]);
  out.weights.resize(samples.t.size());
  for (std::size_t j = 0; j < samples.t.size(); ++j) out.weights[j] = static_cast<double>(pass.weights(0, static_cast<Eigen::Index>(j)));
  return out;
}

template <typename T>
RenderedImage render_image(FieldModel<T> &model, const Camera &camera, const FieldInputs<T> &inputs,
                           const SilhouetteMask *mask, const ImageRenderOptions &options) {
  camera.validate();
  const auto &c = model.config();
  if (static_cast<int>(inputs.beta.size()) != c.beta_dim)
    throw InvalidArgument("render_image: beta must have " + std::to_string(c.beta_dim) + " entries");
  if (mask && (mask->width != camera.width || mask->height != camera.height))
    throw InvalidArgument("render_image: mask size does not match the camera");
  const auto pixels = all_pixels(camera);
  const auto rays = generate_rays(camera, pixels, options.t_near, options.t_far);
  const auto beta_in = gate_expression(inputs.beta, true);
  const auto beta_out = gate_expression(inputs.beta, false);

  RenderedImage img{Image(camera.width, camera.height), ScalarImage(camera.width, camera.height),
                    ScalarImage(camera.width, camera.height)};

  auto render_range = [&](std::size_t begin, std::size_t end) {
    const auto n = static_cast<Eigen::Index>(end - begin);
    RayPack<T> pack;
    pack.origins.resize(n, 3);
    pack.directions.resize(n, 3);
    pack.t_near.resize(n);
    pack.t_far.resize(n);
    pack.beta.resize(n, c.beta_dim);
    pack.deformation_table = inputs.deformation_table;
    pack.appearance_table = inputs.appearance_table;
    pack.deformation_rows.assign(n, inputs.deformation_row);
    pack.appearance_rows.assign(n, inputs.appearance_row);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Ray &ray = rays[begin + i];
      pack.origins.row(i) = ray.origin.transpose().cast<T>();
      pack.directions.row(i) = ray.direction.transpose().cast<T>();
      pack.t_near[i] = static_cast<T>(ray.t_near);
      pack.t_far[i] = static_cast<T>(ray.t_far);
      const bool inside = mask ? classify_ray(ray.pixel, *mask) : true;
      const auto &b = inside ? beta_in : beta_out;
      for (int k = 0; k < c.beta_dim; ++k) pack.beta(i, k) = static_cast<T>(b[k]);
    }
    Tape<T> tape(false);
    auto res = render_hierarchical(model, tape, pack, inputs.ctf_alpha, nullptr);
    const Mat<T> &rgb = tape.value(res.fine.color);
    for (Eigen::Index i = 0; i < n; ++i) {
      const PixelCoord p = rays[begin + i].pixel;
      float *dst = img.color.pixel(p.row, p.col);
      for (int k = 0; k < 3; ++k) dst[k] = static_cast<float>(rgb(i, k));
      img.depth.at(p.row, p.col) = static_cast<float>(res.fine.depth[i]);
      img.opacity.at(p.row, p.col) = static_cast<float>(res.fine.opacity[i]);
    }
  };

  auto render_chunked = [&](std::size_t begin, std::size_t end) {
    std::size_t chunk = static_cast<std::size_t>(std::max(1, options.chunk_rays));
    std::size_t pos = begin;
    while (pos < end) {
      const std::size_t stop = std::min(end, pos + chunk);
      try {
        render_range(pos, stop);
        pos = stop;
      } catch (const std::bad_alloc &) {
        if (chunk == 1) throw;
        chunk /= 2;
      }
    }
  };

  const std::size_t total = rays.size();
  const int threads = std::max(1, options.threads);
  if (threads == 1) {
    render_chunked(0, total);
  } else {
    std::vector<std::thread> workers;
    const std::size_t per = (total + threads - 1) / threads;
    for (int w = 0; w < threads; ++w) {
      const std::size_t b = std::min(total, w * per);
      const std::size_t e = std::min(total, b + per);
      if (b < e) workers.emplace_back(render_chunked, b, e);
    }
    for (auto &t : workers) t.join();
  }
  return img;
}

#define EXNERF_INSTANTIATE_FIELD(T)                                                                                  \
  template class FieldModel<T>;                                                                                      \
  template struct RayPack<T>;                                                                                        \
  template struct FieldInputs<T>;                                                                                    \
  template RayVars bind_rays(const FieldModel<T> &, Tape<T> &, RayPack<T> &);                                       \
  template std::pair<Var, Var> deform(const FieldModel<T> &, Tape<T> &, Var, Var, int, double);                     \
  template RadianceVars field_eval(const FieldModel<T> &, NetKind, Tape<T> &, Var, const RayVars &, int);           \
  template PassResult<T> render_pass(const FieldModel<T> &, NetKind, Tape<T> &, const RayPack<T> &, const RayVars &, \
                                     const Mat<T> &, double);                                                        \
  template HierarchicalResult<T> render_hierarchical(const FieldModel<T> &, Tape<T> &, RayPack<T> &, double,        \
                                                     const SampleJitter *);                                          \
  template RadianceSample field_eval_point(FieldModel<T> &, NetKind, const Vec3 &, const Vec3 &,                    \
                                           const FieldInputs<T> &);                                                  \
  template RenderOutput render_ray(FieldModel<T> &, NetKind, Tape<T> &, const Ray &, const SampleSet &,             \
                                   const FieldInputs<T> &);                                                          \
  template RenderedImage render_image(FieldModel<T> &, const Camera &, const FieldInputs<T> &,                      \
                                      const SilhouetteMask *, const ImageRenderOptions &);

EXNERF_INSTANTIATE_FIELD(float)
EXNERF_INSTANTIATE_FIELD(double)

}  // namespace exnerf
