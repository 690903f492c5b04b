// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

// Independent reference implementations shared by the unit tests and the
// acceptance runner.

#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "exnerf/camera.hpp"
#include "exnerf/diffnet/mlp.hpp"
#include "exnerf/field.hpp"
#include "exnerf/prior.hpp"
#include "exnerf/rng.hpp"
#include "exnerf/synth.hpp"
#include "exnerf/training.hpp"

namespace exnerf::oracle {

/// Brute-force silhouette: every pixel center is tested against the outward
/// half-planes of every projected triangle. A center exactly on an edge
/// belongs to the triangle when that edge's outward normal points left, or
/// straight up for horizontal edges. Triangles must lie in front of the camera.
inline SilhouetteMask half_space_mask(const TriangleMesh &mesh, const Camera &camera) {
  SilhouetteMask mask(camera.width, camera.height);
  std::vector<std::array<double, 2>> screen(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    double sx = 0, sy = 0;
    project_to_screen(camera, mesh.vertices[i], sx, sy);
    screen[i] = {sx, sy};
  }
  for (int r = 0; r < camera.height; ++r)
    for (int c = 0; c < camera.width; ++c) {
      const double px = c + 0.5, py = r + 0.5;
      for (const auto &t : mesh.triangles) {
        std::array<std::array<double, 2>, 3> v{screen[t[0]], screen[t[1]], screen[t[2]]};
        // signed area with y down; make the winding clockwise on screen
        const double area = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[1][1] - v[0][1]) * (v[2][0] - v[0][0]);
        if (area == 0) continue;
        if (area < 0) std::swap(v[1], v[2]);
        bool inside = true;
        for (int e = 0; e < 3 && inside; ++e) {
          const auto &a = v[e];
          const auto &b = v[(e + 1) % 3];
          const double nx = b[1] - a[1];  // outward normal for this winding
          const double ny = -(b[0] - a[0]);
          const double s = nx * (px - a[0]) + ny * (py - a[1]);
          if (s > 0) inside = false;
          if (s == 0 && !(nx < 0 || (nx == 0 && ny < 0))) inside = false;
        }
        if (inside) {
          mask.set(r, c, true);
          break;
        }
      }
    }
  return mask;
}

/// A few random triangles inside the view frustum of `camera`, all at
/// camera-space depth between 1.5 and 6.
inline TriangleMesh random_visible_mesh(const Camera &camera, CounterRng &rng, int triangles) {
  TriangleMesh mesh;
  const Mat3 rot = camera.rotation();
  for (int k = 0; k < triangles; ++k) {
    const double depth = rng.uniform(1.5, 6.0);
    const Vec3 center((rng.uniform(0, camera.width) - camera.cx) / camera.fx * depth,
                      -(rng.uniform(0, camera.height) - camera.cy) / camera.fy * depth, -depth);
    const double size = rng.uniform(0.02, 0.6) * depth;
    for (int v = 0; v < 3; ++v) {
      Vec3 p = center + size * Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.2, 0.2));
      p.z() = std::min(p.z(), -1.0);
      mesh.vertices.push_back(rot * p + camera.position());
    }
    mesh.triangles.push_back({3 * k, 3 * k + 1, 3 * k + 2});
  }
  mesh.validate();
  return mesh;
}

/// Loop-based evaluation of an Mlp on one input row.
inline std::vector<double> naive_mlp(const Mlp<double> &net, const std::vector<double> &in) {
  const auto &spec = net.spec();
  std::vector<double> h = in;
  for (int l = 0; l <= spec.depth; ++l) {
    std::vector<double> x = h;
    if (spec.skip_layer && l == *spec.skip_layer) x.insert(x.end(), in.begin(), in.end());
    const auto &w = net.weight(l);
    const auto &b = net.bias(l);
    const int out = w.cols();
    std::vector<double> y(out);
    for (int o = 0; o < out; ++o) {
      double s = b.values[o];
      for (int i = 0; i < w.rows(); ++i) s += x[i] * w.values[static_cast<std::size_t>(i) * out + o];
      y[o] = l < spec.depth ? std::max(0.0, s) : s;
    }
    h = y;
  }
  if (spec.final_activation == Activation::sigmoid)
    for (double &v : h) v = 1.0 / (1.0 + std::exp(-v));
  if (spec.final_activation == Activation::softplus)
    for (double &v : h) v = std::log1p(std::exp(v));
  return h;
}

/// Small double-precision model for gradient checks.
inline ModelConfig gradcheck_config() {
  ModelConfig c;
  c.trunk_width = 8;
  c.trunk_depth = 3;
  c.trunk_skip = 2;
  c.color_width = 8;
  c.deformation_width = 8;
  c.deformation_depth = 2;
  c.deformation_skip = 0;
  c.coarse_samples = 8;
  c.fine_samples = 8;
  c.density_bias = -0.5;
  return c;
}

struct GradCheckSample {
  std::string parameter;
  ParameterGroup group;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double relative_error = 0;
};

/// Pixel loss of a few rays through deformation, conditioning and the
/// two-pass quadrature. Depths of both passes are fixed up front so the
/// loss is a smooth function of the parameters.
class PixelLossProbe {
 public:
  PixelLossProbe(FieldModel<double> &model, std::uint64_t seed, int rays, double ctf_alpha)
      : model_(model), alpha_(ctf_alpha) {
    const auto &c = model.config();
    CounterRng rng(seed, 0x6C055);
    const int frames = model.frames();
    pack_.origins.resize(rays, 3);
    pack_.directions.resize(rays, 3);
    pack_.t_near = Vec<double>::Constant(rays, 2.0);
    pack_.t_far = Vec<double>::Constant(rays, 5.0);
    pack_.beta.resize(rays, c.beta_dim);
    pack_.deformation_table = model.latents().deformation;
    pack_.appearance_table = model.latents().appearance;
    target_.resize(rays, 3);
    for (int r = 0; r < rays; ++r) {
      const Vec3 o(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 3.5);
      const Vec3 d = (Vec3(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0) - o).normalized();
      pack_.origins.row(r) = o.transpose();
      pack_.directions.row(r) = d.transpose();
      const bool inside = r % 3 != 2;
      for (int k = 0; k < c.beta_dim; ++k) pack_.beta(r, k) = inside ? rng.uniform(-1, 1) : 0.0;
      pack_.deformation_rows.push_back(static_cast<int>(rng.below(frames)));
      pack_.appearance_rows.push_back(static_cast<int>(rng.below(frames)));
      for (int k = 0; k < 3; ++k) target_(r, k) = rng.uniform();
    }
    Tape<double> tape(false);
    SampleJitter jitter{seed, 1, {}};
    for (int r = 0; r < rays; ++r) jitter.ray_ids.push_back(r);
    auto res = render_hierarchical(model_, tape, pack_, alpha_, &jitter);
    coarse_t_ = res.coarse_t;
    fine_t_ = res.fine_t;
  }

  /// Loss value; with `backward` set, also adds its gradient into the model.
  double evaluate(bool backward) {
    Tape<double> tape(backward);
    RayVars vars = bind_rays(model_, tape, pack_);
    auto coarse = render_pass(model_, NetKind::coarse, tape, pack_, vars, coarse_t_, alpha_);
    auto fine = render_pass(model_, NetKind::fine, tape, pack_, vars, fine_t_, alpha_);
    Var loss = tape.add_scalars(tape.mse(coarse.color, target_), tape.mse(fine.color, target_));
    const double v = tape.value(loss)(0, 0);
    if (backward) tape.backward(loss);
    return v;
  }

 private:
  FieldModel<double> &model_;
  double alpha_;
  RayPack<double> pack_;
  Mat<double> target_;
  Mat<double> coarse_t_, fine_t_;
};

/// Randomizes every parameter (including the zero-initialized deformation
/// output layer and codes) so that all groups receive gradient.
inline void randomize_model(FieldModel<double> &model, std::uint64_t seed) {
  model.initialize(seed);
  CounterRng rng(seed, 0xA11);
  for (auto &p : model.parameters()) {
    const auto g = model.group_of(p);
    const bool code = g == ParameterGroup::deformation_code || g == ParameterGroup::appearance_code;
    const bool deform_out = p.name.rfind("deform.l", 0) == 0 && model.deformation_net().layers() - 1 ==
                                                                     std::stoi(p.name.substr(8, p.name.find('.', 8) - 8));
    if (code)
      for (auto &v : p.values) v = rng.uniform(-0.5, 0.5);
    else if (deform_out)
      for (auto &v : p.values) v = rng.uniform(-0.05, 0.05);
    else if (p.shape.size() == 1)
      for (auto &v : p.values) v += rng.uniform(-0.1, 0.1);
  }
}

/// Central-difference check of `per_group` random parameters in each of the
/// five groups. Parameters whose analytic gradient is below `floor` in
/// magnitude are skipped when drawing (their relative error is dominated by
/// difference noise).
inline std::vector<GradCheckSample> gradient_check(std::uint64_t seed, int per_group, double h = 1e-6,
                                                   double floor = 1e-6) {
  FieldModel<double> model(gradcheck_config(), 3);
  randomize_model(model, seed);
  PixelLossProbe probe(model, seed, 6, 3.3);
  model.parameters().zero_grad();
  probe.evaluate(true);

  std::vector<std::pair<ParameterTensor<double> *, std::size_t>> pool[5];
  for (auto &p : model.parameters())
    for (std::size_t k = 0; k < p.size(); ++k)
      if (std::abs(p.gradient[k]) > floor) pool[static_cast<int>(model.group_of(p))].push_back({&p, k});

  std::vector<GradCheckSample> out;
  CounterRng rng(seed, 0x6D);
  for (int g = 0; g < 5; ++g) {
    auto &candidates = pool[g];
    for (int i = 0; i < per_group && !candidates.empty(); ++i) {
      const std::size_t pick = rng.below(candidates.size());
      auto [p, k] = candidates[pick];
      candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(pick));
      const double v = p->values[k];
      p->values[k] = v + h;
      const double lp = probe.evaluate(false);
      p->values[k] = v - h;
      const double lm = probe.evaluate(false);
      p->values[k] = v;
      GradCheckSample s;
      s.parameter = p->name;
      s.group = static_cast<ParameterGroup>(g);
      s.index = k;
      s.analytic = p->gradient[k];
      s.numeric = (lp - lm) / (2 * h);
      s.relative_error = std::abs(s.analytic - s.numeric) / std::max(std::abs(s.analytic), std::abs(s.numeric));
      out.push_back(s);
    }
  }
  return out;
}

/// Eight 16x16 frames of the standard scene; frame 7 is held out.
inline SceneConfig tiny_scene() {
  SceneConfig s = SceneConfig::standard();
  s.frames = 8;
  s.width = 16;
  s.height = 16;
  s.focal = 98.5 / 4;
  return s;
}

inline TrainConfig tiny_train_config() {
  TrainConfig c;
  c.model = gradcheck_config();
  c.model.trunk_width = 32;
  c.model.color_width = 16;
  c.model.deformation_width = 16;
  c.model.deformation_code_dim = 8;
  c.model.density_bias = -3.0;
  c.total_iterations = 200;
  c.rays_per_batch = 32;
  c.frr_samples = 64;
  c.seed = 5;
  return c;
}

}  // namespace exnerf::oracle
