// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "exnerf/diffnet/adam.hpp"
#include "exnerf/error.hpp"
#include "exnerf/io.hpp"
#include "exnerf/rng.hpp"

namespace exnerf {

namespace {

constexpr std::uint64_t kValidationStream = 0x7A11D;

std::string numbered(const char *stem, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu.png", stem, i);
  return buf;
}

Image amplified_diff(const Image &a, const Image &b, float gain) {
  Image d(a.width, a.height);
  for (std::size_t i = 0; i < d.rgb.size(); ++i) d.rgb[i] = std::min(1.0f, gain * std::abs(a.rgb[i] - b.rgb[i]));
  return d;
}

}  // namespace

double psnr_from_mse(double mse) {
  if (mse < 0 || std::isnan(mse)) throw InvalidArgument("psnr: MSE must be non-negative");
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

ImageError mse_psnr(const Image &pred, const Image &target) {
  if (pred.width != target.width || pred.height != target.height || pred.rgb.size() != target.rgb.size())
    throw InvalidArgument("mse_psnr: image sizes differ");
  if (pred.rgb.empty()) throw InvalidArgument("mse_psnr: empty images");
  double sum = 0;
  for (std::size_t i = 0; i < pred.rgb.size(); ++i) {
    const double d = static_cast<double>(pred.rgb[i]) - static_cast<double>(target.rgb[i]);
    sum += d * d;
  }
  ImageError e;
  e.mse = sum / static_cast<double>(pred.rgb.size());
  e.psnr = psnr_from_mse(e.mse);
  return e;
}

nlohmann::json psnr_json(double psnr) {
  if (std::isinf(psnr)) return "inf";
  return psnr;
}

void MetricReport::finalize() {
  if (frames.empty()) return;
  double mse = 0, psnr = 0;
  for (const auto &f : frames) {
    mse += f.mse;
    psnr += f.psnr;
  }
  mean_mse = mse / frames.size();
  mean_psnr = psnr / frames.size();
  aggregate_psnr = psnr_from_mse(mean_mse);
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json fr = nlohmann::json::array();
  for (const auto &f : frames)
    fr.push_back({{"frame", f.frame},
                  {"initial_mse", f.initial_mse},
                  {"initial_psnr", psnr_json(psnr_from_mse(f.initial_mse))},
                  {"mse", f.mse},
                  {"psnr", psnr_json(f.psnr)},
                  {"steps", f.steps},
                  {"best_step", f.best_step},
                  {"max_theta_grad", f.max_theta_grad}});
  return {{"frames", fr},
          {"mean_mse", mean_mse},
          {"mean_psnr", psnr_json(mean_psnr)},
          {"aggregate_psnr", psnr_json(aggregate_psnr)},
          {"steps", steps},
          {"frozen", frozen}};
}

double full_ctf_alpha(const ModelConfig &config) { return static_cast<double>(config.deformation_bands); }

FrameMetric validate_frame(FieldModel<float> &model, const OracleDataset &ds, int frame, const ValidateOptions &o) {
  if (frame < 0 || frame >= static_cast<int>(ds.frames.size()))
    throw InvalidArgument("validate_frame: frame " + std::to_string(frame) + " out of range");
  const OracleFrame &f = ds.frames[frame];
  if (!f.validation) throw InvalidArgument("validate_frame: frame " + std::to_string(frame) + " is a training frame");
  if (o.steps < 0 || o.rays_per_step < 1 || o.eval_every < 1) throw InvalidArgument("validate_frame: bad options");
  const ModelConfig &mc = model.config();
  const double alpha = o.ctf_alpha >= 0 ? o.ctf_alpha : full_ctf_alpha(mc);

  ParameterSet<float> free;
  auto &omega = free.add("validation.deformation", {1, mc.deformation_code_dim});
  const auto *table = model.latents().deformation;
  std::copy(table->values.begin(), table->values.begin() + mc.deformation_code_dim, omega.values.begin());
  AdamState<float> adam(free, AdamConfig{o.lr});

  const SilhouetteMask *mask = o.use_prior ? &f.mask : nullptr;
  const auto pixels = all_pixels(f.camera);
  const auto rays = generate_rays(f.camera, pixels, ds.t_near, ds.t_far);
  ImageRenderOptions render = o.render;
  render.t_near = ds.t_near;
  render.t_far = ds.t_far;

  FieldInputs<float> inputs;
  inputs.deformation_table = &omega;
  inputs.deformation_row = 0;
  inputs.appearance_table = model.latents().appearance;
  inputs.appearance_row = 0;
  inputs.beta = f.beta;
  inputs.indicator = true;
  inputs.ctf_alpha = alpha;

  FrameMetric m;
  m.frame = frame;
  m.steps = o.steps;
  auto evaluate = [&](std::int64_t step) {
    const RenderedImage img = render_image(model, f.camera, inputs, mask, render);
    const double mse = mse_psnr(img.color, f.image).mse;
    if (step == 0) {
      m.initial_mse = mse;
      m.mse = mse;
    } else if (mse < m.mse) {
      m.mse = mse;
      m.best_step = step;
    }
  };

  const auto beta_in = gate_expression(f.beta, true);
  const auto beta_out = gate_expression(f.beta, false);
  for (std::int64_t s = 0; s < o.steps; ++s) {
    if (s % o.eval_every == 0) evaluate(s);
    CounterRng rng(o.seed ^ (static_cast<std::uint64_t>(frame) << 32), kValidationStream, static_cast<std::uint64_t>(s));
    const int n = o.rays_per_step;
    RayPack<float> pack;
    pack.origins.resize(n, 3);
    pack.directions.resize(n, 3);
    pack.t_near = Vec<float>::Constant(n, static_cast<float>(ds.t_near));
    pack.t_far = Vec<float>::Constant(n, static_cast<float>(ds.t_far));
    pack.beta.resize(n, mc.beta_dim);
    pack.deformation_table = &omega;
    pack.deformation_rows.assign(n, 0);
    pack.appearance_table = model.latents().appearance;
    pack.appearance_rows.assign(n, 0);
    Mat<float> target(n, 3);
    SampleJitter jitter{o.seed, static_cast<std::uint64_t>(s), {}};
    for (int i = 0; i < n; ++i) {
      const std::size_t p = static_cast<std::size_t>(rng.below(rays.size()));
      const Ray &ray = rays[p];
      pack.origins.row(i) = ray.origin.transpose().cast<float>();
      pack.directions.row(i) = ray.direction.transpose().cast<float>();
      const bool inside = mask ? classify_ray(ray.pixel, *mask) : true;
      const auto &b = inside ? beta_in : beta_out;
      for (int k = 0; k < mc.beta_dim; ++k) pack.beta(i, k) = static_cast<float>(b[k]);
      const float *px = f.image.pixel(ray.pixel.row, ray.pixel.col);
      target.row(i) << px[0], px[1], px[2];
      jitter.ray_ids.push_back(p);
    }
    Tape<float> tape(true);
    for (auto &p : model.parameters()) tape.freeze(&p);
    auto res = render_hierarchical(model, tape, pack, alpha, &jitter);
    Var loss = tape.add_scalars(tape.mse(res.coarse.color, target), tape.mse(res.fine.color, target));
    tape.backward(loss);
    for (const auto &p : model.parameters())
      for (float g : p.gradient) m.max_theta_grad = std::max(m.max_theta_grad, static_cast<double>(std::abs(g)));
    adam_step(adam, free);
  }
  evaluate(std::max<std::int64_t>(o.steps, 1));
  if (o.steps == 0) m.best_step = 0;
  m.psnr = psnr_from_mse(m.mse);
  return m;
}

MetricReport validate_frames(FieldModel<float> &model, const OracleDataset &ds, const std::vector<int> &frames,
                             const ValidateOptions &options) {
  MetricReport r;
  r.steps = options.steps;
  r.frozen = {"coarse_field", "fine_field", "deformation", "appearance_code", "beta", "deformation_code(training rows)"};
  for (int f : frames) r.frames.push_back(validate_frame(model, ds, f, options));
  r.finalize();
  return r;
}

std::vector<DriveEntry> drive_from_json(const nlohmann::json &j) {
  if (!j.is_array()) throw InvalidArgument("drive sequence must be a JSON array");
  std::vector<DriveEntry> out;
  for (const auto &e : j) {
    DriveEntry d;
    nlohmann::json camera;
    try {
      d.beta = e.at("beta").get<std::vector<double>>();
      camera = e.at("camera");
    } catch (const nlohmann::json::exception &ex) {
      throw InvalidArgument("drive entry " + std::to_string(out.size()) + ": " + ex.what());
    }
    if (static_cast<int>(d.beta.size()) != kBetaDim)
      throw InvalidArgument("drive entry " + std::to_string(out.size()) + ": beta must have 50 entries, got " +
                            std::to_string(d.beta.size()));
    for (double b : d.beta)
      if (!std::isfinite(b)) throw InvalidArgument("drive entry " + std::to_string(out.size()) + ": non-finite beta");
    d.camera = camera_from_json(camera);
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<DriveEntry> read_drive_sequence(const std::filesystem::path &path) { return drive_from_json(read_json(path)); }

nlohmann::json drive_to_json(const std::vector<DriveEntry> &drive) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto &d : drive) j.push_back({{"beta", d.beta}, {"camera", camera_to_json(d.camera)}});
  return j;
}

bool BetaRange::contains(const std::vector<double> &beta) const {
  if (beta.size() != lo.size()) return false;
  for (std::size_t k = 0; k < beta.size(); ++k)
    if (beta[k] < lo[k] || beta[k] > hi[k]) return false;
  return true;
}

BetaRange beta_range(const OracleDataset &ds, const std::vector<int> &frames) {
  BetaRange r;
  r.lo.assign(kBetaDim, std::numeric_limits<double>::infinity());
  r.hi.assign(kBetaDim, -std::numeric_limits<double>::infinity());
  for (int i : frames) {
    const auto &b = ds.frames.at(i).beta;
    for (int k = 0; k < kBetaDim; ++k) {
      r.lo[k] = std::min(r.lo[k], b[k]);
      r.hi[k] = std::max(r.hi[k], b[k]);
    }
  }
  return r;
}

std::pair<int, int> most_distinct_beta_pair(const OracleDataset &ds, const std::vector<int> &frames) {
  if (frames.size() < 2) throw InvalidArgument("most_distinct_beta_pair: need at least two frames");
  std::pair<int, int> best{frames[0], frames[1]};
  double best_d = -1;
  for (std::size_t i = 0; i < frames.size(); ++i)
    for (std::size_t j = i + 1; j < frames.size(); ++j) {
      const auto &a = ds.frames.at(frames[i]).beta;
      const auto &b = ds.frames.at(frames[j]).beta;
      double d = 0;
      for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
      if (d > best_d) {
        best_d = d;
        best = {frames[i], frames[j]};
      }
    }
  return best;
}

ReanimatedFrame reanimate_frame(FieldModel<float> &model, const TriangleMesh &mesh, const DriveEntry &entry,
                                bool use_prior, const ImageRenderOptions &options, const std::optional<BetaRange> &range) {
  if (static_cast<int>(entry.beta.size()) != model.config().beta_dim)
    throw InvalidArgument("reanimate: beta must have " + std::to_string(model.config().beta_dim) + " entries");
  ReanimatedFrame out;
  out.mask = use_prior ? rasterize_silhouette(mesh, entry.camera) : SilhouetteMask(entry.camera.width, entry.camera.height, true);
  auto inputs = FieldInputs<float>::for_frame(model, 0, entry.beta, true, full_ctf_alpha(model.config()));
  out.render = render_image(model, entry.camera, inputs, use_prior ? &out.mask : nullptr, options);
  out.extrapolated = range ? !range->contains(entry.beta) : false;
  return out;
}

nlohmann::json reanimate(FieldModel<float> &model, const TriangleMesh &mesh, const std::vector<DriveEntry> &drive,
                         const std::filesystem::path &out_dir, bool use_prior, const ImageRenderOptions &options,
                         const std::optional<BetaRange> &range) {
  nlohmann::json frames = nlohmann::json::array();
  nlohmann::json warnings = nlohmann::json::array();
  for (std::size_t i = 0; i < drive.size(); ++i) {
    const ReanimatedFrame r = reanimate_frame(model, mesh, drive[i], use_prior, options, range);
    const std::string image = numbered("frame", i);
    const std::string depth = numbered("depth", i);
    write_png_rgb(out_dir / image, r.render.color);
    write_depth_png(out_dir / depth, r.render.depth, options.t_near, options.t_far);
    frames.push_back({{"index", i}, {"image", image}, {"depth", depth}, {"extrapolated", r.extrapolated}});
    if (r.extrapolated)
      warnings.push_back("entry " + std::to_string(i) + ": beta outside the training range (extrapolation)");
  }
  nlohmann::json report = {{"frames", frames}, {"warnings", warnings}, {"prior", use_prior}};
  write_text_atomic(out_dir / "report.json", report.dump(2) + "\n");
  return report;
}

double outside_mean_abs_diff(const Image &a, const Image &b, const SilhouetteMask &mask) {
  if (a.width != b.width || a.height != b.height || a.width != mask.width || a.height != mask.height)
    throw InvalidArgument("outside_mean_abs_diff: resolutions differ");
  double sum = 0;
  std::size_t count = 0;
  for (int r = 0; r < a.height; ++r)
    for (int c = 0; c < a.width; ++c) {
      if (mask.at(r, c)) continue;
      const float *pa = a.pixel(r, c);
      const float *pb = b.pixel(r, c);
      for (int k = 0; k < 3; ++k) sum += std::abs(static_cast<double>(pa[k]) - static_cast<double>(pb[k]));
      ++count;
    }
  return count == 0 ? 0.0 : sum / (3.0 * static_cast<double>(count));
}

nlohmann::json AblationResult::to_json() const {
  return {{"prior_outside_mean_abs_diff", prior_diff},
          {"no_prior_outside_mean_abs_diff", no_prior_diff},
          {"outside_pixels", outside_pixels}};
}

AblationResult ablate_background(FieldModel<float> &with_prior, FieldModel<float> &without_prior,
                                 const TriangleMesh &mesh, const Camera &camera, const std::vector<double> &beta_a,
                                 const std::vector<double> &beta_b, const std::filesystem::path &out_dir,
                                 const ImageRenderOptions &options) {
  if (beta_a.size() != beta_b.size()) throw InvalidArgument("ablate_background: beta sizes differ");
  const SilhouetteMask mask = rasterize_silhouette(mesh, camera);
  auto render = [&](FieldModel<float> &model, const std::vector<double> &beta, const SilhouetteMask *m) {
    auto in = FieldInputs<float>::for_frame(model, 0, beta, true, full_ctf_alpha(model.config()));
    return render_image(model, camera, in, m, options).color;
  };
  const Image pa = render(with_prior, beta_a, &mask);
  const Image pb = render(with_prior, beta_b, &mask);
  const Image na = render(without_prior, beta_a, nullptr);
  const Image nb = render(without_prior, beta_b, nullptr);
  if (pa.width != na.width || pa.height != na.height) throw InvalidArgument("ablate_background: resolutions differ");
  AblationResult r;
  r.prior_diff = outside_mean_abs_diff(pa, pb, mask);
  r.no_prior_diff = outside_mean_abs_diff(na, nb, mask);
  r.outside_pixels = mask.bits.size() - mask.count();
  if (!out_dir.empty()) {
    write_png_rgb(out_dir / "prior_a.png", pa);
    write_png_rgb(out_dir / "prior_b.png", pb);
    write_png_rgb(out_dir / "no_prior_a.png", na);
    write_png_rgb(out_dir / "no_prior_b.png", nb);
    write_png_rgb(out_dir / "diff_prior.png", amplified_diff(pa, pb, 10.0f));
    write_png_rgb(out_dir / "diff_no_prior.png", amplified_diff(na, nb, 10.0f));
    write_mask_png(out_dir / "mask.png", mask);
    write_text_atomic(out_dir / "ablation.json", r.to_json().dump(2) + "\n");
  }
  return r;
}

}  // namespace exnerf
