// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

// exnerf command-line driver: dataset synthesis, training, rendering and
// evaluation.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "exnerf/checkpoint.hpp"
#include "exnerf/error.hpp"
#include "exnerf/eval.hpp"
#include "exnerf/io.hpp"
#include "exnerf/runtime.hpp"
#include "exnerf/synth.hpp"
#include "exnerf/training.hpp"

namespace fs = std::filesystem;
using namespace exnerf;

namespace {

enum ExitCode { kOk = 0, kInvalid = 2, kDivergence = 3, kIo = 4 };

struct Globals {
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  int threads = 1;
};

void emit(const nlohmann::json &report, const std::string &out) {
  if (out.empty())
    std::cout << report.dump(2) << "\n";
  else
    write_text_atomic(out, report.dump(2) + "\n");
}

void ensure_dir(const fs::path &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

ImageRenderOptions render_options(const OracleDataset &ds, const Globals &g) {
  ImageRenderOptions o;
  o.t_near = ds.t_near;
  o.t_far = ds.t_far;
  o.threads = g.threads;
  return o;
}

const OracleFrame &frame_at(const OracleDataset &ds, int i) {
  if (i < 0 || i >= static_cast<int>(ds.frames.size()))
    throw InvalidArgument("frame " + std::to_string(i) + " out of range [0, " + std::to_string(ds.frames.size()) + ")");
  return ds.frames[i];
}

// --- synth ---------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::string config;
  int frames = 0;
  int size = 0;
};

int run_synth(const SynthArgs &a, const Globals &g) {
  SceneConfig cfg = a.config.empty() ? SceneConfig::standard() : SceneConfig::from_json(read_json(a.config));
  if (a.frames > 0) cfg.frames = a.frames;
  if (a.size > 0) {
    cfg.focal *= static_cast<double>(a.size) / cfg.width;
    cfg.width = cfg.height = a.size;
  }
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  ensure_dir(a.out);
  const OracleDataset ds = generate_dataset(cfg, a.out, g.threads);
  emit({{"out", a.out},
        {"frames", ds.frames.size()},
        {"training_frames", ds.training_frames()},
        {"validation_frames", ds.validation_frames()}},
       "");
  return kOk;
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config;
  std::string resume;
  std::int64_t iterations = 0;
  bool no_prior = false;
  std::int64_t checkpoint_every = 1000;
  std::int64_t log_every = 100;
};

int run_train(const TrainArgs &a, const Globals &g) {
  const OracleDataset ds = load_dataset(a.data);
  const TrainingRays rays = prepare_training_rays(ds);
  ensure_dir(a.out);
  TrainState state = [&] {
    if (!a.resume.empty()) return load_checkpoint(a.resume);
    TrainConfig cfg = a.config.empty() ? TrainConfig{} : TrainConfig::from_json(read_json(a.config));
    if (a.iterations > 0) cfg.total_iterations = a.iterations;
    if (a.no_prior) cfg.use_prior = false;
    if (g.seed) cfg.seed = *g.seed;
    cfg.validate();
    return make_train_state(cfg, static_cast<int>(ds.frames.size()));
  }();
  if (!a.resume.empty() && a.iterations > 0) state.config.total_iterations = a.iterations;
  state.config.threads = g.threads;
  write_text_atomic(fs::path(a.out) / "train_config.json", state.config.to_json().dump(2) + "\n");

  TrainLoopOptions opts;
  opts.metrics_path = fs::path(a.out) / "metrics.jsonl";
  opts.log_every = a.log_every;
  opts.checkpoint_path = fs::path(a.out) / "model.ckpt";
  opts.checkpoint_every = a.checkpoint_every;
  opts.on_step = [&](const StepStats &s) {
    if (a.log_every > 0 && (s.iteration + 1) % a.log_every == 0)
      std::fprintf(stderr, "iter %lld  photometric %.6f  frr %.6f  lr %.2e\n", static_cast<long long>(s.iteration + 1),
                   s.photometric, s.frr, s.lr);
  };
  train(state, rays, opts);
  save_checkpoint(state, opts.checkpoint_path);
  emit({{"checkpoint", opts.checkpoint_path.string()},
        {"iterations", state.iteration},
        {"running_photometric", state.running_photometric}},
       "");
  return kOk;
}

// --- render --------------------------------------------------------------

struct RenderArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  int frame = 0;
  std::optional<int> beta_frame;
};

int run_render(const RenderArgs &a, const Globals &g) {
  TrainState state = load_checkpoint(a.checkpoint);
  const OracleDataset ds = load_dataset(a.data);
  const OracleFrame &f = frame_at(ds, a.frame);
  const auto &beta = a.beta_frame ? frame_at(ds, *a.beta_frame).beta : f.beta;
  const int code_row = f.validation ? 0 : a.frame;
  auto &model = *state.model;
  auto inputs = FieldInputs<float>::for_frame(model, code_row, beta, true, full_ctf_alpha(model.config()));
  auto mask = prior_mask(ds.mesh, f.camera, state.config.use_prior);
  const RenderedImage img = render_image(model, f.camera, inputs, state.config.use_prior ? mask.get() : nullptr,
                                         render_options(ds, g));
  ensure_dir(a.out);
  char name[64];
  std::snprintf(name, sizeof name, "render_%04d.png", a.frame);
  write_png_rgb(fs::path(a.out) / name, img.color);
  std::snprintf(name, sizeof name, "depth_%04d.png", a.frame);
  write_depth_png(fs::path(a.out) / name, img.depth, ds.t_near, ds.t_far);
  const ImageError err = mse_psnr(img.color, f.image);
  emit({{"frame", a.frame}, {"code_row", code_row}, {"mse", err.mse}, {"psnr", psnr_json(err.psnr)}}, "");
  return kOk;
}

// --- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::vector<int> frames;
  std::int64_t steps = 2000;
  std::int64_t eval_every = 100;
  int rays = 128;
  double lr = 1e-2;
};

int run_eval(const EvalArgs &a, const Globals &g) {
  TrainState state = load_checkpoint(a.checkpoint);
  const OracleDataset ds = load_dataset(a.data);
  ValidateOptions o;
  o.steps = a.steps;
  o.eval_every = a.eval_every;
  o.rays_per_step = a.rays;
  o.lr = a.lr;
  o.seed = g.seed.value_or(0);
  o.use_prior = state.config.use_prior;
  o.render = render_options(ds, g);
  const auto frames = a.frames.empty() ? ds.validation_frames() : a.frames;
  const MetricReport report = validate_frames(*state.model, ds, frames, o);
  emit(report.to_json(), a.out);
  return kOk;
}

// --- reanimate -----------------------------------------------------------

struct ReanimateArgs {
  std::string checkpoint;
  std::string data;
  std::string mesh;
  std::string drive;
  std::string out;
};

int run_reanimate(const ReanimateArgs &a, const Globals &g) {
  TrainState state = load_checkpoint(a.checkpoint);
  const auto drive = read_drive_sequence(a.drive);
  ImageRenderOptions opts;
  opts.threads = g.threads;
  TriangleMesh mesh;
  std::optional<BetaRange> range;
  if (!a.data.empty()) {
    const OracleDataset ds = load_dataset(a.data);
    mesh = ds.mesh;
    range = beta_range(ds, ds.training_frames());
    opts = render_options(ds, g);
  }
  if (!a.mesh.empty()) mesh = read_obj(a.mesh);
  if (state.config.use_prior && mesh.triangles.empty())
    throw InvalidArgument("reanimate: the prior needs a mesh (--data or --mesh)");
  ensure_dir(a.out);
  const auto report = reanimate(*state.model, mesh, drive, a.out, state.config.use_prior, opts, range);
  for (const auto &w : report.at("warnings")) std::fprintf(stderr, "warning: %s\n", w.get<std::string>().c_str());
  emit(report, "");
  return kOk;
}

// --- ablate-background ---------------------------------------------------

struct AblateArgs {
  std::string with_prior;
  std::string without_prior;
  std::string data;
  std::string out;
  int frame = 0;
  int beta_a = -1;
  int beta_b = -1;
};

int run_ablate(const AblateArgs &a, const Globals &g) {
  TrainState on = load_checkpoint(a.with_prior);
  TrainState off = load_checkpoint(a.without_prior);
  if (!on.config.use_prior) std::fprintf(stderr, "warning: %s was trained without the prior\n", a.with_prior.c_str());
  if (off.config.use_prior) std::fprintf(stderr, "warning: %s was trained with the prior\n", a.without_prior.c_str());
  const OracleDataset ds = load_dataset(a.data);
  const Camera &camera = frame_at(ds, a.frame).camera;
  auto [fa, fb] = most_distinct_beta_pair(ds, ds.training_frames());
  if (a.beta_a >= 0) fa = a.beta_a;
  if (a.beta_b >= 0) fb = a.beta_b;
  ensure_dir(a.out);
  const AblationResult r = ablate_background(*on.model, *off.model, ds.mesh, camera, frame_at(ds, fa).beta,
                                             frame_at(ds, fb).beta, a.out, render_options(ds, g));
  emit(r.to_json(), "");
  return kOk;
}

}  // namespace

int main(int argc, char **argv) {
  configure_allocator();
  CLI::App app{"exnerf: expression-conditioned deformable radiance fields"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  auto *seed_opt = app.add_option("--seed", seed, "Seed override for synthesis, training and evaluation");
  app.add_flag("--deterministic", g.deterministic, "Single-threaded, bit-reproducible execution");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  SynthArgs sa;
  auto *synth = app.add_subcommand("synth", "Generate the synthetic oracle dataset");
  synth->add_option("--out,-o", sa.out, "Output directory")->required();
  synth->add_option("--config", sa.config, "Scene configuration JSON")->check(CLI::ExistingFile);
  synth->add_option("--frames", sa.frames, "Number of frames");
  synth->add_option("--size", sa.size, "Square image size in pixels");

  TrainArgs ta;
  auto *trainc = app.add_subcommand("train", "Train a model on a dataset");
  trainc->add_option("--data,-d", ta.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  trainc->add_option("--out,-o", ta.out, "Output directory")->required();
  trainc->add_option("--config", ta.config, "Training configuration JSON")->check(CLI::ExistingFile);
  trainc->add_option("--resume", ta.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  trainc->add_option("--iterations", ta.iterations, "Total iterations");
  trainc->add_flag("--no-prior", ta.no_prior, "Disable the silhouette prior");
  trainc->add_option("--checkpoint-every", ta.checkpoint_every, "Checkpoint interval (0 disables)");
  trainc->add_option("--log-every", ta.log_every, "Metrics interval");

  RenderArgs ra;
  int beta_frame = -1;
  auto *render = app.add_subcommand("render", "Render a dataset camera");
  render->add_option("--checkpoint,-c", ra.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  render->add_option("--data,-d", ra.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  render->add_option("--out,-o", ra.out, "Output directory")->required();
  render->add_option("--frame", ra.frame, "Frame whose camera (and codes, for training frames) to use");
  render->add_option("--beta-frame", beta_frame, "Take beta from this frame instead");

  EvalArgs ea;
  auto *evalc = app.add_subcommand("eval", "Held-out frame evaluation (deformation code fit)");
  evalc->add_option("--checkpoint,-c", ea.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  evalc->add_option("--data,-d", ea.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  evalc->add_option("--out,-o", ea.out, "Report path (stdout when omitted)");
  evalc->add_option("--frames", ea.frames, "Validation frames (all when omitted)");
  evalc->add_option("--steps", ea.steps, "Optimization steps per frame");
  evalc->add_option("--eval-every", ea.eval_every, "Full-frame evaluation interval");
  evalc->add_option("--rays", ea.rays, "Rays per step");
  evalc->add_option("--lr", ea.lr, "Learning rate of the deformation code");

  ReanimateArgs na;
  auto *reanim = app.add_subcommand("reanimate", "Render a drive sequence with frame-0 codes");
  reanim->add_option("--checkpoint,-c", na.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  reanim->add_option("--drive", na.drive, "Drive sequence JSON")->required()->check(CLI::ExistingFile);
  reanim->add_option("--data,-d", na.data, "Dataset directory (mesh and beta range)")->check(CLI::ExistingDirectory);
  reanim->add_option("--mesh", na.mesh, "Proxy mesh OBJ")->check(CLI::ExistingFile);
  reanim->add_option("--out,-o", na.out, "Output directory")->required();

  AblateArgs aa;
  auto *ablate = app.add_subcommand("ablate-background", "Compare background leakage with and without the prior");
  ablate->add_option("--with-prior", aa.with_prior, "Checkpoint trained with the prior")->required()->check(CLI::ExistingFile);
  ablate->add_option("--without-prior", aa.without_prior, "Checkpoint trained without the prior")
      ->required()
      ->check(CLI::ExistingFile);
  ablate->add_option("--data,-d", aa.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ablate->add_option("--out,-o", aa.out, "Output directory")->required();
  ablate->add_option("--frame", aa.frame, "Camera frame");
  ablate->add_option("--beta-a", aa.beta_a, "Frame providing the first beta (default: most distinct training pair)");
  ablate->add_option("--beta-b", aa.beta_b, "Frame providing the second beta");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kInvalid;
  }
  if (*seed_opt) g.seed = seed;
  if (g.deterministic) g.threads = 1;
  if (beta_frame >= 0) ra.beta_frame = beta_frame;

  try {
    if (*synth) return run_synth(sa, g);
    if (*trainc) return run_train(ta, g);
    if (*render) return run_render(ra, g);
    if (*evalc) return run_eval(ea, g);
    if (*reanim) return run_reanimate(na, g);
    if (*ablate) return run_ablate(aa, g);
  } catch (const InvalidArgument &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInvalid;
  } catch (const TrainingDivergence &e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return kDivergence;
  } catch (const UnsupportedFormat &e) {
    std::fprintf(stderr, "unsupported format: %s\n", e.what());
    return kIo;
  } catch (const IoError &e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  } catch (const nlohmann::json::exception &e) {
    std::fprintf(stderr, "invalid configuration: %s\n", e.what());
    return kInvalid;
  } catch (const StateError &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInvalid;
  }
  return kInvalid;
}
