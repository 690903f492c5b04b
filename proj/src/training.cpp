// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <mutex>
#include <thread>

#include "exnerf/checkpoint.hpp"
#include "exnerf/error.hpp"
#include "exnerf/rng.hpp"
#include "exnerf/runtime.hpp"

namespace exnerf {

namespace {

constexpr std::uint64_t kBatchStream = 0xBA7C4;
constexpr std::uint64_t kFrrStream = 0xF44;

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig &c) {
  return {{"position_bands", c.position_bands},
          {"direction_bands", c.direction_bands},
          {"deformation_bands", c.deformation_bands},
          {"trunk_width", c.trunk_width},
          {"trunk_depth", c.trunk_depth},
          {"trunk_skip", c.trunk_skip},
          {"color_width", c.color_width},
          {"deformation_width", c.deformation_width},
          {"deformation_depth", c.deformation_depth},
          {"deformation_skip", c.deformation_skip},
          {"deformation_code_dim", c.deformation_code_dim},
          {"appearance_code_dim", c.appearance_code_dim},
          {"beta_dim", c.beta_dim},
          {"coarse_samples", c.coarse_samples},
          {"fine_samples", c.fine_samples},
          {"density_bias", c.density_bias},
          {"background", c.background}};
}

ModelConfig model_config_from_json(const nlohmann::json &j) {
  ModelConfig c = j.value("preset", std::string("desk")) == "reference" ? ModelConfig::reference() : ModelConfig::desk();
  try {
    auto get = [&](const char *key, auto &field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("position_bands", c.position_bands);
    get("direction_bands", c.direction_bands);
    get("deformation_bands", c.deformation_bands);
    get("trunk_width", c.trunk_width);
    get("trunk_depth", c.trunk_depth);
    get("trunk_skip", c.trunk_skip);
    get("color_width", c.color_width);
    get("deformation_width", c.deformation_width);
    get("deformation_depth", c.deformation_depth);
    get("deformation_skip", c.deformation_skip);
    get("deformation_code_dim", c.deformation_code_dim);
    get("appearance_code_dim", c.appearance_code_dim);
    get("beta_dim", c.beta_dim);
    get("coarse_samples", c.coarse_samples);
    get("fine_samples", c.fine_samples);
    get("density_bias", c.density_bias);
    get("background", c.background);
  } catch (const nlohmann::json::exception &e) {
    throw InvalidArgument(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (total_iterations <= 0) throw InvalidArgument("train: total iterations must be positive");
  if (rays_per_batch <= 0) throw InvalidArgument("train: rays per batch must be positive");
  if (!(lr_start > 0) || !(lr_end > 0)) throw InvalidArgument("train: learning rates must be positive");
  if (ctf_horizon < 0) throw InvalidArgument("train: ctf horizon must be non-negative");
  if (!(frr_weight >= 0)) throw InvalidArgument("train: FRR weight must be non-negative");
  if (frr_samples < 0) throw InvalidArgument("train: FRR sample count must be non-negative");
  if (chunk_rays < 0 || threads < 1) throw InvalidArgument("train: bad chunking or thread count");
  if (model.beta_dim != kBetaDim) throw InvalidArgument("train: beta dimension must be 50");
  model.validate();
}

std::int64_t TrainConfig::effective_ctf_horizon() const {
  if (ctf_horizon > 0) return ctf_horizon;
  return std::max<std::int64_t>(1, std::min<std::int64_t>(50000, total_iterations / 2));
}

nlohmann::json TrainConfig::to_json() const {
  return {{"total_iterations", total_iterations},
          {"rays_per_batch", rays_per_batch},
          {"lr_start", lr_start},
          {"lr_end", lr_end},
          {"ctf_horizon", ctf_horizon},
          {"frr_weight", frr_weight},
          {"frr_samples", frr_samples},
          {"use_prior", use_prior},
          {"seed", seed},
          {"chunk_rays", chunk_rays},
          {"threads", threads},
          {"model", model_config_to_json(model)}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json &j) {
  TrainConfig c;
  try {
    auto get = [&](const char *key, auto &field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("total_iterations", c.total_iterations);
    get("rays_per_batch", c.rays_per_batch);
    get("lr_start", c.lr_start);
    get("lr_end", c.lr_end);
    get("ctf_horizon", c.ctf_horizon);
    get("frr_weight", c.frr_weight);
    get("frr_samples", c.frr_samples);
    get("use_prior", c.use_prior);
    get("seed", c.seed);
    get("chunk_rays", c.chunk_rays);
    get("threads", c.threads);
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  } catch (const nlohmann::json::exception &e) {
    throw InvalidArgument(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainingRays prepare_training_rays(const OracleDataset &ds) {
  if (ds.frames.empty()) throw InvalidArgument("prepare_training_rays: empty dataset");
  TrainingRays d;
  d.width = ds.frames[0].camera.width;
  d.height = ds.frames[0].camera.height;
  d.t_near = ds.t_near;
  d.t_far = ds.t_far;
  d.mesh = ds.mesh;
  const auto pixels = all_pixels(ds.frames[0].camera);
  for (const auto &f : ds.frames) {
    if (f.camera.width != d.width || f.camera.height != d.height)
      throw InvalidArgument("prepare_training_rays: frames must share one resolution");
    d.beta.push_back(f.beta);
    d.origins.push_back(f.camera.position());
    if (f.validation) continue;
    d.frames.push_back(f.index);
    std::vector<float> dirs(pixels.size() * 3), tgt(pixels.size() * 3);
    std::vector<std::uint8_t> inside(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      const Vec3 dir = pixel_direction(f.camera, pixels[i]);
      const float *px = f.image.pixel(pixels[i].row, pixels[i].col);
      for (int k = 0; k < 3; ++k) {
        dirs[3 * i + k] = static_cast<float>(dir[k]);
        tgt[3 * i + k] = px[k];
      }
      inside[i] = classify_ray(pixels[i], f.mask) ? 1 : 0;
    }
    d.directions.push_back(std::move(dirs));
    d.targets.push_back(std::move(tgt));
    d.inside.push_back(std::move(inside));
  }
  if (d.frames.empty()) throw InvalidArgument("prepare_training_rays: no training frames");
  return d;
}

TrainState make_train_state(const TrainConfig &config, int frames) {
  config.validate();
  TrainState s;
  s.config = config;
  s.model = std::make_unique<FieldModel<float>>(config.model, frames);
  s.model->initialize(config.seed);
  s.adam = AdamState<float>(s.model->parameters(), AdamConfig{config.lr_start});
  return s;
}

template <typename T>
T photometric_loss(const Mat<T> &predicted, const Mat<T> &target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols())
    throw InvalidArgument("photometric_loss: batch size mismatch");
  if (predicted.size() == 0) return T(0);
  return (predicted - target).squaredNorm() / static_cast<T>(predicted.size());
}

template <typename T>
Var face_region_reg(const FieldModel<T> &model, Tape<T> &tape, const Mat<T> &points, const std::vector<int> &frame_rows,
                    double ctf_alpha, double weight) {
  if (points.cols() != 3 || static_cast<std::size_t>(points.rows()) != frame_rows.size())
    throw InvalidArgument("face_region_reg: one frame row per point required");
  std::vector<int> sorted = frame_rows;
  std::sort(sorted.begin(), sorted.end());
  const auto frames = static_cast<double>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
  Vec<T> w(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const auto count = std::count(frame_rows.begin(), frame_rows.end(), frame_rows[i]);
    w[i] = static_cast<T>(weight / (frames * static_cast<double>(count)));
  }
  Var x = tape.constant(points);
  Var code = tape.gather_rows(*model.latents().deformation, frame_rows);
  auto deformed = deform(model, tape, x, code, 1, ctf_alpha);
  return tape.weighted_row_norm_sum(deformed.second, std::move(w));
}

std::vector<std::size_t> batch_indices(const TrainingRays &data, std::uint64_t seed, std::int64_t iteration, int rays) {
  CounterRng rng(seed, kBatchStream, static_cast<std::uint64_t>(iteration));
  std::vector<std::size_t> idx(rays);
  for (auto &i : idx) i = static_cast<std::size_t>(rng.below(data.size()));
  return idx;
}

namespace {

struct ChunkResult {
  std::unique_ptr<Tape<float>> tape;
  double loss = 0;
};

}  // namespace

StepStats train_step(TrainState &state, const TrainingRays &data) {
  const TrainConfig &cfg = state.config;
  FieldModel<float> &model = *state.model;
  const ModelConfig &mc = model.config();
  const std::int64_t t = state.iteration;

  StepStats stats;
  stats.iteration = t;
  stats.alpha = ctf_alpha(t, CtfSchedule{mc.deformation_bands, cfg.effective_ctf_horizon()});
  stats.lr = decayed_learning_rate(std::min(t, cfg.total_iterations - 1), cfg.total_iterations, cfg.lr_start,
                                   cfg.lr_end);

  const auto idx = batch_indices(data, cfg.seed, t, cfg.rays_per_batch);
  const std::size_t ppf = data.pixels_per_frame();
  const auto rays = static_cast<Eigen::Index>(idx.size());

  RayPack<float> pack;
  pack.origins.resize(rays, 3);
  pack.directions.resize(rays, 3);
  pack.t_near = Vec<float>::Constant(rays, static_cast<float>(data.t_near));
  pack.t_far = Vec<float>::Constant(rays, static_cast<float>(data.t_far));
  pack.beta = Mat<float>::Zero(rays, mc.beta_dim);
  pack.deformation_table = model.latents().deformation;
  pack.appearance_table = model.latents().appearance;
  pack.deformation_rows.resize(rays);
  pack.appearance_rows.resize(rays);
  Mat<float> target(rays, 3);
  std::vector<std::uint64_t> ray_ids(rays);
  for (Eigen::Index i = 0; i < rays; ++i) {
    const std::size_t slot = idx[i] / ppf;
    const std::size_t p = idx[i] % ppf;
    const int frame = data.frames[slot];
    pack.origins.row(i) = data.origins[frame].transpose().cast<float>();
    for (int k = 0; k < 3; ++k) {
      pack.directions(i, k) = data.directions[slot][3 * p + k];
      target(i, k) = data.targets[slot][3 * p + k];
    }
    if (!cfg.use_prior || data.inside[slot][p])
      for (int k = 0; k < mc.beta_dim; ++k) pack.beta(i, k) = static_cast<float>(data.beta[frame][k]);
    pack.deformation_rows[i] = frame;
    pack.appearance_rows[i] = frame;
    ray_ids[i] = static_cast<std::uint64_t>(frame) * ppf + p;
    stats.frames.push_back(frame);
  }
  std::sort(stats.frames.begin(), stats.frames.end());
  stats.frames.erase(std::unique(stats.frames.begin(), stats.frames.end()), stats.frames.end());

  const Eigen::Index chunk = cfg.chunk_rays > 0 ? std::min<Eigen::Index>(cfg.chunk_rays, rays) : rays;
  const Eigen::Index chunks = (rays + chunk - 1) / chunk;
  std::vector<ChunkResult> results(chunks);

  auto run_chunk = [&](Eigen::Index c) {
    const Eigen::Index b = c * chunk;
    const Eigen::Index n = std::min(chunk, rays - b);
    RayPack<float> sub;
    sub.origins = pack.origins.middleRows(b, n);
    sub.directions = pack.directions.middleRows(b, n);
    sub.t_near = pack.t_near.segment(b, n);
    sub.t_far = pack.t_far.segment(b, n);
    sub.beta = pack.beta.middleRows(b, n);
    sub.deformation_table = pack.deformation_table;
    sub.appearance_table = pack.appearance_table;
    sub.deformation_rows.assign(pack.deformation_rows.begin() + b, pack.deformation_rows.begin() + b + n);
    sub.appearance_rows.assign(pack.appearance_rows.begin() + b, pack.appearance_rows.begin() + b + n);
    SampleJitter jitter{cfg.seed, static_cast<std::uint64_t>(t),
                        std::vector<std::uint64_t>(ray_ids.begin() + b, ray_ids.begin() + b + n)};
    auto tape = std::make_unique<Tape<float>>(true);
    HierarchicalResult<float> res;
    try {
      res = render_hierarchical(model, *tape, sub, stats.alpha, &jitter);
    } catch (const TrainingDivergence &e) {
      std::ostringstream os;
      os << "iteration " << t << ": " << e.what() << " (frames";
      for (int f : stats.frames) os << ' ' << f;
      os << ')';
      throw TrainingDivergence(os.str(), e.parameter());
    }
    const Mat<float> tgt = target.middleRows(b, n);
    Var loss = tape->add_scalars(tape->mse(res.coarse.color, tgt), tape->mse(res.fine.color, tgt));
    Var scaled = tape->scale(loss, static_cast<float>(static_cast<double>(n) / static_cast<double>(rays)));
    results[c].loss = static_cast<double>(tape->value(scaled)(0, 0));
    tape->propagate(scaled, Mat<float>::Ones(1, 1));
    results[c].tape = std::move(tape);
  };

  const int threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(chunks)));
  if (threads == 1) {
    for (Eigen::Index c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (Eigen::Index c = w; c < chunks; c += threads) run_chunk(c);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
    for (auto &th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }
  for (const auto &r : results) stats.photometric += r.loss;

  std::unique_ptr<Tape<float>> frr_tape;
  if (cfg.frr_weight > 0 && cfg.frr_samples > 0 && !data.mesh.triangles.empty()) {
    CounterRng rng(cfg.seed, kFrrStream, static_cast<std::uint64_t>(t));
    const auto points = sample_mesh_points(data.mesh, cfg.frr_samples, rng);
    Mat<float> pts(static_cast<Eigen::Index>(points.size()), 3);
    std::vector<int> rows(points.size());
    for (std::size_t k = 0; k < points.size(); ++k) {
      pts.row(static_cast<Eigen::Index>(k)) = points[k].transpose().cast<float>();
      rows[k] = stats.frames[k % stats.frames.size()];
    }
    frr_tape = std::make_unique<Tape<float>>(true);
    Var reg = face_region_reg(model, *frr_tape, pts, rows, stats.alpha, cfg.frr_weight);
    stats.frr = static_cast<double>(frr_tape->value(reg)(0, 0));
    frr_tape->propagate(reg, Mat<float>::Ones(1, 1));
  }

  if (!std::isfinite(stats.photometric) || !std::isfinite(stats.frr)) {
    std::ostringstream os;
    os << "non-finite loss at iteration " << t << " (photometric " << stats.photometric << ", frr " << stats.frr
       << "; frames";
    for (int f : stats.frames) os << ' ' << f;
    os << ')';
    throw TrainingDivergence(os.str(), "loss");
  }

  for (auto &r : results) r.tape->flush();
  if (frr_tape) frr_tape->flush();

  state.adam.config.lr = stats.lr;
  try {
    adam_step(state.adam, model.parameters());
  } catch (const TrainingDivergence &) {
    model.parameters().zero_grad();
    throw;
  }
  state.running_photometric =
      t == 0 ? stats.photometric : 0.99 * state.running_photometric + 0.01 * stats.photometric;
  ++state.iteration;
  return stats;
}

nlohmann::json step_stats_json(const StepStats &s) {
  return {{"iteration", s.iteration}, {"photometric", s.photometric}, {"frr", s.frr}, {"lr", s.lr},
          {"alpha", s.alpha}};
}

void train(TrainState &state, const TrainingRays &data, const TrainLoopOptions &options) {
  configure_allocator();
  std::ofstream metrics;
  if (!options.metrics_path.empty()) {
    metrics.open(options.metrics_path, std::ios::app);
    if (!metrics) throw IoError("cannot open metrics file '" + options.metrics_path.string() + "'");
  }
  const std::int64_t total = state.config.total_iterations;
  while (state.iteration < total) {
    const StepStats s = train_step(state, data);
    const bool last = state.iteration == total;
    if (metrics.is_open() && (last || options.log_every <= 1 || s.iteration % options.log_every == 0)) {
      metrics << step_stats_json(s).dump() << '\n';
      metrics.flush();
    }
    if (options.on_step) options.on_step(s);
    if (!options.checkpoint_path.empty() &&
        (last || (options.checkpoint_every > 0 && state.iteration % options.checkpoint_every == 0)))
      save_checkpoint(state, options.checkpoint_path);
  }
}

std::unique_ptr<SilhouetteMask> prior_mask(const TriangleMesh &mesh, const Camera &camera, bool use_prior) {
  if (!use_prior) return nullptr;
  return std::make_unique<SilhouetteMask>(rasterize_silhouette(mesh, camera));
}

template float photometric_loss(const Mat<float> &, const Mat<float> &);
template double photometric_loss(const Mat<double> &, const Mat<double> &);
template Var face_region_reg(const FieldModel<float> &, Tape<float> &, const Mat<float> &, const std::vector<int> &,
                             double, double);
template Var face_region_reg(const FieldModel<double> &, Tape<double> &, const Mat<double> &,
                             const std::vector<int> &, double, double);

}  // namespace exnerf
