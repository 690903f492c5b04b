// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "exnerf/error.hpp"
#include "exnerf/eval.hpp"
#include "exnerf/io.hpp"
#include "support.hpp"

using namespace exnerf;

namespace {

struct TinyRun {
  OracleDataset ds;
  TrainState state;
};

// A briefly trained model on the tiny scene, shared by the tests below.
TinyRun &tiny_run() {
  static TinyRun run = [] {
    TinyRun r;
    r.ds = generate_dataset(oracle::tiny_scene(), {});
    TrainConfig cfg = oracle::tiny_train_config();
    cfg.total_iterations = 150;
    r.state = make_train_state(cfg, 8);
    train(r.state, prepare_training_rays(r.ds));
    return r;
  }();
  return run;
}

Image filled(int w, int h, float v) {
  Image img(w, h);
  std::fill(img.rgb.begin(), img.rgb.end(), v);
  return img;
}

ImageRenderOptions tiny_render_options() {
  ImageRenderOptions o;
  o.chunk_rays = 64;
  return o;
}

}  // namespace

TEST(Psnr, TablePairs) {
  EXPECT_NEAR(psnr_from_mse(2.045e-3), 26.89, 0.01);
  EXPECT_NEAR(psnr_from_mse(1.255e-3), 29.01, 0.01);
}

TEST(Psnr, IdenticalImagesAreInfinite) {
  const Image a = filled(4, 3, 0.3f);
  const ImageError e = mse_psnr(a, a);
  EXPECT_EQ(e.mse, 0.0);
  EXPECT_TRUE(std::isinf(e.psnr) && e.psnr > 0);
  EXPECT_EQ(psnr_json(e.psnr), "inf");
  EXPECT_EQ(psnr_json(20.0), 20.0);
}

TEST(Psnr, SymmetricAndMonotone) {
  CounterRng rng(1);
  Image a(5, 5), b(5, 5);
  for (auto &v : a.rgb) v = static_cast<float>(rng.uniform());
  for (auto &v : b.rgb) v = static_cast<float>(rng.uniform());
  const ImageError ab = mse_psnr(a, b), ba = mse_psnr(b, a);
  EXPECT_EQ(ab.mse, ba.mse);
  EXPECT_EQ(ab.psnr, ba.psnr);
  double prev = std::numeric_limits<double>::infinity();
  for (double mse = 1e-6; mse <= 1.0; mse *= 1.7) {
    const double p = psnr_from_mse(mse);
    EXPECT_LT(p, prev);
    EXPECT_NEAR(p, -10 * std::log10(mse), 1e-12);
    prev = p;
  }
  EXPECT_EQ(psnr_from_mse(1.0), 0.0);
}

TEST(Psnr, ConstantOffset) {
  const ImageError e = mse_psnr(filled(6, 2, 0.6f), filled(6, 2, 0.5f));
  EXPECT_NEAR(e.mse, 0.01, 1e-8);
  EXPECT_NEAR(e.psnr, 20.0, 1e-5);
}

TEST(Psnr, RejectsBadInput) {
  EXPECT_THROW(psnr_from_mse(-1e-3), InvalidArgument);
  EXPECT_THROW(psnr_from_mse(NAN), InvalidArgument);
  EXPECT_THROW(mse_psnr(Image(2, 2), Image(2, 3)), InvalidArgument);
  EXPECT_THROW(mse_psnr(Image(), Image()), InvalidArgument);
}

TEST(MetricReport, Aggregates) {
  MetricReport r;
  r.frames.push_back({7, 0.02, 1e-2, 20.0, 10, 10, 0.0});
  r.frames.push_back({15, 0.02, 1e-3, 30.0, 10, 5, 0.0});
  r.finalize();
  EXPECT_DOUBLE_EQ(r.mean_mse, 5.5e-3);
  EXPECT_DOUBLE_EQ(r.mean_psnr, 25.0);
  EXPECT_NEAR(r.aggregate_psnr, -10 * std::log10(5.5e-3), 1e-12);
  const auto j = r.to_json();
  EXPECT_EQ(j.at("frames").size(), 2u);
  EXPECT_EQ(j.at("frames").at(1).at("best_step"), 5);
}

TEST(Validation, RejectsTrainingFrames) {
  auto &run = tiny_run();
  ValidateOptions o;
  o.steps = 2;
  EXPECT_THROW(validate_frame(*run.state.model, run.ds, 0, o), InvalidArgument);
  EXPECT_THROW(validate_frame(*run.state.model, run.ds, 8, o), InvalidArgument);
  EXPECT_THROW(validate_frame(*run.state.model, run.ds, -1, o), InvalidArgument);
}

TEST(Validation, OnlyTheFreeCodeMoves) {
  auto &run = tiny_run();
  FieldModel<float> &model = *run.state.model;
  const auto before = model.parameters().checksum();
  ValidateOptions o;
  o.steps = 40;
  o.eval_every = 10;
  o.rays_per_step = 64;
  o.render = tiny_render_options();
  const MetricReport r = validate_frames(model, run.ds, run.ds.validation_frames(), o);
  ASSERT_EQ(r.frames.size(), 1u);
  const FrameMetric &m = r.frames[0];
  EXPECT_EQ(m.frame, 7);
  EXPECT_EQ(m.steps, 40);
  EXPECT_LE(m.mse, m.initial_mse);
  EXPECT_EQ(m.max_theta_grad, 0.0);
  EXPECT_EQ(model.parameters().checksum(), before);
  EXPECT_EQ(std::count(r.frozen.begin(), r.frozen.end(), "coarse_field"), 1);

  // the best measured iterate is reproducible
  const FrameMetric again = validate_frame(model, run.ds, 7, o);
  EXPECT_EQ(again.mse, m.mse);
  EXPECT_EQ(again.best_step, m.best_step);
}

TEST(Drive, ParsesAndValidates) {
  const Camera cam = oracle::tiny_scene().frame_camera(0);
  std::vector<DriveEntry> drive(2);
  drive[0] = {std::vector<double>(kBetaDim, 0.1), cam};
  drive[1] = {std::vector<double>(kBetaDim, -0.2), cam};
  const auto back = drive_from_json(drive_to_json(drive));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].beta, drive[1].beta);
  EXPECT_EQ(back[0].camera.camera_to_world, cam.camera_to_world);

  nlohmann::json j = drive_to_json(drive);
  j[1]["beta"].erase(0);
  EXPECT_THROW(drive_from_json(j), InvalidArgument);
  j = drive_to_json(drive);
  j[0]["beta"][3] = nullptr;
  EXPECT_THROW(drive_from_json(j), InvalidArgument);
  j = drive_to_json(drive);
  j[0].erase("camera");
  EXPECT_THROW(drive_from_json(j), InvalidArgument);
  j = drive_to_json(drive);
  j[0]["camera"]["fx"] = -1.0;
  EXPECT_THROW(drive_from_json(j), InvalidArgument);
  EXPECT_THROW(drive_from_json(nlohmann::json::object()), InvalidArgument);
  EXPECT_THROW(read_drive_sequence("/nonexistent/drive.json"), IoError);
}

TEST(Drive, BetaRange) {
  auto &run = tiny_run();
  const BetaRange r = beta_range(run.ds, run.ds.training_frames());
  for (int f : run.ds.training_frames()) EXPECT_TRUE(r.contains(run.ds.frames[f].beta));
  std::vector<double> outside = r.hi;
  outside[2] += 0.01;
  EXPECT_FALSE(r.contains(outside));
  EXPECT_FALSE(r.contains(std::vector<double>(3, 0.0)));
}

TEST(Drive, MostDistinctBetaPair) {
  auto &run = tiny_run();
  const auto frames = run.ds.training_frames();
  const auto [a, b] = most_distinct_beta_pair(run.ds, frames);
  auto dist = [&](int i, int j) {
    double d = 0;
    for (int k = 0; k < kBetaDim; ++k) d += std::pow(run.ds.frames[i].beta[k] - run.ds.frames[j].beta[k], 2);
    return d;
  };
  EXPECT_LT(a, b);
  for (int i : frames)
    for (int j : frames) EXPECT_LE(dist(i, j), dist(a, b));
  EXPECT_EQ(most_distinct_beta_pair(run.ds, {4, 2}), std::make_pair(4, 2));
  EXPECT_THROW(most_distinct_beta_pair(run.ds, {3}), InvalidArgument);
}

TEST(Reanimation, WritesFramesAndFlagsExtrapolation) {
  auto &run = tiny_run();
  const BetaRange range = beta_range(run.ds, run.ds.training_frames());
  const Camera cam = run.ds.scene.orbit_camera(5.0, 0.0);
  std::vector<DriveEntry> drive = {{run.ds.frames[2].beta, cam}, {std::vector<double>(kBetaDim, 3.0), cam}};
  const fs::path dir = fs::temp_directory_path() / "exnerf_test_reanimate";
  fs::remove_all(dir);
  const auto report = reanimate(*run.state.model, run.ds.mesh, drive, dir, true, tiny_render_options(), range);
  EXPECT_TRUE(fs::exists(dir / "frame_0000.png"));
  EXPECT_TRUE(fs::exists(dir / "frame_0001.png"));
  EXPECT_TRUE(fs::exists(dir / "depth_0001.png.json"));
  EXPECT_EQ(report.at("warnings").size(), 1u);
  EXPECT_FALSE(report.at("frames").at(0).at("extrapolated").get<bool>());
  EXPECT_TRUE(report.at("frames").at(1).at("extrapolated").get<bool>());
  EXPECT_EQ(read_json(dir / "report.json"), report);
  const Image img = read_png_rgb(dir / "frame_0000.png");
  EXPECT_EQ(img.width, cam.width);
}

TEST(Ablation, OutsideDiffIgnoresMaskedPixels) {
  Image a = filled(3, 2, 0.5f), b = filled(3, 2, 0.5f);
  SilhouetteMask m(3, 2);
  m.set(0, 0, true);
  b.pixel(0, 0)[1] = 0.9f;
  EXPECT_EQ(outside_mean_abs_diff(a, b, m), 0.0);
  b.pixel(1, 2)[0] = 0.8f;
  EXPECT_NEAR(outside_mean_abs_diff(a, b, m), 0.3 / 15, 1e-7);
  EXPECT_THROW(outside_mean_abs_diff(a, Image(2, 2), m), InvalidArgument);
}

TEST(Ablation, SameBetaGivesZeroDifference) {
  auto &run = tiny_run();
  const Camera cam = run.ds.frames[1].camera;
  const auto &beta = run.ds.frames[1].beta;
  const AblationResult r = ablate_background(*run.state.model, *run.state.model, run.ds.mesh, cam, beta, beta, {},
                                             tiny_render_options());
  EXPECT_EQ(r.prior_diff, 0.0);
  EXPECT_EQ(r.no_prior_diff, 0.0);
  EXPECT_GT(r.outside_pixels, 0u);
}

TEST(Ablation, PriorGatesBackgroundExactly) {
  auto &run = tiny_run();
  const Camera cam = run.ds.frames[1].camera;
  const fs::path dir = fs::temp_directory_path() / "exnerf_test_ablation";
  fs::remove_all(dir);
  const AblationResult r = ablate_background(*run.state.model, *run.state.model, run.ds.mesh, cam,
                                             run.ds.frames[1].beta, run.ds.frames[4].beta, dir, tiny_render_options());
  EXPECT_EQ(r.prior_diff, 0.0);
  EXPECT_GT(r.no_prior_diff, 0.0);
  EXPECT_TRUE(fs::exists(dir / "diff_no_prior.png"));
  EXPECT_EQ(read_json(dir / "ablation.json").at("outside_pixels").get<std::size_t>(), r.outside_pixels);
}
