// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "exnerf/diffnet/adam.hpp"
#include "exnerf/diffnet/mlp.hpp"
#include "exnerf/diffnet/parameters.hpp"
#include "exnerf/diffnet/tape.hpp"
#include "exnerf/error.hpp"
#include "exnerf/rng.hpp"

using namespace exnerf;

namespace {

Mat<double> random_matrix(int r, int c, CounterRng &rng, double scale = 1.0) {
  Mat<double> m(r, c);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

// Plain loop evaluation of an Mlp with relu hidden layers and optional skip.
std::vector<double> naive_mlp(const Mlp<double> &net, const std::vector<double> &in) {
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

double scalar_loss(const Mlp<double> &net, const Mat<double> &x) {
  Tape<double> tape(false);
  Var y = mlp_forward(net, tape, tape.constant(x));
  return tape.value(y).array().square().sum();
}

}  // namespace

TEST(Parameters, ShapesAndNames) {
  ParameterSet<double> set;
  auto &p = set.add("a", {3, 4});
  EXPECT_EQ(p.values.size(), 12u);
  EXPECT_EQ(p.gradient.size(), 12u);
  EXPECT_EQ(p.rows(), 3);
  EXPECT_EQ(p.cols(), 4);
  EXPECT_THROW(set.add("a", {1}), InvalidArgument);
  EXPECT_THROW(set.add("b", {0, 2}), InvalidArgument);
  EXPECT_THROW(set.at("missing"), InvalidArgument);
  EXPECT_EQ(&set.at("a"), &p);
}

TEST(Parameters, ChecksumTracksValues) {
  ParameterSet<float> set;
  auto &p = set.add("w", {4});
  const auto c0 = set.checksum();
  p.gradient[0] = 5.0f;
  EXPECT_EQ(set.checksum(), c0);
  p.values[2] = 1.0f;
  EXPECT_NE(set.checksum(), c0);
}

TEST(LatentTable, ZeroInitAndLookup) {
  ParameterSet<double> set;
  auto table = make_latent_table(set, 700);
  EXPECT_EQ(table.frames(), 700);
  EXPECT_EQ(table.deformation_dim(), 128);
  EXPECT_EQ(table.appearance_dim(), 8);
  const auto codes = latent_lookup(table, 699);
  EXPECT_EQ(codes.deformation.size(), 128);
  EXPECT_EQ(codes.appearance.size(), 8);
  EXPECT_TRUE(codes.deformation.isZero(0));
  EXPECT_TRUE(codes.appearance.isZero(0));
  EXPECT_THROW(latent_lookup(table, 700), InvalidArgument);
  EXPECT_THROW(latent_lookup(table, -1), InvalidArgument);
}

TEST(LatentTable, GatherRowsOnlyTouchesSelectedRows) {
  ParameterSet<double> set;
  auto table = make_latent_table(set, 3, 4, 2);
  Tape<double> tape;
  Var codes = tape.gather_rows(*table.deformation, {0, 0, 2});
  Var loss = tape.mse(codes, Mat<double>::Constant(3, 4, 1.0));
  tape.backward(loss);
  const auto &g = table.deformation->gradient;
  for (int c = 0; c < 4; ++c) {
    EXPECT_NE(g[0 * 4 + c], 0.0);
    EXPECT_EQ(g[1 * 4 + c], 0.0);
    EXPECT_NE(g[2 * 4 + c], 0.0);
    EXPECT_DOUBLE_EQ(g[0 * 4 + c], 2 * g[2 * 4 + c]);
  }
  EXPECT_THROW(tape.gather_rows(*table.deformation, {3}), InvalidArgument);
}

TEST(Mlp, ZeroWeightsGiveZeroOutput) {
  ParameterSet<double> set;
  Mlp<double> net(set, "n", MlpSpec{5, 7, 2, std::nullopt, 3, Activation::none});
  Tape<double> tape(false);
  CounterRng rng(1);
  Var y = mlp_forward(net, tape, tape.constant(random_matrix(4, 5, rng)));
  EXPECT_TRUE(tape.value(y).isZero(0));
}

TEST(Mlp, IdentityLinearLayer) {
  ParameterSet<double> set;
  Mlp<double> net(set, "n", MlpSpec{4, 0, 0, std::nullopt, 4, Activation::none});
  net.weight(0).matrix() = Mat<double>::Identity(4, 4);
  CounterRng rng(2);
  const Mat<double> x = random_matrix(3, 4, rng);
  Tape<double> tape(false);
  Var y = mlp_forward(net, tape, tape.constant(x));
  EXPECT_EQ(tape.value(y), x);
}

TEST(Mlp, MatchesNaiveEvaluation) {
  for (auto act : {Activation::none, Activation::sigmoid, Activation::softplus}) {
    ParameterSet<double> set;
    Mlp<double> net(set, "n", MlpSpec{6, 9, 3, 2, 4, act});
    CounterRng rng(11);
    net.init_uniform(rng);
    for (int l = 0; l < net.layers(); ++l)
      for (auto &b : net.bias(l).values) b = rng.uniform(-0.3, 0.3);
    const Mat<double> x = random_matrix(5, 6, rng);
    Tape<double> tape(false);
    Var y = mlp_forward(net, tape, tape.constant(x));
    for (int r = 0; r < 5; ++r) {
      std::vector<double> in(x.row(r).data(), x.row(r).data() + 6);
      const auto want = naive_mlp(net, in);
      for (int c = 0; c < 4; ++c) EXPECT_NEAR(tape.value(y)(r, c), want[c], 1e-12);
    }
  }
}

TEST(Mlp, RejectsWrongWidth) {
  ParameterSet<double> set;
  Mlp<double> net(set, "n", MlpSpec{6, 8, 1, std::nullopt, 2, Activation::none});
  Tape<double> tape;
  EXPECT_THROW(mlp_forward(net, tape, tape.constant(Mat<double>::Zero(2, 5))), InvalidArgument);
  EXPECT_THROW((MlpSpec{6, 8, 3, 3, 2, Activation::none}.validate()), InvalidArgument);
  EXPECT_THROW((MlpSpec{6, 8, 3, 0, 2, Activation::none}.validate()), InvalidArgument);
}

TEST(Tape, LinearGradientIsOuterProduct) {
  ParameterSet<double> set;
  auto &w = set.add("w", {3, 2});
  auto &b = set.add("b", {2});
  CounterRng rng(4);
  w.matrix() = random_matrix(3, 2, rng);
  const Mat<double> x = random_matrix(1, 3, rng);
  const Mat<double> g = random_matrix(1, 2, rng);
  Tape<double> tape;
  Var y = tape.linear(tape.constant(x), w, b);
  tape.backward(y, g);
  const Mat<double> expected = x.transpose() * g;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(w.gradient[i * 2 + j], expected(i, j));
  EXPECT_DOUBLE_EQ(b.gradient[0], g(0, 0));
  EXPECT_DOUBLE_EQ(b.gradient[1], g(0, 1));
}

TEST(Tape, BackwardAccumulatesAndIsSingleUse) {
  ParameterSet<double> set;
  Mlp<double> net(set, "n", MlpSpec{3, 5, 2, std::nullopt, 1, Activation::softplus});
  CounterRng rng(6);
  net.init_uniform(rng);
  const Mat<double> x = random_matrix(4, 3, rng);
  auto run = [&] {
    Tape<double> tape;
    Var y = mlp_forward(net, tape, tape.constant(x));
    Var l = tape.mse(y, Mat<double>::Constant(4, 1, 0.5));
    tape.backward(l);
    EXPECT_THROW(tape.backward(l), StateError);
  };
  run();
  std::vector<AlignedVector<double>> once;
  for (auto &p : set) once.push_back(p.gradient);
  run();
  std::size_t i = 0;
  for (auto &p : set) {
    for (std::size_t k = 0; k < p.size(); ++k) EXPECT_EQ(p.gradient[k], 2 * once[i][k]);
    ++i;
  }
}

TEST(Tape, FrozenParametersReceiveNothing) {
  ParameterSet<double> set;
  Mlp<double> net(set, "n", MlpSpec{3, 4, 1, std::nullopt, 1, Activation::none});
  CounterRng rng(8);
  net.init_uniform(rng);
  Tape<double> tape;
  tape.freeze(&net.weight(0));
  Var x = tape.leaf(random_matrix(2, 3, rng));
  Var y = mlp_forward(net, tape, x);
  tape.backward(tape.mse(y, Mat<double>::Zero(2, 1)));
  for (double g : net.weight(0).gradient) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(tape.grad(x).rows(), 2);
  double any = 0;
  for (double g : net.weight(1).gradient) any += std::abs(g);
  EXPECT_GT(any, 0.0);
}

TEST(Tape, ScalarNetMatchesFiniteDifferences) {
  ParameterSet<double> set;
  Mlp<double> net(set, "n", MlpSpec{4, 8, 3, 2, 2, Activation::sigmoid});
  CounterRng rng(12);
  net.init_uniform(rng);
  for (int l = 0; l < net.layers(); ++l)
    for (auto &b : net.bias(l).values) b = rng.uniform(-0.2, 0.2);
  const Mat<double> x = random_matrix(3, 4, rng);
  {
    Tape<double> tape;
    Var y = mlp_forward(net, tape, tape.constant(x));
    Var loss = tape.mse(y, Mat<double>::Zero(3, 2));
    tape.backward(loss);
  }
  const double h = 1e-5;
  const double n = 6.0;  // mse normalizer; scalar_loss is the plain sum
  for (auto &p : set) {
    for (std::size_t k = 0; k < p.size(); k += 3) {
      const double v = p.values[k];
      p.values[k] = v + h;
      const double lp = scalar_loss(net, x);
      p.values[k] = v - h;
      const double lm = scalar_loss(net, x);
      p.values[k] = v;
      const double fd = (lp - lm) / (2 * h) / n;
      const double an = p.gradient[k];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      EXPECT_LT(std::abs(fd - an) / denom, 1e-6) << p.name << "[" << k << "]";
    }
  }
}

TEST(Tape, GroupedInputBroadcasts) {
  ParameterSet<double> set;
  auto &w = set.add("w", {5, 2});
  auto &b = set.add("b", {2});
  CounterRng rng(14);
  w.matrix() = random_matrix(5, 2, rng);
  const Mat<double> a = random_matrix(6, 3, rng);
  const Mat<double> code = random_matrix(2, 2, rng);
  Tape<double> tape;
  Var va = tape.constant(a);
  Var vc = tape.leaf(code);
  const LinearInput parts[] = {{va, 1}, {vc, 3}};
  Var y = tape.linear(parts, w, b);
  Mat<double> full(6, 5);
  for (int r = 0; r < 6; ++r) full.row(r) << a.row(r), code.row(r / 3);
  const Mat<double> want = full * w.matrix();
  EXPECT_LT((tape.value(y) - want).cwiseAbs().maxCoeff(), 1e-14);
  tape.backward(y, Mat<double>::Ones(6, 2));
  const Mat<double> gfull = Mat<double>::Ones(6, 2) * w.matrix().transpose();
  for (int g = 0; g < 2; ++g)
    for (int c = 0; c < 2; ++c) {
      double s = 0;
      for (int r = 0; r < 3; ++r) s += gfull(3 * g + r, 3 + c);
      EXPECT_NEAR(tape.grad(vc)(g, c), s, 1e-14);
    }
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  ParameterSet<double> set;
  auto &p = set.add("p", {5});
  for (std::size_t i = 0; i < 5; ++i) p.values[i] = 0.1 * i;
  const auto before = p.values;
  AdamState<double> adam(set, AdamConfig{1e-3});
  for (int s = 0; s < 10; ++s) adam_step(adam, set);
  EXPECT_EQ(p.values, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet<double> set;
  auto &p = set.add("p", {4});
  std::fill(p.gradient.begin(), p.gradient.end(), 1.0);
  AdamState<double> adam(set, AdamConfig{1e-3});
  adam_step(adam, set);
  // m_hat = 1, v_hat = 1: step = lr * 1 / (1 + eps)
  for (double v : p.values) EXPECT_NEAR(v, -1e-3 / (1.0 + 1e-8), 1e-15);
  for (double g : p.gradient) EXPECT_EQ(g, 0.0);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParameterSet<float> set;
  set.add("ok", {2});
  auto &bad = set.add("bad", {2});
  bad.gradient[1] = std::nanf("");
  AdamState<float> adam(set, AdamConfig{});
  try {
    adam_step(adam, set);
    FAIL() << "expected TrainingDivergence";
  } catch (const TrainingDivergence &e) {
    EXPECT_EQ(e.parameter(), "bad");
  }
  EXPECT_EQ(adam.step, 0);
}

TEST(Adam, LearningRateSchedule) {
  EXPECT_DOUBLE_EQ(decayed_learning_rate(0, 20000, 1e-3, 5e-4), 1e-3);
  EXPECT_NEAR(decayed_learning_rate(19999, 20000, 1e-3, 5e-4), 5e-4, 1e-15);
  double prev = 1;
  for (int t = 0; t < 20000; t += 100) {
    const double lr = decayed_learning_rate(t, 20000, 1e-3, 5e-4);
    EXPECT_LT(lr, prev);
    prev = lr;
  }
}

TEST(Adam, DeterministicTrainingRuns) {
  auto run = [] {
    ParameterSet<float> set;
    Mlp<float> net(set, "n", MlpSpec{3, 16, 2, std::nullopt, 1, Activation::none});
    CounterRng rng(21);
    net.init_uniform(rng);
    AdamState<float> adam(set, AdamConfig{1e-2});
    for (int s = 0; s < 100; ++s) {
      CounterRng data(5, 1, s);
      Mat<float> x(8, 3), y(8, 1);
      for (int i = 0; i < 8; ++i) {
        for (int c = 0; c < 3; ++c) x(i, c) = static_cast<float>(data.uniform(-1, 1));
        y(i, 0) = x(i, 0) * x(i, 1) - x(i, 2);
      }
      Tape<float> tape;
      tape.backward(tape.mse(mlp_forward(net, tape, tape.constant(x)), y));
      adam_step(adam, set);
    }
    return set.checksum();
  };
  EXPECT_EQ(run(), run());
}
