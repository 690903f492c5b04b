// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "exnerf/encoding.hpp"
#include "exnerf/error.hpp"
#include "exnerf/rng.hpp"

using namespace exnerf;

namespace {

// Straight evaluation of the layout: x, then per band sin block, cos block.
std::vector<double> reference_encoding(const Vec3 &x, int m, const std::vector<double> &w) {
  std::vector<double> out{x[0], x[1], x[2]};
  for (int k = 0; k < m; ++k) {
    const double wk = w.empty() ? 1.0 : w[k];
    for (int c = 0; c < 3; ++c) out.push_back(wk * std::sin(std::ldexp(x[c], k)));
    for (int c = 0; c < 3; ++c) out.push_back(wk * std::cos(std::ldexp(x[c], k)));
  }
  return out;
}

}  // namespace

TEST(Encoding, ZeroInputOneBand) {
  EncodingSpec spec{1};
  const auto e = positional_encode(Vec3::Zero(), spec);
  const std::vector<double> expected{0, 0, 0, 0, 0, 0, 1, 1, 1};
  EXPECT_EQ(e, expected);
}

TEST(Encoding, OutputLength) {
  EXPECT_EQ(positional_encode(Vec3(0.1, 0.2, 0.3), EncodingSpec{10}).size(), 63u);
  EXPECT_EQ(positional_encode(Vec3(0.1, 0.2, 0.3), EncodingSpec{4}).size(), 27u);
  for (int m = 1; m <= 16; ++m) {
    EncodingSpec spec{m};
    EXPECT_EQ(spec.output_dim(), 3 + 6 * m);
    EXPECT_EQ(positional_encode(Vec3(0.4, -1.0, 2.0), spec).size(), static_cast<std::size_t>(3 + 6 * m));
  }
}

TEST(Encoding, PiInput) {
  const auto e = positional_encode(Vec3(std::numbers::pi, 0, 0), EncodingSpec{1});
  EXPECT_NEAR(e[3], 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(e[6], -1.0);
}

TEST(Encoding, MatchesDirectEvaluation) {
  CounterRng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec3 x(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4));
    const int m = 1 + static_cast<int>(rng.below(12));
    std::vector<double> w;
    if (trial % 2)
      for (int k = 0; k < m; ++k) w.push_back(rng.uniform());
    const auto got = positional_encode(x, EncodingSpec{m}, w);
    const auto want = reference_encoding(x, m, w);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12) << "m=" << m << " i=" << i;
  }
}

TEST(Encoding, BatchMatchesScalar) {
  CounterRng rng(5);
  Mat<double> x(17, 3);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-2, 2);
  EncodingSpec spec{6};
  std::vector<double> w{1, 1, 0.7, 0.2, 0, 0};
  Mat<double> out;
  encode_rows<double>(x, spec, w, out);
  for (int r = 0; r < x.rows(); ++r) {
    const auto e = positional_encode(Vec3(x(r, 0), x(r, 1), x(r, 2)), spec, w);
    for (int c = 0; c < spec.output_dim(); ++c) EXPECT_DOUBLE_EQ(out(r, c), e[c]);
  }
}

TEST(Encoding, BackwardMatchesFiniteDifference) {
  CounterRng rng(9);
  EncodingSpec spec{5};
  std::vector<double> w{1, 0.9, 0.5, 0.25, 0.1};
  Mat<double> x(4, 3), g(4, spec.output_dim());
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
  for (int i = 0; i < g.size(); ++i) g.data()[i] = rng.uniform(-1, 1);
  Mat<double> gx = Mat<double>::Zero(4, 3);
  encode_rows_backward<double>(x, spec, w, g, gx);
  const double h = 1e-6;
  for (int i = 0; i < x.size(); ++i) {
    Mat<double> xp = x, xm = x, op, om;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    encode_rows<double>(xp, spec, w, op);
    encode_rows<double>(xm, spec, w, om);
    const double fd = ((op - om).cwiseProduct(g)).sum() / (2 * h);
    EXPECT_NEAR(gx.data()[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Encoding, UnitWeightsEqualUnweighted) {
  const Vec3 x(0.3, -0.7, 1.9);
  EncodingSpec spec{6};
  const std::vector<double> ones(6, 1.0);
  EXPECT_EQ(positional_encode(x, spec, ones), positional_encode(x, spec));
}

TEST(Encoding, RejectsBadInput) {
  EncodingSpec spec{2};
  EXPECT_THROW(positional_encode(Vec3(std::nan(""), 0, 0), spec), InvalidArgument);
  EXPECT_THROW(positional_encode(Vec3(std::numeric_limits<double>::infinity(), 0, 0), spec), InvalidArgument);
  const std::vector<double> bad{1.0, 1.5};
  EXPECT_THROW(positional_encode(Vec3::Zero(), spec, bad), InvalidArgument);
  const std::vector<double> short_w{1.0};
  EXPECT_THROW(positional_encode(Vec3::Zero(), spec, short_w), InvalidArgument);
  EXPECT_THROW(positional_encode(Vec3::Zero(), EncodingSpec{0}), InvalidArgument);
}

TEST(CtfWeight, ClosedFormPoints) {
  for (int l = 0; l < 6; ++l) {
    EXPECT_EQ(ctf_weight(l, l, 6), 0.0);
    EXPECT_EQ(ctf_weight(l, 0.0, 6), 0.0);
    EXPECT_EQ(ctf_weight(l, l + 1.0, 6), 1.0);
    EXPECT_EQ(ctf_weight(l, l + 7.5, 6), 1.0);
    EXPECT_NEAR(ctf_weight(l, l + 0.5, 6), 0.5, 1e-15);
  }
}

TEST(CtfWeight, MonotoneBoundedContinuous) {
  for (int l = 0; l < 6; ++l) {
    double prev = 0;
    for (int i = 0; i <= 8000; ++i) {
      const double a = i * 1e-3;
      const double w = ctf_weight(l, a, 6);
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 1.0);
      EXPECT_GE(w, prev);
      EXPECT_LE(w - prev, 2e-3);  // slope is at most pi/2
      prev = w;
    }
  }
}

TEST(CtfWeight, RejectsBadBand) {
  EXPECT_THROW(ctf_weight(-1, 0.5, 6), InvalidArgument);
  EXPECT_THROW(ctf_weight(6, 0.5, 6), InvalidArgument);
  EXPECT_THROW(ctf_weight(0, -0.5, 6), InvalidArgument);
}

TEST(CtfAlpha, Schedule) {
  CtfSchedule s{6, 50000};
  EXPECT_EQ(ctf_alpha(0, s), 0.0);
  EXPECT_EQ(ctf_alpha(50000, s), 6.0);
  EXPECT_DOUBLE_EQ(ctf_alpha(25000, s), 3.0);
  double prev = 0;
  for (std::int64_t t = 0; t <= 60000; t += 250) {
    const double a = ctf_alpha(t, s);
    EXPECT_GE(a, prev);
    prev = a;
  }
  EXPECT_THROW(ctf_alpha(1, CtfSchedule{6, 0}), InvalidArgument);
}

TEST(CtfAlpha, FullBandwidthAfterHorizon) {
  CtfSchedule s{6, 1000};
  const Vec3 x(0.25, -1.5, 0.8);
  EncodingSpec spec{6};
  for (std::int64_t t : {1000, 1001, 5000}) {
    const auto w = s.weights(t);
    for (double wk : w) EXPECT_EQ(wk, 1.0);
    EXPECT_EQ(positional_encode(x, spec, w), positional_encode(x, spec));
  }
  const auto early = s.weights(0);
  for (double wk : early) EXPECT_EQ(wk, 0.0);
}
