// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "avsel/frontend.hpp"
#include "oracles.hpp"

using namespace avsel;

namespace {

// Plan by hand: conv side (x - k) / s + 1, pool halves; nullopt when a conv
// sees fewer than k pixels or a pool fewer than 2.
std::optional<std::vector<std::size_t>> brute_plan(const Vgg3dConfig &c, std::size_t x) {
  std::vector<std::size_t> plan{x};
  for (std::size_t l = 0; l < c.layers(); ++l) {
    if (x < c.kernel) return std::nullopt;
    x = (x - c.kernel) / c.strides[l] + 1;
    plan.push_back(x);
    if (c.pool[l]) {
      if (x < 2) return std::nullopt;
      x /= 2;
      plan.push_back(x);
    }
  }
  return plan;
}

Vgg3dConfig tiny() {
  Vgg3dConfig c;
  c.channels = {3, 4, 8};
  c.max_groups = 2;
  c.strides = {1, 1};
  c.pool = {true, false};
  c.input_size = 8;  // 8 -> 6 -> 3 -> 1
  return c;
}

double correlation(const Tensor &a, const Tensor &b) {
  const double n = double(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= n, mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(SpatialPlan, FullSizeReachesOne) {
  EXPECT_EQ(spatial_plan(Vgg3dConfig::full()),
            (std::vector<std::size_t>{128, 63, 31, 29, 14, 12, 6, 4, 2, 1}));
  EXPECT_EQ(Vgg3dConfig::full().time_radius(), 5u);
}

TEST(SpatialPlan, DeskPreset) {
  EXPECT_EQ(spatial_plan(Vgg3dConfig::desk()),
            (std::vector<std::size_t>{32, 30, 28, 14, 12, 6, 4, 2, 1}));
}

TEST(SpatialPlan, MatchesBruteForceForEverySize) {
  for (const auto &base : {Vgg3dConfig::full(), Vgg3dConfig::desk()})
    for (std::size_t x = 3; x <= 256; ++x) {
      auto c = base;
      c.input_size = x;
      const auto ref = brute_plan(c, x);
      if (ref) {
        EXPECT_EQ(spatial_plan(c), *ref) << x;
      } else {
        EXPECT_THROW(spatial_plan(c), std::invalid_argument) << x;
      }
    }
}

TEST(SpatialPlan, SixtyFourIsRejected) {
  auto c = Vgg3dConfig::full();
  c.input_size = 64;  // 64 -> 31 -> 15 -> 13 -> 6 -> 4 -> 2, then a conv on 2
  EXPECT_THROW(spatial_plan(c), std::invalid_argument);
  EXPECT_THROW(Vgg3d<>(c, 1), std::invalid_argument);
}

TEST(Vgg3d, GroupCounts) {
  const auto c = Vgg3dConfig::full();
  EXPECT_EQ(c.groups(0), 32u);
  EXPECT_EQ(c.groups(4), 32u);
  EXPECT_EQ(tiny().groups(0), 2u);
  EXPECT_EQ(tiny().groups(1), 2u);
  EXPECT_EQ(Vgg3dConfig::desk().groups(0), 8u);
}

TEST(Vgg3d, TinyNetMatchesLoopOracle) {
  const auto c = tiny();
  Vgg3d<> net(c, 3);
  SeededRng r(4);
  for (std::size_t l = 0; l < c.layers(); ++l)
    net.bias(l).value = random_uniform<double>({c.channels[l + 1]}, r, -0.3, 0.3);
  const auto video = random_uniform<double>({2, 4, 8, 8, 3}, r, -1, 1);
  const auto got = net.forward(video);
  ASSERT_EQ(got.shape(), (Shape{2, 4, 8}));

  Tensor x = oracle::conv3d(video, net.kernel(0).value, net.bias(0).value, 1);
  for (auto &v : x.data()) v = std::max(v, 0.0);
  x = oracle::group_norm(x, 2, net.gn_scale(0).value, net.gn_shift(0).value);
  x = oracle::maxpool2(x);
  x = oracle::conv3d(x, net.kernel(1).value, net.bias(1).value, 1);
  x = oracle::group_norm(x, 2, net.gn_scale(1).value, net.gn_shift(1).value);
  ASSERT_EQ(x.size(), got.size());
  double spread = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(got[i], x[i], 1e-12) << i;
    spread = std::max(spread, std::abs(x[i]));
  }
  EXPECT_GT(spread, 0.1);
}

TEST(Vgg3d, ZeroWeightsGiveZeros) {
  Vgg3d<> net(tiny(), 1);
  for (std::size_t l = 0; l < 2; ++l) net.kernel(l).value.fill(0.0);
  SeededRng r(2);
  const auto out = net.forward(random_uniform<double>({1, 3, 8, 8, 3}, r, -1, 1));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Vgg3d, TimeLengthPreservedAndOutputDim) {
  Vgg3d<> net(Vgg3dConfig::desk(), 5);
  SeededRng r(6);
  for (std::size_t T : {1u, 2u, 7u}) {
    const auto out = net.forward(random_uniform<double>({1, T, 32, 32, 3}, r, -1, 1));
    EXPECT_EQ(out.shape(), (Shape{1, T, 512}));
    EXPECT_TRUE(out.all_finite());
  }
}

TEST(Vgg3d, RejectsWrongInputShape) {
  Vgg3d<> net(tiny(), 1);
  EXPECT_THROW(net.forward(Tensor({1, 2, 9, 9, 3})), ShapeError);
  EXPECT_THROW(net.forward(Tensor({1, 2, 8, 8, 1})), ShapeError);
  EXPECT_THROW(net.forward(Tensor({2, 8, 8, 3})), ShapeError);
}

TEST(Vgg3d, TimeLocality) {
  auto c = tiny();
  Vgg3d<> net(c, 7);
  const std::size_t radius = c.time_radius(), T = 9, t0 = 2;
  ASSERT_EQ(radius, 2u);
  SeededRng r(8);
  const auto base = random_uniform<double>({1, T, 8, 8, 3}, r, -1, 1);
  const auto y0 = net.forward(base);
  auto changed_row = [&](std::size_t frame) {
    auto v = base;
    for (std::size_t i = 0; i < 8 * 8 * 3; ++i) v[frame * 192 + i] = r.uniform(-1, 1);
    const auto y = net.forward(v);
    bool diff = false;
    for (std::size_t k = 0; k < 8; ++k) diff |= y.at(0, t0, k) != y0.at(0, t0, k);
    return diff;
  };
  for (std::size_t f = t0 + radius + 1; f < T; ++f) EXPECT_FALSE(changed_row(f)) << f;
  EXPECT_TRUE(changed_row(t0 + radius));
}

// ---------------------------------------------------------------------------

TEST(SyntheticWorld, DeterministicPerSeed) {
  SyntheticWorld<> a(16, 7), b(16, 7), c(16, 8);
  EXPECT_EQ(parameter_checksum(a.parameters()), parameter_checksum(b.parameters()));
  EXPECT_NE(parameter_checksum(a.parameters()), parameter_checksum(c.parameters()));
  SeededRng r1(1), r2(1);
  EXPECT_EQ(a.sample_latent(2, 5, r1), b.sample_latent(2, 5, r2));
  EXPECT_THROW(SyntheticWorld<>(0, 1), std::invalid_argument);
}

TEST(SyntheticTracks, ShapesAndDeterminism) {
  SyntheticWorld<> w(16, 7);
  SeededRng r(3);
  const auto z = w.sample_latent(2, 10, r);
  SyntheticTrackSpec spec{16, 0.3, DistractorMode::independent, 11};
  const auto a = synth_tracks(spec, w, z, 3), b = synth_tracks(spec, w, z, 3);
  ASSERT_EQ(a.distractors.size(), 3u);
  EXPECT_EQ(a.matching.shape(), (Shape{2, 10, 512}));
  EXPECT_EQ(a.matching, b.matching);
  for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(a.distractors[d], b.distractors[d]);
}

TEST(SyntheticTracks, MatchingCorrelatesBetterThanDistractors) {
  SyntheticWorld<> w(16, 7);
  for (auto mode : {DistractorMode::independent, DistractorMode::time_shifted}) {
    int wins = 0;
    for (std::uint64_t draw = 0; draw < 100; ++draw) {
      SeededRng r(derive_seed(100, "draw", draw));
      const auto z = w.sample_latent(1, 80, r);
      const auto clean = w.visual(z, 0.0, r);
      const auto tr = synth_tracks(SyntheticTrackSpec{16, 0.5, mode, draw}, w, z, 1);
      if (correlation(tr.matching, clean) > correlation(tr.distractors[0], clean)) ++wins;
    }
    EXPECT_EQ(wins, 100) << distractor_mode_name(mode);
  }
}

TEST(SyntheticTracks, TimeShiftedIsARollOfTheTruth) {
  SyntheticWorld<> w(4, 2);
  SeededRng r(9);
  const std::size_t T = 80;
  const auto z = w.sample_latent(1, T, r);
  const auto tr = synth_tracks(SyntheticTrackSpec{4, 0.0, DistractorMode::time_shifted, 5},
                               w, z, 4);
  const std::size_t D = 512;
  for (const auto &d : tr.distractors) {
    std::size_t found = 0, count = 0;
    for (std::size_t s = 0; s < T; ++s) {
      bool eq = true;
      for (std::size_t t = 0; t < T && eq; ++t)
        for (std::size_t k = 0; k < D && eq; ++k)
          eq = d[t * D + k] == tr.matching[((t + s) % T) * D + k];
      if (eq) found = s, ++count;
    }
    ASSERT_EQ(count, 1u);
    EXPECT_GE(found, kMinShift);
    EXPECT_LE(found, T - kMinShift);
  }
  EXPECT_THROW(synth_tracks(SyntheticTrackSpec{4, 0.0, DistractorMode::time_shifted, 5}, w,
                            w.sample_latent(1, 67, r), 1),
               std::invalid_argument);
}

TEST(SyntheticTracks, DistractorModeNames) {
  EXPECT_EQ(parse_distractor_mode("independent"), DistractorMode::independent);
  EXPECT_EQ(parse_distractor_mode("time-shifted"), DistractorMode::time_shifted);
  EXPECT_THROW(parse_distractor_mode("shifted"), std::invalid_argument);
}

TEST(Frontends, ParametersAreFrozen) {
  SyntheticWorld<> w(16, 7);
  SyntheticFrontend<double> s(w, 0.0);
  for (const auto *p : s.parameters()) EXPECT_FALSE(p->trainable) << p->name;
  Vgg3dFrontend<double> v(tiny(), 16, 1);
  for (const auto *p : v.parameters()) EXPECT_FALSE(p->trainable) << p->name;
}

TEST(Frontends, Vgg3dRenderStaysInPixelRange) {
  Vgg3dFrontend<double> v(tiny(), 16, 1);
  SyntheticWorld<> w(16, 7);
  SeededRng r(1);
  const auto z = w.sample_latent(1, 3, r);
  const auto px = v.render(z);
  EXPECT_EQ(px.shape(), (Shape{1, 3, 8, 8, 3}));
  for (double p : px.data()) {
    EXPECT_GE(p, -1.0);
    EXPECT_LE(p, 1.0);
  }
  EXPECT_EQ(v.features(z, r).shape(), (Shape{1, 3, 8}));
}
