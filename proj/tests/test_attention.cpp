// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "avsel/attention.hpp"
#include "avsel/gradcheck.hpp"
#include "oracles.hpp"

using namespace avsel;

namespace {

const QueryNetConfig kSmall{{240, 8, 8, 8, 8, 8}, 5};

// Running stats away from the identity so infer mode is not a pass-through.
void perturb_stats(QueryNet<double> &q, std::uint64_t seed) {
  SeededRng r(seed);
  for (auto &s : q.norm_stats()) {
    for (auto &m : s.mean.data()) m = r.uniform(-0.2, 0.2);
    for (auto &v : s.var.data()) v = r.uniform(0.5, 2.0);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// query network

TEST(QueryNet, OutputShape) {
  QueryNet<> q(QueryNetConfig::full(), 1);
  SeededRng r(2);
  const auto a = random_normal<double>({2, 7, 240}, r);
  EXPECT_EQ(q.forward(a, NormMode::train).shape(), (Shape{2, 7, 512}));
  EXPECT_EQ(q.infer(a).shape(), (Shape{2, 7, 512}));
  EXPECT_EQ(QueryNetConfig::full().layers(), 5u);
}

TEST(QueryNet, RejectsWrongInputDim) {
  QueryNet<> q(kSmall, 1);
  EXPECT_THROW(q.infer(Tensor({1, 4, 239})), ShapeError);
  EXPECT_THROW(q.infer(Tensor({4, 240})), ShapeError);
}

TEST(QueryNet, ZeroWeightsGiveZeroPreNorm) {
  QueryNet<> q(kSmall, 1);
  for (std::size_t l = 0; l < 5; ++l) q.kernel(l).value.fill(0.0);
  SeededRng r(3);
  QueryCache<double> cache;
  const auto out = q.forward(random_normal<double>({2, 6, 240}, r), NormMode::train, false,
                             &cache);
  EXPECT_EQ(out.shape(), (Shape{2, 6, 8}));
  for (const auto &pre : cache.pre)
    for (double v : pre.data()) EXPECT_EQ(v, 0.0);
  // zero activations normalize to the shift
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(QueryNet, ReceptiveFieldArithmetic) {
  EXPECT_EQ(QueryNetConfig::full().receptive_field(), 21u);
  EXPECT_EQ(QueryNetConfig{}.receptive_field(), 1 + 5 * 4u);
}

TEST(QueryNet, PerturbationBeyondRadiusLeavesOutputUnchanged) {
  QueryNet<> q(kSmall, 4);
  perturb_stats(q, 5);
  SeededRng r(6);
  const std::size_t T = 40, t0 = 20, radius = (q.config().receptive_field() - 1) / 2;
  ASSERT_EQ(radius, 10u);
  const auto base = random_normal<double>({1, T, 240}, r);
  const auto y0 = q.infer(base);
  auto output_changed = [&](std::size_t step) {
    auto a = base;
    for (std::size_t c = 0; c < 240; ++c) a.at(0, step, c) += r.normal();
    const auto y = q.infer(a);
    for (std::size_t k = 0; k < 8; ++k)
      if (y.at(0, t0, k) != y0.at(0, t0, k)) return true;
    return false;
  };
  for (std::size_t s = 0; s < T; ++s) {
    const std::size_t d = s > t0 ? s - t0 : t0 - s;
    if (d > radius) { EXPECT_FALSE(output_changed(s)) << "step " << s; }
  }
  // steps t0 +- 12 are outside the window, and the window edge is live
  EXPECT_FALSE(output_changed(t0 + 12));
  EXPECT_FALSE(output_changed(t0 - 12));
  EXPECT_TRUE(output_changed(t0 + radius) || output_changed(t0 - radius));
}

TEST(QueryNet, TrainModeUpdatesRunningStatsOnlyWhenAsked) {
  QueryNet<> q(kSmall, 1);
  SeededRng r(2);
  const auto a = random_normal<double>({2, 5, 240}, r);
  const auto before = q.norm_stats()[0].mean;
  q.forward(a, NormMode::train, false);
  EXPECT_EQ(q.norm_stats()[0].mean, before);
  q.forward(a, NormMode::train, true);
  EXPECT_NE(q.norm_stats()[0].mean, before);
}

// ---------------------------------------------------------------------------
// bilinear score

TEST(Bilinear, HandExample) {
  const Tensor q({2, 1, 2}, {1, 0, 0, 1});
  const Tensor v({2, 1, 2}, {1, 2, 3, 4});
  const Tensor w({2, 2}, {1, 0, 0, 1});
  const auto s = bilinear_score(q, w, v);
  EXPECT_EQ(s.vec(), (std::vector<double>{1, 3, 2, 4}));
}

TEST(Bilinear, OrthonormalRowsGiveIdentity) {
  // per step, rows of element 0 and 1 are orthonormal in R^2
  const double c = std::cos(0.3), s = std::sin(0.3);
  const Tensor v({2, 2, 2}, {c, s, 1, 0, -s, c, 0, 1});
  Tensor w({2, 2}, {1, 0, 0, 1});
  const auto sc = bilinear_score(v, w, v);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < 2; ++k)
        EXPECT_NEAR(sc.at(i, j, k), i == k ? 1.0 : 0.0, 1e-15);
}

TEST(Bilinear, ZeroWGivesZeroScores) {
  SeededRng r(1);
  const auto s = bilinear_score(random_normal<double>({3, 4, 5}, r), Tensor({5, 6}),
                                random_normal<double>({3, 4, 6}, r));
  for (double v : s.data()) EXPECT_EQ(v, 0.0);
}

TEST(Bilinear, MatchesEinsumOracleExactly) {
  SeededRng r(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 1 + r.index(8), N = 1 + r.index(8), T = 1 + r.index(8);
    const std::size_t Dq = 1 + r.index(8), Dv = 1 + r.index(8);
    const auto q = random_normal<double>({B, T, Dq}, r);
    const auto w = random_normal<double>({Dq, Dv}, r);
    const auto v = random_normal<double>({N, T, Dv}, r);
    EXPECT_EQ(bilinear_score(q, w, v), oracle::einsum_bilinear(q, w, v)) << trial;
  }
}

TEST(Bilinear, RejectsMismatchedDims) {
  EXPECT_THROW(bilinear_score(Tensor({2, 3, 4}), Tensor({5, 6}), Tensor({2, 3, 6})),
               ShapeError);
  EXPECT_THROW(bilinear_score(Tensor({2, 3, 4}), Tensor({4, 6}), Tensor({2, 3, 5})),
               ShapeError);
  EXPECT_THROW(bilinear_score(Tensor({2, 3, 4}), Tensor({4, 6}), Tensor({2, 4, 6})),
               ShapeError);
}

TEST(Bilinear, BackwardMatchesFiniteDifferences) {
  SeededRng r(8);
  auto q = random_normal<double>({2, 3, 4}, r);
  auto w = random_normal<double>({4, 5}, r);
  auto v = random_normal<double>({3, 3, 5}, r);
  const auto R = random_normal<double>({2, 3, 3}, r);
  auto loss = [&] {
    const auto s = bilinear_score(q, w, v);
    double acc = 0;
    for (std::size_t i = 0; i < s.size(); ++i) acc += R[i] * s[i];
    return acc;
  };
  const auto g = bilinear_backward(q, w, v, project_tracks(w, v), R);
  const auto fq = finite_diff_grad([&](const Tensor &x) { auto keep = q; q = x; const double l = loss(); q = keep; return l; }, q);
  const auto fw = finite_diff_grad([&](const Tensor &x) { auto keep = w; w = x; const double l = loss(); w = keep; return l; }, w);
  const auto fv = finite_diff_grad([&](const Tensor &x) { auto keep = v; v = x; const double l = loss(); v = keep; return l; }, v);
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_LT(relative_error(g.queries[i], fq[i]), 1e-7);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_LT(relative_error(g.w[i], fw[i]), 1e-7);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_LT(relative_error(g.tracks[i], fv[i]), 1e-7);
}

// ---------------------------------------------------------------------------
// attention weights

TEST(AttentionWeights, ClosedFormExample) {
  const auto a = attention_weights(Tensor({1, 1, 2}, {0.0, std::log(3.0)}));
  EXPECT_NEAR(a[0], 0.25, 1e-15);
  EXPECT_NEAR(a[1], 0.75, 1e-15);
}

TEST(AttentionWeights, BetaZeroIsUniform) {
  SeededRng r(1);
  const auto a = attention_weights(random_normal<double>({2, 3, 4}, r, 5.0), 0.0);
  for (double v : a.data()) EXPECT_EQ(v, 0.25);
}

TEST(AttentionWeights, BetaInfIsOneHotAtArgmax) {
  SeededRng r(2);
  const auto s = random_normal<double>({3, 4, 5}, r);
  const auto a = attention_weights(s, kInf);
  const auto arg = oracle::argmax_rows(s);
  for (std::size_t row = 0; row < arg.size(); ++row)
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(a[row * 5 + k], k == arg[row] ? 1.0 : 0.0);
  // ties resolve to the lowest index
  const auto t = attention_weights(Tensor({1, 1, 3}, {1.0, 2.0, 2.0}), kInf);
  EXPECT_EQ(t.vec(), (std::vector<double>{0, 1, 0}));
}

TEST(AttentionWeights, RowsSumToOneForAllBetas) {
  SeededRng r(3);
  for (double beta : {0.0, 0.1, 0.5, 1.0, 2.0, 10.0, 1e3, kInf}) {
    const auto s = random_normal<double>({4, 6, 7}, r, 20.0);
    const auto a = attention_weights(s, beta);
    for (std::size_t row = 0; row < 24; ++row) {
      double sum = 0;
      for (std::size_t k = 0; k < 7; ++k) {
        EXPECT_GE(a[row * 7 + k], 0.0);
        sum += a[row * 7 + k];
      }
      EXPECT_NEAR(sum, 1.0, 1e-12) << beta;
    }
  }
}

TEST(AttentionWeights, ArgmaxInvariantUnderTemperature) {
  SeededRng r(4);
  const auto s = random_normal<double>({4, 8, 6}, r);
  const auto ref = oracle::argmax_rows(s);
  for (double beta : {0.01, 0.5, 1.0, 2.0, 50.0, kInf})
    EXPECT_EQ(row_argmax(attention_weights(s, beta)), ref) << beta;
}

TEST(AttentionWeights, RejectsNegativeBetaAndNonFinite) {
  EXPECT_THROW(attention_weights(Tensor({1, 1, 2}), -1.0), std::invalid_argument);
  EXPECT_THROW(attention_weights(Tensor({1, 1, 2}, {0.0, NAN})), NumericalError);
}

// ---------------------------------------------------------------------------
// gate, concat, entropy

TEST(Gate, HandExample) {
  const auto out = gate(Tensor({1, 1, 2}, {0.25, 0.75}), Tensor({2, 1, 1}, {2.0, 4.0}));
  EXPECT_EQ(out.vec(), (std::vector<double>{3.5}));
}

TEST(Gate, OneHotSelectsTrackExactly) {
  SeededRng r(5);
  const auto v = random_normal<double>({3, 4, 6}, r);
  for (std::size_t j = 0; j < 3; ++j) {
    Tensor a({2, 4, 3});
    for (std::size_t row = 0; row < 8; ++row) a[row * 3 + j] = 1.0;
    const auto out = gate(a, v);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t d = 0; d < 6; ++d) EXPECT_EQ(out.at(b, t, d), v.at(j, t, d));
  }
}

TEST(Gate, UniformIsPerStepMean) {
  SeededRng r(6);
  const auto v = random_normal<double>({4, 3, 5}, r);
  const auto out = gate(Tensor({1, 3, 4}, 0.25), v);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t d = 0; d < 5; ++d) {
      double m = 0;
      for (std::size_t i = 0; i < 4; ++i) m += v.at(i, t, d);
      EXPECT_NEAR(out.at(0, t, d), m / 4, 1e-15);
    }
}

TEST(Gate, ConvexHullBounds) {
  SeededRng r(7);
  const auto v = random_normal<double>({5, 6, 4}, r);
  const auto a = attention_weights(random_normal<double>({3, 6, 5}, r, 3.0));
  const auto out = gate(a, v);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t d = 0; d < 4; ++d) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t i = 0; i < 5; ++i) lo = std::min(lo, v.at(i, t, d)), hi = std::max(hi, v.at(i, t, d));
        EXPECT_GE(out.at(b, t, d), lo - 1e-12);
        EXPECT_LE(out.at(b, t, d), hi + 1e-12);
      }
}

TEST(Gate, RejectsShapeMismatch) {
  EXPECT_THROW(gate(Tensor({1, 2, 3}), Tensor({2, 2, 4})), ShapeError);
  EXPECT_THROW(gate(Tensor({1, 2, 3}), Tensor({3, 5, 4})), ShapeError);
}

TEST(Concat, ShapeAndContents) {
  SeededRng r(8);
  const auto a = random_normal<double>({2, 5, 240}, r);
  const auto f = concat_features(a, Tensor({2, 5, 512}));
  ASSERT_EQ(f.shape(), (Shape{2, 5, 752}));
  for (std::size_t row = 0; row < 10; ++row) {
    for (std::size_t c = 0; c < 240; ++c) EXPECT_EQ(f[row * 752 + c], a[row * 240 + c]);
    for (std::size_t c = 240; c < 752; ++c) EXPECT_EQ(f[row * 752 + c], 0.0);
  }
  EXPECT_THROW(concat_features(a, Tensor({2, 4, 512})), ShapeError);
}

TEST(Entropy, Examples) {
  EXPECT_NEAR(attention_entropy(Tensor({1, 1, 4}, 0.25))[0], std::log(4.0), 1e-15);
  EXPECT_EQ(attention_entropy(Tensor({1, 1, 3}, {0, 1, 0}))[0], 0.0);
  EXPECT_NEAR(attention_entropy(Tensor({1, 1, 2}, {0.25, 0.75}))[0], 0.5623351446, 1e-9);
}

// ---------------------------------------------------------------------------
// whole model

TEST(AttentionModel, WeightsAreNotZeroInitialized) {
  AttentionModel<> m(kSmall, 8, 1);
  double mx = 0;
  for (double v : m.w().value.data()) mx = std::max(mx, std::abs(v));
  EXPECT_GT(mx, 0.0);
  EXPECT_EQ(m.w().value.shape(), (Shape{8, 8}));
  EXPECT_EQ(AttentionModel<>().w().value.shape(), (Shape{512, 512}));
}

TEST(AttentionModel, JointPermutationEquivariance) {
  AttentionModel<> m(kSmall, 6, 2);
  perturb_stats(m.query(), 3);
  SeededRng r(4);
  const std::size_t B = 4, T = 5;
  const auto A = random_normal<double>({B, T, 240}, r);
  const auto V = random_normal<double>({B, T, 6}, r);
  const std::vector<std::size_t> pi{2, 0, 3, 1};
  Tensor Ap(A.shape()), Vp(V.shape());
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(A.ptr() + b * T * 240, T * 240, Ap.ptr() + pi[b] * T * 240);
    std::copy_n(V.ptr() + b * T * 6, T * 6, Vp.ptr() + pi[b] * T * 6);
  }
  const auto a = attention_weights(m.scores(A, V));
  const auto ap = attention_weights(m.scores(Ap, Vp));
  const auto g = gate(a, V), gp = gate(ap, Vp);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < B; ++k)
        EXPECT_NEAR(ap.at(pi[b], t, pi[k]), a.at(b, t, k), 1e-12);
      for (std::size_t d = 0; d < 6; ++d) EXPECT_NEAR(gp.at(pi[b], t, d), g.at(b, t, d), 1e-12);
    }
}

TEST(AttentionModel, VariableTrackCount) {
  AttentionModel<> m(kSmall, 6, 2);
  SeededRng r(5);
  const auto s = m.scores(random_normal<double>({1, 7, 240}, r), random_normal<double>({9, 7, 6}, r));
  EXPECT_EQ(s.shape(), (Shape{1, 7, 9}));
}

// ---------------------------------------------------------------------------
// end-to-end gradient check

TEST(GradientCheck, FullChainMatchesFiniteDifferences) {
  GradCheckConfig cfg;
  cfg.batch = 4;
  cfg.steps = 6;
  cfg.coords_per_tensor = 24;
  const auto rep = gradient_check(cfg);
  EXPECT_GT(rep.checked, 250u);
  EXPECT_LT(rep.skipped, rep.checked / 4);
  EXPECT_LT(rep.max_rel_err, 1e-4) << "worst " << rep.worst;
}

TEST(GradientCheck, CoversEveryKernelBiasAndW) {
  const auto rep = gradient_check(GradCheckConfig{});
  std::vector<std::string> names;
  for (const auto &e : rep.entries) names.push_back(e.tensor);
  for (std::size_t l = 1; l <= 5; ++l)
    for (const char *part : {".kernel", ".bias"}) {
      const auto n = "query.layer" + std::to_string(l) + part;
      EXPECT_NE(std::find(names.begin(), names.end(), n), names.end()) << n;
    }
  EXPECT_NE(std::find(names.begin(), names.end(), "bilinear.W"), names.end());
  EXPECT_LT(rep.max_rel_err, 1e-4) << "worst " << rep.worst;
}

TEST(GradientCheck, SeveralSeeds) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    GradCheckConfig cfg;
    cfg.seed = seed;
    cfg.batch = 2 + seed % 3;
    const auto rep = gradient_check(cfg);
    EXPECT_LT(rep.max_rel_err, 1e-4) << "seed " << seed << " worst " << rep.worst;
  }
}
