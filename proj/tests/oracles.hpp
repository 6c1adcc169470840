// SPDX-License-Identifier: Apache-2.0
// Brute-force reference implementations used by the tests. Each one is
// written from the operation's definition with plain index arithmetic and
// shares no code with the library beyond the tensor container.
#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

#include "avsel/tensor.hpp"

namespace oracle {

using avsel::Tensor;

// out[b,t,o] = sum_{k,c} x[b, t+k-K/2, c] w[k,c,o] + bias[o]; terms outside
// [0,T) are absent. Sum order: k outer, c inner, starting at +0, bias last.
inline Tensor conv1d(const Tensor &x, const Tensor &w, const Tensor &bias) {
  const long B = long(x.dim(0)), T = long(x.dim(1)), C = long(x.dim(2));
  const long K = long(w.dim(0)), O = long(w.dim(2));
  Tensor out({x.dim(0), x.dim(1), w.dim(2)});
  for (long b = 0; b < B; ++b)
    for (long t = 0; t < T; ++t)
      for (long o = 0; o < O; ++o) {
        double acc = 0.0;
        for (long k = 0; k < K; ++k) {
          const long s = t + k - K / 2;
          if (s < 0 || s >= T) continue;
          for (long c = 0; c < C; ++c)
            acc += x.at(b, s, c) * w.at(k, c, o);
        }
        out.at(b, t, o) = acc + bias[std::size_t(o)];
      }
  return out;
}

// SAME in time, VALID in space with spatial stride s. Sum order: kt, kh, kw,
// c (innermost), bias last.
inline Tensor conv3d(const Tensor &x, const Tensor &w, const Tensor &bias,
                     std::size_t s) {
  const long B = long(x.dim(0)), T = long(x.dim(1)), H = long(x.dim(2)),
             W = long(x.dim(3)), C = long(x.dim(4));
  const long KT = long(w.dim(0)), KH = long(w.dim(1)), KW = long(w.dim(2)),
             O = long(w.dim(4));
  const long Ho = (H - KH) / long(s) + 1, Wo = (W - KW) / long(s) + 1;
  Tensor out({std::size_t(B), std::size_t(T), std::size_t(Ho), std::size_t(Wo),
              std::size_t(O)});
  for (long b = 0; b < B; ++b)
    for (long t = 0; t < T; ++t)
      for (long i = 0; i < Ho; ++i)
        for (long j = 0; j < Wo; ++j)
          for (long o = 0; o < O; ++o) {
            double acc = 0.0;
            for (long kt = 0; kt < KT; ++kt) {
              const long tt = t + kt - KT / 2;
              if (tt < 0 || tt >= T) continue;
              for (long kh = 0; kh < KH; ++kh)
                for (long kw = 0; kw < KW; ++kw)
                  for (long c = 0; c < C; ++c)
                    acc += x.at(b, tt, i * long(s) + kh, j * long(s) + kw, c) *
                           w.at(kt, kh, kw, c, o);
            }
            out.at(b, t, i, j, o) = acc + bias[std::size_t(o)];
          }
  return out;
}

// S[i,j,k] = sum_l Q[i,j,l] * (sum_m W[l,m] V[k,j,m]).
inline Tensor einsum_bilinear(const Tensor &q, const Tensor &w, const Tensor &v) {
  const std::size_t B = q.dim(0), T = q.dim(1), Dq = q.dim(2);
  const std::size_t N = v.dim(0), Dv = v.dim(2);
  Tensor s({B, T, N});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < T; ++j)
      for (std::size_t k = 0; k < N; ++k) {
        double acc = 0.0;
        for (std::size_t l = 0; l < Dq; ++l) {
          double wv = 0.0;
          for (std::size_t m = 0; m < Dv; ++m) wv += w.at(l, m) * v.at(k, j, m);
          acc += q.at(i, j, l) * wv;
        }
        s.at(i, j, k) = acc;
      }
  return s;
}

// Hard selection: first index of the row maximum.
inline std::vector<std::size_t> argmax_rows(const Tensor &x) {
  const std::size_t n = x.shape().back();
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < x.size() / n; ++r) {
    std::size_t best = 0;
    for (std::size_t k = 0; k < n; ++k)
      if (x[r * n + k] > x[r * n + best]) best = k;
    out.push_back(best);
  }
  return out;
}

// Closest video frame for acoustic step i (1-based): round-half-up of
// i * (vn/vd) / (an/ad), clamped to [1, frames]. Exact integer arithmetic.
inline std::size_t sync_index(std::uint64_t i, std::uint64_t vn, std::uint64_t vd,
                              std::uint64_t an, std::uint64_t ad,
                              std::size_t frames) {
  using u128 = unsigned __int128;
  const u128 num = u128(i) * vn * ad, den = u128(vd) * an;
  u128 q = num / den;
  const u128 r = num % den;
  if (2 * r >= den) ++q;
  if (q < 1) q = 1;
  if (q > frames) q = frames;
  return std::size_t(q);
}

// Direct O(n^2) DFT power spectrum of a real frame zero-padded to n.
inline std::vector<double> dft_power(const std::vector<double> &frame, std::size_t n) {
  std::vector<double> p(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> acc{};
    for (std::size_t t = 0; t < frame.size(); ++t)
      acc += frame[t] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * t) / double(n));
    p[k] = std::norm(acc);
  }
  return p;
}

}  // namespace oracle

namespace oracle {

// Group norm over [B, T, S..., C] per (b, t, group): population variance,
// (x - mean) / sqrt(var + eps) then scale and shift.
inline Tensor group_norm(const Tensor &x, std::size_t groups, const Tensor &gamma,
                         const Tensor &beta, double eps = 1e-5) {
  const std::size_t C = x.shape().back(), units = x.dim(0) * x.dim(1);
  const std::size_t S = x.size() / (units * C), gs = C / groups;
  Tensor y(x.shape());
  for (std::size_t u = 0; u < units; ++u)
    for (std::size_t g = 0; g < groups; ++g) {
      double sum = 0;
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t j = 0; j < gs; ++j) sum += x[(u * S + s) * C + g * gs + j];
      const double n = double(S * gs), mean = sum / n;
      double sq = 0;
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t j = 0; j < gs; ++j) {
          const double d = x[(u * S + s) * C + g * gs + j] - mean;
          sq += d * d;
        }
      const double inv = 1.0 / std::sqrt(sq / n + eps);
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t j = 0; j < gs; ++j) {
          const std::size_t i = (u * S + s) * C + g * gs + j;
          y[i] = (x[i] - mean) * inv * gamma[g * gs + j] + beta[g * gs + j];
        }
    }
  return y;
}

inline Tensor maxpool2(const Tensor &x) {
  const std::size_t B = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  Tensor y({B, T, H / 2, W / 2, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < H / 2; ++i)
        for (std::size_t j = 0; j < W / 2; ++j)
          for (std::size_t c = 0; c < C; ++c)
            y.at(b, t, i, j, c) = std::max(
                std::max(x.at(b, t, 2 * i, 2 * j, c), x.at(b, t, 2 * i, 2 * j + 1, c)),
                std::max(x.at(b, t, 2 * i + 1, 2 * j, c), x.at(b, t, 2 * i + 1, 2 * j + 1, c)));
  return y;
}

}  // namespace oracle
