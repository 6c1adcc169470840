// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ops.hpp
 * @brief  Forward ops and their analytic backward passes.
 *
 * Layouts are channels-last: sequences are [B, T, C], videos [B, T, H, W, C].
 *
 * Summation order is fixed so a plain nested-loop reference reproduces the
 * results bit for bit: convolutions start each output from +0, accumulate
 * over kernel taps in row-major tap order with the input channel innermost,
 * and add the bias last. Reductions run in increasing flat index order.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "avsel/tensor.hpp"

namespace avsel {

inline constexpr double kNormEps = 1e-5;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// conv1d: [B,T,Cin] * [K,Cin,Cout] + [Cout] -> [B,T,Cout], SAME in time.

template <class Real>
struct Conv1dGrads {
  BasicTensor<Real> input, kernel, bias;
};

namespace detail {

template <class Real>
void check_conv1d(const BasicTensor<Real> &input,
                  const BasicTensor<Real> &kernel,
                  const BasicTensor<Real> &bias) {
  expect_rank(input, 3, "conv1d input");
  expect_rank(kernel, 3, "conv1d kernel");
  if (kernel.dim(0) % 2 == 0)
    throw ShapeError("conv1d: kernel size (dim 0) must be odd, got " +
                     std::to_string(kernel.dim(0)));
  if (kernel.dim(1) != input.dim(2))
    throw ShapeError("conv1d: kernel input channels (dim 1) = " +
                     std::to_string(kernel.dim(1)) +
                     " but input channels (dim 2) = " +
                     std::to_string(input.dim(2)));
  expect_shape(bias, {kernel.dim(2)}, "conv1d bias");
}

}  // namespace detail

template <class Real>
BasicTensor<Real> conv1d(const BasicTensor<Real> &input,
                         const BasicTensor<Real> &kernel,
                         const BasicTensor<Real> &bias) {
  detail::check_conv1d(input, kernel, bias);
  const std::size_t B = input.dim(0), T = input.dim(1), Cin = input.dim(2);
  const std::size_t K = kernel.dim(0), Cout = kernel.dim(2);
  const long pad = static_cast<long>(K / 2);
  BasicTensor<Real> out({B, T, Cout});
  const Real *x = input.ptr();
  const Real *w = kernel.ptr();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      Real *row = out.ptr() + (b * T + t) * Cout;
      for (std::size_t k = 0; k < K; ++k) {
        const long tt = static_cast<long>(t + k) - pad;
        if (tt < 0 || tt >= static_cast<long>(T)) continue;
        const Real *xin = x + (b * T + static_cast<std::size_t>(tt)) * Cin;
        for (std::size_t ci = 0; ci < Cin; ++ci) {
          const Real xv = xin[ci];
          const Real *wk = w + (k * Cin + ci) * Cout;
          for (std::size_t co = 0; co < Cout; ++co) row[co] += xv * wk[co];
        }
      }
      for (std::size_t co = 0; co < Cout; ++co) row[co] += bias[co];
    }
  }
  return out;
}

template <class Real>
Conv1dGrads<Real> conv1d_backward(const BasicTensor<Real> &input,
                                  const BasicTensor<Real> &kernel,
                                  const BasicTensor<Real> &grad_out) {
  const std::size_t B = input.dim(0), T = input.dim(1), Cin = input.dim(2);
  const std::size_t K = kernel.dim(0), Cout = kernel.dim(2);
  expect_shape(grad_out, {B, T, Cout}, "conv1d_backward grad");
  const long pad = static_cast<long>(K / 2);

  // kernel transposed to [K, Cout, Cin] so the input-gradient loop is unit
  // stride
  BasicTensor<Real> wt({K, Cout, Cin});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t ci = 0; ci < Cin; ++ci)
      for (std::size_t co = 0; co < Cout; ++co)
        wt[(k * Cout + co) * Cin + ci] = kernel[(k * Cin + ci) * Cout + co];

  Conv1dGrads<Real> g{BasicTensor<Real>(input.shape()),
                      BasicTensor<Real>(kernel.shape()),
                      BasicTensor<Real>({Cout})};
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      const Real *dy = grad_out.ptr() + (b * T + t) * Cout;
      for (std::size_t co = 0; co < Cout; ++co) g.bias[co] += dy[co];
      for (std::size_t k = 0; k < K; ++k) {
        const long tt = static_cast<long>(t + k) - pad;
        if (tt < 0 || tt >= static_cast<long>(T)) continue;
        const std::size_t row = (b * T + static_cast<std::size_t>(tt)) * Cin;
        Real *dx = g.input.ptr() + row;
        const Real *xin = input.ptr() + row;
        for (std::size_t co = 0; co < Cout; ++co) {
          const Real gv = dy[co];
          const Real *wk = wt.ptr() + (k * Cout + co) * Cin;
          for (std::size_t ci = 0; ci < Cin; ++ci) dx[ci] += gv * wk[ci];
        }
        for (std::size_t ci = 0; ci < Cin; ++ci) {
          const Real xv = xin[ci];
          Real *dw = g.kernel.ptr() + (k * Cin + ci) * Cout;
          for (std::size_t co = 0; co < Cout; ++co) dw[co] += xv * dy[co];
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// conv3d: [B,T,H,W,Cin] * [KT,KH,KW,Cin,Cout] + [Cout]. SAME padding in time
// (KT odd), VALID in space, spatial stride s.

inline std::size_t valid_out(std::size_t in, std::size_t kernel,
                             std::size_t stride) {
  return (in - kernel) / stride + 1;
}

template <class Real>
struct Conv3dGrads {
  BasicTensor<Real> input, kernel, bias;
};

namespace detail {

template <class Real>
void check_conv3d(const BasicTensor<Real> &input,
                  const BasicTensor<Real> &kernel,
                  const BasicTensor<Real> &bias, std::size_t stride) {
  expect_rank(input, 5, "conv3d input");
  expect_rank(kernel, 5, "conv3d kernel");
  if (stride == 0) throw std::invalid_argument("conv3d: stride must be >= 1");
  if (kernel.dim(0) % 2 == 0)
    throw ShapeError("conv3d: time kernel extent (dim 0) must be odd");
  if (input.dim(2) < kernel.dim(1))
    throw ShapeError("conv3d: input height (dim 2) = " +
                     std::to_string(input.dim(2)) +
                     " is smaller than kernel extent " +
                     std::to_string(kernel.dim(1)));
  if (input.dim(3) < kernel.dim(2))
    throw ShapeError("conv3d: input width (dim 3) = " +
                     std::to_string(input.dim(3)) +
                     " is smaller than kernel extent " +
                     std::to_string(kernel.dim(2)));
  if (kernel.dim(3) != input.dim(4))
    throw ShapeError("conv3d: kernel input channels (dim 3) = " +
                     std::to_string(kernel.dim(3)) +
                     " but input channels (dim 4) = " +
                     std::to_string(input.dim(4)));
  expect_shape(bias, {kernel.dim(4)}, "conv3d bias");
}

}  // namespace detail

template <class Real>
BasicTensor<Real> conv3d(const BasicTensor<Real> &input,
                         const BasicTensor<Real> &kernel,
                         const BasicTensor<Real> &bias, std::size_t stride) {
  detail::check_conv3d(input, kernel, bias, stride);
  const std::size_t B = input.dim(0), T = input.dim(1), H = input.dim(2),
                    W = input.dim(3), Cin = input.dim(4);
  const std::size_t KT = kernel.dim(0), KH = kernel.dim(1), KW = kernel.dim(2),
                    Cout = kernel.dim(4);
  const std::size_t Ho = valid_out(H, KH, stride), Wo = valid_out(W, KW, stride);
  const long pad = static_cast<long>(KT / 2);
  BasicTensor<Real> out({B, T, Ho, Wo, Cout});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          Real *row = out.ptr() + (((b * T + t) * Ho + oh) * Wo + ow) * Cout;
          for (std::size_t kt = 0; kt < KT; ++kt) {
            const long tt = static_cast<long>(t + kt) - pad;
            if (tt < 0 || tt >= static_cast<long>(T)) continue;
            for (std::size_t kh = 0; kh < KH; ++kh)
              for (std::size_t kw = 0; kw < KW; ++kw) {
                const Real *xin =
                    input.ptr() +
                    (((b * T + static_cast<std::size_t>(tt)) * H +
                      oh * stride + kh) * W + ow * stride + kw) * Cin;
                const Real *wk =
                    kernel.ptr() + ((kt * KH + kh) * KW + kw) * Cin * Cout;
                for (std::size_t ci = 0; ci < Cin; ++ci) {
                  const Real xv = xin[ci];
                  const Real *wc = wk + ci * Cout;
                  for (std::size_t co = 0; co < Cout; ++co)
                    row[co] += xv * wc[co];
                }
              }
          }
          for (std::size_t co = 0; co < Cout; ++co) row[co] += bias[co];
        }
  return out;
}

template <class Real>
Conv3dGrads<Real> conv3d_backward(const BasicTensor<Real> &input,
                                  const BasicTensor<Real> &kernel,
                                  const BasicTensor<Real> &grad_out,
                                  std::size_t stride) {
  const std::size_t B = input.dim(0), T = input.dim(1), H = input.dim(2),
                    W = input.dim(3), Cin = input.dim(4);
  const std::size_t KT = kernel.dim(0), KH = kernel.dim(1), KW = kernel.dim(2),
                    Cout = kernel.dim(4);
  const std::size_t Ho = valid_out(H, KH, stride), Wo = valid_out(W, KW, stride);
  expect_shape(grad_out, {B, T, Ho, Wo, Cout}, "conv3d_backward grad");
  const long pad = static_cast<long>(KT / 2);
  Conv3dGrads<Real> g{BasicTensor<Real>(input.shape()),
                      BasicTensor<Real>(kernel.shape()),
                      BasicTensor<Real>({Cout})};
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          const Real *dy =
              grad_out.ptr() + (((b * T + t) * Ho + oh) * Wo + ow) * Cout;
          for (std::size_t co = 0; co < Cout; ++co) g.bias[co] += dy[co];
          for (std::size_t kt = 0; kt < KT; ++kt) {
            const long tt = static_cast<long>(t + kt) - pad;
            if (tt < 0 || tt >= static_cast<long>(T)) continue;
            for (std::size_t kh = 0; kh < KH; ++kh)
              for (std::size_t kw = 0; kw < KW; ++kw) {
                const std::size_t in_off =
                    (((b * T + static_cast<std::size_t>(tt)) * H +
                      oh * stride + kh) * W + ow * stride + kw) * Cin;
                const std::size_t k_off = ((kt * KH + kh) * KW + kw) * Cin;
                for (std::size_t ci = 0; ci < Cin; ++ci) {
                  const Real xv = input[in_off + ci];
                  const Real *wc = kernel.ptr() + (k_off + ci) * Cout;
                  Real *dw = g.kernel.ptr() + (k_off + ci) * Cout;
                  Real acc = 0;
                  for (std::size_t co = 0; co < Cout; ++co) {
                    acc += dy[co] * wc[co];
                    dw[co] += xv * dy[co];
                  }
                  g.input[in_off + ci] += acc;
                }
              }
          }
        }
  return g;
}

// ---------------------------------------------------------------------------
// 2x2 spatial max pooling on [B,T,H,W,C]; a trailing odd row/column is dropped.

template <class Real>
BasicTensor<Real> maxpool_spatial(const BasicTensor<Real> &input) {
  expect_rank(input, 5, "maxpool_spatial input");
  const std::size_t B = input.dim(0), T = input.dim(1), H = input.dim(2),
                    W = input.dim(3), C = input.dim(4);
  if (H < 2 || W < 2)
    throw ShapeError("maxpool_spatial: spatial dims must be >= 2, got " +
                     std::to_string(H) + "x" + std::to_string(W));
  const std::size_t Ho = H / 2, Wo = W / 2;
  BasicTensor<Real> out({B, T, Ho, Wo, C});
  for (std::size_t bt = 0; bt < B * T; ++bt)
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow)
        for (std::size_t c = 0; c < C; ++c) {
          const auto at = [&](std::size_t h, std::size_t w) {
            return input[((bt * H + h) * W + w) * C + c];
          };
          Real m = at(2 * oh, 2 * ow);
          m = std::max(m, at(2 * oh, 2 * ow + 1));
          m = std::max(m, at(2 * oh + 1, 2 * ow));
          m = std::max(m, at(2 * oh + 1, 2 * ow + 1));
          out[((bt * Ho + oh) * Wo + ow) * C + c] = m;
        }
  return out;
}

/// Routes each output gradient to the first maximal cell of its window
/// (scan order (0,0), (0,1), (1,0), (1,1)).
template <class Real>
BasicTensor<Real> maxpool_spatial_backward(const BasicTensor<Real> &input,
                                           const BasicTensor<Real> &grad_out) {
  const std::size_t B = input.dim(0), T = input.dim(1), H = input.dim(2),
                    W = input.dim(3), C = input.dim(4);
  const std::size_t Ho = H / 2, Wo = W / 2;
  expect_shape(grad_out, {B, T, Ho, Wo, C}, "maxpool_spatial_backward grad");
  BasicTensor<Real> g(input.shape());
  for (std::size_t bt = 0; bt < B * T; ++bt)
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow)
        for (std::size_t c = 0; c < C; ++c) {
          std::size_t best = ((bt * H + 2 * oh) * W + 2 * ow) * C + c;
          for (std::size_t dh = 0; dh < 2; ++dh)
            for (std::size_t dw = 0; dw < 2; ++dw) {
              const std::size_t i =
                  ((bt * H + 2 * oh + dh) * W + 2 * ow + dw) * C + c;
              if (input[i] > input[best]) best = i;
            }
          g[best] += grad_out[((bt * Ho + oh) * Wo + ow) * C + c];
        }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU

template <class Real>
BasicTensor<Real> relu(const BasicTensor<Real> &x) {
  BasicTensor<Real> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > Real(0) ? x[i] : Real(0);
  return y;
}

/// Gradient through ReLU given the pre-activation; the derivative at 0 is 0.
template <class Real>
BasicTensor<Real> relu_backward(const BasicTensor<Real> &pre,
                                const BasicTensor<Real> &grad_out) {
  expect_shape(grad_out, pre.shape(), "relu_backward grad");
  BasicTensor<Real> g(pre.shape());
  for (std::size_t i = 0; i < pre.size(); ++i)
    g[i] = pre[i] > Real(0) ? grad_out[i] : Real(0);
  return g;
}

// ---------------------------------------------------------------------------
// Group normalization over [B, T, spatial..., C]. Statistics are taken per
// (sample, time, group) across all spatial positions and the group's
// channels; variance is the population variance.

template <class Real>
struct NormResult {
  BasicTensor<Real> output;
  BasicTensor<Real> normalized;  // before scale/shift
  BasicTensor<Real> inv_std;     // one entry per statistics unit
};

template <class Real>
NormResult<Real> group_norm(const BasicTensor<Real> &input, std::size_t groups,
                            const BasicTensor<Real> &gamma,
                            const BasicTensor<Real> &beta,
                            double eps = kNormEps) {
  if (input.rank() < 3)
    throw ShapeError("group_norm: expected rank >= 3 [B,T,...,C], got " +
                     shape_str(input.shape()));
  const std::size_t C = input.shape().back();
  if (groups == 0 || C % groups != 0)
    throw ShapeError("group_norm: channels (last dim) = " + std::to_string(C) +
                     " not divisible by groups = " + std::to_string(groups));
  expect_shape(gamma, {C}, "group_norm gamma");
  expect_shape(beta, {C}, "group_norm beta");
  const std::size_t units = input.dim(0) * input.dim(1);
  const std::size_t spatial = input.size() / (units * C);
  const std::size_t gs = C / groups;
  const double n = static_cast<double>(spatial * gs);

  NormResult<Real> r{BasicTensor<Real>(input.shape()),
                     BasicTensor<Real>(input.shape()),
                     BasicTensor<Real>({units, groups})};
  for (std::size_t u = 0; u < units; ++u)
    for (std::size_t g = 0; g < groups; ++g) {
      const auto idx = [&](std::size_t s, std::size_t j) {
        return (u * spatial + s) * C + g * gs + j;
      };
      double sum = 0.0;
      for (std::size_t s = 0; s < spatial; ++s)
        for (std::size_t j = 0; j < gs; ++j) sum += input[idx(s, j)];
      const double mean = sum / n;
      double sq = 0.0;
      for (std::size_t s = 0; s < spatial; ++s)
        for (std::size_t j = 0; j < gs; ++j) {
          const double d = input[idx(s, j)] - mean;
          sq += d * d;
        }
      const double inv = 1.0 / std::sqrt(sq / n + eps);
      r.inv_std[u * groups + g] = static_cast<Real>(inv);
      for (std::size_t s = 0; s < spatial; ++s)
        for (std::size_t j = 0; j < gs; ++j) {
          const std::size_t i = idx(s, j);
          const Real xh = static_cast<Real>((input[i] - mean) * inv);
          r.normalized[i] = xh;
          r.output[i] = xh * gamma[g * gs + j] + beta[g * gs + j];
        }
    }
  return r;
}

template <class Real>
struct NormGrads {
  BasicTensor<Real> input, gamma, beta;
};

template <class Real>
NormGrads<Real> group_norm_backward(const NormResult<Real> &fwd,
                                    std::size_t groups,
                                    const BasicTensor<Real> &gamma,
                                    const BasicTensor<Real> &grad_out) {
  const auto &xh = fwd.normalized;
  expect_shape(grad_out, xh.shape(), "group_norm_backward grad");
  const std::size_t C = xh.shape().back();
  const std::size_t units = xh.dim(0) * xh.dim(1);
  const std::size_t spatial = xh.size() / (units * C);
  const std::size_t gs = C / groups;
  const double n = static_cast<double>(spatial * gs);
  NormGrads<Real> g{BasicTensor<Real>(xh.shape()), BasicTensor<Real>({C}),
                    BasicTensor<Real>({C})};
  for (std::size_t u = 0; u < units; ++u)
    for (std::size_t grp = 0; grp < groups; ++grp) {
      const auto idx = [&](std::size_t s, std::size_t j) {
        return (u * spatial + s) * C + grp * gs + j;
      };
      double sum_d = 0.0, sum_dx = 0.0;
      for (std::size_t s = 0; s < spatial; ++s)
        for (std::size_t j = 0; j < gs; ++j) {
          const std::size_t i = idx(s, j), c = grp * gs + j;
          const double d = grad_out[i] * gamma[c];
          sum_d += d;
          sum_dx += d * xh[i];
          g.gamma[c] += grad_out[i] * xh[i];
          g.beta[c] += grad_out[i];
        }
      const double inv = fwd.inv_std[u * groups + grp];
      for (std::size_t s = 0; s < spatial; ++s)
        for (std::size_t j = 0; j < gs; ++j) {
          const std::size_t i = idx(s, j), c = grp * gs + j;
          const double d = grad_out[i] * gamma[c];
          g.input[i] =
              static_cast<Real>(inv / n * (n * d - sum_d - xh[i] * sum_dx));
        }
    }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization over [B, T, C], statistics per channel across (B, T).

/**
 * Running statistics. A default-constructed state is uninitialized and
 * cannot be used for inference; the first training-mode update starts it at
 * (mean 0, var 1) and then applies the momentum rule
 *   running = momentum * running + (1 - momentum) * batch
 * with the biased batch variance.
 */
template <class Real>
struct BatchNormState {
  BasicTensor<Real> mean;
  BasicTensor<Real> var;
  bool initialized = false;
  double momentum = 0.99;

  static BatchNormState identity(std::size_t channels) {
    BatchNormState s;
    s.mean = BasicTensor<Real>({channels}, Real(0));
    s.var = BasicTensor<Real>({channels}, Real(1));
    s.initialized = true;
    return s;
  }
};

template <class Real>
NormResult<Real> batch_norm_train(const BasicTensor<Real> &input,
                                  const BasicTensor<Real> &gamma,
                                  const BasicTensor<Real> &beta,
                                  BatchNormState<Real> *state,
                                  double eps = kNormEps) {
  expect_rank(input, 3, "batch_norm input");
  const std::size_t C = input.dim(2), rows = input.dim(0) * input.dim(1);
  if (rows < 2)
    throw ShapeError("batch_norm: train mode needs B*T >= 2, got " +
                     shape_str(input.shape()));
  expect_shape(gamma, {C}, "batch_norm gamma");
  expect_shape(beta, {C}, "batch_norm beta");
  const double n = static_cast<double>(rows);
  std::vector<double> mean(C, 0.0), sq(C, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) mean[c] += input[r * C + c];
  for (auto &m : mean) m /= n;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const double d = input[r * C + c] - mean[c];
      sq[c] += d * d;
    }
  NormResult<Real> res{BasicTensor<Real>(input.shape()),
                       BasicTensor<Real>(input.shape()),
                       BasicTensor<Real>({C})};
  for (std::size_t c = 0; c < C; ++c)
    res.inv_std[c] = static_cast<Real>(1.0 / std::sqrt(sq[c] / n + eps));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = r * C + c;
      const Real xh =
          static_cast<Real>((input[i] - mean[c]) * double(res.inv_std[c]));
      res.normalized[i] = xh;
      res.output[i] = xh * gamma[c] + beta[c];
    }
  if (state) {
    if (!state->initialized) {
      const double m = state->momentum;
      *state = BatchNormState<Real>::identity(C);
      state->momentum = m;
    }
    expect_shape(state->mean, {C}, "batch_norm running mean");
    const double m = state->momentum;
    for (std::size_t c = 0; c < C; ++c) {
      state->mean[c] = static_cast<Real>(m * state->mean[c] + (1.0 - m) * mean[c]);
      state->var[c] = static_cast<Real>(m * state->var[c] + (1.0 - m) * (sq[c] / n));
    }
  }
  return res;
}

template <class Real>
BasicTensor<Real> batch_norm_infer(const BasicTensor<Real> &input,
                                   const BasicTensor<Real> &gamma,
                                   const BasicTensor<Real> &beta,
                                   const BatchNormState<Real> &state,
                                   double eps = kNormEps) {
  expect_rank(input, 3, "batch_norm input");
  if (!state.initialized)
    throw std::logic_error(
        "batch_norm: inference mode requires initialized running statistics");
  const std::size_t C = input.dim(2), rows = input.dim(0) * input.dim(1);
  expect_shape(gamma, {C}, "batch_norm gamma");
  expect_shape(beta, {C}, "batch_norm beta");
  expect_shape(state.mean, {C}, "batch_norm running mean");
  BasicTensor<Real> out(input.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(double(state.var[c]) + eps);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = r * C + c;
      out[i] = static_cast<Real>((input[i] - state.mean[c]) * inv * gamma[c] +
                                 beta[c]);
    }
  }
  return out;
}

template <class Real>
NormGrads<Real> batch_norm_backward(const NormResult<Real> &fwd,
                                    const BasicTensor<Real> &gamma,
                                    const BasicTensor<Real> &grad_out) {
  const auto &xh = fwd.normalized;
  expect_shape(grad_out, xh.shape(), "batch_norm_backward grad");
  const std::size_t C = xh.dim(2), rows = xh.dim(0) * xh.dim(1);
  const double n = static_cast<double>(rows);
  NormGrads<Real> g{BasicTensor<Real>(xh.shape()), BasicTensor<Real>({C}),
                    BasicTensor<Real>({C})};
  std::vector<double> sum_d(C, 0.0), sum_dx(C, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = r * C + c;
      const double d = double(grad_out[i]) * gamma[c];
      sum_d[c] += d;
      sum_dx[c] += d * xh[i];
      g.gamma[c] += grad_out[i] * xh[i];
      g.beta[c] += grad_out[i];
    }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = r * C + c;
      const double d = double(grad_out[i]) * gamma[c];
      g.input[i] = static_cast<Real>(double(fwd.inv_std[c]) / n *
                                     (n * d - sum_d[c] - xh[i] * sum_dx[c]));
    }
  return g;
}

// ---------------------------------------------------------------------------
// Softmax along one axis with inverse temperature beta (beta = kInf gives a
// one-hot at the first maximal entry).

namespace detail {

struct AxisSplit {
  std::size_t outer, n, inner;
};

template <class Real>
AxisSplit split_axis(const BasicTensor<Real> &t, std::size_t axis) {
  if (axis >= t.rank())
    throw ShapeError("softmax_axis: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(t.shape()));
  AxisSplit s{1, t.dim(axis), 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= t.dim(i);
  for (std::size_t i = axis + 1; i < t.rank(); ++i) s.inner *= t.dim(i);
  return s;
}

}  // namespace detail

template <class Real>
BasicTensor<Real> softmax_axis(const BasicTensor<Real> &input, std::size_t axis,
                               double beta = 1.0) {
  if (!(beta >= 0.0))
    throw std::invalid_argument("softmax_axis: beta must be >= 0, got " +
                                std::to_string(beta));
  require_finite(input, "softmax_axis input");
  const auto [outer, n, inner] = detail::split_axis(input, axis);
  BasicTensor<Real> out(input.shape());
  const bool hard = std::isinf(beta);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      std::size_t arg = 0;
      Real mx = input[base];
      for (std::size_t k = 1; k < n; ++k)
        if (input[base + k * inner] > mx) {
          mx = input[base + k * inner];
          arg = k;
        }
      if (hard) {
        out[base + arg * inner] = Real(1);
        continue;
      }
      double sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(beta * (double(input[base + k * inner]) - mx));
        out[base + k * inner] = static_cast<Real>(e);
        sum += e;
      }
      for (std::size_t k = 0; k < n; ++k)
        out[base + k * inner] = static_cast<Real>(out[base + k * inner] / sum);
    }
  return out;
}

/// Gradient through softmax_axis given its output; requires finite beta.
template <class Real>
BasicTensor<Real> softmax_axis_backward(const BasicTensor<Real> &output,
                                        const BasicTensor<Real> &grad_out,
                                        std::size_t axis, double beta = 1.0) {
  if (!std::isfinite(beta))
    throw std::invalid_argument("softmax_axis_backward: beta must be finite");
  expect_shape(grad_out, output.shape(), "softmax_axis_backward grad");
  const auto [outer, n, inner] = detail::split_axis(output, axis);
  BasicTensor<Real> g(output.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        dot += double(output[base + k * inner]) * grad_out[base + k * inner];
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = base + k * inner;
        g[i] = static_cast<Real>(beta * output[i] * (grad_out[i] - dot));
      }
    }
  return g;
}

}  // namespace avsel
