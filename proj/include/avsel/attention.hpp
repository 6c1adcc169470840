// SPDX-License-Identifier: Apache-2.0
/**
 * @file   attention.hpp
 * @brief  Batch gating attention: an acoustic query network scores N
 *         competing visual tracks with a bilinear form, a softmax over the
 *         track axis (with inverse temperature) turns scores into weights,
 *         and the weights gate the track features.
 *
 * Shapes: A [B, T, 240] acoustic, Q [B, T, Dq] queries, V [N, T, Dv] tracks
 * (N == B during training, where minibatch elements compete), S and alpha
 * [B, T, N], gated features [B, T, Dv].
 */
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "avsel/ops.hpp"
#include "avsel/tensor.hpp"

namespace avsel {

// ---------------------------------------------------------------------------
// Query network: 5 x (conv1d k=5 SAME -> ReLU -> batch norm), no pooling.

struct QueryNetConfig {
  std::vector<std::size_t> channels{240, 256, 256, 256, 512, 512};
  std::size_t kernel = 5;

  static QueryNetConfig full() { return {}; }
  /// Narrow variant for desk-scale training runs.
  static QueryNetConfig desk() { return {{240, 64, 64, 64, 64, 64}, 5}; }

  std::size_t layers() const { return channels.size() - 1; }
  std::size_t input_dim() const { return channels.front(); }
  std::size_t query_dim() const { return channels.back(); }
  /// Input steps that can reach one output step: 1 + layers * (kernel - 1).
  std::size_t receptive_field() const { return 1 + layers() * (kernel - 1); }

  void validate() const {
    if (channels.size() < 2)
      throw std::invalid_argument("QueryNetConfig: need at least one layer");
    if (kernel % 2 == 0)
      throw std::invalid_argument("QueryNetConfig: kernel must be odd");
    for (std::size_t c : channels)
      if (c == 0) throw std::invalid_argument("QueryNetConfig: zero channel count");
  }
};

enum class NormMode { train, infer };

template <class Real>
struct QueryCache {
  std::vector<BasicTensor<Real>> conv_in;  // input of each conv
  std::vector<BasicTensor<Real>> pre;      // conv output (ReLU pre-activation)
  std::vector<NormResult<Real>> norm;      // train-mode batch norm results
};

/// Glorot-uniform limit for a [fan_in -> fan_out] map.
inline double glorot_limit(double fan_in, double fan_out) {
  return std::sqrt(6.0 / (fan_in + fan_out));
}

template <class Real = double>
class QueryNet {
 public:
  QueryNet() : QueryNet(QueryNetConfig{}, 0) {}

  /// Kernels Glorot-uniform (fan = kernel * channels), zero bias, batch norm
  /// scale 1 / shift 0, running statistics (0, 1).
  QueryNet(QueryNetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    SeededRng rng(derive_seed(seed, "query_net"));
    const std::size_t k = cfg_.kernel;
    for (std::size_t l = 0; l < cfg_.layers(); ++l) {
      const std::size_t cin = cfg_.channels[l], cout = cfg_.channels[l + 1];
      const double a = glorot_limit(double(k * cin), double(k * cout));
      const std::string p = "query.layer" + std::to_string(l + 1);
      params_.emplace_back(p + ".kernel",
                           random_uniform<Real>({k, cin, cout}, rng, -a, a));
      params_.emplace_back(p + ".bias", BasicTensor<Real>({cout}));
      params_.emplace_back(p + ".bn_scale", BasicTensor<Real>({cout}, Real(1)));
      params_.emplace_back(p + ".bn_shift", BasicTensor<Real>({cout}));
      stats_.push_back(BatchNormState<Real>::identity(cout));
    }
  }

  const QueryNetConfig &config() const { return cfg_; }
  std::vector<BasicParameter<Real>> &parameters() { return params_; }
  const std::vector<BasicParameter<Real>> &parameters() const { return params_; }
  std::vector<BatchNormState<Real>> &norm_stats() { return stats_; }
  const std::vector<BatchNormState<Real>> &norm_stats() const { return stats_; }

  BasicParameter<Real> &kernel(std::size_t l) { return params_[4 * l]; }
  BasicParameter<Real> &bias(std::size_t l) { return params_[4 * l + 1]; }
  BasicParameter<Real> &bn_scale(std::size_t l) { return params_[4 * l + 2]; }
  BasicParameter<Real> &bn_shift(std::size_t l) { return params_[4 * l + 3]; }
  const BasicParameter<Real> &kernel(std::size_t l) const { return params_[4 * l]; }
  const BasicParameter<Real> &bias(std::size_t l) const { return params_[4 * l + 1]; }
  const BasicParameter<Real> &bn_scale(std::size_t l) const { return params_[4 * l + 2]; }
  const BasicParameter<Real> &bn_shift(std::size_t l) const { return params_[4 * l + 3]; }

  /**
   * A [B, T, 240] -> Q [B, T, Dq]. Train mode normalizes with batch
   * statistics (and folds them into the running stats when `update_stats`);
   * infer mode uses the running stats. Pass `cache` to enable backward().
   */
  BasicTensor<Real> forward(const BasicTensor<Real> &acoustic, NormMode mode,
                            bool update_stats = false,
                            QueryCache<Real> *cache = nullptr) {
    expect_rank(acoustic, 3, "query_forward input");
    if (acoustic.dim(2) != cfg_.input_dim())
      throw ShapeError("query_forward: acoustic feature dim (dim 2) must be " +
                       std::to_string(cfg_.input_dim()) + ", got " +
                       std::to_string(acoustic.dim(2)));
    if (cache) *cache = {};
    BasicTensor<Real> x = acoustic;
    for (std::size_t l = 0; l < cfg_.layers(); ++l) {
      auto pre = conv1d(x, kernel(l).value, bias(l).value);
      auto act = relu(pre);
      if (cache) {
        cache->conv_in.push_back(std::move(x));
        cache->pre.push_back(pre);
      }
      if (mode == NormMode::train) {
        auto nr = batch_norm_train(act, bn_scale(l).value, bn_shift(l).value,
                                   update_stats ? &stats_[l] : nullptr);
        x = nr.output;
        if (cache) cache->norm.push_back(std::move(nr));
      } else {
        x = batch_norm_infer(act, bn_scale(l).value, bn_shift(l).value, stats_[l]);
      }
    }
    return x;
  }

  /// Const forward in inference mode.
  BasicTensor<Real> infer(const BasicTensor<Real> &acoustic) const {
    return const_cast<QueryNet *>(this)->forward(acoustic, NormMode::infer);
  }

  /// Accumulates parameter gradients from dL/dQ; returns dL/dA. Requires a
  /// train-mode cache.
  BasicTensor<Real> backward(const QueryCache<Real> &cache,
                             const BasicTensor<Real> &grad_q) {
    if (cache.norm.size() != cfg_.layers())
      throw std::logic_error("QueryNet::backward needs a train-mode cache");
    BasicTensor<Real> g = grad_q;
    for (std::size_t l = cfg_.layers(); l-- > 0;) {
      auto ng = batch_norm_backward(cache.norm[l], bn_scale(l).value, g);
      accumulate(bn_scale(l).grad, ng.gamma);
      accumulate(bn_shift(l).grad, ng.beta);
      auto gpre = relu_backward(cache.pre[l], ng.input);
      auto cg = conv1d_backward(cache.conv_in[l], kernel(l).value, gpre);
      accumulate(kernel(l).grad, cg.kernel);
      accumulate(bias(l).grad, cg.bias);
      g = std::move(cg.input);
    }
    return g;
  }

 private:
  static void accumulate(BasicTensor<Real> &dst, const BasicTensor<Real> &src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  QueryNetConfig cfg_;
  std::vector<BasicParameter<Real>> params_;
  std::vector<BatchNormState<Real>> stats_;
};

// ---------------------------------------------------------------------------
// Bilinear score S[i,j,k] = sum_l Q[i,j,l] * (W V[k,j,:])_l.
//
// Evaluation order: P[k,j,l] = sum_m W[l,m] V[k,j,m] (m ascending from +0),
// then S[i,j,k] = sum_l Q[i,j,l] P[k,j,l] (l ascending from +0).

/// P = W V per track and step: [N, T, Dq].
template <class Real>
BasicTensor<Real> project_tracks(const BasicTensor<Real> &w,
                                 const BasicTensor<Real> &tracks) {
  expect_rank(w, 2, "bilinear W");
  expect_rank(tracks, 3, "bilinear V");
  const std::size_t Dq = w.dim(0), Dv = w.dim(1);
  if (tracks.dim(2) != Dv)
    throw ShapeError("bilinear_score: W columns (dim 1) = " + std::to_string(Dv) +
                     " but track feature dim (dim 2) = " +
                     std::to_string(tracks.dim(2)));
  const std::size_t rows = tracks.dim(0) * tracks.dim(1);
  BasicTensor<Real> p({tracks.dim(0), tracks.dim(1), Dq});
  for (std::size_t r = 0; r < rows; ++r) {
    const Real *v = tracks.ptr() + r * Dv;
    for (std::size_t l = 0; l < Dq; ++l) {
      const Real *wl = w.ptr() + l * Dv;
      Real acc = 0;
      for (std::size_t m = 0; m < Dv; ++m) acc += wl[m] * v[m];
      p[r * Dq + l] = acc;
    }
  }
  return p;
}

/// S [B, T, N] from queries [B, T, Dq] and projected tracks [N, T, Dq].
template <class Real>
BasicTensor<Real> score_projected(const BasicTensor<Real> &queries,
                                  const BasicTensor<Real> &projected) {
  expect_rank(queries, 3, "bilinear Q");
  const std::size_t B = queries.dim(0), T = queries.dim(1), Dq = queries.dim(2);
  const std::size_t N = projected.dim(0);
  if (projected.dim(1) != T)
    throw ShapeError("bilinear_score: queries have T = " + std::to_string(T) +
                     " (dim 1) but tracks have T = " +
                     std::to_string(projected.dim(1)));
  if (projected.dim(2) != Dq)
    throw ShapeError("bilinear_score: query dim (dim 2) = " + std::to_string(Dq) +
                     " but W rows (dim 0) = " + std::to_string(projected.dim(2)));
  BasicTensor<Real> s({B, T, N});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < T; ++j) {
      const Real *q = queries.ptr() + (i * T + j) * Dq;
      for (std::size_t k = 0; k < N; ++k) {
        const Real *p = projected.ptr() + (k * T + j) * Dq;
        Real acc = 0;
        for (std::size_t l = 0; l < Dq; ++l) acc += q[l] * p[l];
        s[(i * T + j) * N + k] = acc;
      }
    }
  return s;
}

template <class Real>
BasicTensor<Real> bilinear_score(const BasicTensor<Real> &queries,
                                 const BasicTensor<Real> &w,
                                 const BasicTensor<Real> &tracks) {
  expect_rank(queries, 3, "bilinear Q");
  if (w.rank() == 2 && queries.dim(2) != w.dim(0))
    throw ShapeError("bilinear_score: query dim (dim 2) = " +
                     std::to_string(queries.dim(2)) + " but W rows (dim 0) = " +
                     std::to_string(w.dim(0)));
  return score_projected(queries, project_tracks(w, tracks));
}

template <class Real>
struct BilinearGrads {
  BasicTensor<Real> queries, w, tracks;
};

template <class Real>
BilinearGrads<Real> bilinear_backward(const BasicTensor<Real> &queries,
                                      const BasicTensor<Real> &w,
                                      const BasicTensor<Real> &tracks,
                                      const BasicTensor<Real> &projected,
                                      const BasicTensor<Real> &grad_scores) {
  const std::size_t B = queries.dim(0), T = queries.dim(1), Dq = queries.dim(2);
  const std::size_t N = tracks.dim(0), Dv = tracks.dim(2);
  expect_shape(grad_scores, {B, T, N}, "bilinear_backward grad");
  BilinearGrads<Real> g{BasicTensor<Real>(queries.shape()),
                        BasicTensor<Real>(w.shape()),
                        BasicTensor<Real>(tracks.shape())};
  BasicTensor<Real> gp(projected.shape());
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < T; ++j) {
      const Real *q = queries.ptr() + (i * T + j) * Dq;
      Real *gq = g.queries.ptr() + (i * T + j) * Dq;
      for (std::size_t k = 0; k < N; ++k) {
        const Real ds = grad_scores[(i * T + j) * N + k];
        const Real *p = projected.ptr() + (k * T + j) * Dq;
        Real *gpk = gp.ptr() + (k * T + j) * Dq;
        for (std::size_t l = 0; l < Dq; ++l) {
          gq[l] += ds * p[l];
          gpk[l] += ds * q[l];
        }
      }
    }
  for (std::size_t r = 0; r < N * T; ++r) {
    const Real *v = tracks.ptr() + r * Dv;
    Real *gv = g.tracks.ptr() + r * Dv;
    for (std::size_t l = 0; l < Dq; ++l) {
      const Real d = gp[r * Dq + l];
      const Real *wl = w.ptr() + l * Dv;
      Real *gwl = g.w.ptr() + l * Dv;
      for (std::size_t m = 0; m < Dv; ++m) {
        gwl[m] += d * v[m];
        gv[m] += d * wl[m];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Attention weights, gating, and helpers.

/// Softmax over the track axis with inverse temperature beta (kInf = hard
/// argmax, lowest index on ties). beta = 1 is the trained operating point.
template <class Real>
BasicTensor<Real> attention_weights(const BasicTensor<Real> &scores,
                                    double beta = 1.0) {
  expect_rank(scores, 3, "attention_weights scores");
  if (!(beta >= 0.0))
    throw std::invalid_argument("attention_weights: beta must be >= 0");
  return softmax_axis(scores, 2, beta);
}

/// V'[b,t,:] = sum_i alpha[b,t,i] V[i,t,:] (i ascending from +0).
template <class Real>
BasicTensor<Real> gate(const BasicTensor<Real> &alpha,
                       const BasicTensor<Real> &tracks) {
  expect_rank(alpha, 3, "gate alpha");
  expect_rank(tracks, 3, "gate V");
  const std::size_t B = alpha.dim(0), T = alpha.dim(1), N = alpha.dim(2);
  if (tracks.dim(0) != N)
    throw ShapeError("gate: alpha has " + std::to_string(N) +
                     " tracks (dim 2) but V has " + std::to_string(tracks.dim(0)) +
                     " (dim 0)");
  if (tracks.dim(1) != T)
    throw ShapeError("gate: alpha T = " + std::to_string(T) + " but V T = " +
                     std::to_string(tracks.dim(1)) + " (dim 1)");
  const std::size_t Dv = tracks.dim(2);
  BasicTensor<Real> out({B, T, Dv});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      Real *o = out.ptr() + (b * T + t) * Dv;
      for (std::size_t i = 0; i < N; ++i) {
        const Real a = alpha[(b * T + t) * N + i];
        const Real *v = tracks.ptr() + (i * T + t) * Dv;
        for (std::size_t d = 0; d < Dv; ++d) o[d] += a * v[d];
      }
    }
  return out;
}

template <class Real>
struct GateGrads {
  BasicTensor<Real> alpha, tracks;
};

template <class Real>
GateGrads<Real> gate_backward(const BasicTensor<Real> &alpha,
                              const BasicTensor<Real> &tracks,
                              const BasicTensor<Real> &grad_out) {
  const std::size_t B = alpha.dim(0), T = alpha.dim(1), N = alpha.dim(2);
  const std::size_t Dv = tracks.dim(2);
  expect_shape(grad_out, {B, T, Dv}, "gate_backward grad");
  GateGrads<Real> g{BasicTensor<Real>(alpha.shape()),
                    BasicTensor<Real>(tracks.shape())};
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      const Real *go = grad_out.ptr() + (b * T + t) * Dv;
      for (std::size_t i = 0; i < N; ++i) {
        const Real a = alpha[(b * T + t) * N + i];
        const Real *v = tracks.ptr() + (i * T + t) * Dv;
        Real *gv = g.tracks.ptr() + (i * T + t) * Dv;
        Real acc = 0;
        for (std::size_t d = 0; d < Dv; ++d) {
          acc += go[d] * v[d];
          gv[d] += a * go[d];
        }
        g.alpha[(b * T + t) * N + i] = acc;
      }
    }
  return g;
}

/// F = [A ; V'] along the last axis.
template <class Real>
BasicTensor<Real> concat_features(const BasicTensor<Real> &acoustic,
                                  const BasicTensor<Real> &gated) {
  expect_rank(acoustic, 3, "concat_features A");
  expect_rank(gated, 3, "concat_features V'");
  if (acoustic.dim(0) != gated.dim(0))
    throw ShapeError("concat_features: batch mismatch (dim 0) " +
                     std::to_string(acoustic.dim(0)) + " vs " +
                     std::to_string(gated.dim(0)));
  if (acoustic.dim(1) != gated.dim(1))
    throw ShapeError("concat_features: time mismatch (dim 1) " +
                     std::to_string(acoustic.dim(1)) + " vs " +
                     std::to_string(gated.dim(1)));
  const std::size_t rows = acoustic.dim(0) * acoustic.dim(1);
  const std::size_t da = acoustic.dim(2), dv = gated.dim(2);
  BasicTensor<Real> out({acoustic.dim(0), acoustic.dim(1), da + dv});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(acoustic.ptr() + r * da, da, out.ptr() + r * (da + dv));
    std::copy_n(gated.ptr() + r * dv, dv, out.ptr() + r * (da + dv) + da);
  }
  return out;
}

/// Shannon entropy (nats) of each [b, t, :] row, with 0 log 0 = 0.
template <class Real>
BasicTensor<Real> attention_entropy(const BasicTensor<Real> &alpha) {
  expect_rank(alpha, 3, "attention_entropy alpha");
  const std::size_t rows = alpha.dim(0) * alpha.dim(1), N = alpha.dim(2);
  BasicTensor<Real> h({alpha.dim(0), alpha.dim(1)});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
      const double p = alpha[r * N + k];
      if (p > 0) acc -= p * std::log(p);
    }
    h[r] = static_cast<Real>(acc);
  }
  return h;
}

/// Index of the largest entry of each [b, t, :] row (lowest index on ties).
template <class Real>
std::vector<std::size_t> row_argmax(const BasicTensor<Real> &x) {
  const std::size_t N = x.shape().back(), rows = x.size() / N;
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < N; ++k)
      if (x[r * N + k] > x[r * N + best]) best = k;
    out[r] = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// The trainable attention stack: query net plus bilinear W [Dq, Dv].

template <class Real = double>
class AttentionModel {
 public:
  AttentionModel() : AttentionModel(QueryNetConfig{}, 512, 0) {}

  /// W is Glorot-uniform; never zero-initialized.
  AttentionModel(QueryNetConfig cfg, std::size_t visual_dim, std::uint64_t seed)
      : query_(cfg, seed) {
    SeededRng rng(derive_seed(seed, "bilinear"));
    const double dq = double(query_.config().query_dim()), dv = double(visual_dim);
    const double a = glorot_limit(dq, dv);
    w_ = BasicParameter<Real>(
        "bilinear.W",
        random_uniform<Real>({query_.config().query_dim(), visual_dim}, rng, -a, a));
  }

  QueryNet<Real> &query() { return query_; }
  const QueryNet<Real> &query() const { return query_; }
  BasicParameter<Real> &w() { return w_; }
  const BasicParameter<Real> &w() const { return w_; }
  std::size_t visual_dim() const { return w_.value.dim(1); }

  std::vector<BasicParameter<Real> *> parameters() {
    std::vector<BasicParameter<Real> *> ps;
    for (auto &p : query_.parameters()) ps.push_back(&p);
    ps.push_back(&w_);
    return ps;
  }
  std::vector<const BasicParameter<Real> *> parameters() const {
    std::vector<const BasicParameter<Real> *> ps;
    for (const auto &p : query_.parameters()) ps.push_back(&p);
    ps.push_back(&w_);
    return ps;
  }

  void zero_grad() {
    for (auto *p : parameters()) p->zero_grad();
  }

  /// Inference-mode scores [B, T, N] for acoustic [B, T, 240] vs tracks
  /// [N, T, Dv].
  BasicTensor<Real> scores(const BasicTensor<Real> &acoustic,
                           const BasicTensor<Real> &tracks) const {
    return bilinear_score(query_.infer(acoustic), w_.value, tracks);
  }

 private:
  QueryNet<Real> query_;
  BasicParameter<Real> w_;
};

}  // namespace avsel
