// SPDX-License-Identifier: Apache-2.0
/**
 * @file   frontend.hpp
 * @brief  Visual frontends producing [B, T, 512] track features: a frozen
 *         VGG-style 3D ConvNet, and a synthetic latent-driven generator used
 *         for controlled track-selection experiments.
 */
#pragma once

#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "avsel/ops.hpp"
#include "avsel/tensor.hpp"

namespace avsel {

inline constexpr std::size_t kVisualDim = 512;

/**
 * Layer l maps channels[l] -> channels[l+1] with a 3x3x3 kernel (SAME in
 * time, VALID in space, spatial stride strides[l]), then ReLU (all but the
 * last layer), group norm with gcd(32, C) groups, and 2x2 spatial max pooling
 * where pool[l] is set.
 */
struct Vgg3dConfig {
  std::vector<std::size_t> channels{3, 64, 128, 256, 512, 512};
  std::vector<std::size_t> strides{2, 1, 1, 1, 1};
  std::vector<bool> pool{true, true, true, false, true};
  std::size_t kernel = 3;
  std::size_t max_groups = 32;
  std::size_t input_size = 128;

  static Vgg3dConfig full() { return {}; }

  /// 32x32 input: 32->30->28->14->12->6->4->2->1.
  static Vgg3dConfig desk() {
    Vgg3dConfig c;
    c.channels = {3, 8, 16, 32, 64, 512};
    c.strides = {1, 1, 1, 1, 1};
    c.pool = {false, true, true, false, true};
    c.input_size = 32;
    return c;
  }

  std::size_t layers() const { return channels.size() - 1; }
  std::size_t output_dim() const { return channels.back(); }
  std::size_t groups(std::size_t layer) const {
    return std::gcd(max_groups, channels[layer + 1]);
  }
  /// Frames on either side of t that can influence output t.
  std::size_t time_radius() const { return layers() * (kernel / 2); }

  void validate() const {
    if (channels.size() < 2)
      throw std::invalid_argument("Vgg3dConfig: need at least one layer");
    if (strides.size() != layers() || pool.size() != layers())
      throw std::invalid_argument(
          "Vgg3dConfig: strides/pool must have one entry per layer");
    if (kernel % 2 == 0) throw std::invalid_argument("Vgg3dConfig: kernel must be odd");
    for (std::size_t s : strides)
      if (s == 0) throw std::invalid_argument("Vgg3dConfig: stride must be >= 1");
  }
};

/**
 * Spatial side after every conv and pool, starting with the input side.
 * Throws if a conv would see fewer than `kernel` pixels or a pool fewer
 * than 2.
 */
inline std::vector<std::size_t> spatial_plan(const Vgg3dConfig &cfg) {
  cfg.validate();
  std::vector<std::size_t> plan{cfg.input_size};
  std::size_t x = cfg.input_size;
  for (std::size_t l = 0; l < cfg.layers(); ++l) {
    if (x < cfg.kernel)
      throw std::invalid_argument("spatial_plan: layer " + std::to_string(l + 1) +
                                  " input side " + std::to_string(x) +
                                  " is smaller than the kernel");
    x = valid_out(x, cfg.kernel, cfg.strides[l]);
    plan.push_back(x);
    if (cfg.pool[l]) {
      if (x < 2)
        throw std::invalid_argument("spatial_plan: layer " + std::to_string(l + 1) +
                                    " cannot pool a side of " + std::to_string(x));
      x /= 2;
      plan.push_back(x);
    }
  }
  return plan;
}

/// Frozen 3D ConvNet. Weights: He-uniform kernels, zero bias, unit group
/// norm scale, zero shift; all parameters are non-trainable.
template <class Real = double>
class Vgg3d {
 public:
  Vgg3d(Vgg3dConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    const auto plan = spatial_plan(cfg_);
    if (plan.back() != 1)
      throw std::invalid_argument("Vgg3d: spatial plan ends at " +
                                  std::to_string(plan.back()) + ", not 1");
    SeededRng rng(derive_seed(seed, "vgg3d"));
    const std::size_t k = cfg_.kernel;
    for (std::size_t l = 0; l < cfg_.layers(); ++l) {
      const std::size_t cin = cfg_.channels[l], cout = cfg_.channels[l + 1];
      const double a = std::sqrt(6.0 / double(k * k * k * cin));
      const std::string p = "vgg3d.layer" + std::to_string(l + 1);
      params_.emplace_back(p + ".kernel",
                           random_uniform<Real>({k, k, k, cin, cout}, rng, -a, a),
                           false);
      params_.emplace_back(p + ".bias", BasicTensor<Real>({cout}), false);
      params_.emplace_back(p + ".gn_scale", BasicTensor<Real>({cout}, Real(1)), false);
      params_.emplace_back(p + ".gn_shift", BasicTensor<Real>({cout}), false);
    }
  }

  const Vgg3dConfig &config() const { return cfg_; }
  std::vector<BasicParameter<Real>> &parameters() { return params_; }
  const std::vector<BasicParameter<Real>> &parameters() const { return params_; }

  BasicParameter<Real> &kernel(std::size_t l) { return params_[4 * l]; }
  BasicParameter<Real> &bias(std::size_t l) { return params_[4 * l + 1]; }
  const BasicParameter<Real> &kernel(std::size_t l) const { return params_[4 * l]; }
  const BasicParameter<Real> &bias(std::size_t l) const { return params_[4 * l + 1]; }
  const BasicParameter<Real> &gn_scale(std::size_t l) const { return params_[4 * l + 2]; }
  const BasicParameter<Real> &gn_shift(std::size_t l) const { return params_[4 * l + 3]; }

  /// video [B, T, H, W, 3] -> features [B, T, channels.back()]
  BasicTensor<Real> forward(const BasicTensor<Real> &video) const {
    expect_rank(video, 5, "vgg3d input");
    if (video.dim(2) != cfg_.input_size || video.dim(3) != cfg_.input_size)
      throw ShapeError("vgg3d: expected spatial size " +
                       std::to_string(cfg_.input_size) + ", got " +
                       shape_str(video.shape()));
    if (video.dim(4) != cfg_.channels[0])
      throw ShapeError("vgg3d: expected " + std::to_string(cfg_.channels[0]) +
                       " input channels (dim 4), got " + shape_str(video.shape()));
    BasicTensor<Real> x = video;
    const std::size_t L = cfg_.layers();
    for (std::size_t l = 0; l < L; ++l) {
      x = conv3d(x, kernel(l).value, bias(l).value, cfg_.strides[l]);
      if (l + 1 < L) x = relu(x);
      x = group_norm(x, cfg_.groups(l), gn_scale(l).value, gn_shift(l).value)
              .output;
      if (cfg_.pool[l]) x = maxpool_spatial(x);
    }
    const std::size_t B = video.dim(0), T = video.dim(1);
    return x.reshaped({B, T, x.size() / (B * T)});
  }

 private:
  Vgg3dConfig cfg_;
  std::vector<BasicParameter<Real>> params_;
};

// ---------------------------------------------------------------------------
// Synthetic world: a latent sequence z [B, T, L] (iid standard normal per
// step) drives both modalities through fixed random linear maps with entries
// N(0, 1/L):
//   acoustic = z * acoustic_map  -> [B, T, 240]
//   visual   = z * visual_map + noise_sigma * eps -> [B, T, 512]

enum class DistractorMode { independent, time_shifted };

inline DistractorMode parse_distractor_mode(const std::string &s) {
  if (s == "independent") return DistractorMode::independent;
  if (s == "time-shifted") return DistractorMode::time_shifted;
  throw std::invalid_argument("unknown distractor mode '" + s +
                              "' (expected independent or time-shifted)");
}

inline std::string distractor_mode_name(DistractorMode m) {
  return m == DistractorMode::independent ? "independent" : "time-shifted";
}

struct SyntheticTrackSpec {
  std::size_t latent_dim = 16;
  double noise_sigma = 0.0;
  DistractorMode distractor_mode = DistractorMode::independent;
  std::uint64_t seed = 0;
};

/// Minimum cyclic shift for time-shifted distractors: one second of steps.
inline constexpr std::size_t kMinShift = 34;

template <class Real>
BasicTensor<Real> matmul_last(const BasicTensor<Real> &x,
                              const BasicTensor<Real> &m) {
  const std::size_t in = m.dim(0), out_dim = m.dim(1);
  if (x.shape().back() != in)
    throw ShapeError("matmul_last: last dim " + std::to_string(x.shape().back()) +
                     " != map rows " + std::to_string(in));
  const std::size_t rows = x.size() / in;
  Shape shape = x.shape();
  shape.back() = out_dim;
  BasicTensor<Real> y(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    Real *yr = y.ptr() + r * out_dim;
    for (std::size_t i = 0; i < in; ++i) {
      const Real xv = x[r * in + i];
      const Real *mr = m.ptr() + i * out_dim;
      for (std::size_t o = 0; o < out_dim; ++o) yr[o] += xv * mr[o];
    }
  }
  return y;
}

template <class Real = double>
class SyntheticWorld {
 public:
  SyntheticWorld(std::size_t latent_dim, std::uint64_t world_seed,
                 std::size_t acoustic_dim = 240,
                 std::size_t visual_dim = kVisualDim)
      : latent_dim_(latent_dim), seed_(world_seed) {
    if (latent_dim == 0)
      throw std::invalid_argument("SyntheticWorld: latent_dim must be > 0");
    const double sigma = 1.0 / std::sqrt(double(latent_dim));
    SeededRng ra(derive_seed(world_seed, "world.acoustic"));
    SeededRng rv(derive_seed(world_seed, "world.visual"));
    acoustic_map_ = BasicParameter<Real>(
        "world.acoustic_map",
        random_normal<Real>({latent_dim, acoustic_dim}, ra, sigma), false);
    visual_map_ = BasicParameter<Real>(
        "world.visual_map",
        random_normal<Real>({latent_dim, visual_dim}, rv, sigma), false);
  }

  std::size_t latent_dim() const { return latent_dim_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t visual_dim() const { return visual_map_.value.dim(1); }

  BasicTensor<Real> sample_latent(std::size_t batch, std::size_t steps,
                                  SeededRng &rng) const {
    return random_normal<Real>({batch, steps, latent_dim_}, rng);
  }

  BasicTensor<Real> acoustic(const BasicTensor<Real> &latent) const {
    return matmul_last(latent, acoustic_map_.value);
  }

  BasicTensor<Real> visual(const BasicTensor<Real> &latent, double noise_sigma,
                           SeededRng &rng) const {
    auto v = matmul_last(latent, visual_map_.value);
    if (noise_sigma > 0)
      for (auto &x : v.data()) x = static_cast<Real>(x + noise_sigma * rng.normal());
    return v;
  }

  std::vector<const BasicParameter<Real> *> parameters() const {
    return {&acoustic_map_, &visual_map_};
  }

 private:
  std::size_t latent_dim_;
  std::uint64_t seed_;
  BasicParameter<Real> acoustic_map_, visual_map_;
};

template <class Real>
struct SyntheticTracks {
  BasicTensor<Real> matching;                  // [B, T, Dv]
  std::vector<BasicTensor<Real>> distractors;  // each [B, T, Dv]
};

/// Cyclic time roll along axis 1 of [B, T, D]: out[b, t] = x[b, (t + s) mod T].
template <class Real>
void roll_time(const BasicTensor<Real> &x, std::size_t b, std::size_t shift,
               BasicTensor<Real> &out) {
  const std::size_t T = x.dim(1), D = x.dim(2);
  for (std::size_t t = 0; t < T; ++t)
    std::copy_n(x.ptr() + (b * T + (t + shift) % T) * D, D,
                out.ptr() + (b * T + t) * D);
}

/**
 * Matching track = world visual map applied to the latent (+ noise).
 * Distractors: independent mode draws a fresh latent per distractor;
 * time-shifted mode rolls the true latent by a shift in [34, T-34] steps,
 * so the distractor is "speaking" the same content at least one second away
 * (requires T >= 68).
 */
template <class Real>
SyntheticTracks<Real> synth_tracks(const SyntheticTrackSpec &spec,
                                   const SyntheticWorld<Real> &world,
                                   const BasicTensor<Real> &latent,
                                   std::size_t n_distractors) {
  expect_rank(latent, 3, "synth_tracks latent");
  if (latent.dim(2) != world.latent_dim() || spec.latent_dim != world.latent_dim())
    throw ShapeError("synth_tracks: latent dim mismatch with world");
  if (spec.noise_sigma < 0)
    throw std::invalid_argument("synth_tracks: noise_sigma must be >= 0");
  const std::size_t B = latent.dim(0), T = latent.dim(1);
  if (spec.distractor_mode == DistractorMode::time_shifted && n_distractors > 0 &&
      T < 2 * kMinShift)
    throw std::invalid_argument(
        "synth_tracks: time-shifted distractors need T >= 68, got " +
        std::to_string(T));
  SeededRng rng(derive_seed(spec.seed, "synth_tracks"));
  SyntheticTracks<Real> out;
  out.matching = world.visual(latent, spec.noise_sigma, rng);
  for (std::size_t d = 0; d < n_distractors; ++d) {
    BasicTensor<Real> z;
    if (spec.distractor_mode == DistractorMode::independent) {
      z = world.sample_latent(B, T, rng);
    } else {
      z = BasicTensor<Real>(latent.shape());
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t shift = kMinShift + rng.index(T - 2 * kMinShift + 1);
        roll_time(latent, b, shift, z);
      }
    }
    out.distractors.push_back(world.visual(z, spec.noise_sigma, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Frozen feature sources for training.

template <class Real>
class VisualFrontend {
 public:
  virtual ~VisualFrontend() = default;
  /// latent [B, T, L] -> visual features [B, T, Dv]
  virtual BasicTensor<Real> features(const BasicTensor<Real> &latent,
                                     SeededRng &rng) const = 0;
  virtual std::vector<const BasicParameter<Real> *> parameters() const = 0;
  virtual std::string name() const = 0;
};

template <class Real>
class SyntheticFrontend final : public VisualFrontend<Real> {
 public:
  SyntheticFrontend(const SyntheticWorld<Real> &world, double noise_sigma)
      : world_(world), noise_(noise_sigma) {}

  BasicTensor<Real> features(const BasicTensor<Real> &latent,
                             SeededRng &rng) const override {
    return world_.visual(latent, noise_, rng);
  }
  std::vector<const BasicParameter<Real> *> parameters() const override {
    return world_.parameters();
  }
  std::string name() const override { return "synthetic"; }

 private:
  const SyntheticWorld<Real> &world_;
  double noise_;
};

/**
 * Renders the latent into a video (pixels = tanh(z * pixel_map), a fixed
 * random map, so values stay in [-1, 1]) and runs the frozen 3D ConvNet.
 */
template <class Real>
class Vgg3dFrontend final : public VisualFrontend<Real> {
 public:
  Vgg3dFrontend(Vgg3dConfig cfg, std::size_t latent_dim, std::uint64_t seed)
      : net_(std::move(cfg), seed) {
    const std::size_t s = net_.config().input_size;
    SeededRng rng(derive_seed(seed, "vgg3d.pixel_map"));
    pixel_map_ = BasicParameter<Real>(
        "vgg3d.pixel_map",
        random_normal<Real>({latent_dim, s * s * net_.config().channels[0]}, rng,
                            1.0 / std::sqrt(double(latent_dim))),
        false);
  }

  BasicTensor<Real> render(const BasicTensor<Real> &latent) const {
    auto px = matmul_last(latent, pixel_map_.value);
    for (auto &v : px.data()) v = std::tanh(v);
    const std::size_t s = net_.config().input_size;
    return px.reshaped(
        {latent.dim(0), latent.dim(1), s, s, net_.config().channels[0]});
  }

  BasicTensor<Real> features(const BasicTensor<Real> &latent,
                             SeededRng &) const override {
    return net_.forward(render(latent));
  }

  std::vector<const BasicParameter<Real> *> parameters() const override {
    std::vector<const BasicParameter<Real> *> ps{&pixel_map_};
    for (const auto &p : net_.parameters()) ps.push_back(&p);
    return ps;
  }
  std::string name() const override { return "vgg3d"; }

  const Vgg3d<Real> &net() const { return net_; }

 private:
  Vgg3d<Real> net_;
  BasicParameter<Real> pixel_map_;
};

/// Checksum over a set of parameter values.
template <class Param>
std::uint64_t parameter_checksum(const std::vector<Param *> &params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto *p : params) {
    h = fnv1a64(p->name, h);
    h = checksum(p->value, h);
  }
  return h;
}

}  // namespace avsel
