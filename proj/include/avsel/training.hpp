// SPDX-License-Identifier: Apache-2.0
/**
 * @file   training.hpp
 * @brief  Cross-entropy training of the attention stack, where the B
 *         elements of a minibatch are the competing tracks and the diagonal
 *         alpha[b, t, b] is the ground truth. The visual frontend is frozen.
 */
#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "avsel/attention.hpp"
#include "avsel/frontend.hpp"
#include "avsel/optim.hpp"
#include "avsel/tensor_io.hpp"

namespace avsel {

inline constexpr double kLogFloor = 1e-30;

namespace detail {

template <class Real>
void check_attention_weights(const BasicTensor<Real> &alpha, std::string_view what) {
  expect_rank(alpha, 3, what);
  const std::size_t N = alpha.dim(2), rows = alpha.dim(0) * alpha.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
      const double a = alpha[r * N + k];
      if (!std::isfinite(a))
        throw NumericalError(std::string(what) + ": non-finite attention weight");
      if (a < 0.0 || a > 1.0)
        throw std::invalid_argument(std::string(what) +
                                    ": attention weight outside [0, 1]");
      sum += a;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw std::invalid_argument(std::string(what) +
                                  ": attention row does not sum to 1");
  }
}

}  // namespace detail

/// Mean over (b, t) of -log(max(alpha[b, t, target[b]], 1e-30)).
template <class Real>
double ce_loss_targets(const BasicTensor<Real> &alpha,
                       const std::vector<std::size_t> &targets) {
  detail::check_attention_weights(alpha, "ce_loss");
  const std::size_t B = alpha.dim(0), T = alpha.dim(1), N = alpha.dim(2);
  if (targets.size() != B)
    throw ShapeError("ce_loss: one target per batch row required");
  double sum = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (targets[b] >= N) throw std::invalid_argument("ce_loss: target out of range");
    for (std::size_t t = 0; t < T; ++t)
      sum -= std::log(std::max(double(alpha[(b * T + t) * N + targets[b]]), kLogFloor));
  }
  return sum / double(B * T);
}

/// Minibatch cross entropy with the diagonal as ground truth; alpha [B, T, B].
template <class Real>
double ce_loss(const BasicTensor<Real> &alpha) {
  expect_rank(alpha, 3, "ce_loss alpha");
  if (alpha.dim(2) != alpha.dim(0))
    throw ShapeError("ce_loss: alpha must be [B, T, B], got " +
                     shape_str(alpha.shape()));
  if (alpha.dim(0) < 2)
    throw std::invalid_argument("ce_loss: need B >= 2 competing tracks");
  std::vector<std::size_t> diag(alpha.dim(0));
  for (std::size_t b = 0; b < diag.size(); ++b) diag[b] = b;
  return ce_loss_targets(alpha, diag);
}

/// dL/dalpha for ce_loss: -1 / (B T alpha[b,t,b]) on the diagonal.
template <class Real>
BasicTensor<Real> ce_loss_grad_alpha(const BasicTensor<Real> &alpha) {
  const std::size_t B = alpha.dim(0), T = alpha.dim(1);
  BasicTensor<Real> g(alpha.shape());
  const double scale = 1.0 / double(B * T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t i = (b * T + t) * B + b;
      if (alpha[i] > kLogFloor) g[i] = static_cast<Real>(-scale / alpha[i]);
    }
  return g;
}

/// dL/dS for ce_loss composed with a beta = 1 softmax: (alpha - onehot) / BT.
template <class Real>
BasicTensor<Real> ce_loss_grad_scores(const BasicTensor<Real> &alpha) {
  const std::size_t B = alpha.dim(0), T = alpha.dim(1);
  BasicTensor<Real> g(alpha.shape());
  const double scale = 1.0 / double(B * T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < B; ++k) {
        const std::size_t i = (b * T + t) * B + k;
        g[i] = static_cast<Real>((alpha[i] - (k == b ? 1.0 : 0.0)) * scale);
      }
  return g;
}

/// Fraction of (b, t) whose argmax over tracks is b.
template <class Real>
double diag_accuracy(const BasicTensor<Real> &alpha) {
  const std::size_t B = alpha.dim(0), T = alpha.dim(1);
  const auto arg = row_argmax(alpha);
  std::size_t hit = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) hit += arg[b * T + t] == b;
  return double(hit) / double(B * T);
}

template <class Real>
double mean_entropy(const BasicTensor<Real> &alpha) {
  const auto h = attention_entropy(alpha);
  double s = 0.0;
  for (Real v : h.data()) s += v;
  return s / double(h.size());
}

// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t batch = 8;
  std::size_t steps = 2000;
  std::size_t seq_len = 32;
  std::size_t max_len = 360;  // cap on source length
  std::uint64_t seed = 1;
  AdamConfig adam{};
  LrSchedule schedule = LrSchedule::scaled(100);
  double grad_clip = 0.0;  // global gradient-norm clip, 0 = off
  std::size_t eval_batches = 16;

  void validate() const {
    if (batch < 2)
      throw std::invalid_argument("TrainConfig: batch must be >= 2 (competing tracks)");
    if (seq_len == 0 || seq_len > max_len)
      throw std::invalid_argument("TrainConfig: seq_len must be in [1, " +
                                  std::to_string(max_len) + "]");
    if (grad_clip < 0) throw std::invalid_argument("TrainConfig: grad_clip must be >= 0");
    schedule.validate();
  }
};

struct TrainLogRow {
  std::uint64_t step = 0;  // 1-based optimizer step
  double lr = 0, loss = 0, diag_accuracy = 0, mean_entropy = 0;

  friend bool operator==(const TrainLogRow &, const TrainLogRow &) = default;
};

struct TrainReport {
  std::vector<TrainLogRow> log;
  double final_accuracy = 0;
  double wall_seconds = 0;
  std::uint64_t param_checksum = 0;
};

template <class Real>
struct MatchedBatch {
  BasicTensor<Real> acoustic;  // [B, T, 240]
  BasicTensor<Real> visual;    // [B, T, Dv], row b matches acoustic row b
};

/// Matched (acoustic, visual) minibatches from the synthetic world through a
/// frozen frontend. Batch contents depend only on (seed, purpose, index).
template <class Real>
class PairSource {
 public:
  PairSource(const SyntheticWorld<Real> &world,
             const VisualFrontend<Real> &frontend, std::uint64_t seed)
      : world_(world), frontend_(frontend), seed_(seed) {}

  MatchedBatch<Real> batch(std::string_view purpose, std::uint64_t index,
                           std::size_t B, std::size_t T) const {
    SeededRng rng(derive_seed(seed_, purpose, index));
    const auto z = world_.sample_latent(B, T, rng);
    return {world_.acoustic(z), frontend_.features(z, rng)};
  }

  const VisualFrontend<Real> &frontend() const { return frontend_; }

 private:
  const SyntheticWorld<Real> &world_;
  const VisualFrontend<Real> &frontend_;
  std::uint64_t seed_;
};

template <class Real>
struct TrainState {
  AttentionModel<Real> model;
  AdamState<Real> adam;
  std::uint64_t step = 0;
};

/// One optimizer step on one minibatch; returns the pre-update statistics.
template <class Real>
TrainLogRow train_step(TrainState<Real> &state, const MatchedBatch<Real> &mb,
                       const TrainConfig &cfg) {
  auto &model = state.model;
  model.zero_grad();
  QueryCache<Real> cache;
  const auto q = model.query().forward(mb.acoustic, NormMode::train, true, &cache);
  const auto proj = project_tracks(model.w().value, mb.visual);
  const auto scores = score_projected(q, proj);
  const auto alpha = attention_weights(scores, 1.0);

  TrainLogRow row;
  row.step = state.step + 1;
  row.loss = ce_loss(alpha);
  if (!std::isfinite(row.loss))
    throw NumericalError("training: non-finite loss at step " +
                         std::to_string(row.step));
  row.diag_accuracy = diag_accuracy(alpha);
  row.mean_entropy = mean_entropy(alpha);

  const auto gs = ce_loss_grad_scores(alpha);
  auto bg = bilinear_backward(q, model.w().value, mb.visual, proj, gs);
  for (std::size_t i = 0; i < bg.w.size(); ++i) model.w().grad[i] += bg.w[i];
  model.query().backward(cache, bg.queries);

  auto params = model.parameters();
  if (cfg.grad_clip > 0) {
    double sq = 0.0;
    for (const auto *p : params)
      for (Real g : p->grad.data()) sq += double(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip)
      for (auto *p : params)
        for (auto &g : p->grad.data()) g = static_cast<Real>(g * (cfg.grad_clip / norm));
  }
  row.lr = cfg.schedule.at(row.step);
  adam_step<Real>(params, state.adam, row.lr, cfg.adam);
  ++state.step;
  return row;
}

/// Inference-mode diagonal accuracy on held-out batches ("eval", i).
template <class Real>
double heldout_accuracy(const AttentionModel<Real> &model,
                        const PairSource<Real> &source, const TrainConfig &cfg) {
  double acc = 0.0;
  for (std::size_t i = 0; i < cfg.eval_batches; ++i) {
    const auto mb = source.batch("eval", i, cfg.batch, cfg.seq_len);
    acc += diag_accuracy(attention_weights(model.scores(mb.acoustic, mb.visual)));
  }
  return cfg.eval_batches ? acc / double(cfg.eval_batches) : 0.0;
}

/**
 * Runs optimizer steps state.step .. cfg.steps-1. Batch s is drawn from
 * ("train", s), so a run resumed from a checkpoint replays exactly the batches
 * an uninterrupted run would have seen. `on_step` sees each log row and the
 * state after the update.
 */
template <class Real>
TrainReport train_attention(
    const TrainConfig &cfg, const PairSource<Real> &source, TrainState<Real> &state,
    const std::function<void(const TrainLogRow &, const TrainState<Real> &)>
        &on_step = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  while (state.step < cfg.steps) {
    const auto mb = source.batch("train", state.step, cfg.batch, cfg.seq_len);
    report.log.push_back(train_step(state, mb, cfg));
    if (on_step) on_step(report.log.back(), state);
  }
  report.final_accuracy = heldout_accuracy(state.model, source, cfg);
  report.param_checksum = parameter_checksum(state.model.parameters());
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/manifest.json plus one tensor file per parameter,
// running statistic and Adam moment.

template <class Real>
void save_checkpoint(const fs::path &dir, const TrainState<Real> &state,
                     const json &config = json::object()) {
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  const auto &model = state.model;
  json params = json::array();
  for (const auto *p : model.parameters()) {
    const std::string file = p->name + ".bin";
    write_tensor(tmp / file, p->value);
    params.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"file", file}});
  }
  json stats = json::array();
  const auto &ns = model.query().norm_stats();
  for (std::size_t l = 0; l < ns.size(); ++l) {
    const std::string base = "query.layer" + std::to_string(l + 1);
    write_tensor(tmp / (base + ".running_mean.bin"), ns[l].mean);
    write_tensor(tmp / (base + ".running_var.bin"), ns[l].var);
    stats.push_back({{"mean", base + ".running_mean.bin"},
                     {"var", base + ".running_var.bin"},
                     {"momentum", ns[l].momentum}});
  }
  json moments = json::array();
  for (std::size_t k = 0; k < state.adam.m.size(); ++k) {
    const std::string base = "adam." + std::to_string(k);
    write_tensor(tmp / (base + ".m.bin"), state.adam.m[k]);
    write_tensor(tmp / (base + ".v.bin"), state.adam.v[k]);
    moments.push_back({{"m", base + ".m.bin"}, {"v", base + ".v.bin"}});
  }
  json manifest = {
      {"format", "avsel-checkpoint-1"},
      {"config", config},
      {"step", state.step},
      {"query_channels", model.query().config().channels},
      {"query_kernel", model.query().config().kernel},
      {"visual_dim", model.visual_dim()},
      {"params", params},
      {"norm_stats", stats},
      {"adam", {{"step", state.adam.step}, {"moments", moments}}},
  };
  write_json(tmp / "manifest.json", manifest);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

template <class Real>
TrainState<Real> load_checkpoint(const fs::path &dir, json *config_out = nullptr) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw IoError("checkpoint manifest not found: " + mpath.string());
  const json m = read_json(mpath);
  QueryNetConfig qc;
  qc.channels = m.at("query_channels").get<std::vector<std::size_t>>();
  qc.kernel = m.at("query_kernel").get<std::size_t>();
  TrainState<Real> st{AttentionModel<Real>(qc, m.at("visual_dim").get<std::size_t>(), 0),
                      {}, m.at("step").get<std::uint64_t>()};
  auto params = st.model.parameters();
  const auto &entries = m.at("params");
  if (entries.size() != params.size())
    throw IoError("checkpoint parameter count mismatch in " + mpath.string());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (entries[i].at("name") != params[i]->name)
      throw IoError("checkpoint parameter order mismatch at " + params[i]->name);
    auto v = read_tensor<Real>(dir / entries[i].at("file").get<std::string>());
    expect_shape(v, params[i]->value.shape(), params[i]->name);
    params[i]->value = std::move(v);
  }
  auto &ns = st.model.query().norm_stats();
  const auto &stats = m.at("norm_stats");
  for (std::size_t l = 0; l < ns.size(); ++l) {
    ns[l].mean = read_tensor<Real>(dir / stats[l].at("mean").get<std::string>());
    ns[l].var = read_tensor<Real>(dir / stats[l].at("var").get<std::string>());
    ns[l].momentum = stats[l].at("momentum").get<double>();
    ns[l].initialized = true;
  }
  st.adam.step = m.at("adam").at("step").get<std::uint64_t>();
  for (const auto &mo : m.at("adam").at("moments")) {
    st.adam.m.push_back(read_tensor<Real>(dir / mo.at("m").get<std::string>()));
    st.adam.v.push_back(read_tensor<Real>(dir / mo.at("v").get<std::string>()));
  }
  if (config_out) *config_out = m.value("config", json::object());
  return st;
}

}  // namespace avsel
