// SPDX-License-Identifier: Apache-2.0
/**
 * @file   gradcheck.hpp
 * @brief  Central finite-difference check of the full attention backward
 *         pass: query net, bilinear score, softmax, gate and cross entropy.
 *
 * Checked loss: L = CE(alpha) + <R, gate(alpha, V)>, with R a fixed random
 * N(0, 1/(BT)^2) tensor so the gate gradient reaches the tracks and weights.
 * Batch norm runs in train mode (batch statistics) without touching running stats.
 * Coordinates whose +-h perturbation flips any ReLU are skipped and counted.
 */
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "avsel/attention.hpp"
#include "avsel/finite_diff.hpp"
#include "avsel/training.hpp"

namespace avsel {

struct GradCheckConfig {
  QueryNetConfig query{{240, 6, 6, 6, 8, 8}, 5};
  std::size_t batch = 3;
  std::size_t steps = 5;
  std::size_t visual_dim = 8;
  double h = 1e-5;
  std::size_t coords_per_tensor = 16;
  std::uint64_t seed = 0;

  void validate() const {
    query.validate();
    if (batch < 2) throw std::invalid_argument("gradcheck: batch must be >= 2");
    if (steps == 0 || visual_dim == 0)
      throw std::invalid_argument("gradcheck: steps and visual_dim must be > 0");
    if (!(h > 0)) throw std::invalid_argument("gradcheck: h must be > 0");
    if (coords_per_tensor == 0)
      throw std::invalid_argument("gradcheck: coords_per_tensor must be > 0");
  }
};

struct GradCheckEntry {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0, numeric = 0, rel_err = 0;
};

struct GradCheckReport {
  double max_rel_err = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::string worst;
  std::vector<GradCheckEntry> entries;
};

/// One random instance of the checked loss with its analytic gradients.
class GradCheckProblem {
 public:
  explicit GradCheckProblem(const GradCheckConfig &cfg)
      : cfg_(cfg), model_(cfg.query, cfg.visual_dim, derive_seed(cfg.seed, "model")) {
    cfg_.validate();
    SeededRng rng(derive_seed(cfg.seed, "gradcheck"));
    const std::size_t B = cfg.batch, T = cfg.steps;
    acoustic_ = random_normal<double>({B, T, cfg.query.input_dim()}, rng);
    tracks_ = random_normal<double>({B, T, cfg.visual_dim}, rng);
    // mean-reduced like the CE term, so |L| stays O(1)
    probe_ = random_normal<double>({B, T, cfg.visual_dim}, rng, 1.0 / double(B * T));
    auto &q = model_.query();
    for (std::size_t l = 0; l < q.config().layers(); ++l) {
      for (auto &v : q.bias(l).value.data()) v = rng.uniform(-0.5, 0.5);
      for (auto &v : q.bn_scale(l).value.data()) v = rng.uniform(-1.0, 1.0);
      for (auto &v : q.bn_shift(l).value.data()) v = rng.uniform(-1.0, 1.0);
    }
    for (auto &v : model_.w().value.data()) v = rng.uniform(-1.0, 1.0);
  }

  AttentionModel<double> &model() { return model_; }
  Tensor &acoustic() { return acoustic_; }
  Tensor &tracks() { return tracks_; }

  /// Loss value; `mask` receives the ReLU activation pattern when non-null.
  double loss(std::vector<char> *mask = nullptr) {
    QueryCache<double> cache;
    const auto q = model_.query().forward(acoustic_, NormMode::train, false, &cache);
    const auto alpha = attention_weights(bilinear_score(q, model_.w().value, tracks_));
    const auto g = gate(alpha, tracks_);
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += probe_[i] * g[i];
    if (mask) {
      mask->clear();
      for (const auto &pre : cache.pre)
        for (double v : pre.data()) mask->push_back(v > 0);
    }
    return ce_loss(alpha) + dot;
  }

  /// Fills parameter grads and returns {dL/dA, dL/dV}.
  std::pair<Tensor, Tensor> analytic() {
    model_.zero_grad();
    QueryCache<double> cache;
    const auto q = model_.query().forward(acoustic_, NormMode::train, false, &cache);
    const auto proj = project_tracks(model_.w().value, tracks_);
    const auto alpha = attention_weights(score_projected(q, proj));
    auto gg = gate_backward(alpha, tracks_, probe_);
    const auto gce = ce_loss_grad_alpha(alpha);
    for (std::size_t i = 0; i < gg.alpha.size(); ++i) gg.alpha[i] += gce[i];
    const auto gs = softmax_axis_backward(alpha, gg.alpha, 2, 1.0);
    auto bg = bilinear_backward(q, model_.w().value, tracks_, proj, gs);
    for (std::size_t i = 0; i < bg.w.size(); ++i) model_.w().grad[i] += bg.w[i];
    for (std::size_t i = 0; i < bg.tracks.size(); ++i) bg.tracks[i] += gg.tracks[i];
    auto ga = model_.query().backward(cache, bg.queries);
    return {std::move(ga), std::move(bg.tracks)};
  }

 private:
  GradCheckConfig cfg_;
  AttentionModel<double> model_;
  Tensor acoustic_, tracks_, probe_;
};

/// Checks a random subset of coordinates of every parameter and both inputs.
inline GradCheckReport gradient_check(const GradCheckConfig &cfg) {
  GradCheckProblem prob(cfg);
  const auto [ga, gv] = prob.analytic();
  std::vector<char> base_mask, mask;
  prob.loss(&base_mask);

  struct Target {
    std::string name;
    Tensor *value;
    const Tensor *grad;
  };
  std::vector<Target> targets;
  for (auto *p : prob.model().parameters()) targets.push_back({p->name, &p->value, &p->grad});
  targets.push_back({"input.acoustic", &prob.acoustic(), &ga});
  targets.push_back({"input.tracks", &prob.tracks(), &gv});

  SeededRng pick(derive_seed(cfg.seed, "gradcheck.coords"));
  GradCheckReport rep;
  for (const auto &tg : targets) {
    std::vector<std::size_t> coords(tg.value->size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    pick.shuffle(coords);
    coords.resize(std::min(coords.size(), cfg.coords_per_tensor));
    for (std::size_t i : coords) {
      double &x = (*tg.value)[i];
      const double x0 = x;
      x = x0 + cfg.h;
      const double fp = prob.loss(&mask);
      bool kink = mask != base_mask;
      x = x0 - cfg.h;
      const double fm = prob.loss(&mask);
      kink = kink || mask != base_mask;
      x = x0;
      if (kink) {
        ++rep.skipped;
        continue;
      }
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericalError("gradcheck: non-finite loss at " + tg.name);
      GradCheckEntry e{tg.name, i, (*tg.grad)[i], (fp - fm) / (2 * cfg.h), 0};
      e.rel_err = relative_error(e.analytic, e.numeric);
      if (e.rel_err > rep.max_rel_err || rep.checked == 0) {
        rep.max_rel_err = e.rel_err;
        rep.worst = tg.name + "[" + std::to_string(i) + "]";
      }
      ++rep.checked;
      rep.entries.push_back(std::move(e));
    }
  }
  return rep;
}

}  // namespace avsel
