// SPDX-License-Identifier: Apache-2.0
/**
 * @file   optim.hpp
 * @brief  Adam with bias correction and the three-phase learning-rate
 *         schedule (linear warmup, constant hold, exponential decay).
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "avsel/tensor.hpp"

namespace avsel {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

template <class Real>
struct AdamState {
  std::vector<BasicTensor<Real>> m, v;  // one per parameter, same order
  std::uint64_t step = 0;
};

/**
 * One Adam update over every trainable parameter; frozen parameters are
 * skipped and left bitwise untouched. All gradients are checked before any
 * parameter moves, so a non-finite gradient aborts with the model intact.
 */
template <class Real>
void adam_step(std::span<BasicParameter<Real> *const> params,
               AdamState<Real> &state, double lr, const AdamConfig &cfg = {}) {
  for (const auto *p : params)
    if (p->trainable && !p->grad.all_finite())
      throw NumericalError("adam_step: non-finite gradient in parameter '" +
                           p->name + "' at step " +
                           std::to_string(state.step + 1));
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto *p : params) {
      state.m.push_back(BasicTensor<Real>::zeros_like(p->value));
      state.v.push_back(BasicTensor<Real>::zeros_like(p->value));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto &p = *params[k];
    if (!p.trainable) continue;
    auto &m = state.m[k];
    auto &v = state.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double g = p.grad[i];
      if (cfg.weight_decay != 0.0) g += cfg.weight_decay * p.value[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      const double mhat = mi / c1, vhat = vi / c2;
      p.value[i] =
          static_cast<Real>(p.value[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

/**
 * Piecewise schedule over optimizer steps:
 *   [0, warmup]        linear 0 -> peak
 *   (warmup, hold]     peak
 *   (hold, end]        peak * end_ratio^((step - hold) / (end - hold))
 *   beyond end         peak * end_ratio
 */
struct LrSchedule {
  double peak = 1e-3;
  std::uint64_t warmup_steps = 32000;
  std::uint64_t hold_until = 60000;
  std::uint64_t end_step = 200000;
  double end_ratio = 0.01;

  /// Step counts of the reference schedule divided by `scale`.
  static LrSchedule scaled(double scale, double peak = 1e-3) {
    if (!(scale > 0)) throw std::invalid_argument("LrSchedule: scale must be > 0");
    LrSchedule s;
    s.peak = peak;
    s.warmup_steps = static_cast<std::uint64_t>(std::llround(32000 / scale));
    s.hold_until = static_cast<std::uint64_t>(std::llround(60000 / scale));
    s.end_step = static_cast<std::uint64_t>(std::llround(200000 / scale));
    s.validate();
    return s;
  }

  void validate() const {
    if (!(warmup_steps > 0 && warmup_steps < hold_until && hold_until < end_step))
      throw std::invalid_argument(
          "LrSchedule: need 0 < warmup < hold < end, got " +
          std::to_string(warmup_steps) + "/" + std::to_string(hold_until) +
          "/" + std::to_string(end_step));
    if (!(peak >= 0) || !(end_ratio > 0))
      throw std::invalid_argument("LrSchedule: peak >= 0 and end_ratio > 0");
  }

  double at(std::uint64_t step) const {
    if (step <= warmup_steps)
      return peak * double(step) / double(warmup_steps);
    if (step <= hold_until) return peak;
    if (step <= end_step) {
      const double frac =
          double(step - hold_until) / double(end_step - hold_until);
      return peak * std::pow(end_ratio, frac);
    }
    return peak * end_ratio;
  }
};

inline double lr_at(std::uint64_t step, const LrSchedule &sched) {
  return sched.at(step);
}

}  // namespace avsel
