// SPDX-License-Identifier: Apache-2.0
/**
 * @file   finite_diff.hpp
 * @brief  Central-difference gradient oracle.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "avsel/tensor.hpp"

namespace avsel {

/// d f / d x_i ~ (f(x + h e_i) - f(x - h e_i)) / 2h for the listed
/// coordinates. `x` is restored before returning.
template <class Real, class F>
std::vector<double> finite_diff_at(F &&f, BasicTensor<Real> &x,
                                   const std::vector<std::size_t> &coords,
                                   double h = 1e-5) {
  std::vector<double> out;
  out.reserve(coords.size());
  for (std::size_t i : coords) {
    const Real saved = x[i];
    x[i] = static_cast<Real>(saved + h);
    const double fp = f(x);
    x[i] = static_cast<Real>(saved - h);
    const double fm = f(x);
    x[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericalError("finite_diff_grad: non-finite f at coordinate " +
                           std::to_string(i));
    out.push_back((fp - fm) / (2.0 * h));
  }
  return out;
}

/// Full central-difference gradient of a scalar function of a tensor.
template <class Real, class F>
BasicTensor<Real> finite_diff_grad(F &&f, const BasicTensor<Real> &x,
                                   double h = 1e-5) {
  BasicTensor<Real> work = x;
  std::vector<std::size_t> all(x.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto g = finite_diff_at(f, work, all, h);
  BasicTensor<Real> out(x.shape());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = static_cast<Real>(g[i]);
  return out;
}

/// |a - n| / max(|a|, |n|, floor). The floor keeps exactly-zero gradients
/// from turning rounding noise into a relative error of 1.
inline double relative_error(double analytic, double numeric,
                             double floor = 1e-6) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace avsel
