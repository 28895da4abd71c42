// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>

namespace acap::nn {

/// |a - b| / max(|a|, |b|, 1e-8)
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central-difference check of `analytic` against f at every coordinate of
/// `params`. Each coordinate is perturbed in place and restored exactly.
template <class T>
GradCheckResult grad_check(const std::function<T()>& f, std::span<T> params,
                           std::span<const T> analytic, T step = T(1e-5)) {
  GradCheckResult res;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T saved = params[i];
    params[i] = saved + step;
    const T plus = f();
    params[i] = saved - step;
    const T minus = f();
    params[i] = saved;
    const double numeric = static_cast<double>((plus - minus) / (T(2) * step));
    const double err = relative_error(static_cast<double>(analytic[i]), numeric);
    if (i == 0 || err > res.max_relative_error) {
      res.max_relative_error = err;
      res.worst_index = i;
      res.worst_analytic = static_cast<double>(analytic[i]);
      res.worst_numeric = numeric;
    }
  }
  return res;
}

}  // namespace acap::nn
