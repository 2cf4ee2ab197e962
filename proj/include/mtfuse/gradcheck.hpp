// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Independent oracle for backward passes: central finite differences around
// the current parameter values, compared coordinate-by-coordinate against the
// analytic gradients a model produces. Intended to run in double precision.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mtfuse/tensor.hpp"

namespace mtfuse {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  int coords_checked = 0;
  std::string worst_coord;  // "name[i]" of the largest relative error
};

// Evaluates `forward` twice and insists on bit-identical results; a gradient
// check against a stochastic or state-dependent forward is meaningless.
template <typename Real>
void require_deterministic_forward(const std::function<Real()>& forward) {
  Real a = forward();
  Real b = forward();
  if (!(a == b)) {
    throw std::runtime_error("gradcheck: forward is not deterministic (" + std::to_string(static_cast<double>(a)) +
                             " vs " + std::to_string(static_cast<double>(b)) + ")");
  }
}

// `forward` evaluates the loss without touching gradients. `backward` runs a
// full forward+backward, leaving fresh gradients in each parameter's .grad
// (the harness clears them first). Checks up to `max_coords_per_param`
// rng-sampled coordinates of every parameter with central differences.
//
// Relative error uses a floored denominator so that finite-difference noise on
// near-zero coordinates does not register as failure:
//   err = |analytic - numeric| / max(|analytic|, |numeric|, denom_floor)
template <typename Real>
GradCheckResult finite_diff_check(const std::vector<NamedParam<Real>>& params,
                                  const std::function<Real()>& forward,
                                  const std::function<void()>& backward, Rng& rng,
                                  Real eps = Real(1e-5), int max_coords_per_param = 24,
                                  double denom_floor = 1e-3) {
  if (eps <= Real(0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  require_deterministic_forward<Real>(forward);

  for (const auto& p : params) p.tensor->clear_grad();
  backward();
  // A parameter the loss never reaches keeps an absent grad slot; that is
  // the analytic claim "exactly zero", which the finite differences verify.

  GradCheckResult res;
  double err_sum = 0.0;
  for (const auto& p : params) {
    Tensor<Real>& t = *p.tensor;
    std::size_t numel = t.size();
    int want = std::min<std::size_t>(numel, static_cast<std::size_t>(max_coords_per_param));
    for (int c = 0; c < want; ++c) {
      std::size_t i = (numel <= static_cast<std::size_t>(max_coords_per_param))
                          ? static_cast<std::size_t>(c)
                          : static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(numel) - 1));
      Real saved = t.values[i];
      t.values[i] = saved + eps;
      double f_plus = static_cast<double>(forward());
      t.values[i] = saved - eps;
      double f_minus = static_cast<double>(forward());
      t.values[i] = saved;

      double numeric = (f_plus - f_minus) / (2.0 * static_cast<double>(eps));
      double analytic = t.has_grad() ? static_cast<double>(t.grad[i]) : 0.0;
      double denom = std::max({std::abs(analytic), std::abs(numeric), denom_floor});
      double err = std::abs(analytic - numeric) / denom;
      err_sum += err;
      ++res.coords_checked;
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst_coord = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  if (res.coords_checked > 0) res.mean_rel_err = err_sum / res.coords_checked;
  return res;
}

}  // namespace mtfuse
