// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapter attached to a host linear layer. The host output gains
// (alpha / r) * (dropout(x) @ down) @ up; with up initialized to zeros the
// delta is exactly zero at creation, so injection never perturbs a model.

#pragma once

#include <memory>
#include <string>

#include "mtfuse/tensor.hpp"

namespace mtfuse {

template <typename Real>
struct LoraAdapter {
  Tensor<Real> down;  // [d_in, r]
  Tensor<Real> up;    // [r, d_out]
  int rank = 0;
  Real alpha = Real(0);
  double dropout_p = 0.0;
  bool enabled = true;

  Real scaling() const { return alpha / static_cast<Real>(rank); }
};

template <typename Real>
LoraAdapter<Real> make_lora_adapter(int d_in, int d_out, int r, Real alpha, double dropout_p, Rng& rng) {
  if (r < 1) throw std::invalid_argument("lora rank must be >= 1, got " + std::to_string(r));
  if (r > std::min(d_in, d_out)) {
    throw std::invalid_argument("lora rank " + std::to_string(r) + " exceeds min(d_in=" + std::to_string(d_in) +
                                ", d_out=" + std::to_string(d_out) + ")");
  }
  if (alpha <= Real(0)) throw std::invalid_argument("lora alpha must be positive");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw std::invalid_argument("lora dropout_p must be in [0,1)");
  LoraAdapter<Real> a;
  a.down = gaussian_tensor<Real>({d_in, r}, rng, Real(0.02));
  a.up = Tensor<Real>({r, d_out});  // zeros: adapter starts as the identity delta
  a.rank = r;
  a.alpha = alpha;
  a.dropout_p = dropout_p;
  a.down.requires_grad = true;
  a.up.requires_grad = true;
  return a;
}

}  // namespace mtfuse
