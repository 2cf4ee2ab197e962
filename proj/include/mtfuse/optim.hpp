// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training configuration, the warmup/decay learning-rate schedule, and a
// full-precision decoupled-weight-decay AdamW over named parameter lists.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mtfuse/gradcheck.hpp"  // NamedParam
#include "mtfuse/tensor.hpp"

namespace mtfuse {

struct TrainConfig {
  double peak_lr = 2e-4;          // alignment-stage default; task stages override
  int total_steps = 2000;
  double warmup_fraction = 0.10;  // linear 0 -> peak over the first 10% of steps
  int batch_size = 32;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  unsigned seed = 0;
  double validate_every_fraction = 0.10;  // checkpoint/validation cadence
  int epochs = 3;                         // task-mode loops; step-mode ignores it

  void validate() const {
    if (peak_lr <= 0.0) throw std::invalid_argument("train config: peak_lr must be positive");
    if (total_steps < 1) throw std::invalid_argument("train config: total_steps must be >= 1");
    if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0) {
      throw std::invalid_argument("train config: warmup_fraction must be in (0,1)");
    }
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (weight_decay < 0.0) throw std::invalid_argument("train config: weight_decay must be >= 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw std::invalid_argument("train config: betas must be in [0,1)");
    }
    if (eps <= 0.0) throw std::invalid_argument("train config: eps must be positive");
    if (validate_every_fraction <= 0.0 || validate_every_fraction > 1.0) {
      throw std::invalid_argument("train config: validate_every_fraction must be in (0,1]");
    }
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  }
};

// Linear 0 -> peak over the first warmup_fraction of total_steps, then linear
// peak -> 0 at total_steps. Continuous, single peak.
inline double lr_at(int step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) {
    throw std::invalid_argument("lr_at: step " + std::to_string(step) + " outside [0," +
                                std::to_string(cfg.total_steps) + "]");
  }
  double warmup = cfg.warmup_fraction * cfg.total_steps;
  if (step <= warmup) return cfg.peak_lr * (static_cast<double>(step) / warmup);
  return cfg.peak_lr * (static_cast<double>(cfg.total_steps - step) / (cfg.total_steps - warmup));
}

// Decoupled AdamW: the weight-decay shrink uses the incoming parameter value
// and is independent of the moment-based update.
template <typename Real>
class AdamW {
 public:
  AdamW(std::vector<NamedParam<Real>> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    slots_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      slots_[i].m.assign(params_[i].tensor->size(), Real(0));
      slots_[i].v.assign(params_[i].tensor->size(), Real(0));
    }
  }

  const std::vector<NamedParam<Real>>& params() const { return params_; }
  int step_count() const { return t_; }

  void zero_grad() {
    for (auto& p : params_) p.tensor->zero_grad();
  }

  void step(double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<Real>& p = *params_[i].tensor;
      if (!p.has_grad()) {
        throw std::runtime_error("adamw: missing gradient for parameter '" + params_[i].name + "'");
      }
      auto& m = slots_[i].m;
      auto& v = slots_[i].v;
      for (std::size_t j = 0; j < p.size(); ++j) {
        double g = static_cast<double>(p.grad[j]);
        double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * g;
        double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * g * g;
        m[j] = static_cast<Real>(mj);
        v[j] = static_cast<Real>(vj);
        double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps);
        double decayed = static_cast<double>(p.values[j]) * (1.0 - lr * cfg_.weight_decay);
        p.values[j] = static_cast<Real>(decayed - lr * update);
      }
    }
  }

 private:
  struct Slot {
    std::vector<Real> m, v;
  };
  std::vector<NamedParam<Real>> params_;
  TrainConfig cfg_;
  std::vector<Slot> slots_;
  int t_ = 0;
};

}  // namespace mtfuse
