// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification battery: checks the analytic gradients of
// every differentiable primitive (via small compositions that exercise them
// all) plus one full stage-1 alignment loss and one full stage-2 distillation
// loss, in 64-bit precision. The CLI's `gradcheck` subcommand and the release
// gates both run exactly this battery.

#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mtfuse/fusion.hpp"
#include "mtfuse/gradcheck.hpp"
#include "mtfuse/task_model.hpp"
#include "mtfuse/trainer.hpp"

namespace mtfuse {

struct SelfCheckEntry {
  std::string name;
  GradCheckResult result;
};

inline double selfcheck_max_error(const std::vector<SelfCheckEntry>& entries) {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.result.max_rel_err);
  return worst;
}

// Runs the battery. With `corrupt_gradient` set, one analytic gradient
// coordinate of the first entry is deliberately damaged after its backward
// pass; the reported error must then blow past any reasonable tolerance.
// That hook exists so callers can verify the checker catches bad gradients
// rather than vacuously passing.
inline std::vector<SelfCheckEntry> run_gradient_selfcheck(bool corrupt_gradient = false) {
  using R = double;
  std::vector<SelfCheckEntry> out;
  Rng coord_rng(2024);

  auto check = [&](const std::string& name, const std::vector<NamedParam<R>>& params,
                   const std::function<R()>& fwd, const std::function<void()>& bwd) {
    out.push_back({name, finite_diff_check<R>(params, fwd, bwd, coord_rng)});
  };

  // --- dense chain: matmul, bias add, gelu, mean-squared loss --------------
  {
    Rng rng(11);
    Linear<R> l1 = detail::init_linear<R>(4, 6, true, rng);
    Linear<R> l2 = detail::init_linear<R>(6, 3, true, rng);
    Tensor<R> x = gaussian_tensor<R>({5, 4}, rng, R(1));
    Tensor<R> target = gaussian_tensor<R>({5, 3}, rng, R(1));
    for (auto* t : {&l1.weight, &l1.bias, &l2.weight, &l2.bias}) t->requires_grad = true;
    std::vector<NamedParam<R>> params = {
        {"l1.weight", &l1.weight}, {"l1.bias", &l1.bias}, {"l2.weight", &l2.weight}, {"l2.bias", &l2.bias}};
    auto loss = [&](Graph<R>& g) {
      NodeId y = l2.apply(g, g.gelu(l1.apply(g, g.constant(x))));
      return g.mse_loss(y, g.constant(target));
    };
    auto fwd = [&]() {
      Graph<R> g;
      return g.vals(loss(g))[0];
    };
    auto bwd = [&, corrupt_gradient]() {
      Graph<R> g;
      g.backward(loss(g));
      if (corrupt_gradient) l1.weight.grad[0] += R(0.25);  // test hook: must be caught
    };
    check("dense_gelu_chain", params, fwd, bwd);
  }

  // --- one-layer backbones: embeddings, attention (both masks), layer norm,
  // --- residuals, token-level cross entropy --------------------------------
  for (AttentionMode mode : {AttentionMode::kBidirectional, AttentionMode::kCausal}) {
    ModelConfig mc;
    mc.d_model = 8;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.d_ff = 16;
    mc.max_len = 16;
    mc.vocab_size = 32;
    mc.attention_mode = mode;
    mc.seed = 31;
    auto lm = init_model<R>(mc);
    auto params = named_params(lm);
    Rng mask_rng(5);
    auto ex = detail::make_lm_example<R>({9, 12, 7, 15, 21}, mode, mask_rng);
    auto fwd = [&]() {
      Graph<R> g;
      return g.vals(lm_example_loss_graph(g, lm, ex, false, nullptr))[0];
    };
    auto bwd = [&]() {
      Graph<R> g;
      g.backward(lm_example_loss_graph(g, lm, ex, false, nullptr));
    };
    check(mode == AttentionMode::kCausal ? "backbone_causal_ce" : "backbone_bidirectional_ce", params, fwd, bwd);
  }

  // --- pooling reductions over a [T,d] state -------------------------------
  {
    Rng rng(17);
    Tensor<R> state = gaussian_tensor<R>({4, 6}, rng, R(1));
    Tensor<R> target = gaussian_tensor<R>({6}, rng, R(1));  // pooling yields a rank-1 vector
    state.requires_grad = true;
    std::vector<NamedParam<R>> params = {{"state", &state}};
    auto loss = [&](Graph<R>& g) {
      NodeId s = g.leaf(state);
      NodeId sum = g.mse_loss(pool_graph(g, s, {}, PoolingMode::kMean), g.constant(target));
      sum = g.add(sum, g.mse_loss(pool_graph(g, s, {}, PoolingMode::kBos), g.constant(target)));
      return g.add(sum, g.mse_loss(pool_graph(g, s, {}, PoolingMode::kEos), g.constant(target)));
    };
    auto fwd = [&]() {
      Graph<R> g;
      return g.vals(loss(g))[0];
    };
    auto bwd = [&]() {
      Graph<R> g;
      g.backward(loss(g));
    };
    check("pooling_modes", params, fwd, bwd);
  }

  // --- translator: encoder-decoder with cross attention, teacher forcing ---
  {
    MTConfig mc;
    mc.d_model = 8;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.d_ff = 16;
    mc.max_len = 16;
    mc.vocab_size = 32;
    mc.n_languages = 3;
    mc.seed = 41;
    auto mt = init_mt_model<R>(mc);
    set_mt_requires_grad(mt, true);
    auto params = named_mt_params(mt);
    MTPair pair;
    pair.src = {20, 11, 25, 13};
    pair.tgt = {14, 22, 9, 30};
    pair.src_lang = 1;
    pair.tgt_lang = 2;
    auto fwd = [&]() {
      Graph<R> g;
      return g.vals(mt_pair_loss_graph(g, mt, pair))[0];
    };
    auto bwd = [&]() {
      Graph<R> g;
      g.backward(mt_pair_loss_graph(g, mt, pair));
    };
    check("translator_pair_ce", params, fwd, bwd);
  }

  // --- full stage-1 alignment loss and stage-2 distillation loss over the
  // --- fused trainables (bridge + adapters, dropout mask re-seeded) --------
  {
    MTConfig ec;
    ec.d_model = 8;
    ec.n_layers = 1;
    ec.n_heads = 2;
    ec.d_ff = 16;
    ec.max_len = 24;
    ec.vocab_size = 32;
    ec.n_languages = 3;
    ec.seed = 51;
    auto mt = init_mt_model<R>(ec);
    ModelConfig lc;
    lc.d_model = 12;
    lc.n_layers = 1;
    lc.n_heads = 2;
    lc.d_ff = 24;
    lc.max_len = 24;
    lc.vocab_size = 32;
    lc.attention_mode = AttentionMode::kBidirectional;
    lc.seed = 52;
    auto lm = init_model<R>(lc);
    inject_lora(lm, 3, R(6), 0.1, 53u);
    // Give the zero-initialized up-projections signal so their inputs matter.
    Rng scatter(54);
    for_each_linear<R>(lm, [&](const std::string&, Linear<R>& l) {
      if (l.adapter) {
        for (auto& v : l.adapter->up.values) v = R(scatter.normal() * 0.05);
      }
    });
    auto fused = build_fused(mt, lm, 1, PoolingMode::kMean, 55u);
    auto theta = fused_trainable_params(fused);

    std::vector<int> sent = {21, 9, 30, 12, 18};
    Tensor<R> teacher_rep = teacher_forward(fused, stage1_teacher_tokens<R>(sent));
    auto s1_loss = [&](Graph<R>& g) {
      Rng drop(123);  // fixed mask so the forward is deterministic
      NodeId z = fused_forward_graph(g, fused, sent, 1, fused.pooling, true, &drop);
      return g.mse_loss(z, g.constant(teacher_rep));
    };
    check(
        "stage1_alignment_loss", theta,
        [&]() {
          Graph<R> g;
          return g.vals(s1_loss(g))[0];
        },
        [&]() {
          Graph<R> g;
          g.backward(s1_loss(g));
        });

    TaskSpec spec;
    spec.kind = TaskKind::kMultipleChoice;
    spec.num_classes = 4;
    LabeledExample ex;
    ex.text_a = {19, 8, 27};   // passage
    ex.text_b = {26, 13};      // question
    ex.choices = {{10, 23}, {29, 6}, {7, 31}, {24, 16}};
    ex.label = 2;
    ex.language = 1;
    auto teacher_reps = lm_task_reps(lm, spec, ex, PoolingMode::kMean);
    auto s2_loss = [&](Graph<R>& g) {
      Rng drop(321);
      return distill_loss_graph(g, fused, teacher_reps, spec, ex, PoolingMode::kMean, true, &drop);
    };
    check(
        "stage2_distillation_loss", theta,
        [&]() {
          Graph<R> g;
          return g.vals(s2_loss(g))[0];
        },
        [&]() {
          Graph<R> g;
          g.backward(s2_loss(g));
        });

    // Task head path: per-choice scalar scores, concatenation, cross entropy.
    auto head = init_task_head<R>(lc.d_model, spec, 57u);
    std::vector<NamedParam<R>> head_and_theta = theta;
    for (auto& p : head_params(head)) head_and_theta.push_back(p);
    auto head_loss = [&](Graph<R>& g) {
      Rng drop(213);
      NodeId logits = fused_task_logits_graph(g, fused, head, spec, ex, PoolingMode::kMean, true, &drop);
      return g.cross_entropy(logits, ex.label);
    };
    check(
        "task_head_choice_ce", head_and_theta,
        [&]() {
          Graph<R> g;
          return g.vals(head_loss(g))[0];
        },
        [&]() {
          Graph<R> g;
          g.backward(head_loss(g));
        });
  }

  return out;
}

}  // namespace mtfuse
