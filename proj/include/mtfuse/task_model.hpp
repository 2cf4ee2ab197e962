// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Task heads and the two views of a labeled example:
//  - the backbone LM view: [BOS] fields joined by [SEP] [EOS], encoded by the
//    LM itself and pooled;
//  - the fused view: the same fields joined by [SEP] with no BOS/EOS, encoded
//    by the MT encoder (which prepends its language tag) through the bridge.
// Classification tasks map one pooled vector through a [d, C] head; the
// multiple-choice task embeds (passage, question, choice) per choice, maps
// each through a [d, 1] head, and softmaxes over the concatenated logits.

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "mtfuse/fusion.hpp"
#include "mtfuse/graph.hpp"
#include "mtfuse/synth.hpp"
#include "mtfuse/transformer.hpp"

namespace mtfuse {

template <typename Real>
struct TaskHead {
  Tensor<Real> weight;  // [d_model, out_dim]
  Tensor<Real> bias;    // [out_dim]
};

// Classification heads emit one logit per class; the multiple-choice head
// scores each jointly-embedded choice with a single scalar.
inline int head_out_dim(const TaskSpec& spec) {
  return spec.kind == TaskKind::kMultipleChoice ? 1 : spec.num_classes;
}

template <typename Real>
TaskHead<Real> init_task_head(int d_model, const TaskSpec& spec, unsigned seed) {
  if (d_model <= 0) throw std::invalid_argument("init_task_head: d_model must be positive");
  Rng rng(mix_seed(seed, 0x4EADu));
  TaskHead<Real> h;
  h.weight = gaussian_tensor<Real>({d_model, head_out_dim(spec)}, rng, Real(0.02));
  h.bias = Tensor<Real>::zeros({head_out_dim(spec)});
  h.weight.requires_grad = true;
  h.bias.requires_grad = true;
  return h;
}

template <typename Real>
std::vector<NamedParam<Real>> head_params(TaskHead<Real>& h) {
  return {{"head.weight", &h.weight}, {"head.bias", &h.bias}};
}

inline void validate_example(const TaskSpec& spec, const LabeledExample& ex) {
  if (ex.label < 0 || ex.label >= spec.num_classes) {
    throw std::invalid_argument("task example: label " + std::to_string(ex.label) + " out of range for " +
                                std::to_string(spec.num_classes) + " classes");
  }
  switch (spec.kind) {
    case TaskKind::kSingle:
      if (ex.text_a.empty()) throw std::invalid_argument("task example: single task requires text_a");
      break;
    case TaskKind::kPair:
      if (ex.text_a.empty() || ex.text_b.empty()) {
        throw std::invalid_argument("task example: pair task requires text_a and text_b");
      }
      break;
    case TaskKind::kMultipleChoice:
      if (ex.text_a.empty() || ex.text_b.empty()) {
        throw std::invalid_argument("task example: multiple choice requires a passage and a question");
      }
      if (static_cast<int>(ex.choices.size()) != spec.num_classes) {
        throw std::invalid_argument("task example: got " + std::to_string(ex.choices.size()) + " choices, spec says " +
                                    std::to_string(spec.num_classes));
      }
      break;
  }
}

// LM view of one example (one of the choices for multiple choice).
inline std::vector<int> lm_task_tokens(const TaskSpec& spec, const LabeledExample& ex, int choice = -1) {
  std::vector<int> t;
  t.push_back(kBosId);
  t.insert(t.end(), ex.text_a.begin(), ex.text_a.end());
  if (spec.kind == TaskKind::kPair || spec.kind == TaskKind::kMultipleChoice) {
    t.push_back(kSepId);
    t.insert(t.end(), ex.text_b.begin(), ex.text_b.end());
  }
  if (spec.kind == TaskKind::kMultipleChoice) {
    if (choice < 0 || choice >= static_cast<int>(ex.choices.size())) {
      throw std::invalid_argument("lm_task_tokens: choice index " + std::to_string(choice) + " out of range");
    }
    t.push_back(kSepId);
    t.insert(t.end(), ex.choices[static_cast<std::size_t>(choice)].begin(),
             ex.choices[static_cast<std::size_t>(choice)].end());
  }
  t.push_back(kEosId);
  return t;
}

// Fused view: the same fields, no BOS/EOS (the MT encoder saw neither during
// translation pretraining; it prepends its own language tag).
inline std::vector<int> mt_task_tokens(const TaskSpec& spec, const LabeledExample& ex, int choice = -1) {
  std::vector<int> t(ex.text_a);
  if (spec.kind == TaskKind::kPair || spec.kind == TaskKind::kMultipleChoice) {
    t.push_back(kSepId);
    t.insert(t.end(), ex.text_b.begin(), ex.text_b.end());
  }
  if (spec.kind == TaskKind::kMultipleChoice) {
    if (choice < 0 || choice >= static_cast<int>(ex.choices.size())) {
      throw std::invalid_argument("mt_task_tokens: choice index " + std::to_string(choice) + " out of range");
    }
    t.push_back(kSepId);
    t.insert(t.end(), ex.choices[static_cast<std::size_t>(choice)].begin(),
             ex.choices[static_cast<std::size_t>(choice)].end());
  }
  return t;
}

// rep [d] -> logits [out_dim]
template <typename Real>
NodeId head_apply_graph(Graph<Real>& g, TaskHead<Real>& head, NodeId rep) {
  int d = g.shape(rep)[0];
  NodeId row = g.reshape(rep, {1, d});
  NodeId out = g.add_bias(g.matmul(row, g.leaf(head.weight)), g.leaf(head.bias));
  return g.reshape(out, {g.shape(out)[1]});
}

// Pooled LM representation of a token sequence, in-graph (gradients flow).
template <typename Real>
NodeId lm_pooled_graph(Graph<Real>& g, TransformerModel<Real>& lm, const std::vector<int>& tokens, PoolingMode pooling,
                       bool training = false, Rng* rng = nullptr) {
  auto states = run_blocks(g, lm, token_input(g, lm, tokens), {}, training, rng);
  return pool_graph(g, states.back(), {}, pooling);
}

// Task logits through the LM itself (the teacher/baseline path).
template <typename Real>
NodeId lm_task_logits_graph(Graph<Real>& g, TransformerModel<Real>& lm, TaskHead<Real>& head, const TaskSpec& spec,
                            const LabeledExample& ex, PoolingMode pooling, bool training = false, Rng* rng = nullptr) {
  validate_example(spec, ex);
  if (spec.kind == TaskKind::kMultipleChoice) {
    std::vector<NodeId> scores;
    for (int c = 0; c < spec.num_classes; ++c) {
      NodeId rep = lm_pooled_graph(g, lm, lm_task_tokens(spec, ex, c), pooling, training, rng);
      scores.push_back(head_apply_graph(g, head, rep));
    }
    return g.concat_rows(scores);
  }
  NodeId rep = lm_pooled_graph(g, lm, lm_task_tokens(spec, ex), pooling, training, rng);
  return head_apply_graph(g, head, rep);
}

// Task logits through the fused pipeline (MT tokenization, language tag).
template <typename Real>
NodeId fused_task_logits_graph(Graph<Real>& g, FusedModel<Real>& fused, TaskHead<Real>& head, const TaskSpec& spec,
                               const LabeledExample& ex, PoolingMode pooling, bool training = false,
                               Rng* rng = nullptr) {
  validate_example(spec, ex);
  if (spec.kind == TaskKind::kMultipleChoice) {
    std::vector<NodeId> scores;
    for (int c = 0; c < spec.num_classes; ++c) {
      NodeId rep = fused_forward_graph(g, fused, mt_task_tokens(spec, ex, c), ex.language, pooling, training, rng);
      scores.push_back(head_apply_graph(g, head, rep));
    }
    return g.concat_rows(scores);
  }
  NodeId rep = fused_forward_graph(g, fused, mt_task_tokens(spec, ex), ex.language, pooling, training, rng);
  return head_apply_graph(g, head, rep);
}

template <typename Real>
int argmax_index(const std::vector<Real>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

template <typename Real>
int lm_task_predict(TransformerModel<Real>& lm, TaskHead<Real>& head, const TaskSpec& spec, const LabeledExample& ex,
                    PoolingMode pooling) {
  Graph<Real> g;
  return argmax_index(g.vals(lm_task_logits_graph(g, lm, head, spec, ex, pooling)));
}

template <typename Real>
int fused_task_predict(FusedModel<Real>& fused, TaskHead<Real>& head, const TaskSpec& spec, const LabeledExample& ex,
                       PoolingMode pooling) {
  Graph<Real> g;
  return argmax_index(g.vals(fused_task_logits_graph(g, fused, head, spec, ex, pooling)));
}

// Frozen-teacher pooled task representations: one vector for classification,
// one per choice for multiple choice. No gradients.
template <typename Real>
std::vector<Tensor<Real>> lm_task_reps(TransformerModel<Real>& lm, const TaskSpec& spec, const LabeledExample& ex,
                                       PoolingMode pooling) {
  validate_example(spec, ex);
  std::vector<Tensor<Real>> reps;
  int n = spec.kind == TaskKind::kMultipleChoice ? spec.num_classes : 1;
  for (int c = 0; c < n; ++c) {
    Graph<Real> g;
    int choice = spec.kind == TaskKind::kMultipleChoice ? c : -1;
    reps.push_back(g.value(lm_pooled_graph(g, lm, lm_task_tokens(spec, ex, choice), pooling)));
  }
  return reps;
}

// Distillation loss: MSE between the fused representation(s) and the frozen
// teacher representation(s); multiple choice averages over the choices.
template <typename Real>
NodeId distill_loss_graph(Graph<Real>& g, FusedModel<Real>& fused, const std::vector<Tensor<Real>>& teacher_reps,
                          const TaskSpec& spec, const LabeledExample& ex, PoolingMode pooling, bool training = false,
                          Rng* rng = nullptr) {
  validate_example(spec, ex);
  int n = spec.kind == TaskKind::kMultipleChoice ? spec.num_classes : 1;
  if (static_cast<int>(teacher_reps.size()) != n) {
    throw std::invalid_argument("distill_loss_graph: expected " + std::to_string(n) + " teacher representations, got " +
                                std::to_string(teacher_reps.size()));
  }
  NodeId total = NodeId(-1);
  for (int c = 0; c < n; ++c) {
    int choice = spec.kind == TaskKind::kMultipleChoice ? c : -1;
    NodeId rep = fused_forward_graph(g, fused, mt_task_tokens(spec, ex, choice), ex.language, pooling, training, rng);
    NodeId l = g.mse_loss(rep, g.constant(teacher_reps[static_cast<std::size_t>(c)]));
    total = c == 0 ? l : g.add(total, l);
  }
  return n == 1 ? total : g.scale(total, Real(1) / Real(n));
}

}  // namespace mtfuse
