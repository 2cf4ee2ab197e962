// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training loops: LM and MT pretraining, self-supervised fusion alignment
// (stage 1), task-head fine-tuning, and task distillation into the fused
// model (stage 2). Every loop is deterministic under its TrainConfig seed,
// snapshots parameters at each validation tick, and fails fast with the step
// id if a loss goes non-finite.

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mtfuse/fusion.hpp"
#include "mtfuse/mt_model.hpp"
#include "mtfuse/optim.hpp"
#include "mtfuse/synth.hpp"
#include "mtfuse/task_model.hpp"
#include "mtfuse/transformer.hpp"

namespace mtfuse {

// ---------------------------------------------------------------------------
// Parameter snapshots and checkpoint cadence

template <typename Real>
struct ParamSnapshot {
  int step = 0;
  std::vector<std::pair<std::string, std::vector<Real>>> values;
};

template <typename Real>
ParamSnapshot<Real> take_snapshot(int step, const std::vector<NamedParam<Real>>& params) {
  ParamSnapshot<Real> s;
  s.step = step;
  s.values.reserve(params.size());
  for (const auto& p : params) s.values.emplace_back(p.name, p.tensor->values);
  return s;
}

template <typename Real>
void restore_snapshot(const std::vector<NamedParam<Real>>& params, const ParamSnapshot<Real>& snap) {
  if (params.size() != snap.values.size()) {
    throw std::invalid_argument("restore_snapshot: parameter count mismatch (" + std::to_string(params.size()) +
                                " vs " + std::to_string(snap.values.size()) + ")");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, vals] = snap.values[i];
    if (params[i].name != name) {
      throw std::invalid_argument("restore_snapshot: parameter '" + params[i].name + "' does not match snapshot '" +
                                  name + "'");
    }
    if (params[i].tensor->values.size() != vals.size()) {
      throw std::invalid_argument("restore_snapshot: size mismatch for '" + name + "'");
    }
    params[i].tensor->values = vals;
  }
}

// Validation/checkpoint steps: one tick at every validate_every_fraction of
// the budget plus a final tick at total_steps; a tick landing exactly on
// total_steps merges with the final one.
inline std::vector<int> validation_steps(int total_steps, double fraction) {
  if (total_steps < 1) throw std::invalid_argument("validation_steps: total_steps must be >= 1");
  if (!(fraction > 0.0) || !(fraction <= 1.0)) {
    throw std::invalid_argument("validation_steps: fraction must be in (0, 1]");
  }
  std::vector<int> steps;
  int ticks = static_cast<int>(std::floor(1.0 / fraction));
  for (int k = 1; k <= ticks; ++k) {
    // the epsilon keeps ticks like 0.1*3*2000 from rounding 600 up to 601
    int s = static_cast<int>(std::ceil(fraction * k * total_steps - 1e-9));
    s = std::min(s, total_steps);
    if (s >= 1 && (steps.empty() || steps.back() != s)) steps.push_back(s);
  }
  if (steps.empty() || steps.back() != total_steps) steps.push_back(total_steps);
  return steps;
}

struct ValidationPoint {
  int step = 0;
  double value = 0.0;  // meaning depends on the loop: loss or dev accuracy
};

template <typename Real>
struct StageResult {
  std::vector<ParamSnapshot<Real>> checkpoints;
  std::vector<double> step_losses;
  std::vector<ValidationPoint> validations;
};

namespace detail {

inline void check_finite_loss(double loss, int step, const char* stage) {
  if (!std::isfinite(loss)) {
    throw std::runtime_error(std::string(stage) + ": non-finite loss at step " + std::to_string(step));
  }
}

// A non-finite value can surface inside the graph (forward or backward) before
// the summed loss is ever inspected; pin such failures to the training step so
// callers can report where the run diverged. Anything else passes through.
[[noreturn]] inline void rethrow_with_step(const std::runtime_error& e, int step, const char* stage) {
  if (std::string(e.what()).find("non-finite") != std::string::npos) {
    throw std::runtime_error(std::string(stage) + ": non-finite loss at step " + std::to_string(step) + " (" +
                             e.what() + ")");
  }
  throw;
}

inline double window_mean(const std::vector<double>& losses, std::size_t from) {
  double sum = 0.0;
  std::size_t n = losses.size() - from;
  for (std::size_t i = from; i < losses.size(); ++i) sum += losses[i];
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Corpora

struct Sentence {
  std::vector<int> tokens;
  int language = 0;
};

inline std::vector<Sentence> gen_sentence_corpus(const SynthGen& gen, unsigned seed, int n, int lang) {
  if (n < 1) throw std::invalid_argument("gen_sentence_corpus: n must be >= 1");
  Rng rng(mix_seed(gen.config().seed, mix_seed(0x5E27ull, seed)));
  std::vector<Sentence> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<int> base = gen.sample_sentence(rng);
    Sentence s;
    s.language = lang;
    s.tokens = translate_gold(gen.config(), gen.language(0), gen.language(lang), base);
    out.push_back(std::move(s));
  }
  return out;
}

// Base-language text for MT pretraining: mostly plain sentences, plus
// separator-joined multi-clause texts and short fragments so the trained
// translator copes with every field shape the tasks later feed it.
inline std::vector<int> sample_mt_text(const SynthGen& gen, Rng& rng) {
  double u = rng.uniform();
  if (u < 0.60) return gen.sample_sentence(rng);
  if (u < 0.85) {
    int n_clauses = rng.uniform_int(2, 4);
    std::vector<int> text;
    for (int c = 0; c < n_clauses; ++c) {
      if (c > 0) text.push_back(kSepId);
      auto clause = gen.sample_clause(rng, rng.uniform_int(3, 6), rng.uniform() < 0.35);
      text.insert(text.end(), clause.begin(), clause.end());
    }
    return text;
  }
  std::vector<int> sent = gen.sample_sentence(rng);
  int len = rng.uniform_int(1, 3);
  int start = rng.uniform_int(0, static_cast<int>(sent.size()) - len);
  return std::vector<int>(sent.begin() + start, sent.begin() + start + len);
}

inline std::vector<MTPair> gen_mt_training_pairs(const SynthGen& gen, unsigned seed, int n,
                                                 const std::vector<int>& languages) {
  if (n < 1) throw std::invalid_argument("gen_mt_training_pairs: n must be >= 1");
  if (languages.empty()) throw std::invalid_argument("gen_mt_training_pairs: no languages given");
  Rng rng(mix_seed(gen.config().seed, mix_seed(0x317Aull, seed)));
  std::vector<MTPair> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<int> base = sample_mt_text(gen, rng);
    MTPair p;
    p.src_lang = languages[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(languages.size()) - 1))];
    p.tgt_lang = languages[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(languages.size()) - 1))];
    p.src = translate_gold(gen.config(), gen.language(0), gen.language(p.src_lang), base);
    p.tgt = translate_gold(gen.config(), gen.language(p.src_lang), gen.language(p.tgt_lang), p.src);
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// MT pretraining

template <typename Real>
StageResult<Real> pretrain_mt(MTModel<Real>& m, const SynthGen& gen, const TrainConfig& cfg,
                              const std::vector<int>& languages) {
  cfg.validate();
  set_mt_requires_grad(m, true);
  auto params = named_mt_params(m);
  AdamW<Real> opt(params, cfg);
  auto ticks = validation_steps(cfg.total_steps, cfg.validate_every_fraction);
  StageResult<Real> res;
  std::size_t tick_idx = 0, window_from = 0;
  for (int step = 1; step <= cfg.total_steps; ++step) {
    auto batch = gen_mt_training_pairs(gen, mix_seed(cfg.seed, static_cast<unsigned>(step)), cfg.batch_size, languages);
    opt.zero_grad();
    double loss = 0.0;
    try {
      loss = mt_train_step(m, batch, opt, static_cast<Real>(lr_at(step, cfg)));
    } catch (const std::runtime_error& e) {
      detail::rethrow_with_step(e, step, "pretrain_mt");
    }
    detail::check_finite_loss(loss, step, "pretrain_mt");
    res.step_losses.push_back(loss);
    if (tick_idx < ticks.size() && step == ticks[tick_idx]) {
      res.validations.push_back({step, detail::window_mean(res.step_losses, window_from)});
      res.checkpoints.push_back(take_snapshot(step, params));
      window_from = res.step_losses.size();
      ++tick_idx;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// LM pretraining: next-token prediction in causal mode, 15% masked-token
// prediction in bidirectional mode. Source-language text only.

namespace detail {

// Returns (input tokens, labels, label mask) for one sentence.
template <typename Real>
struct LmExample {
  std::vector<int> input;
  std::vector<int> labels;
  std::vector<std::uint8_t> label_mask;  // empty = all positions count
};

template <typename Real>
LmExample<Real> make_lm_example(const std::vector<int>& sent, AttentionMode mode, Rng& rng) {
  LmExample<Real> ex;
  if (mode == AttentionMode::kCausal) {
    ex.input.push_back(kBosId);
    ex.input.insert(ex.input.end(), sent.begin(), sent.end());
    ex.labels = sent;
    ex.labels.push_back(kEosId);
    return ex;
  }
  ex.input.push_back(kBosId);
  ex.input.insert(ex.input.end(), sent.begin(), sent.end());
  ex.input.push_back(kEosId);
  ex.labels.assign(ex.input.begin(), ex.input.end());
  ex.label_mask.assign(ex.input.size(), 0);
  // mask 15% of the content positions, at least one
  int n_content = static_cast<int>(sent.size());
  int n_mask = std::max(1, static_cast<int>(std::floor(0.15 * n_content)));
  std::vector<int> pos(static_cast<std::size_t>(n_content));
  for (int i = 0; i < n_content; ++i) pos[static_cast<std::size_t>(i)] = i + 1;  // skip BOS
  rng.shuffle(pos);
  for (int k = 0; k < n_mask; ++k) {
    int p = pos[static_cast<std::size_t>(k)];
    ex.input[static_cast<std::size_t>(p)] = kMaskId;
    ex.label_mask[static_cast<std::size_t>(p)] = 1;
  }
  return ex;
}

template <typename Real>
NodeId lm_example_loss_graph(Graph<Real>& g, TransformerModel<Real>& lm, const LmExample<Real>& ex, bool training,
                             Rng* rng) {
  auto states = run_blocks(g, lm, token_input(g, lm, ex.input), {}, training, rng);
  NodeId logits = lm_logits_graph(g, lm, states.back());
  return g.cross_entropy_rows(logits, ex.labels, ex.label_mask);
}

}  // namespace detail

template <typename Real>
StageResult<Real> pretrain_lm(TransformerModel<Real>& lm, const std::vector<Sentence>& corpus,
                              const TrainConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("pretrain_lm: empty corpus");
  for (const auto& s : corpus) {
    if (s.language != 0) {
      throw std::invalid_argument("pretrain_lm: corpus sentence in language " + std::to_string(s.language) +
                                  "; expected source language 0 only");
    }
  }
  set_requires_grad(lm, true);
  auto params = named_params(lm);
  AdamW<Real> opt(params, cfg);
  Rng order_rng(mix_seed(cfg.seed, 0x10AD01ull));
  Rng mask_rng(mix_seed(cfg.seed, 0x10AD02ull));
  std::vector<int> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  order_rng.shuffle(order);
  std::size_t cursor = 0;
  auto ticks = validation_steps(cfg.total_steps, cfg.validate_every_fraction);
  StageResult<Real> res;
  std::size_t tick_idx = 0, window_from = 0;
  for (int step = 1; step <= cfg.total_steps; ++step) {
    // gather the batch, weighting each example by its labeled-token share so
    // the batch loss is the exact token-level mean
    std::vector<const Sentence*> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(&corpus[static_cast<std::size_t>(order[cursor++])]);
    }
    std::vector<detail::LmExample<Real>> exs;
    double total_labels = 0.0;
    for (const Sentence* s : batch) {
      exs.push_back(detail::make_lm_example<Real>(s->tokens, lm.config.attention_mode, mask_rng));
      const auto& ex = exs.back();
      total_labels += ex.label_mask.empty()
                          ? static_cast<double>(ex.labels.size())
                          : static_cast<double>(std::count(ex.label_mask.begin(), ex.label_mask.end(), std::uint8_t{1}));
    }
    opt.zero_grad();
    double loss = 0.0;
    try {
      for (const auto& ex : exs) {
        double n_labels =
            ex.label_mask.empty()
                ? static_cast<double>(ex.labels.size())
                : static_cast<double>(std::count(ex.label_mask.begin(), ex.label_mask.end(), std::uint8_t{1}));
        Graph<Real> g;
        NodeId l = g.scale(detail::lm_example_loss_graph(g, lm, ex, false, nullptr),
                           static_cast<Real>(n_labels / total_labels));
        loss += static_cast<double>(g.vals(l)[0]);
        g.backward(l);
      }
    } catch (const std::runtime_error& e) {
      detail::rethrow_with_step(e, step, "pretrain_lm");
    }
    detail::check_finite_loss(loss, step, "pretrain_lm");
    opt.step(static_cast<Real>(lr_at(step, cfg)));
    res.step_losses.push_back(loss);
    if (tick_idx < ticks.size() && step == ticks[tick_idx]) {
      res.validations.push_back({step, detail::window_mean(res.step_losses, window_from)});
      res.checkpoints.push_back(take_snapshot(step, params));
      window_from = res.step_losses.size();
      ++tick_idx;
    }
  }
  return res;
}

// Token-mean LM loss over a corpus without updating anything; the masked
// variant draws its masks from `seed` so the number is reproducible.
template <typename Real>
double lm_corpus_loss(TransformerModel<Real>& lm, const std::vector<Sentence>& corpus, unsigned seed = 17) {
  if (corpus.empty()) throw std::invalid_argument("lm_corpus_loss: empty corpus");
  Rng mask_rng(mix_seed(seed, 0xE7A1ull));
  double weighted = 0.0, total_labels = 0.0;
  for (const auto& s : corpus) {
    auto ex = detail::make_lm_example<Real>(s.tokens, lm.config.attention_mode, mask_rng);
    double n_labels = ex.label_mask.empty()
                          ? static_cast<double>(ex.labels.size())
                          : static_cast<double>(std::count(ex.label_mask.begin(), ex.label_mask.end(), std::uint8_t{1}));
    Graph<Real> g;
    weighted += static_cast<double>(g.vals(detail::lm_example_loss_graph(g, lm, ex, false, nullptr))[0]) * n_labels;
    total_labels += n_labels;
  }
  return weighted / total_labels;
}

// ---------------------------------------------------------------------------
// Stage 1: align fused pooled outputs with the frozen base LM's pooled
// outputs (MSE) on source-language text. Trains theta only.

template <typename Real>
std::vector<int> stage1_teacher_tokens(const std::vector<int>& sent) {
  std::vector<int> t;
  t.push_back(kBosId);
  t.insert(t.end(), sent.begin(), sent.end());
  t.push_back(kEosId);
  return t;
}

template <typename Real>
double stage1_probe_loss(FusedModel<Real>& fused, const std::vector<Sentence>& probe) {
  if (probe.empty()) throw std::invalid_argument("stage1_probe_loss: empty probe");
  double sum = 0.0;
  for (const auto& s : probe) {
    Tensor<Real> target = teacher_forward(fused, stage1_teacher_tokens<Real>(s.tokens));
    Graph<Real> g;
    NodeId z = fused_forward_graph(g, fused, s.tokens, s.language);
    sum += static_cast<double>(g.vals(g.mse_loss(z, g.constant(target)))[0]);
  }
  return sum / static_cast<double>(probe.size());
}

template <typename Real>
StageResult<Real> stage1_align(FusedModel<Real>& fused, const std::vector<Sentence>& corpus, const TrainConfig& cfg,
                               bool strict_lang0 = true) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("stage1_align: empty corpus");
  if (strict_lang0) {
    for (const auto& s : corpus) {
      if (s.language != 0) {
        throw std::invalid_argument("stage1_align: corpus sentence in language " + std::to_string(s.language) +
                                    "; expected source language 0 only");
      }
    }
  }
  auto params = fused_trainable_params(fused);
  AdamW<Real> opt(params, cfg);
  Rng order_rng(mix_seed(cfg.seed, 0x57A6E1ull));
  Rng drop_rng(mix_seed(cfg.seed, 0x57A6E2ull));
  std::vector<int> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  order_rng.shuffle(order);
  std::size_t cursor = 0;
  auto ticks = validation_steps(cfg.total_steps, cfg.validate_every_fraction);
  StageResult<Real> res;
  std::size_t tick_idx = 0, window_from = 0;
  const Real inv_b = Real(1) / static_cast<Real>(cfg.batch_size);
  for (int step = 1; step <= cfg.total_steps; ++step) {
    opt.zero_grad();
    double loss = 0.0;
    try {
      for (int b = 0; b < cfg.batch_size; ++b) {
        if (cursor == order.size()) {
          order_rng.shuffle(order);
          cursor = 0;
        }
        const Sentence& s = corpus[static_cast<std::size_t>(order[cursor++])];
        Tensor<Real> target = teacher_forward(fused, stage1_teacher_tokens<Real>(s.tokens));
        Graph<Real> g;
        NodeId z = fused_forward_graph(g, fused, s.tokens, s.language, fused.pooling, true, &drop_rng);
        NodeId l = g.scale(g.mse_loss(z, g.constant(target)), inv_b);
        loss += static_cast<double>(g.vals(l)[0]);
        g.backward(l);
      }
    } catch (const std::runtime_error& e) {
      detail::rethrow_with_step(e, step, "stage1_align");
    }
    detail::check_finite_loss(loss, step, "stage1_align");
    opt.step(static_cast<Real>(lr_at(step, cfg)));
    res.step_losses.push_back(loss);
    if (tick_idx < ticks.size() && step == ticks[tick_idx]) {
      res.validations.push_back({step, detail::window_mean(res.step_losses, window_from)});
      res.checkpoints.push_back(take_snapshot(step, params));
      window_from = res.step_losses.size();
      ++tick_idx;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Head fine-tuning: train fresh task adapters plus the head H on the
// source-language train split, cross-entropy on task labels. Epoch-based; the
// schedule runs over epochs * ceil(n/batch) steps.

template <typename Real>
double task_dev_accuracy(TransformerModel<Real>& lm, TaskHead<Real>& head, const TaskSpec& spec,
                         const std::vector<LabeledExample>& dev, PoolingMode pooling) {
  if (dev.empty()) throw std::invalid_argument("task_dev_accuracy: empty split");
  int hits = 0;
  for (const auto& ex : dev) hits += lm_task_predict(lm, head, spec, ex, pooling) == ex.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(dev.size());
}

// The exact set of tensors fine-tuning trains: every flagged-trainable LM
// parameter (the adapters) plus the task head. Exposed so callers can restore
// fine-tuning checkpoints into a fresh model/head pair.
template <typename Real>
std::vector<NamedParam<Real>> finetune_params(TransformerModel<Real>& lm, TaskHead<Real>& head) {
  std::vector<NamedParam<Real>> params;
  visit_params<Real>(lm, [&](const std::string& name, Tensor<Real>& t) {
    if (t.requires_grad) params.push_back({name, &t});
  });
  for (auto& p : head_params(head)) params.push_back(p);
  return params;
}

template <typename Real>
double fused_dev_accuracy(FusedModel<Real>& fused, TaskHead<Real>& head, const TaskSpec& spec,
                          const std::vector<LabeledExample>& dev, PoolingMode pooling) {
  if (dev.empty()) throw std::invalid_argument("fused_dev_accuracy: empty split");
  int hits = 0;
  for (const auto& ex : dev) hits += fused_task_predict(fused, head, spec, ex, pooling) == ex.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(dev.size());
}

template <typename Real>
StageResult<Real> finetune_head(TransformerModel<Real>& lm, TaskHead<Real>& head, const TaskDataset& data,
                                const TrainConfig& cfg, PoolingMode pooling) {
  cfg.validate();
  if (!has_adapters(lm)) {
    throw std::invalid_argument("finetune_head: the LM must carry adapters (fine-tuning trains adapters + head)");
  }
  if (data.train.empty()) throw std::invalid_argument("finetune_head: empty train split");
  if (head.weight.cols() != head_out_dim(data.spec)) {
    throw std::invalid_argument("finetune_head: head width " + std::to_string(head.weight.cols()) +
                                " does not match task (" + std::to_string(head_out_dim(data.spec)) + ")");
  }
  for (const auto& ex : data.train) validate_example(data.spec, ex);

  auto params = finetune_params(lm, head);

  int steps_per_epoch = (static_cast<int>(data.train.size()) + cfg.batch_size - 1) / cfg.batch_size;
  TrainConfig sched = cfg;
  sched.total_steps = cfg.epochs * steps_per_epoch;
  AdamW<Real> opt(params, sched);
  Rng order_rng(mix_seed(cfg.seed, 0xF17E1ull));
  Rng drop_rng(mix_seed(cfg.seed, 0xF17E2ull));
  std::vector<int> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  auto ticks = validation_steps(sched.total_steps, sched.validate_every_fraction);
  StageResult<Real> res;
  std::size_t tick_idx = 0;
  int step = 0;
  const Real inv_b = Real(1) / static_cast<Real>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (int s = 0; s < steps_per_epoch; ++s) {
      ++step;
      opt.zero_grad();
      double loss = 0.0;
      try {
        for (int b = 0; b < cfg.batch_size; ++b) {
          const LabeledExample& ex =
              data.train[static_cast<std::size_t>(order[static_cast<std::size_t>((s * cfg.batch_size + b) %
                                                                                 static_cast<int>(order.size()))])];
          Graph<Real> g;
          NodeId logits = lm_task_logits_graph(g, lm, head, data.spec, ex, pooling, true, &drop_rng);
          NodeId l = g.scale(g.cross_entropy(logits, ex.label), inv_b);
          loss += static_cast<double>(g.vals(l)[0]);
          g.backward(l);
        }
      } catch (const std::runtime_error& e) {
        detail::rethrow_with_step(e, step, "finetune_head");
      }
      detail::check_finite_loss(loss, step, "finetune_head");
      opt.step(static_cast<Real>(lr_at(step, sched)));
      res.step_losses.push_back(loss);
      if (tick_idx < ticks.size() && step == ticks[tick_idx]) {
        double acc = task_dev_accuracy(lm, head, data.spec, data.dev.at(0), pooling);
        res.validations.push_back({step, acc});
        res.checkpoints.push_back(take_snapshot(step, params));
        ++tick_idx;
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Stage 2: distill the fine-tuned teacher's task representations into the
// fused model. Teacher and head stay frozen; theta continues from stage 1.

template <typename Real>
StageResult<Real> stage2_distill(FusedModel<Real>& fused, TransformerModel<Real>& teacher, TaskHead<Real>& head,
                                 const TaskDataset& data, const TrainConfig& cfg, PoolingMode pooling) {
  cfg.validate();
  if (teacher.config.d_model != fused.lm->config.d_model) {
    throw std::invalid_argument("stage2_distill: teacher d_model " + std::to_string(teacher.config.d_model) +
                                " does not match fused backbone d_model " + std::to_string(fused.lm->config.d_model));
  }
  if (data.train.empty()) throw std::invalid_argument("stage2_distill: empty train split");
  for (const auto& ex : data.train) {
    validate_example(data.spec, ex);
    if (ex.language != 0) {
      throw std::invalid_argument("stage2_distill: train example in language " + std::to_string(ex.language) +
                                  "; expected source language 0 only");
    }
  }
  // The teacher is frozen: precompute every train-example representation once.
  std::vector<std::vector<Tensor<Real>>> teacher_reps;
  teacher_reps.reserve(data.train.size());
  for (const auto& ex : data.train) teacher_reps.push_back(lm_task_reps(teacher, data.spec, ex, pooling));

  auto params = fused_trainable_params(fused);
  AdamW<Real> opt(params, cfg);
  Rng order_rng(mix_seed(cfg.seed, 0xD157111ull));
  Rng drop_rng(mix_seed(cfg.seed, 0xD157112ull));
  std::vector<int> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  order_rng.shuffle(order);
  std::size_t cursor = 0;
  auto ticks = validation_steps(cfg.total_steps, cfg.validate_every_fraction);
  StageResult<Real> res;
  std::size_t tick_idx = 0;
  const Real inv_b = Real(1) / static_cast<Real>(cfg.batch_size);
  for (int step = 1; step <= cfg.total_steps; ++step) {
    opt.zero_grad();
    double loss = 0.0;
    try {
      for (int b = 0; b < cfg.batch_size; ++b) {
        if (cursor == order.size()) {
          order_rng.shuffle(order);
          cursor = 0;
        }
        std::size_t idx = static_cast<std::size_t>(order[cursor++]);
        Graph<Real> g;
        NodeId l =
            distill_loss_graph(g, fused, teacher_reps[idx], data.spec, data.train[idx], pooling, true, &drop_rng);
        l = g.scale(l, inv_b);
        loss += static_cast<double>(g.vals(l)[0]);
        g.backward(l);
      }
    } catch (const std::runtime_error& e) {
      detail::rethrow_with_step(e, step, "stage2_distill");
    }
    detail::check_finite_loss(loss, step, "stage2_distill");
    opt.step(static_cast<Real>(lr_at(step, cfg)));
    res.step_losses.push_back(loss);
    if (tick_idx < ticks.size() && step == ticks[tick_idx]) {
      double acc = fused_dev_accuracy(fused, head, data.spec, data.dev.at(0), pooling);
      res.validations.push_back({step, acc});
      res.checkpoints.push_back(take_snapshot(step, params));
      ++tick_idx;
    }
  }
  return res;
}

}  // namespace mtfuse
