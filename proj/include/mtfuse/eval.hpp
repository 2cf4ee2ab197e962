// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation harness: accuracy / macro-F1, per-language reports for direct
// zero-shot evaluation and for translate-test (translate target text to the
// source language, then classify with the source-language model), checkpoint
// selection on source-language or per-target-language dev splits, and a
// greedy token-matching cosine scorer used for sentence-translation
// retrieval over encoder layers.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtfuse/fusion.hpp"
#include "mtfuse/mt_model.hpp"
#include "mtfuse/synth.hpp"
#include "mtfuse/task_model.hpp"

namespace mtfuse {

// ---------------------------------------------------------------------------
// Metrics

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& golds) {
  if (preds.size() != golds.size()) {
    throw std::invalid_argument("accuracy: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(golds.size()) + " golds");
  }
  if (preds.empty()) throw std::invalid_argument("accuracy: empty inputs");
  int hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == golds[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// Unweighted mean of per-class F1; a class absent from both predictions and
// golds contributes F1 = 0, so degenerate predictors score low.
inline double macro_f1(const std::vector<int>& preds, const std::vector<int>& golds, int n_classes) {
  if (preds.size() != golds.size()) {
    throw std::invalid_argument("macro_f1: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(golds.size()) + " golds");
  }
  if (preds.empty()) throw std::invalid_argument("macro_f1: empty inputs");
  if (n_classes < 2) throw std::invalid_argument("macro_f1: n_classes must be >= 2");
  double sum = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] == c && golds[i] == c) ++tp;
      if (preds[i] == c && golds[i] != c) ++fp;
      if (preds[i] != c && golds[i] == c) ++fn;
    }
    double denom = 2.0 * tp + fp + fn;
    sum += denom > 0.0 ? 2.0 * tp / denom : 0.0;  // equals 2PR/(P+R)
  }
  return sum / static_cast<double>(n_classes);
}

inline const char* task_metric_name(TaskKind kind) {
  return kind == TaskKind::kSingle ? "macro_f1" : "accuracy";
}

inline double task_metric(const std::vector<int>& preds, const std::vector<int>& golds, const TaskSpec& spec) {
  return spec.kind == TaskKind::kSingle ? macro_f1(preds, golds, spec.num_classes) : accuracy(preds, golds);
}

// ---------------------------------------------------------------------------
// Reports

struct EvalReport {
  std::vector<int> languages;        // ascending
  std::vector<double> per_language;  // metric per language, same order
  double aggregate = 0.0;            // arithmetic mean of per_language
  std::string metric;                // "accuracy" | "macro_f1"
  std::string checkpoint_id;
  std::string selection;  // "none" | "s-dev" | "t-dev" | "final"

  double value_for(int lang) const {
    for (std::size_t i = 0; i < languages.size(); ++i) {
      if (languages[i] == lang) return per_language[i];
    }
    throw std::invalid_argument("EvalReport: no entry for language " + std::to_string(lang));
  }
};

inline EvalReport make_report(std::vector<int> langs, std::vector<double> values, std::string metric,
                              std::string checkpoint_id = "none", std::string selection = "none") {
  if (langs.size() != values.size() || langs.empty()) {
    throw std::invalid_argument("make_report: need one value per language");
  }
  std::vector<std::size_t> idx(langs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return langs[a] < langs[b]; });
  EvalReport r;
  for (std::size_t i : idx) {
    r.languages.push_back(langs[i]);
    r.per_language.push_back(values[i]);
  }
  double sum = 0.0;
  for (double v : r.per_language) sum += v;
  r.aggregate = sum / static_cast<double>(r.per_language.size());
  r.metric = std::move(metric);
  r.checkpoint_id = std::move(checkpoint_id);
  r.selection = std::move(selection);
  return r;
}

// ---------------------------------------------------------------------------
// Direct (zero-shot) evaluation: classify target-language items as-is.

template <typename Real>
EvalReport evaluate_split_lm(TransformerModel<Real>& lm, TaskHead<Real>& head, const TaskSpec& spec,
                             const std::map<int, std::vector<LabeledExample>>& split, const std::vector<int>& langs,
                             PoolingMode pooling, const std::string& checkpoint_id = "none") {
  std::vector<double> values;
  for (int lang : langs) {
    const auto& exs = split.at(lang);
    std::vector<int> preds, golds;
    for (const auto& ex : exs) {
      preds.push_back(lm_task_predict(lm, head, spec, ex, pooling));
      golds.push_back(ex.label);
    }
    values.push_back(task_metric(preds, golds, spec));
  }
  return make_report(langs, values, task_metric_name(spec.kind), checkpoint_id);
}

template <typename Real>
EvalReport evaluate_split_fused(FusedModel<Real>& fused, TaskHead<Real>& head, const TaskSpec& spec,
                                const std::map<int, std::vector<LabeledExample>>& split, const std::vector<int>& langs,
                                PoolingMode pooling, const std::string& checkpoint_id = "none") {
  std::vector<double> values;
  for (int lang : langs) {
    const auto& exs = split.at(lang);
    std::vector<int> preds, golds;
    for (const auto& ex : exs) {
      preds.push_back(fused_task_predict(fused, head, spec, ex, pooling));
      golds.push_back(ex.label);
    }
    values.push_back(task_metric(preds, golds, spec));
  }
  return make_report(langs, values, task_metric_name(spec.kind), checkpoint_id);
}

// ---------------------------------------------------------------------------
// Translate-test: translate each text field to the source language (learned
// greedy decoding, or the gold cipher inverse as an upper-bound oracle), then
// classify with the source-language model. Source-language items pass
// through untranslated.

enum class TranslateMode { kLearned, kOracle };

template <typename Real>
LabeledExample translate_example_to_source(const SynthGen& gen, MTModel<Real>* mt, TranslateMode mode,
                                           const LabeledExample& ex) {
  if (ex.language == 0) return ex;
  if (mode == TranslateMode::kLearned && mt == nullptr) {
    throw std::invalid_argument("translate_example_to_source: learned mode needs an MT model");
  }
  auto field = [&](const std::vector<int>& toks) {
    if (toks.empty()) return toks;
    if (mode == TranslateMode::kOracle) {
      return translate_gold(gen.config(), gen.language(ex.language), gen.language(0), toks);
    }
    // the gold translation is always length-preserving; allow a little slack
    return translate_greedy(*mt, toks, ex.language, 0, static_cast<int>(toks.size()) + 4);
  };
  LabeledExample out = ex;
  out.language = 0;
  out.text_a = field(ex.text_a);
  out.text_b = field(ex.text_b);
  for (auto& c : out.choices) c = field(c);
  return out;
}

template <typename Real>
EvalReport translate_test_eval(TransformerModel<Real>& lm, TaskHead<Real>& head, const TaskSpec& spec,
                               const std::map<int, std::vector<LabeledExample>>& split, const std::vector<int>& langs,
                               PoolingMode pooling, const SynthGen& gen, MTModel<Real>* mt, TranslateMode mode,
                               const std::string& checkpoint_id = "none") {
  std::vector<double> values;
  for (int lang : langs) {
    const auto& exs = split.at(lang);
    std::vector<int> preds, golds;
    for (const auto& ex : exs) {
      LabeledExample at_source = translate_example_to_source(gen, mt, mode, ex);
      preds.push_back(lm_task_predict(lm, head, spec, at_source, pooling));
      golds.push_back(ex.label);
    }
    values.push_back(task_metric(preds, golds, spec));
  }
  return make_report(langs, values, task_metric_name(spec.kind), checkpoint_id);
}

// ---------------------------------------------------------------------------
// Checkpoint selection: one dev report per checkpoint, all languages present.

// Index of the checkpoint maximizing the source-language dev metric.
inline std::size_t select_s_dev(const std::vector<EvalReport>& dev_reports) {
  if (dev_reports.empty()) throw std::invalid_argument("select_s_dev: no reports");
  std::size_t best = 0;
  for (std::size_t i = 1; i < dev_reports.size(); ++i) {
    if (dev_reports[i].value_for(0) > dev_reports[best].value_for(0)) best = i;  // tie keeps the earliest
  }
  return best;
}

// Per target language, the checkpoint maximizing that language's dev metric.
inline std::map<int, std::size_t> select_t_dev(const std::vector<EvalReport>& dev_reports) {
  if (dev_reports.empty()) throw std::invalid_argument("select_t_dev: no reports");
  std::map<int, std::size_t> best;
  for (int lang : dev_reports.front().languages) {
    std::size_t b = 0;
    for (std::size_t i = 1; i < dev_reports.size(); ++i) {
      if (dev_reports[i].value_for(lang) > dev_reports[b].value_for(lang)) b = i;
    }
    best[lang] = b;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Greedy token-matching scorer (cosine): precision is the mean over candidate
// tokens of the best match against the reference, recall the symmetric mean,
// and the score their harmonic mean. No idf weighting or rescaling.

template <typename Real>
double bertscore_greedy_f1(const Tensor<Real>& cand, const Tensor<Real>& ref) {
  if (cand.shape.size() != 2 || ref.shape.size() != 2 || cand.cols() != ref.cols()) {
    throw std::invalid_argument("bertscore_greedy_f1: want [T,d] state matrices of equal width, got " +
                                shape_str(cand.shape) + " and " + shape_str(ref.shape));
  }
  int tc = cand.rows(), tr = ref.rows(), d = cand.cols();
  if (tc == 0 || tr == 0) throw std::invalid_argument("bertscore_greedy_f1: empty state sequence");
  auto row_norm = [d](const Tensor<Real>& m, int i) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += static_cast<double>(m.at(i, j)) * static_cast<double>(m.at(i, j));
    return std::sqrt(s);
  };
  std::vector<double> best_c(static_cast<std::size_t>(tc), -2.0), best_r(static_cast<std::size_t>(tr), -2.0);
  for (int i = 0; i < tc; ++i) {
    double ni = row_norm(cand, i);
    for (int j = 0; j < tr; ++j) {
      double nj = row_norm(ref, j);
      double dot = 0.0;
      for (int k = 0; k < d; ++k) dot += static_cast<double>(cand.at(i, k)) * static_cast<double>(ref.at(j, k));
      double sim = ni > 0.0 && nj > 0.0 ? dot / (ni * nj) : 0.0;
      best_c[static_cast<std::size_t>(i)] = std::max(best_c[static_cast<std::size_t>(i)], sim);
      best_r[static_cast<std::size_t>(j)] = std::max(best_r[static_cast<std::size_t>(j)], sim);
    }
  }
  double p = 0.0, r = 0.0;
  for (double v : best_c) p += v;
  for (double v : best_r) r += v;
  p /= static_cast<double>(tc);
  r /= static_cast<double>(tr);
  double denom = p + r;
  return std::abs(denom) < 1e-12 ? 0.0 : 2.0 * p * r / denom;
}

// ---------------------------------------------------------------------------
// Sentence-translation retrieval: a source sentence retrieves, among all
// candidate translations, the one whose layer-l encoder states score highest;
// ties count as wrong.

template <typename Real>
double retrieval_by_layer(MTModel<Real>& mt, const std::vector<MTPair>& pairs, int layer) {
  if (pairs.empty()) throw std::invalid_argument("retrieval_by_layer: no pairs");
  if (layer < 0 || layer > mt.config.n_layers) {
    throw std::invalid_argument("retrieval_by_layer: layer " + std::to_string(layer) + " out of range [0, " +
                                std::to_string(mt.config.n_layers) + "]");
  }
  std::vector<Tensor<Real>> src_states, tgt_states;
  for (const auto& p : pairs) {
    src_states.push_back(encoder_states(mt, p.src, p.src_lang).states[static_cast<std::size_t>(layer)]);
    tgt_states.push_back(encoder_states(mt, p.tgt, p.tgt_lang).states[static_cast<std::size_t>(layer)]);
  }
  int correct = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    double gold = bertscore_greedy_f1(src_states[i], tgt_states[i]);
    bool strictly_best = true;
    for (std::size_t j = 0; j < pairs.size(); ++j) {
      if (j == i) continue;
      if (bertscore_greedy_f1(src_states[i], tgt_states[j]) >= gold) {
        strictly_best = false;
        break;
      }
    }
    correct += strictly_best ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

template <typename Real>
std::vector<double> retrieval_curve(MTModel<Real>& mt, const std::vector<MTPair>& pairs) {
  std::vector<double> acc;
  for (int l = 0; l <= mt.config.n_layers; ++l) acc.push_back(retrieval_by_layer(mt, pairs, l));
  return acc;
}

// Held-out pairs for retrieval and exact-match gates; source and target
// languages always differ so identity copies can't inflate the score.
inline std::vector<MTPair> gen_retrieval_pairs(const SynthGen& gen, unsigned seed, int n,
                                               const std::vector<int>& languages) {
  if (languages.size() < 2) throw std::invalid_argument("gen_retrieval_pairs: need at least two languages");
  Rng rng(mix_seed(gen.config().seed, mix_seed(0x2E721Eull, seed)));
  std::vector<MTPair> out;
  while (static_cast<int>(out.size()) < n) {
    std::vector<int> base = gen.sample_sentence(rng);
    int sl = languages[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(languages.size()) - 1))];
    int tl = languages[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(languages.size()) - 1))];
    if (sl == tl) continue;
    MTPair p;
    p.src_lang = sl;
    p.tgt_lang = tl;
    p.src = translate_gold(gen.config(), gen.language(0), gen.language(sl), base);
    p.tgt = translate_gold(gen.config(), gen.language(sl), gen.language(tl), p.src);
    out.push_back(std::move(p));
  }
  return out;
}

// Exact-match rate of greedy decoding against the gold cipher translation.
template <typename Real>
double mt_exact_match(MTModel<Real>& mt, const std::vector<MTPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("mt_exact_match: no pairs");
  int hits = 0;
  for (const auto& p : pairs) {
    // Gold translations preserve length, so a short overhang is enough.
    hits += translate_greedy(mt, p.src, p.src_lang, p.tgt_lang, static_cast<int>(p.src.size()) + 4) == p.tgt ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

}  // namespace mtfuse
