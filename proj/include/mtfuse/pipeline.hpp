// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end experiment driver. Builds the synthetic-language world, pretrains
// the translator and the backbone once, then per run seed: aligns the fused
// model on raw text (stage 1), fine-tunes a task teacher, distills the teacher
// into the fused model on task data (stage 2), and scores five comparison rows
// on every task under both checkpoint-selection policies:
//
//   base_zsxlt     fine-tuned backbone evaluated directly on each language
//   ttest_learned  fine-tuned backbone on inputs translated by the learned MT
//   ttest_oracle   fine-tuned backbone on gold-translated inputs
//   fused_s1_ft    fused model after stage 1, scored with the fine-tuned head
//   fused_s1_s2    fused model after stage 2, scored with the frozen head
//
// Everything is deterministic given the config: datasets come from the
// generator seed alone (identical across run seeds), training batches from
// per-stage seeds mixed with the run seed, and model copies are materialized
// from snapshots rather than shared. Run seeds may execute on separate
// threads; shared state (generator, frozen translator) is read-only by then.

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mtfuse/config.hpp"
#include "mtfuse/eval.hpp"
#include "mtfuse/metrics.hpp"
#include "mtfuse/trainer.hpp"

namespace mtfuse {

using PipelineLog = std::function<void(const std::string&)>;

inline PipelineLog null_log() {
  return [](const std::string&) {};
}

inline std::string task_key(TaskKind kind) {
  switch (kind) {
    case TaskKind::kPair: return "pair";
    case TaskKind::kSingle: return "single";
    case TaskKind::kMultipleChoice: return "multiple_choice";
  }
  throw std::invalid_argument("task_key: unknown task kind");
}

inline std::vector<int> all_languages(const RunConfig& cfg) {
  std::vector<int> langs;
  for (int l = 0; l < cfg.data.n_languages; ++l) langs.push_back(l);
  return langs;
}

// Seed derivations. Model-init seeds are fixed by the config (shared across
// run seeds); per-run seeds only steer adapter/bridge/head initialization and
// batch order in the fusion stages.
inline unsigned mt_init_seed(const RunConfig& cfg) { return mix_seed(cfg.mt.pretrain.seed, 0x3017u); }
inline unsigned lm_init_seed(const RunConfig& cfg) { return mix_seed(cfg.lm.pretrain.seed, 0x3018u); }
inline unsigned stage_adapter_seed(unsigned run_seed) { return mix_seed(run_seed, 0xADA0u); }
inline unsigned bridge_init_seed(unsigned run_seed) { return mix_seed(run_seed, 0xB21Du); }
inline unsigned ft_adapter_seed(unsigned run_seed) { return mix_seed(run_seed, 0xF7A1u); }
inline unsigned task_head_seed(unsigned run_seed) { return mix_seed(run_seed, 0x6EADu); }
inline unsigned task_data_seed(TaskKind kind) { return 21u + static_cast<unsigned>(kind); }

// ---------------------------------------------------------------------------
// Shared artifacts: generator, pretrained translator, pretrained backbone.
// Built once and reused (read-only) by every run seed.

struct SharedArtifacts {
  RunConfig cfg;
  std::uint64_t cfg_hash = 0;
  SynthGen gen;
  MTModel<float> mt;
  TransformerModel<float> lm;
  ParamSnapshot<float> mt_weights;  // post-pretraining, for checkpointing/reuse
  ParamSnapshot<float> lm_weights;  // post-pretraining, for materializing copies
  StageResult<float> mt_log, lm_log;
  double mt_heldout_em = 0.0;
  double lm_heldout_loss = 0.0;
  std::vector<double> retrieval;  // pair-retrieval accuracy per encoder layer
  double mt_build_seconds = 0.0;  // translator pretraining + its held-out gates
  double lm_build_seconds = 0.0;  // backbone pretraining + its held-out loss

  explicit SharedArtifacts(const RunConfig& c)
      : cfg(c),
        cfg_hash(config_hash(c)),
        gen(synth_config(c)),
        mt(init_mt_model<float>(mt_model_config(c, mt_init_seed(c)))),
        lm(init_model<float>(lm_model_config(c, lm_init_seed(c)))) {}

  SharedArtifacts(const SharedArtifacts&) = delete;
  SharedArtifacts& operator=(const SharedArtifacts&) = delete;
};

// Pretrains translator + backbone and computes their held-out gates. When
// `reuse_mt` is given and its translator config matches, the translator
// weights are copied instead of retrained (used by the decoder-backbone
// ablation, which only changes the LM side).
inline std::unique_ptr<SharedArtifacts> build_shared_artifacts(const RunConfig& cfg, const PipelineLog& log = null_log(),
                                                               const SharedArtifacts* reuse_mt = nullptr) {
  cfg.validate();
  auto sh = std::make_unique<SharedArtifacts>(cfg);
  const auto langs = all_languages(cfg);

  auto mt_params = named_mt_params(sh->mt);
  auto same_translator = [](const MTConfig& a, const MTConfig& b) {
    return a.d_model == b.d_model && a.n_layers == b.n_layers && a.n_heads == b.n_heads && a.d_ff == b.d_ff &&
           a.max_len == b.max_len && a.n_languages == b.n_languages && a.seed == b.seed;
  };
  if (reuse_mt != nullptr &&
      same_translator(mt_model_config(cfg, mt_init_seed(cfg)), mt_model_config(reuse_mt->cfg, mt_init_seed(reuse_mt->cfg)))) {
    restore_snapshot(mt_params, reuse_mt->mt_weights);
    sh->mt_log = {};
    log("translator: reusing pretrained weights");
  } else {
    log("translator: pretraining (" + std::to_string(cfg.mt.pretrain.total_steps) + " steps)");
    sh->mt_log = pretrain_mt(sh->mt, sh->gen, cfg.mt.pretrain, langs);
  }
  set_mt_requires_grad(sh->mt, false);  // frozen from here on; keeps threads from racing on grads
  sh->mt_weights = take_snapshot(cfg.mt.pretrain.total_steps, mt_params);

  auto heldout = sh->gen.gen_parallel_corpus(mix_seed(cfg.mt.pretrain.seed, 0x48E1Du), cfg.data.heldout_pairs, langs);
  sh->mt_heldout_em = mt_exact_match(sh->mt, heldout);
  log("translator: held-out exact match " + std::to_string(sh->mt_heldout_em));

  auto retr_pairs = gen_retrieval_pairs(sh->gen, 7u, cfg.data.heldout_pairs, langs);
  sh->retrieval = retrieval_curve(sh->mt, retr_pairs);

  log("backbone: pretraining (" + std::to_string(cfg.lm.pretrain.total_steps) + " steps)");
  auto corpus = gen_sentence_corpus(sh->gen, cfg.lm.pretrain.seed, cfg.data.lm_corpus_size, 0);
  sh->lm_log = pretrain_lm(sh->lm, corpus, cfg.lm.pretrain);
  auto lm_params = named_params(sh->lm);
  sh->lm_weights = take_snapshot(cfg.lm.pretrain.total_steps, lm_params);

  auto lm_heldout = gen_sentence_corpus(sh->gen, mix_seed(cfg.lm.pretrain.seed, 0x48E1Du), 256, 0);
  sh->lm_heldout_loss = lm_corpus_loss(sh->lm, lm_heldout);
  log("backbone: held-out loss " + std::to_string(sh->lm_heldout_loss));
  return sh;
}

// Fresh backbone copy carrying the pretrained weights.
inline TransformerModel<float> materialize_backbone(const SharedArtifacts& sh) {
  auto m = init_model<float>(lm_model_config(sh.cfg, lm_init_seed(sh.cfg)));
  auto params = named_params(m);
  restore_snapshot(params, sh.lm_weights);
  return m;
}

// ---------------------------------------------------------------------------
// Stage 1 (representation alignment), once per run seed; task-independent.

struct StageOneRun {
  unsigned seed = 0;
  StageResult<float> log;
  ParamSnapshot<float> theta_init;   // bridge + adapters before any training
  ParamSnapshot<float> theta_final;  // after the last step
  double probe_before = 0.0, probe_after = 0.0;  // held-out alignment MSE
};

inline StageOneRun run_stage_one(SharedArtifacts& sh, unsigned run_seed, const PipelineLog& log = null_log(),
                                 double validate_every_fraction_override = 0.0) {
  const RunConfig& cfg = sh.cfg;
  StageOneRun out;
  out.seed = run_seed;

  auto backbone = materialize_backbone(sh);
  inject_lora(backbone, cfg.fusion.rank, static_cast<float>(cfg.fusion.alpha), cfg.fusion.dropout,
              stage_adapter_seed(run_seed));
  auto fused = build_fused(sh.mt, backbone, cfg.fusion.encoder_layer_index, pooling_from_name(cfg.lm.pooling),
                           bridge_init_seed(run_seed));
  auto theta = fused_trainable_params(fused);

  TrainConfig c1 = cfg.stages.stage1;
  c1.seed = mix_seed(c1.seed, run_seed);
  if (validate_every_fraction_override > 0.0) c1.validate_every_fraction = validate_every_fraction_override;

  auto corpus = gen_sentence_corpus(sh.gen, cfg.stages.stage1.seed, cfg.data.stage1_corpus_size, 0);
  auto probe = gen_sentence_corpus(sh.gen, mix_seed(cfg.stages.stage1.seed, 0x9A0Bu), 64, 0);

  out.theta_init = take_snapshot(0, theta);
  out.probe_before = stage1_probe_loss(fused, probe);
  log("seed " + std::to_string(run_seed) + ": stage-1 alignment (" + std::to_string(c1.total_steps) + " steps)");
  out.log = stage1_align(fused, corpus, c1);
  out.probe_after = stage1_probe_loss(fused, probe);
  out.theta_final = take_snapshot(c1.total_steps, theta);
  log("seed " + std::to_string(run_seed) + ": stage-1 probe MSE " + std::to_string(out.probe_before) + " -> " +
      std::to_string(out.probe_after));
  return out;
}

// ---------------------------------------------------------------------------
// Per-task comparison rows.

struct ComparisonRow {
  std::string name;
  std::vector<EvalReport> dev_series;  // one per checkpoint, in step order
  EvalReport s_dev;                    // test report, source-dev selection
  EvalReport t_dev;                    // test report, per-language target-dev selection
};

// restore(i) must load checkpoint i; test_eval(id) must score the test split
// under whatever restore last loaded.
template <typename RestoreFn, typename TestFn>
ComparisonRow make_comparison_row(std::string name, std::vector<EvalReport> dev_series, RestoreFn restore,
                                  TestFn test_eval) {
  ComparisonRow row;
  row.name = std::move(name);
  row.dev_series = std::move(dev_series);

  std::size_t s = select_s_dev(row.dev_series);
  restore(s);
  row.s_dev = test_eval(row.dev_series[s].checkpoint_id);
  row.s_dev.selection = "s-dev";

  auto per_lang = select_t_dev(row.dev_series);
  std::map<std::size_t, EvalReport> test_by_idx;
  for (const auto& [lang, idx] : per_lang) {
    if (test_by_idx.count(idx) == 0) {
      restore(idx);
      test_by_idx.emplace(idx, test_eval(row.dev_series[idx].checkpoint_id));
    }
  }
  std::vector<int> langs;
  std::vector<double> vals;
  for (const auto& [lang, idx] : per_lang) {
    langs.push_back(lang);
    vals.push_back(test_by_idx.at(idx).value_for(lang));
  }
  row.t_dev = make_report(langs, vals, test_by_idx.begin()->second.metric, "t-dev", "t-dev");
  return row;
}

// Translates every non-source example of a per-language split into the source
// language, keeping the per-language bucketing so reports stay comparable.
inline std::map<int, std::vector<LabeledExample>> translate_split_to_source(
    const SynthGen& gen, MTModel<float>* mt, TranslateMode mode,
    const std::map<int, std::vector<LabeledExample>>& split) {
  std::map<int, std::vector<LabeledExample>> out;
  for (const auto& [lang, examples] : split) {
    auto& bucket = out[lang];
    bucket.reserve(examples.size());
    for (const auto& ex : examples) bucket.push_back(translate_example_to_source(gen, mt, mode, ex));
  }
  return out;
}

struct TaskPhaseOptions {
  std::optional<PoolingMode> task_pooling;  // fine-tune / stage-2 / eval pooling; unset = config pooling
  double ft_lr_override = 0.0;              // > 0 replaces the fine-tune peak LR
  bool with_translate_rows = true;          // translate-test rows cost greedy decoding
};

struct TaskRun {
  TaskKind kind = TaskKind::kPair;
  unsigned seed = 0;
  StageResult<float> ft_log, s2_log;
  std::size_t teacher_sdev_index = 0;  // fine-tune checkpoint the distillation teacher froze at
  ComparisonRow base_zsxlt, ttest_learned, ttest_oracle, fused_s1_ft, fused_s1_s2;
};

inline TaskRun run_task(SharedArtifacts& sh, unsigned run_seed, const ParamSnapshot<float>& stage1_theta,
                        TaskKind kind, const TaskPhaseOptions& opts = {}, const PipelineLog& log = null_log()) {
  const RunConfig& cfg = sh.cfg;
  const TaskSpec spec = task_spec(cfg, kind);
  const auto langs = all_languages(cfg);
  const PoolingMode pooling = opts.task_pooling.value_or(pooling_from_name(cfg.lm.pooling));
  const std::string tag = "seed " + std::to_string(run_seed) + " " + task_key(kind);
  TaskDataset ds = sh.gen.gen_task_dataset(spec, task_data_seed(kind), langs);

  TaskRun out;
  out.kind = kind;
  out.seed = run_seed;

  // Teacher: pretrained backbone + fresh adapters + fresh head, fine-tuned on
  // source-language task data.
  auto teacher = materialize_backbone(sh);
  inject_lora(teacher, cfg.fusion.rank, static_cast<float>(cfg.fusion.alpha), cfg.fusion.dropout,
              ft_adapter_seed(run_seed));
  auto head = init_task_head<float>(cfg.lm.d_model, spec, task_head_seed(run_seed));
  TrainConfig ft = finetune_config(cfg, kind);
  ft.seed = mix_seed(ft.seed, run_seed);
  if (opts.ft_lr_override > 0.0) ft.peak_lr = opts.ft_lr_override;
  log(tag + ": fine-tuning teacher (" + std::to_string(ft.epochs) + " epochs)");
  out.ft_log = finetune_head(teacher, head, ds, ft, pooling);
  auto ft_params = finetune_params(teacher, head);

  // Fused model for this task: stage-1 weights restored into a fresh copy.
  auto backbone = materialize_backbone(sh);
  inject_lora(backbone, cfg.fusion.rank, static_cast<float>(cfg.fusion.alpha), cfg.fusion.dropout,
              stage_adapter_seed(run_seed));
  auto fused = build_fused(sh.mt, backbone, cfg.fusion.encoder_layer_index, pooling_from_name(cfg.lm.pooling),
                           bridge_init_seed(run_seed));
  auto theta = fused_trainable_params(fused);
  restore_snapshot(theta, stage1_theta);

  // Translated views of dev/test (checkpoint-independent, so built once).
  std::map<int, std::vector<LabeledExample>> dev_learned, test_learned, dev_oracle, test_oracle;
  if (opts.with_translate_rows) {
    log(tag + ": translating dev/test splits");
    dev_learned = translate_split_to_source(sh.gen, &sh.mt, TranslateMode::kLearned, ds.dev);
    test_learned = translate_split_to_source(sh.gen, &sh.mt, TranslateMode::kLearned, ds.test);
    dev_oracle = translate_split_to_source(sh.gen, &sh.mt, TranslateMode::kOracle, ds.dev);
    test_oracle = translate_split_to_source(sh.gen, &sh.mt, TranslateMode::kOracle, ds.test);
  }

  // One dev sweep over the fine-tune checkpoints feeds every teacher-side row
  // and the stage-1 fused row (whose weights stay fixed; only the head moves).
  std::vector<EvalReport> dev_base, dev_fused_ft, dev_tt_learned, dev_tt_oracle;
  log(tag + ": scoring dev series over " + std::to_string(out.ft_log.checkpoints.size()) + " checkpoints");
  for (const auto& ck : out.ft_log.checkpoints) {
    restore_snapshot(ft_params, ck);
    const std::string id = "ft-" + std::to_string(ck.step);
    dev_base.push_back(evaluate_split_lm(teacher, head, spec, ds.dev, langs, pooling, id));
    dev_fused_ft.push_back(evaluate_split_fused(fused, head, spec, ds.dev, langs, pooling, id));
    if (opts.with_translate_rows) {
      dev_tt_learned.push_back(evaluate_split_lm(teacher, head, spec, dev_learned, langs, pooling, id));
      dev_tt_oracle.push_back(evaluate_split_lm(teacher, head, spec, dev_oracle, langs, pooling, id));
    }
  }

  auto restore_ft = [&](std::size_t i) { restore_snapshot(ft_params, out.ft_log.checkpoints[i]); };
  out.base_zsxlt = make_comparison_row("base_zsxlt", dev_base, restore_ft, [&](const std::string& id) {
    return evaluate_split_lm(teacher, head, spec, ds.test, langs, pooling, id);
  });
  out.fused_s1_ft = make_comparison_row("fused_s1_ft", dev_fused_ft, restore_ft, [&](const std::string& id) {
    return evaluate_split_fused(fused, head, spec, ds.test, langs, pooling, id);
  });
  if (opts.with_translate_rows) {
    out.ttest_learned = make_comparison_row("ttest_learned", dev_tt_learned, restore_ft, [&](const std::string& id) {
      return evaluate_split_lm(teacher, head, spec, test_learned, langs, pooling, id);
    });
    out.ttest_oracle = make_comparison_row("ttest_oracle", dev_tt_oracle, restore_ft, [&](const std::string& id) {
      return evaluate_split_lm(teacher, head, spec, test_oracle, langs, pooling, id);
    });
  }

  // Stage 2 distills from the teacher at its own best source-dev checkpoint;
  // the head freezes at the same checkpoint and scores the fused model.
  out.teacher_sdev_index = select_s_dev(dev_base);
  restore_ft(out.teacher_sdev_index);
  TrainConfig s2 = cfg.stages.stage2;
  s2.seed = mix_seed(s2.seed, run_seed);
  log(tag + ": stage-2 distillation (" + std::to_string(s2.total_steps) + " steps)");
  out.s2_log = stage2_distill(fused, teacher, head, ds, s2, pooling);

  std::vector<EvalReport> dev_s2;
  for (const auto& ck : out.s2_log.checkpoints) {
    restore_snapshot(theta, ck);
    dev_s2.push_back(
        evaluate_split_fused(fused, head, spec, ds.dev, langs, pooling, "s2-" + std::to_string(ck.step)));
  }
  auto restore_theta = [&](std::size_t i) { restore_snapshot(theta, out.s2_log.checkpoints[i]); };
  out.fused_s1_s2 = make_comparison_row("fused_s1_s2", dev_s2, restore_theta, [&](const std::string& id) {
    return evaluate_split_fused(fused, head, spec, ds.test, langs, pooling, id);
  });
  log(tag + ": done (fused s-dev " + std::to_string(out.fused_s1_s2.s_dev.aggregate) + ", base s-dev " +
      std::to_string(out.base_zsxlt.s_dev.aggregate) + ")");
  return out;
}

// ---------------------------------------------------------------------------
// Full run: every seed x every task, then cross-seed aggregation.

struct SeedRun {
  unsigned seed = 0;
  StageOneRun stage1;
  std::vector<TaskRun> tasks;  // pair, single, multiple_choice in that order
};

struct PipelineResult {
  std::uint64_t cfg_hash = 0;
  double mt_heldout_em = 0.0;
  double lm_heldout_loss = 0.0;
  std::vector<double> retrieval;
  std::vector<SeedRun> seeds;
  std::vector<MetricRow> metrics;
  std::string table;
};

inline const ComparisonRow& row_by_name(const TaskRun& t, const std::string& name) {
  if (name == "base_zsxlt") return t.base_zsxlt;
  if (name == "ttest_learned") return t.ttest_learned;
  if (name == "ttest_oracle") return t.ttest_oracle;
  if (name == "fused_s1_ft") return t.fused_s1_ft;
  if (name == "fused_s1_s2") return t.fused_s1_s2;
  throw std::invalid_argument("row_by_name: unknown row '" + name + "'");
}

inline const std::vector<std::string>& comparison_row_names() {
  static const std::vector<std::string> names = {"base_zsxlt", "ttest_learned", "ttest_oracle", "fused_s1_ft",
                                                 "fused_s1_s2"};
  return names;
}

inline const TaskRun& task_run(const SeedRun& s, TaskKind kind) {
  for (const auto& t : s.tasks) {
    if (t.kind == kind) return t;
  }
  throw std::invalid_argument("task_run: seed " + std::to_string(s.seed) + " has no " + task_key(kind) + " run");
}

inline bool has_task(const SeedRun& s, TaskKind kind) {
  for (const auto& t : s.tasks) {
    if (t.kind == kind) return true;
  }
  return false;
}

// Element-wise mean of reports over seeds (same languages required).
inline EvalReport mean_report(const std::vector<EvalReport>& reps) {
  if (reps.empty()) throw std::invalid_argument("mean_report: no reports");
  EvalReport m = reps.front();
  for (std::size_t r = 1; r < reps.size(); ++r) {
    if (reps[r].languages != m.languages) throw std::invalid_argument("mean_report: language sets differ");
    for (std::size_t i = 0; i < m.per_language.size(); ++i) m.per_language[i] += reps[r].per_language[i];
    m.aggregate += reps[r].aggregate;
  }
  const double n = static_cast<double>(reps.size());
  for (double& v : m.per_language) v /= n;
  m.aggregate /= n;
  m.checkpoint_id = "mean-of-" + std::to_string(reps.size()) + "-seeds";
  return m;
}

// Cross-seed mean of a row's test aggregate under one selection policy.
inline double mean_row_aggregate(const PipelineResult& res, TaskKind kind, const std::string& row,
                                 const std::string& selection) {
  std::vector<EvalReport> reps;
  for (const auto& s : res.seeds) {
    const ComparisonRow& r = row_by_name(task_run(s, kind), row);
    reps.push_back(selection == "t-dev" ? r.t_dev : r.s_dev);
  }
  return mean_report(reps).aggregate;
}

namespace detail {

inline std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

inline void append_validation_rows(std::vector<MetricRow>& rows, const StageResult<float>& log,
                                   const std::string& metric, const std::string& checkpoint, int language = -1,
                                   const std::string& split = "train") {
  for (const auto& v : log.validations) rows.push_back({v.step, split, language, metric, v.value, checkpoint});
}

inline void append_report_rows(std::vector<MetricRow>& rows, EvalReport rep, const std::string& prefix,
                               const std::string& split) {
  rep.checkpoint_id = prefix + "/" + rep.checkpoint_id;
  for (auto& r : rows_from_report(rep, 0, split)) rows.push_back(std::move(r));
}

}  // namespace detail

inline std::vector<MetricRow> pipeline_metric_rows(const PipelineResult& res, const SharedArtifacts& sh) {
  std::vector<MetricRow> rows;
  detail::append_validation_rows(rows, sh.mt_log, "mt_loss_window", "shared/mt-pretrain");
  rows.push_back({sh.cfg.mt.pretrain.total_steps, "heldout", -1, "mt_exact_match", res.mt_heldout_em,
                  "shared/mt-pretrain"});
  for (std::size_t l = 0; l < res.retrieval.size(); ++l) {
    rows.push_back({0, "heldout", -1, "retrieval_layer_" + std::to_string(l), res.retrieval[l], "shared/mt-pretrain"});
  }
  detail::append_validation_rows(rows, sh.lm_log, "lm_loss_window", "shared/lm-pretrain");
  rows.push_back({sh.cfg.lm.pretrain.total_steps, "heldout", -1, "lm_heldout_loss", res.lm_heldout_loss,
                  "shared/lm-pretrain"});

  for (const auto& s : res.seeds) {
    const std::string sp = "seed" + std::to_string(s.seed);
    detail::append_validation_rows(rows, s.stage1.log, "stage1_loss_window", sp + "/stage1");
    rows.push_back({0, "probe", -1, "stage1_probe_mse", s.stage1.probe_before, sp + "/stage1"});
    rows.push_back({sh.cfg.stages.stage1.total_steps, "probe", -1, "stage1_probe_mse", s.stage1.probe_after,
                    sp + "/stage1"});
    for (const auto& t : s.tasks) {
      const std::string tp = sp + "/" + task_key(t.kind);
      detail::append_validation_rows(rows, t.ft_log, "dev_accuracy", tp + "/finetune", 0, "dev");
      detail::append_validation_rows(rows, t.s2_log, "dev_accuracy", tp + "/stage2", 0, "dev");
      for (const auto& name : comparison_row_names()) {
        const ComparisonRow& row = row_by_name(t, name);
        if (row.name.empty()) continue;  // translate rows may be disabled
        detail::append_report_rows(rows, row.s_dev, tp + "/" + name + "/s-dev", "test");
        detail::append_report_rows(rows, row.t_dev, tp + "/" + name + "/t-dev", "test");
      }
    }
  }

  for (const auto& kind : {TaskKind::kPair, TaskKind::kSingle, TaskKind::kMultipleChoice}) {
    if (res.seeds.empty() || !has_task(res.seeds.front(), kind)) continue;
    for (const auto& name : comparison_row_names()) {
      for (const char* sel : {"s-dev", "t-dev"}) {
        std::vector<EvalReport> reps;
        for (const auto& s : res.seeds) {
          const ComparisonRow& row = row_by_name(task_run(s, kind), name);
          if (row.name.empty()) break;
          reps.push_back(sel == std::string("t-dev") ? row.t_dev : row.s_dev);
        }
        if (reps.size() != res.seeds.size()) continue;
        detail::append_report_rows(rows, mean_report(reps), "mean/" + task_key(kind) + "/" + name + "/" + sel,
                                   "test-mean");
      }
    }
  }
  return rows;
}

inline std::string pipeline_table(const PipelineResult& res) {
  std::string out = "task              row             s-dev   t-dev\n";
  for (const auto& kind : {TaskKind::kPair, TaskKind::kSingle, TaskKind::kMultipleChoice}) {
    if (res.seeds.empty() || !has_task(res.seeds.front(), kind)) continue;
    for (const auto& name : comparison_row_names()) {
      if (row_by_name(task_run(res.seeds.front(), kind), name).name.empty()) continue;
      char line[128];
      std::snprintf(line, sizeof(line), "%-17s %-15s %7.3f %7.3f\n", task_key(kind).c_str(), name.c_str(),
                    mean_row_aggregate(res, kind, name, "s-dev"), mean_row_aggregate(res, kind, name, "t-dev"));
      out += line;
    }
  }
  return out;
}

struct PipelineOptions {
  std::vector<TaskKind> tasks = {TaskKind::kPair, TaskKind::kSingle, TaskKind::kMultipleChoice};
  TaskPhaseOptions phase;   // pooling/translate-row settings applied to every task
  bool parallel_seeds = true;
};

// Runs every seed (optionally on threads; results are seed-local so the
// schedule cannot change them) and assembles metrics + the comparison table.
inline PipelineResult run_pipeline(SharedArtifacts& sh, const PipelineOptions& opts = {},
                                   const PipelineLog& log = null_log()) {
  const RunConfig& cfg = sh.cfg;
  PipelineResult res;
  res.cfg_hash = sh.cfg_hash;
  res.mt_heldout_em = sh.mt_heldout_em;
  res.lm_heldout_loss = sh.lm_heldout_loss;
  res.retrieval = sh.retrieval;
  res.seeds.resize(cfg.eval.seeds.size());

  std::mutex log_mutex;
  PipelineLog safe_log = [&](const std::string& line) {
    std::lock_guard<std::mutex> guard(log_mutex);
    log(line);
  };
  std::vector<std::exception_ptr> errors(cfg.eval.seeds.size());
  auto run_one = [&](std::size_t i) {
    try {
      unsigned seed = cfg.eval.seeds[i];
      SeedRun& sr = res.seeds[i];
      sr.seed = seed;
      sr.stage1 = run_stage_one(sh, seed, safe_log);
      for (TaskKind kind : opts.tasks) {
        sr.tasks.push_back(run_task(sh, seed, sr.stage1.theta_final, kind, opts.phase, safe_log));
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  if (opts.parallel_seeds && cfg.eval.seeds.size() > 1) {
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < cfg.eval.seeds.size(); ++i) workers.emplace_back(run_one, i);
    for (auto& w : workers) w.join();
  } else {
    for (std::size_t i = 0; i < cfg.eval.seeds.size(); ++i) run_one(i);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);  // first failing seed wins, in seed order
  }

  res.metrics = pipeline_metric_rows(res, sh);
  res.table = pipeline_table(res);
  return res;
}

// ---------------------------------------------------------------------------
// Ablation 1: how much stage-1 alignment does the fused model need?
// Scores the fused model (frozen fine-tuned head, s-dev teacher checkpoint)
// with stage-1 weights taken after 0%, 25%, 50% and 100% of the budget.

struct AdaptationPoint {
  double fraction = 0.0;
  int step = 0;
  double accuracy = 0.0;  // fused zero-shot test aggregate
};

inline std::vector<AdaptationPoint> run_adaptation_ablation(SharedArtifacts& sh, unsigned run_seed,
                                                            TaskKind kind = TaskKind::kMultipleChoice,
                                                            const PipelineLog& log = null_log()) {
  const RunConfig& cfg = sh.cfg;
  const TaskSpec spec = task_spec(cfg, kind);
  const auto langs = all_languages(cfg);
  TaskDataset ds = sh.gen.gen_task_dataset(spec, task_data_seed(kind), langs);
  const PoolingMode pooling = pooling_from_name(cfg.lm.pooling);

  // Dense validation grid so quarter-budget steps land exactly on snapshots.
  StageOneRun s1 = run_stage_one(sh, run_seed, log, 0.05);

  // Teacher + head, frozen at the teacher's own best source-dev checkpoint.
  auto teacher = materialize_backbone(sh);
  inject_lora(teacher, cfg.fusion.rank, static_cast<float>(cfg.fusion.alpha), cfg.fusion.dropout,
              ft_adapter_seed(run_seed));
  auto head = init_task_head<float>(cfg.lm.d_model, spec, task_head_seed(run_seed));
  TrainConfig ft = finetune_config(cfg, kind);
  ft.seed = mix_seed(ft.seed, run_seed);
  StageResult<float> ft_log = finetune_head(teacher, head, ds, ft, pooling);
  auto ft_params = finetune_params(teacher, head);
  std::vector<EvalReport> dev_base;
  for (const auto& ck : ft_log.checkpoints) {
    restore_snapshot(ft_params, ck);
    dev_base.push_back(evaluate_split_lm(teacher, head, spec, ds.dev, langs, pooling, std::to_string(ck.step)));
  }
  restore_snapshot(ft_params, ft_log.checkpoints[select_s_dev(dev_base)]);

  auto backbone = materialize_backbone(sh);
  inject_lora(backbone, cfg.fusion.rank, static_cast<float>(cfg.fusion.alpha), cfg.fusion.dropout,
              stage_adapter_seed(run_seed));
  auto fused = build_fused(sh.mt, backbone, cfg.fusion.encoder_layer_index, pooling, bridge_init_seed(run_seed));
  auto theta = fused_trainable_params(fused);

  std::vector<AdaptationPoint> out;
  for (double frac : {0.0, 0.25, 0.5, 1.0}) {
    const int want = static_cast<int>(frac * cfg.stages.stage1.total_steps + 0.5);
    int actual = 0;
    if (want == 0) {
      restore_snapshot(theta, s1.theta_init);
    } else {
      const ParamSnapshot<float>* best = nullptr;
      for (const auto& ck : s1.log.checkpoints) {
        if (best == nullptr || std::abs(ck.step - want) < std::abs(best->step - want)) best = &ck;
      }
      restore_snapshot(theta, *best);
      actual = best->step;
    }
    EvalReport rep = evaluate_split_fused(fused, head, spec, ds.test, langs, pooling,
                                          "s1-" + std::to_string(actual));
    out.push_back({frac, actual, rep.aggregate});
    log("adaptation ablation: " + std::to_string(frac) + " of budget (step " + std::to_string(actual) + ") -> " +
        detail::fixed3(rep.aggregate));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation 2: decoder-only backbone. Causal attention, mean pooling for the
// stage-1 alignment, last-token (EOS) pooling for task phases, and a larger
// fine-tune LR. Reuses the already-pretrained translator.

struct DecoderAblationResult {
  PipelineResult pipeline;
  double fused_mean = 0.0;  // fused_s1_s2 s-dev aggregate, mean over seeds
  double base_mean = 0.0;   // base_zsxlt  s-dev aggregate, mean over seeds
};

inline RunConfig decoder_ablation_config(RunConfig cfg) {
  cfg.lm.attention_mode = "causal";
  cfg.lm.pooling = "mean";  // stage-1 alignment pools symmetrically on both sides
  return cfg;
}

inline DecoderAblationResult run_decoder_ablation(const SharedArtifacts& primary, const PipelineLog& log = null_log()) {
  RunConfig cfg = decoder_ablation_config(primary.cfg);
  auto sh = build_shared_artifacts(cfg, log, &primary);
  PipelineOptions opts;
  opts.tasks = {TaskKind::kPair};
  opts.phase.task_pooling = PoolingMode::kEos;
  opts.phase.ft_lr_override = 3e-4;
  opts.phase.with_translate_rows = false;
  DecoderAblationResult out;
  out.pipeline = run_pipeline(*sh, opts, log);
  out.fused_mean = mean_row_aggregate(out.pipeline, TaskKind::kPair, "fused_s1_s2", "s-dev");
  out.base_mean = mean_row_aggregate(out.pipeline, TaskKind::kPair, "base_zsxlt", "s-dev");
  return out;
}

}  // namespace mtfuse
