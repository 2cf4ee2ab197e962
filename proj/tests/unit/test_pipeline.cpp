// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <string>
#include <vector>

#include "mtfuse/pipeline.hpp"
#include "mtfuse/selfcheck.hpp"

using namespace mtfuse;

namespace {

// Small enough that a full multi-seed pipeline finishes in seconds.
RunConfig tiny_run_config() {
  RunConfig c;
  c.data.n_languages = 3;
  c.data.flip_threshold = 2;  // language 2 flips word order
  c.data.lm_corpus_size = 64;
  c.data.stage1_corpus_size = 64;
  c.data.heldout_pairs = 16;
  c.data.pair = {24, 9, 12};
  c.data.single = {18, 9, 12};
  c.data.multiple_choice = {16, 8, 8};
  c.mt.d_model = 16;
  c.mt.n_layers = 1;
  c.mt.n_heads = 2;
  c.mt.d_ff = 32;
  c.mt.pretrain.total_steps = 30;
  c.mt.pretrain.batch_size = 4;
  c.lm.d_model = 16;
  c.lm.n_layers = 1;
  c.lm.n_heads = 2;
  c.lm.d_ff = 32;
  c.lm.pretrain.total_steps = 30;
  c.lm.pretrain.batch_size = 4;
  c.fusion.rank = 2;
  c.fusion.alpha = 4.0;
  c.fusion.encoder_layer_index = 1;
  c.stages.stage1.total_steps = 20;
  c.stages.stage1.batch_size = 4;
  c.stages.finetune.batch_size = 4;
  c.stages.finetune_epochs_pair = 1;
  c.stages.finetune_epochs_single = 1;
  c.stages.finetune_epochs_multiple_choice = 1;
  c.stages.stage2.total_steps = 20;
  c.stages.stage2.batch_size = 4;
  c.eval.seeds = {1, 2};
  return c;
}

}  // namespace

TEST_CASE("comparison row selection restores the right checkpoints") {
  // Three fake checkpoints over two languages. Source-dev (language 0) peaks
  // at index 1; per-language target-dev peaks at index 2 for language 0 and
  // index 0 for language 1.
  std::vector<EvalReport> dev = {
      make_report({0, 1}, {0.50, 0.90}, "accuracy", "ck-0"),
      make_report({0, 1}, {0.80, 0.70}, "accuracy", "ck-1"),
      make_report({0, 1}, {0.79, 0.60}, "accuracy", "ck-2"),
  };
  std::size_t restored = 99;
  std::vector<std::size_t> restore_calls;
  auto restore = [&](std::size_t i) {
    restored = i;
    restore_calls.push_back(i);
  };
  // Test values depend on the restored checkpoint so wrong plumbing shows up.
  auto test_eval = [&](const std::string& id) {
    double base = 0.1 * static_cast<double>(restored);
    EvalReport r = make_report({0, 1}, {base + 0.01, base + 0.02}, "accuracy", id);
    return r;
  };
  ComparisonRow row = make_comparison_row("demo", dev, restore, test_eval);

  REQUIRE(row.name == "demo");
  REQUIRE(row.dev_series.size() == 3);
  // s-dev: index 1 (source value 0.80).
  REQUIRE(row.s_dev.checkpoint_id == "ck-1");
  REQUIRE(row.s_dev.selection == "s-dev");
  REQUIRE(row.s_dev.value_for(0) == Catch::Approx(0.11));
  // t-dev: language 0 from index 1, language 1 from index 0.
  REQUIRE(row.t_dev.selection == "t-dev");
  REQUIRE(row.t_dev.value_for(0) == Catch::Approx(0.11));
  REQUIRE(row.t_dev.value_for(1) == Catch::Approx(0.02));
  REQUIRE(row.t_dev.aggregate == Catch::Approx(0.5 * (0.11 + 0.02)));
}

TEST_CASE("mean report averages per language and rejects mismatched sets") {
  EvalReport a = make_report({0, 1}, {0.4, 0.6}, "accuracy", "a");
  EvalReport b = make_report({0, 1}, {0.8, 0.2}, "accuracy", "b");
  EvalReport m = mean_report({a, b});
  REQUIRE(m.value_for(0) == Catch::Approx(0.6));
  REQUIRE(m.value_for(1) == Catch::Approx(0.4));
  REQUIRE(m.aggregate == Catch::Approx(0.5));
  REQUIRE(m.checkpoint_id == "mean-of-2-seeds");

  EvalReport c = make_report({0, 2}, {0.5, 0.5}, "accuracy", "c");
  REQUIRE_THROWS_AS(mean_report({a, c}), std::invalid_argument);
  REQUIRE_THROWS_AS(mean_report({}), std::invalid_argument);
}

TEST_CASE("shared artifacts pretrain both models and freeze the translator") {
  RunConfig cfg = tiny_run_config();
  auto sh = build_shared_artifacts(cfg);

  REQUIRE(sh->mt_log.step_losses.size() == 30);
  REQUIRE(sh->lm_log.step_losses.size() == 30);
  REQUIRE(sh->retrieval.size() == 2);  // embeddings + one encoder layer
  REQUIRE(sh->mt_heldout_em >= 0.0);
  REQUIRE(sh->mt_heldout_em <= 1.0);
  REQUIRE(sh->lm_heldout_loss > 0.0);

  bool any_trainable = false;
  visit_mt_params<float>(sh->mt, [&](const std::string&, Tensor<float>& t) {
    any_trainable = any_trainable || t.requires_grad;
  });
  REQUIRE_FALSE(any_trainable);

  // Materialized copies carry the pretrained weights bit for bit.
  auto copy = materialize_backbone(*sh);
  auto got = named_params(copy);
  auto want = named_params(sh->lm);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    REQUIRE(got[i].name == want[i].name);
    REQUIRE(got[i].tensor->values == want[i].tensor->values);
  }
}

TEST_CASE("task run produces aligned comparison rows") {
  RunConfig cfg = tiny_run_config();
  auto sh = build_shared_artifacts(cfg);
  StageOneRun s1 = run_stage_one(*sh, 1);
  REQUIRE(s1.log.checkpoints.size() == 10);
  REQUIRE(s1.theta_final.values.size() == s1.theta_init.values.size());

  TaskRun t = run_task(*sh, 1, s1.theta_final, TaskKind::kPair);
  const std::size_t n_ft = t.ft_log.checkpoints.size();
  REQUIRE(n_ft >= 1);
  for (const ComparisonRow* row : {&t.base_zsxlt, &t.fused_s1_ft, &t.ttest_learned, &t.ttest_oracle}) {
    REQUIRE(row->dev_series.size() == n_ft);
    REQUIRE(row->s_dev.selection == "s-dev");
    REQUIRE(row->t_dev.selection == "t-dev");
    REQUIRE(row->s_dev.languages == std::vector<int>{0, 1, 2});
    for (double v : row->s_dev.per_language) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }
  REQUIRE(t.fused_s1_s2.dev_series.size() == t.s2_log.checkpoints.size());

  // Language 0 passes through translation untouched, so on the source
  // language the translate-test dev curves match the direct ones exactly.
  for (std::size_t i = 0; i < n_ft; ++i) {
    REQUIRE(t.ttest_oracle.dev_series[i].value_for(0) == t.base_zsxlt.dev_series[i].value_for(0));
    REQUIRE(t.ttest_learned.dev_series[i].value_for(0) == t.base_zsxlt.dev_series[i].value_for(0));
  }
  REQUIRE(t.teacher_sdev_index < n_ft);
}

TEST_CASE("pipeline is deterministic and thread-schedule independent") {
  RunConfig cfg = tiny_run_config();
  PipelineOptions opts;
  opts.tasks = {TaskKind::kPair};

  auto sh1 = build_shared_artifacts(cfg);
  PipelineResult r1 = run_pipeline(*sh1, opts);

  auto sh2 = build_shared_artifacts(cfg);
  PipelineResult r2 = run_pipeline(*sh2, opts);

  PipelineOptions serial = opts;
  serial.parallel_seeds = false;
  auto sh3 = build_shared_artifacts(cfg);
  PipelineResult r3 = run_pipeline(*sh3, serial);

  REQUIRE(r1.cfg_hash == r2.cfg_hash);
  std::string m1 = metrics_file_text(r1.cfg_hash, r1.metrics);
  REQUIRE(m1 == metrics_file_text(r2.cfg_hash, r2.metrics));
  REQUIRE(m1 == metrics_file_text(r3.cfg_hash, r3.metrics));
  REQUIRE(r1.table == r2.table);
  REQUIRE(r1.table == r3.table);
  REQUIRE(r1.seeds.size() == 2);
  REQUIRE_FALSE(r1.table.empty());

  // Cross-seed means agree with direct recomputation from the rows.
  double mean = 0.0;
  for (const auto& s : r1.seeds) mean += task_run(s, TaskKind::kPair).base_zsxlt.s_dev.aggregate;
  mean /= static_cast<double>(r1.seeds.size());
  REQUIRE(mean_row_aggregate(r1, TaskKind::kPair, "base_zsxlt", "s-dev") == Catch::Approx(mean));
}

TEST_CASE("adaptation ablation lands on the exact budget fractions") {
  RunConfig cfg = tiny_run_config();
  cfg.eval.seeds = {1};
  auto sh = build_shared_artifacts(cfg);
  auto points = run_adaptation_ablation(*sh, 1, TaskKind::kPair);
  REQUIRE(points.size() == 4);
  REQUIRE(points[0].step == 0);
  REQUIRE(points[1].step == 5);
  REQUIRE(points[2].step == 10);
  REQUIRE(points[3].step == 20);
  for (const auto& p : points) {
    REQUIRE(p.accuracy >= 0.0);
    REQUIRE(p.accuracy <= 1.0);
  }
}

TEST_CASE("decoder ablation reuses the translator and skips translate rows") {
  RunConfig cfg = tiny_run_config();
  cfg.eval.seeds = {1};
  auto primary = build_shared_artifacts(cfg);

  RunConfig dec = decoder_ablation_config(cfg);
  REQUIRE(dec.lm.attention_mode == "causal");
  auto reused = build_shared_artifacts(dec, null_log(), primary.get());
  REQUIRE(reused->mt_log.step_losses.empty());  // copied, not retrained
  auto a = named_mt_params(primary->mt);
  auto b = named_mt_params(reused->mt);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i].tensor->values == b[i].tensor->values);
  REQUIRE(reused->lm.config.attention_mode == AttentionMode::kCausal);

  DecoderAblationResult res = run_decoder_ablation(*primary);
  REQUIRE(res.fused_mean >= 0.0);
  REQUIRE(res.fused_mean <= 1.0);
  REQUIRE(res.base_mean >= 0.0);
  REQUIRE(res.base_mean <= 1.0);
  const TaskRun& t = task_run(res.pipeline.seeds.front(), TaskKind::kPair);
  REQUIRE(t.ttest_learned.name.empty());
  REQUIRE(t.base_zsxlt.name == "base_zsxlt");
}

TEST_CASE("gradient self-check battery passes clean and catches corruption") {
  auto clean = run_gradient_selfcheck(false);
  REQUIRE(clean.size() == 8);
  for (const auto& e : clean) {
    INFO(e.name << " worst " << e.result.worst_coord);
    REQUIRE(e.result.coords_checked > 0);
    REQUIRE(e.result.max_rel_err <= 1e-5);
  }

  auto corrupted = run_gradient_selfcheck(true);
  REQUIRE(selfcheck_max_error(corrupted) > 1e-3);  // the damaged coordinate must surface
}
