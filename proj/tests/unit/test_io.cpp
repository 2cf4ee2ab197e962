// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "mtfuse/checkpoint.hpp"
#include "mtfuse/config.hpp"
#include "mtfuse/metrics.hpp"
#include "mtfuse/transformer.hpp"

using namespace mtfuse;

TEST_CASE("checkpoint bytes round-trip exactly", "[io]") {
  CheckpointFile ck;
  ck.config_hash = 0xDEADBEEFCAFEull;
  TensorRecord a;
  a.name = "alpha";
  a.shape = {2, 3};
  a.data = {1.0f, -0.0f, 3.25f, -7.5f, 1e-39f, 65504.0f};
  TensorRecord b;
  b.name = "beta.bias";
  b.shape = {4};
  b.data = {0.1f, 0.2f, 0.3f, 0.4f};
  ck.tensors = {a, b};

  std::string bytes = serialize_checkpoint(ck);
  CheckpointFile back = parse_checkpoint(bytes);
  REQUIRE(back.version == 1);
  REQUIRE(back.config_hash == ck.config_hash);
  REQUIRE(back.tensors.size() == 2);
  REQUIRE(back.tensors[0].name == "alpha");
  REQUIRE(back.tensors[0].shape == Shape{2, 3});
  REQUIRE(back.tensors[0].data == a.data);
  REQUIRE(back.tensors[1].data == b.data);
  REQUIRE(serialize_checkpoint(back) == bytes);  // save -> load -> save identical

  REQUIRE_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), std::runtime_error);
  std::string corrupt = bytes;
  corrupt[0] = 'X';
  REQUIRE_THROWS_AS(parse_checkpoint(corrupt), std::runtime_error);

  TensorRecord bad;
  bad.name = "bad";
  bad.shape = {3};
  bad.data = {1.0f};  // three slots declared, one value supplied
  CheckpointFile broken;
  broken.tensors = {bad};
  REQUIRE_THROWS_AS(serialize_checkpoint(broken), std::invalid_argument);
}

TEST_CASE("checkpoint files are written atomically and hash-guarded", "[io]") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "mtfuse_ck_test";
  fs::create_directories(dir);
  std::string path = (dir / "model.ckpt").string();

  CheckpointFile ck;
  ck.config_hash = 41;
  TensorRecord t;
  t.name = "w";
  t.shape = {2};
  t.data = {1.5f, 2.5f};
  ck.tensors = {t};
  save_checkpoint(path, ck);
  REQUIRE_FALSE(fs::exists(path + ".tmp"));

  CheckpointFile same = load_checkpoint(path, 41);
  REQUIRE(same.tensors[0].data == t.data);
  REQUIRE_THROWS_AS(load_checkpoint(path, 99), std::runtime_error);
  REQUIRE_NOTHROW(load_checkpoint(path, 99, /*force=*/true));
  fs::remove_all(dir);
}

TEST_CASE("model parameters round-trip through tensor records", "[io]") {
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.vocab_size = 40;
  mc.max_len = 12;
  mc.seed = 5;
  auto m = init_model<float>(mc);
  auto params = named_params(m);
  auto records = records_from_params(params);

  auto m2 = init_model<float>(ModelConfig{mc.d_model, mc.n_layers, mc.n_heads, mc.d_ff, mc.vocab_size, mc.max_len,
                                          mc.attention_mode, mc.default_pooling, 999});
  auto params2 = named_params(m2);
  REQUIRE(m2.token_embedding.values != m.token_embedding.values);
  apply_records(params2, records);
  REQUIRE(m2.token_embedding.values == m.token_embedding.values);
  REQUIRE(m2.blocks[0].wq.weight.values == m.blocks[0].wq.weight.values);

  auto shuffled = records;
  std::swap(shuffled[0], shuffled[1]);
  REQUIRE_THROWS_AS(apply_records(params2, shuffled), std::invalid_argument);
  records.pop_back();
  REQUIRE_THROWS_AS(apply_records(params2, records), std::invalid_argument);
}

TEST_CASE("default config carries the documented training constants", "[io]") {
  RunConfig c;
  c.validate();
  REQUIRE(c.fusion.rank == 16);
  REQUIRE(c.fusion.alpha == 32.0);
  REQUIRE(c.fusion.dropout == 0.05);
  REQUIRE(c.stages.stage1.weight_decay == 0.01);
  REQUIRE(c.stages.stage1.warmup_fraction == 0.10);
  REQUIRE(c.stages.stage1.peak_lr == 2e-4);
  REQUIRE(c.stages.stage1.total_steps == 1500);
  REQUIRE(c.stages.stage1.batch_size == 16);
  REQUIRE(c.stages.finetune.peak_lr == 1e-4);
  REQUIRE(c.stages.finetune_epochs_pair == 3);
  REQUIRE(c.stages.finetune_epochs_single == 20);
  REQUIRE(c.stages.finetune_epochs_multiple_choice == 5);
  REQUIRE(c.stages.stage1.validate_every_fraction == 0.10);
  REQUIRE(c.data.n_languages == 4);
  REQUIRE(c.data.flip_threshold == 2);  // two of four languages flip word order
  REQUIRE(c.mt.d_model == 32);
  REQUIRE(c.lm.d_model == 64);

  RunConfig paper = paper_scale_config();
  REQUIRE(paper.stages.stage1.total_steps == 10000);
  REQUIRE(paper.stages.stage1.batch_size == 256);
}

TEST_CASE("config resolution fills defaults and rejects unknown keys by name", "[io]") {
  RunConfig from_empty = resolve_config(Json::object());
  REQUIRE(run_config_to_json(from_empty) == run_config_to_json(RunConfig{}));

  Json patch = {{"stages", {{"stage1", {{"total_steps", 123}}}}}, {"lm", {{"pooling", "eos"}}}};
  RunConfig patched = resolve_config(patch);
  REQUIRE(patched.stages.stage1.total_steps == 123);
  REQUIRE(patched.stages.stage1.batch_size == 16);  // untouched default
  REQUIRE(patched.lm.pooling == "eos");

  Json bad = {{"stages", {{"stage1", {{"lr", 0.1}}}}}};
  try {
    resolve_config(bad);
    FAIL("expected unknown-key rejection");
  } catch (const std::invalid_argument& e) {
    REQUIRE(std::string(e.what()).find("stages.stage1.lr") != std::string::npos);
  }
  REQUIRE_THROWS_AS(resolve_config(Json{{"nonsense", 1}}), std::invalid_argument);

  REQUIRE_THROWS_AS(resolve_config(Json{{"eval", {{"selection", "best"}}}}), std::invalid_argument);
  REQUIRE_THROWS_AS(resolve_config(Json{{"fusion", {{"encoder_layer_index", 9}}}}), std::invalid_argument);
  REQUIRE_THROWS_AS(resolve_config(Json{{"lm", {{"attention_mode", "both"}}}}), std::invalid_argument);
}

TEST_CASE("config hashes are stable and sensitive", "[io]") {
  RunConfig a, b;
  REQUIRE(config_hash(a) == config_hash(b));
  b.stages.stage1.total_steps = 1999;
  REQUIRE(config_hash(a) != config_hash(b));
  REQUIRE(fnv1a64("") == 14695981039346656037ull);  // FNV-1a offset basis
}

TEST_CASE("derived component configs mirror the run config", "[io]") {
  RunConfig c;
  SynthConfig s = synth_config(c);
  REQUIRE(s.seed == c.data.seed);
  REQUIRE(s.n_languages == 4);
  REQUIRE(s.vocab_size == 128);

  MTConfig m = mt_model_config(c, 7);
  REQUIRE(m.d_model == 32);
  REQUIRE(m.n_languages == 4);
  REQUIRE(m.seed == 7u);
  REQUIRE_NOTHROW(m.validate());

  ModelConfig l = lm_model_config(c, 8);
  REQUIRE(l.d_model == 64);
  REQUIRE(l.vocab_size == 128);
  REQUIRE(l.attention_mode == AttentionMode::kBidirectional);
  REQUIRE(l.default_pooling == PoolingMode::kMean);
  REQUIRE_NOTHROW(l.validate());

  REQUIRE(task_spec(c, TaskKind::kPair).num_classes == 3);
  REQUIRE(task_spec(c, TaskKind::kMultipleChoice).num_classes == 4);
  REQUIRE(task_spec(c, TaskKind::kSingle).train_size == 200);
  REQUIRE(finetune_config(c, TaskKind::kPair).epochs == 3);
  REQUIRE(finetune_config(c, TaskKind::kSingle).epochs == 20);
  REQUIRE(finetune_config(c, TaskKind::kMultipleChoice).epochs == 5);
}

TEST_CASE("metric rows serialize as line-delimited records", "[io]") {
  MetricRow r{1200, "dev", 3, "accuracy", 0.8125, "step1200"};
  MetricRow back = metric_row_from_line(metric_row_line(r));
  REQUIRE(back.step == 1200);
  REQUIRE(back.split == "dev");
  REQUIRE(back.language == 3);
  REQUIRE(back.metric == "accuracy");
  REQUIRE(back.value == 0.8125);
  REQUIRE(back.checkpoint_id == "step1200");

  auto rep = make_report({0, 2}, {0.5, 0.75}, "accuracy", "stepX");
  auto rows = rows_from_report(rep, 10, "test");
  REQUIRE(rows.size() == 3);
  REQUIRE(rows[0].language == 0);
  REQUIRE(rows[1].language == 2);
  REQUIRE(rows[2].language == -1);
  REQUIRE(rows[2].value == 0.625);

  std::string text = metrics_file_text(42, rows);
  REQUIRE(text == metrics_file_text(42, rows));  // byte-stable
  REQUIRE(text.find("\"config_hash\":42") != std::string::npos);
  REQUIRE(text.back() == '\n');
}
