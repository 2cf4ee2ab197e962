// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver. Every experiment phase is a subcommand; artifacts are
// exchanged through an output directory as checkpoints (with a config-hash
// guard) and line-delimited metrics files whose header embeds the resolved
// configuration. Exit codes: 0 success, 1 failure (including a gradient check
// that exceeds tolerance), 2 unknown command or config key, 3 non-finite
// training loss.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtfuse/pipeline.hpp"
#include "mtfuse/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace mtfuse;

namespace {

constexpr double kGradTolerance = 1e-5;  // max relative error accepted by gradcheck

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::string preset = "desk";
  int seed = -1;  // < 0: first seed in the config's eval.seeds
  bool force = false;
  bool quiet = false;
};

Json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const std::exception& e) {
    throw std::invalid_argument("config file '" + path + "': " + e.what());
  }
}

RunConfig base_for_preset(const std::string& preset) {
  if (preset == "desk") return RunConfig{};
  if (preset == "paper") return paper_scale_config();
  throw std::invalid_argument("unknown preset '" + preset + "' (want desk|paper)");
}

RunConfig load_config(const CommonOpts& o) {
  Json patch = Json::object();
  if (!o.config_path.empty()) {
    patch = parse_json_file(o.config_path);
    // Surface unknown keys against the user's file before the preset overlay
    // enters the picture.
    detail::check_unknown_keys(patch, run_config_to_json(RunConfig{}), "");
  }
  Json merged = run_config_to_json(base_for_preset(o.preset));
  merged.merge_patch(patch);
  return resolve_config(merged);
}

PipelineLog make_log(const CommonOpts& o) {
  if (o.quiet) return null_log();
  return [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); };
}

std::string out_path(const CommonOpts& o, const std::string& name) {
  return (fs::path(o.out_dir) / name).string();
}

void ensure_out_dir(const CommonOpts& o, const RunConfig& cfg) {
  fs::create_directories(o.out_dir);
  Json doc{{"config", run_config_to_json(cfg)}, {"config_hash", config_hash(cfg)}};
  write_file_atomic(out_path(o, "config.resolved.json"), doc.dump(2) + "\n");
}

void write_rows(const CommonOpts& o, const RunConfig& cfg, const std::string& name,
                const std::vector<MetricRow>& rows) {
  write_metrics_file(out_path(o, name), config_hash(cfg), run_config_to_json(cfg), rows);
}

void save_params(const std::string& path, const std::vector<NamedParam<float>>& params, std::uint64_t hash) {
  CheckpointFile ck;
  ck.config_hash = hash;
  ck.tensors = records_from_params(params);
  save_checkpoint(path, ck);
}

void load_params(const std::string& path, const std::vector<NamedParam<float>>& params, std::uint64_t hash,
                 bool force) {
  apply_records(params, load_checkpoint(path, hash, force).tensors);
}

unsigned resolve_seed(const RunConfig& cfg, int requested) {
  return requested < 0 ? cfg.eval.seeds.front() : static_cast<unsigned>(requested);
}

std::string seed_tag(unsigned seed) { return "seed" + std::to_string(seed); }

// Builds the shared-artifact container from previously written checkpoints
// instead of pretraining. The translator is frozen exactly as the in-process
// pipeline does after its own pretraining.
std::unique_ptr<SharedArtifacts> shared_from_checkpoints(const RunConfig& cfg, const CommonOpts& o, bool need_mt,
                                                         bool need_lm) {
  auto sh = std::make_unique<SharedArtifacts>(cfg);
  if (need_mt) {
    auto mt_params = named_mt_params(sh->mt);
    load_params(out_path(o, "mt.ckpt"), mt_params, sh->cfg_hash, o.force);
    set_mt_requires_grad(sh->mt, false);
    sh->mt_weights = take_snapshot(cfg.mt.pretrain.total_steps, mt_params);
  }
  if (need_lm) {
    auto lm_params = named_params(sh->lm);
    load_params(out_path(o, "lm.ckpt"), lm_params, sh->cfg_hash, o.force);
    sh->lm_weights = take_snapshot(cfg.lm.pretrain.total_steps, lm_params);
  }
  return sh;
}

// Fused skeleton wired the same way as inside the pipeline so checkpointed
// stage-1/stage-2 weights restore by name.
struct FusedBundle {
  TransformerModel<float> backbone;
  FusedModel<float> fused;

  FusedBundle(SharedArtifacts& sh, unsigned run_seed)
      : backbone(materialize_backbone(sh)),
        fused([&] {
          inject_lora(backbone, sh.cfg.fusion.rank, static_cast<float>(sh.cfg.fusion.alpha), sh.cfg.fusion.dropout,
                      stage_adapter_seed(run_seed));
          return build_fused(sh.mt, backbone, sh.cfg.fusion.encoder_layer_index,
                             pooling_from_name(sh.cfg.lm.pooling), bridge_init_seed(run_seed));
        }()) {}
};

// Teacher skeleton (pretrained backbone + task adapters + task head) matching
// the fine-tune phase, for loading teacher checkpoints.
struct TeacherBundle {
  TransformerModel<float> lm;
  TaskHead<float> head;

  TeacherBundle(SharedArtifacts& sh, unsigned run_seed, const TaskSpec& spec)
      : lm(materialize_backbone(sh)), head(init_task_head<float>(sh.cfg.lm.d_model, spec, task_head_seed(run_seed))) {
    inject_lora(lm, sh.cfg.fusion.rank, static_cast<float>(sh.cfg.fusion.alpha), sh.cfg.fusion.dropout,
                ft_adapter_seed(run_seed));
  }
};

void print_report(const EvalReport& rep, const std::string& label) {
  std::printf("%s (checkpoint %s):\n", label.c_str(), rep.checkpoint_id.c_str());
  for (std::size_t i = 0; i < rep.languages.size(); ++i) {
    std::printf("  lang %d  %s %.3f\n", rep.languages[i], rep.metric.c_str(), rep.per_language[i]);
  }
  std::printf("  aggregate  %s %.3f\n", rep.metric.c_str(), rep.aggregate);
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_gen_data(const CommonOpts& o) {
  RunConfig cfg = load_config(o);
  ensure_out_dir(o, cfg);
  fs::create_directories(fs::path(o.out_dir) / "data");
  SynthGen gen(synth_config(cfg));
  const auto langs = all_languages(cfg);
  const std::string header = "# config_hash " + std::to_string(config_hash(cfg)) + "\n";

  auto write_lines = [&](const std::string& name, const std::vector<std::string>& lines) {
    std::string text = header;
    for (const auto& l : lines) text += l + "\n";
    write_file_atomic((fs::path(o.out_dir) / "data" / name).string(), text);
  };

  std::vector<std::string> sent_lines;
  for (const auto& s : gen_sentence_corpus(gen, cfg.lm.pretrain.seed, cfg.data.lm_corpus_size, 0)) {
    sent_lines.push_back(std::to_string(s.language) + "\t" + tokens_to_field(s.tokens));
  }
  write_lines("sentences.tsv", sent_lines);

  std::vector<std::string> pair_lines;
  for (const auto& p :
       gen.gen_parallel_corpus(mix_seed(cfg.mt.pretrain.seed, 0x48E1Du), cfg.data.heldout_pairs, langs)) {
    pair_lines.push_back(pair_to_line(p));
  }
  write_lines("mt_pairs.tsv", pair_lines);

  for (TaskKind kind : {TaskKind::kPair, TaskKind::kSingle, TaskKind::kMultipleChoice}) {
    TaskDataset ds = gen.gen_task_dataset(task_spec(cfg, kind), task_data_seed(kind), langs);
    std::vector<std::string> train, dev, test;
    for (const auto& ex : ds.train) train.push_back(example_to_line(ex));
    for (const auto& [lang, exs] : ds.dev) {
      for (const auto& ex : exs) dev.push_back(example_to_line(ex));
    }
    for (const auto& [lang, exs] : ds.test) {
      for (const auto& ex : exs) test.push_back(example_to_line(ex));
    }
    write_lines(task_key(kind) + ".train.tsv", train);
    write_lines(task_key(kind) + ".dev.tsv", dev);
    write_lines(task_key(kind) + ".test.tsv", test);
    std::printf("%s: %zu train / %zu dev / %zu test lines\n", task_key(kind).c_str(), train.size(), dev.size(),
                test.size());
  }
  std::printf("sentences: %zu  parallel pairs: %zu  (under %s/data)\n", sent_lines.size(), pair_lines.size(),
              o.out_dir.c_str());
  return 0;
}

int cmd_pretrain_mt(const CommonOpts& o) {
  RunConfig cfg = load_config(o);
  ensure_out_dir(o, cfg);
  auto log = make_log(o);
  SharedArtifacts sh(cfg);
  const auto langs = all_languages(cfg);
  log("translator: pretraining (" + std::to_string(cfg.mt.pretrain.total_steps) + " steps)");
  auto result = pretrain_mt(sh.mt, sh.gen, cfg.mt.pretrain, langs);

  auto heldout = sh.gen.gen_parallel_corpus(mix_seed(cfg.mt.pretrain.seed, 0x48E1Du), cfg.data.heldout_pairs, langs);
  double em = mt_exact_match(sh.mt, heldout);

  save_params(out_path(o, "mt.ckpt"), named_mt_params(sh.mt), sh.cfg_hash);
  std::vector<MetricRow> rows;
  detail::append_validation_rows(rows, result, "mt_loss_window", "mt-pretrain");
  rows.push_back({cfg.mt.pretrain.total_steps, "heldout", -1, "mt_exact_match", em, "mt-pretrain"});
  write_rows(o, cfg, "pretrain-mt.metrics.jsonl", rows);
  std::printf("translator held-out exact match: %.3f (%d pairs)\n", em, cfg.data.heldout_pairs);
  return 0;
}

int cmd_pretrain_lm(const CommonOpts& o) {
  RunConfig cfg = load_config(o);
  ensure_out_dir(o, cfg);
  auto log = make_log(o);
  SharedArtifacts sh(cfg);
  log("backbone: pretraining (" + std::to_string(cfg.lm.pretrain.total_steps) + " steps)");
  auto corpus = gen_sentence_corpus(sh.gen, cfg.lm.pretrain.seed, cfg.data.lm_corpus_size, 0);
  auto result = pretrain_lm(sh.lm, corpus, cfg.lm.pretrain);

  auto heldout = gen_sentence_corpus(sh.gen, mix_seed(cfg.lm.pretrain.seed, 0x48E1Du), 256, 0);
  double loss = lm_corpus_loss(sh.lm, heldout);

  save_params(out_path(o, "lm.ckpt"), named_params(sh.lm), sh.cfg_hash);
  std::vector<MetricRow> rows;
  detail::append_validation_rows(rows, result, "lm_loss_window", "lm-pretrain");
  rows.push_back({cfg.lm.pretrain.total_steps, "heldout", -1, "lm_heldout_loss", loss, "lm-pretrain"});
  write_rows(o, cfg, "pretrain-lm.metrics.jsonl", rows);
  std::printf("backbone held-out loss: %.4f\n", loss);
  return 0;
}

int cmd_adapt(const CommonOpts& o) {
  RunConfig cfg = load_config(o);
  ensure_out_dir(o, cfg);
  unsigned seed = resolve_seed(cfg, o.seed);
  auto sh = shared_from_checkpoints(cfg, o, true, true);
  StageOneRun run = run_stage_one(*sh, seed, make_log(o));

  FusedBundle fb(*sh, seed);
  auto theta = fused_trainable_params(fb.fused);
  restore_snapshot(theta, run.theta_final);
  save_params(out_path(o, "stage1-" + seed_tag(seed) + ".ckpt"), theta, sh->cfg_hash);

  std::vector<MetricRow> rows;
  const std::string ckpt = seed_tag(seed) + "/stage1";
  detail::append_validation_rows(rows, run.log, "stage1_loss_window", ckpt);
  rows.push_back({0, "probe", -1, "stage1_probe_mse", run.probe_before, ckpt});
  rows.push_back({cfg.stages.stage1.total_steps, "probe", -1, "stage1_probe_mse", run.probe_after, ckpt});
  write_rows(o, cfg, "stage1-" + seed_tag(seed) + ".metrics.jsonl", rows);
  std::printf("stage-1 probe MSE: %.5f -> %.5f\n", run.probe_before, run.probe_after);
  return 0;
}

int cmd_finetune(const CommonOpts& o, const std::string& task_name) {
  RunConfig cfg = load_config(o);
  ensure_out_dir(o, cfg);
  unsigned seed = resolve_seed(cfg, o.seed);
  TaskKind kind = task_kind_from_name(task_name);
  const TaskSpec spec = task_spec(cfg, kind);
  const auto langs = all_languages(cfg);
  const PoolingMode pooling = pooling_from_name(cfg.lm.pooling);
  auto log = make_log(o);

  auto sh = shared_from_checkpoints(cfg, o, false, true);
  TaskDataset ds = sh->gen.gen_task_dataset(spec, task_data_seed(kind), langs);
  TeacherBundle tb(*sh, seed, spec);
  TrainConfig ft = finetune_config(cfg, kind);
  ft.seed = mix_seed(ft.seed, seed);
  log("fine-tuning teacher (" + std::to_string(ft.epochs) + " epochs)");
  auto result = finetune_head(tb.lm, tb.head, ds, ft, pooling);
  auto params = finetune_params(tb.lm, tb.head);

  std::vector<EvalReport> dev_series;
  for (const auto& ck : result.checkpoints) {
    restore_snapshot(params, ck);
    dev_series.push_back(evaluate_split_lm(tb.lm, tb.head, spec, ds.dev, langs, pooling,
                                           "ft-" + std::to_string(ck.step)));
  }
  std::size_t best = select_s_dev(dev_series);
  restore_snapshot(params, result.checkpoints[best]);
  EvalReport test = evaluate_split_lm(tb.lm, tb.head, spec, ds.test, langs, pooling, dev_series[best].checkpoint_id);
  save_params(out_path(o, "teacher-" + task_key(kind) + "-" + seed_tag(seed) + ".ckpt"), params, sh->cfg_hash);

  std::vector<MetricRow> rows;
  const std::string ckpt = seed_tag(seed) + "/" + task_key(kind) + "/finetune";
  detail::append_validation_rows(rows, result, "dev_accuracy", ckpt, 0, "dev");
  for (std::size_t i = 0; i < dev_series.size(); ++i) {
    detail::append_report_rows(rows, dev_series[i], ckpt, "dev");
  }
  detail::append_report_rows(rows, test, ckpt + "/s-dev", "test");
  write_rows(o, cfg, "finetune-" + task_key(kind) + "-" + seed_tag(seed) + ".metrics.jsonl", rows);
  print_report(test, "teacher zero-shot test");
  return 0;
}

int cmd_distill(const CommonOpts& o, const std::string& task_name) {
  RunConfig cfg = load_config(o);
  ensure_out_dir(o, cfg);
  unsigned seed = resolve_seed(cfg, o.seed);
  TaskKind kind = task_kind_from_name(task_name);
  const TaskSpec spec = task_spec(cfg, kind);
  const auto langs = all_languages(cfg);
  const PoolingMode pooling = pooling_from_name(cfg.lm.pooling);
  auto log = make_log(o);

  auto sh = shared_from_checkpoints(cfg, o, true, true);
  TaskDataset ds = sh->gen.gen_task_dataset(spec, task_data_seed(kind), langs);

  TeacherBundle tb(*sh, seed, spec);
  auto teacher_params = finetune_params(tb.lm, tb.head);
  load_params(out_path(o, "teacher-" + task_key(kind) + "-" + seed_tag(seed) + ".ckpt"), teacher_params,
              sh->cfg_hash, o.force);

  FusedBundle fb(*sh, seed);
  auto theta = fused_trainable_params(fb.fused);
  load_params(out_path(o, "stage1-" + seed_tag(seed) + ".ckpt"), theta, sh->cfg_hash, o.force);

  TrainConfig s2 = cfg.stages.stage2;
  s2.seed = mix_seed(s2.seed, seed);
  log("stage-2 distillation (" + std::to_string(s2.total_steps) + " steps)");
  auto result = stage2_distill(fb.fused, tb.lm, tb.head, ds, s2, pooling);

  std::vector<EvalReport> dev_series;
  for (const auto& ck : result.checkpoints) {
    restore_snapshot(theta, ck);
    dev_series.push_back(evaluate_split_fused(fb.fused, tb.head, spec, ds.dev, langs, pooling,
                                              "s2-" + std::to_string(ck.step)));
  }
  std::size_t best = select_s_dev(dev_series);
  restore_snapshot(theta, result.checkpoints[best]);
  EvalReport test =
      evaluate_split_fused(fb.fused, tb.head, spec, ds.test, langs, pooling, dev_series[best].checkpoint_id);
  save_params(out_path(o, "fused-" + task_key(kind) + "-" + seed_tag(seed) + ".ckpt"), theta, sh->cfg_hash);

  std::vector<MetricRow> rows;
  const std::string ckpt = seed_tag(seed) + "/" + task_key(kind) + "/stage2";
  detail::append_validation_rows(rows, result, "dev_accuracy", ckpt, 0, "dev");
  for (std::size_t i = 0; i < dev_series.size(); ++i) {
    detail::append_report_rows(rows, dev_series[i], ckpt, "dev");
  }
  detail::append_report_rows(rows, test, ckpt + "/s-dev", "test");
  write_rows(o, cfg, "distill-" + task_key(kind) + "-" + seed_tag(seed) + ".metrics.jsonl", rows);
  print_report(test, "fused zero-shot test");
  return 0;
}

int cmd_eval_zsxlt(const CommonOpts& o, const std::string& task_name, const std::string& model) {
  RunConfig cfg = load_config(o);
  ensure_out_dir(o, cfg);
  unsigned seed = resolve_seed(cfg, o.seed);
  TaskKind kind = task_kind_from_name(task_name);
  const TaskSpec spec = task_spec(cfg, kind);
  const auto langs = all_languages(cfg);
  const PoolingMode pooling = pooling_from_name(cfg.lm.pooling);
  if (model != "base" && model != "fused") {
    throw std::invalid_argument("unknown model '" + model + "' (want base|fused)");
  }

  auto sh = shared_from_checkpoints(cfg, o, model == "fused", true);
  TaskDataset ds = sh->gen.gen_task_dataset(spec, task_data_seed(kind), langs);
  TeacherBundle tb(*sh, seed, spec);
  auto teacher_params = finetune_params(tb.lm, tb.head);
  load_params(out_path(o, "teacher-" + task_key(kind) + "-" + seed_tag(seed) + ".ckpt"), teacher_params,
              sh->cfg_hash, o.force);

  EvalReport test;
  if (model == "base") {
    test = evaluate_split_lm(tb.lm, tb.head, spec, ds.test, langs, pooling, "teacher");
  } else {
    FusedBundle fb(*sh, seed);
    auto theta = fused_trainable_params(fb.fused);
    load_params(out_path(o, "fused-" + task_key(kind) + "-" + seed_tag(seed) + ".ckpt"), theta, sh->cfg_hash,
                o.force);
    test = evaluate_split_fused(fb.fused, tb.head, spec, ds.test, langs, pooling, "fused");
  }

  std::vector<MetricRow> rows;
  detail::append_report_rows(rows, test, seed_tag(seed) + "/" + task_key(kind) + "/" + model, "test");
  write_rows(o, cfg, "eval-zsxlt-" + model + "-" + task_key(kind) + "-" + seed_tag(seed) + ".metrics.jsonl", rows);
  print_report(test, model + " zero-shot transfer");
  return 0;
}

int cmd_eval_ttest(const CommonOpts& o, const std::string& task_name, const std::string& mode_name) {
  RunConfig cfg = load_config(o);
  ensure_out_dir(o, cfg);
  unsigned seed = resolve_seed(cfg, o.seed);
  TaskKind kind = task_kind_from_name(task_name);
  const TaskSpec spec = task_spec(cfg, kind);
  const auto langs = all_languages(cfg);
  const PoolingMode pooling = pooling_from_name(cfg.lm.pooling);
  TranslateMode mode;
  if (mode_name == "learned") {
    mode = TranslateMode::kLearned;
  } else if (mode_name == "oracle") {
    mode = TranslateMode::kOracle;
  } else {
    throw std::invalid_argument("unknown translate mode '" + mode_name + "' (want learned|oracle)");
  }

  auto sh = shared_from_checkpoints(cfg, o, mode == TranslateMode::kLearned, true);
  TaskDataset ds = sh->gen.gen_task_dataset(spec, task_data_seed(kind), langs);
  TeacherBundle tb(*sh, seed, spec);
  auto teacher_params = finetune_params(tb.lm, tb.head);
  load_params(out_path(o, "teacher-" + task_key(kind) + "-" + seed_tag(seed) + ".ckpt"), teacher_params,
              sh->cfg_hash, o.force);

  MTModel<float>* mt = mode == TranslateMode::kLearned ? &sh->mt : nullptr;
  EvalReport test = translate_test_eval(tb.lm, tb.head, spec, ds.test, langs, pooling, sh->gen, mt, mode, mode_name);

  std::vector<MetricRow> rows;
  detail::append_report_rows(rows, test, seed_tag(seed) + "/" + task_key(kind) + "/ttest-" + mode_name, "test");
  write_rows(o, cfg, "eval-ttest-" + mode_name + "-" + task_key(kind) + "-" + seed_tag(seed) + ".metrics.jsonl",
             rows);
  print_report(test, "translate-test (" + mode_name + ")");
  return 0;
}

int cmd_retrieval(const CommonOpts& o) {
  RunConfig cfg = load_config(o);
  ensure_out_dir(o, cfg);
  const auto langs = all_languages(cfg);
  auto sh = shared_from_checkpoints(cfg, o, true, false);

  auto pairs = gen_retrieval_pairs(sh->gen, 7u, cfg.data.heldout_pairs, langs);
  auto curve = retrieval_curve(sh->mt, pairs);

  std::vector<MetricRow> rows;
  for (std::size_t l = 0; l < curve.size(); ++l) {
    rows.push_back({0, "heldout", -1, "retrieval_layer_" + std::to_string(l), curve[l], "mt-pretrain"});
  }
  write_rows(o, cfg, "retrieval.metrics.jsonl", rows);
  double baseline = 1.0 / static_cast<double>(pairs.size());
  std::printf("parallel-pair retrieval over %zu pairs (random baseline %.4f):\n", pairs.size(), baseline);
  for (std::size_t l = 0; l < curve.size(); ++l) std::printf("  layer %zu  %.3f\n", l, curve[l]);
  return 0;
}

int cmd_gradcheck(bool corrupt) {
  auto entries = run_gradient_selfcheck(corrupt);
  for (const auto& e : entries) {
    std::printf("%-28s max rel err %.3e  (%d coords, worst %s)\n", e.name.c_str(), e.result.max_rel_err,
                e.result.coords_checked, e.result.worst_coord.c_str());
  }
  double worst = selfcheck_max_error(entries);
  bool ok = worst <= kGradTolerance;
  std::printf("gradcheck: worst %.3e, tolerance %.1e -> %s\n", worst, kGradTolerance, ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

int cmd_pipeline(const CommonOpts& o, const std::vector<std::string>& task_names, bool serial, bool with_ablations) {
  RunConfig cfg = load_config(o);
  ensure_out_dir(o, cfg);
  auto log = make_log(o);

  PipelineOptions popts;
  popts.parallel_seeds = !serial;
  if (!task_names.empty()) {
    popts.tasks.clear();
    for (const auto& name : task_names) popts.tasks.push_back(task_kind_from_name(name));
  }

  auto sh = build_shared_artifacts(cfg, log);
  save_params(out_path(o, "mt.ckpt"), named_mt_params(sh->mt), sh->cfg_hash);
  save_params(out_path(o, "lm.ckpt"), named_params(sh->lm), sh->cfg_hash);

  PipelineResult res = run_pipeline(*sh, popts, log);
  std::vector<MetricRow> rows = res.metrics;

  if (with_ablations) {
    unsigned first = cfg.eval.seeds.front();
    log("ablation: adaptation steps");
    for (const auto& p : run_adaptation_ablation(*sh, first, TaskKind::kMultipleChoice, log)) {
      rows.push_back({p.step, "ablation", -1, "adaptation_fused_accuracy", p.accuracy,
                      seed_tag(first) + "/s1-" + std::to_string(p.step)});
    }
    log("ablation: decoder backbone");
    DecoderAblationResult dec = run_decoder_ablation(*sh, log);
    rows.push_back({0, "ablation", -1, "decoder_fused_mean", dec.fused_mean, "decoder"});
    rows.push_back({0, "ablation", -1, "decoder_base_mean", dec.base_mean, "decoder"});
  }

  write_rows(o, cfg, "pipeline.metrics.jsonl", rows);
  write_file_atomic(out_path(o, "table.txt"), res.table);

  std::printf("translator held-out exact match: %.3f\n", res.mt_heldout_em);
  std::printf("backbone held-out loss: %.4f\n", res.lm_heldout_loss);
  std::printf("retrieval by layer:");
  for (double v : res.retrieval) std::printf(" %.3f", v);
  std::printf("\n\n%s", res.table.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage distillation experiments: fusing a translation encoder into an LM backbone"};
  app.require_subcommand(1);

  CommonOpts o;
  std::string task = "pair";
  std::string model = "base";
  std::string mode = "learned";
  std::vector<std::string> pipeline_tasks;
  bool corrupt = false, serial = false, with_ablations = false;

  auto add_common = [&](CLI::App* sub, bool with_seed = true) {
    sub->add_option("--config", o.config_path, "JSON config file; defaults apply to unset keys");
    sub->add_option("--out", o.out_dir, "artifact directory (default: out)");
    sub->add_option("--preset", o.preset, "base config preset: desk|paper (default: desk)");
    sub->add_flag("--force", o.force, "load checkpoints even if their config hash differs");
    sub->add_flag("--quiet", o.quiet, "suppress progress logs on stderr");
    if (with_seed) sub->add_option("--seed", o.seed, "run seed (default: first of eval.seeds)");
  };

  auto* gen = app.add_subcommand("gen-data", "write synthetic corpora and task datasets");
  add_common(gen, false);
  auto* pmt = app.add_subcommand("pretrain-mt", "pretrain the translator; writes mt.ckpt");
  add_common(pmt, false);
  auto* plm = app.add_subcommand("pretrain-lm", "pretrain the LM backbone; writes lm.ckpt");
  add_common(plm, false);
  auto* ada = app.add_subcommand("adapt", "stage-1 alignment of bridge+adapters; writes stage1-seedN.ckpt");
  add_common(ada);
  auto* fin = app.add_subcommand("finetune", "fine-tune the task teacher; writes teacher-TASK-seedN.ckpt");
  add_common(fin);
  fin->add_option("--task", task, "task: pair|single|mc (default: pair)");
  auto* dis = app.add_subcommand("distill", "stage-2 distillation into the fused model; writes fused-TASK-seedN.ckpt");
  add_common(dis);
  dis->add_option("--task", task, "task: pair|single|mc (default: pair)");
  auto* ezs = app.add_subcommand("eval-zsxlt", "zero-shot cross-lingual test evaluation");
  add_common(ezs);
  ezs->add_option("--task", task, "task: pair|single|mc (default: pair)");
  ezs->add_option("--model", model, "model to score: base|fused (default: base)");
  auto* ett = app.add_subcommand("eval-ttest", "translate-test evaluation (translate to source, score teacher)");
  add_common(ett);
  ett->add_option("--task", task, "task: pair|single|mc (default: pair)");
  ett->add_option("--mode", mode, "translation source: learned|oracle (default: learned)");
  auto* ret = app.add_subcommand("retrieval", "parallel-pair retrieval accuracy per encoder layer");
  add_common(ret, false);
  auto* grd = app.add_subcommand("gradcheck", "finite-difference check of every primitive and both stage losses");
  grd->add_flag("--corrupt", corrupt, "damage one analytic gradient; the check must then fail");
  auto* pip = app.add_subcommand("pipeline", "full experiment: pretrain, align, fine-tune, distill, compare");
  add_common(pip, false);
  pip->add_option("--tasks", pipeline_tasks, "subset of pair,single,mc (default: all)")->delimiter(',');
  pip->add_flag("--serial", serial, "run seeds sequentially instead of on threads");
  pip->add_flag("--with-ablations", with_ablations, "also run adaptation-steps and decoder-backbone ablations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help / --version
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    // CLI11's own message may only say a subcommand is required; name the
    // unrecognized command explicitly.
    if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
      std::fprintf(stderr, "unknown command '%s'\n", argv[1]);
    }
    return 2;
  }

  try {
    if (app.got_subcommand(gen)) return cmd_gen_data(o);
    if (app.got_subcommand(pmt)) return cmd_pretrain_mt(o);
    if (app.got_subcommand(plm)) return cmd_pretrain_lm(o);
    if (app.got_subcommand(ada)) return cmd_adapt(o);
    if (app.got_subcommand(fin)) return cmd_finetune(o, task);
    if (app.got_subcommand(dis)) return cmd_distill(o, task);
    if (app.got_subcommand(ezs)) return cmd_eval_zsxlt(o, task, model);
    if (app.got_subcommand(ett)) return cmd_eval_ttest(o, task, mode);
    if (app.got_subcommand(ret)) return cmd_retrieval(o);
    if (app.got_subcommand(grd)) return cmd_gradcheck(corrupt);
    if (app.got_subcommand(pip)) return cmd_pipeline(o, pipeline_tasks, serial, with_ablations);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;  // unknown key / invalid name or value
  } catch (const std::runtime_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return std::string(e.what()).find("non-finite loss") != std::string::npos ? 3 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;  // no subcommand dispatched

}
