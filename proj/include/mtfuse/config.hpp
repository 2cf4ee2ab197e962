// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document with sections data / mt / lm / fusion
// / stages / eval. Unknown keys are rejected by name, defaults are applied to
// everything absent, and the resolved document's FNV-1a hash stamps every
// checkpoint and metrics file so artifacts from different configs can't be
// mixed silently.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtfuse/mt_model.hpp"
#include "mtfuse/optim.hpp"
#include "mtfuse/synth.hpp"
#include "mtfuse/transformer.hpp"

namespace mtfuse {

using Json = nlohmann::json;

inline AttentionMode attention_mode_from_name(const std::string& name) {
  if (name == "causal") return AttentionMode::kCausal;
  if (name == "bidirectional") return AttentionMode::kBidirectional;
  throw std::invalid_argument("unknown attention mode '" + name + "' (want causal|bidirectional)");
}

inline const char* attention_mode_name(AttentionMode m) {
  return m == AttentionMode::kCausal ? "causal" : "bidirectional";
}

inline PoolingMode pooling_from_name(const std::string& name) {
  if (name == "bos") return PoolingMode::kBos;
  if (name == "mean") return PoolingMode::kMean;
  if (name == "eos") return PoolingMode::kEos;
  throw std::invalid_argument("unknown pooling mode '" + name + "' (want bos|mean|eos)");
}

struct TaskSizes {
  int train = 256;
  int dev = 96;
  int test = 192;
};

struct RunConfig {
  struct Data {
    unsigned seed = 404;
    int n_languages = 4;
    int flip_threshold = 2;  // languages at or past this id flip word order
    int lm_corpus_size = 4096;
    int stage1_corpus_size = 4096;
    int heldout_pairs = 256;
    TaskSizes pair{384, 48, 96};
    TaskSizes single{200, 48, 96};
    TaskSizes multiple_choice{256, 48, 96};
  } data;

  struct MtSection {
    int d_model = 32;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 128;
    int max_len = 48;
    TrainConfig pretrain;
  } mt;

  struct LmSection {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 256;
    int max_len = 48;
    std::string attention_mode = "bidirectional";
    std::string pooling = "mean";
    TrainConfig pretrain;
  } lm;

  struct FusionSection {
    int rank = 16;
    double alpha = 32.0;
    double dropout = 0.05;
    int encoder_layer_index = 2;
  } fusion;

  struct Stages {
    TrainConfig stage1;
    TrainConfig finetune;
    int finetune_epochs_pair = 3;
    int finetune_epochs_single = 20;
    int finetune_epochs_multiple_choice = 5;
    TrainConfig stage2;
  } stages;

  struct Eval {
    std::string selection = "s-dev";
    std::vector<unsigned> seeds = {1, 2, 3};
  } eval;

  RunConfig() {
    mt.pretrain.peak_lr = 3e-3;
    mt.pretrain.total_steps = 7000;
    mt.pretrain.batch_size = 32;
    mt.pretrain.seed = 11;
    lm.pretrain.peak_lr = 1e-3;
    lm.pretrain.total_steps = 1200;
    lm.pretrain.batch_size = 32;
    lm.pretrain.seed = 12;
    stages.stage1.peak_lr = 2e-4;
    stages.stage1.total_steps = 1500;
    stages.stage1.batch_size = 16;
    stages.stage1.seed = 13;
    stages.finetune.peak_lr = 1e-4;
    stages.finetune.batch_size = 16;
    stages.finetune.seed = 14;
    stages.stage2.peak_lr = 2e-4;
    stages.stage2.total_steps = 600;
    stages.stage2.batch_size = 16;
    stages.stage2.seed = 15;
  }

  void validate() const {
    mt.pretrain.validate();
    lm.pretrain.validate();
    stages.stage1.validate();
    stages.finetune.validate();
    stages.stage2.validate();
    if (data.n_languages < 2) throw std::invalid_argument("config: data.n_languages must be >= 2");
    if (fusion.encoder_layer_index < 0 || fusion.encoder_layer_index > mt.n_layers) {
      throw std::invalid_argument("config: fusion.encoder_layer_index out of range [0, " +
                                  std::to_string(mt.n_layers) + "]");
    }
    if (eval.selection != "s-dev" && eval.selection != "t-dev") {
      throw std::invalid_argument("config: eval.selection must be s-dev or t-dev, got '" + eval.selection + "'");
    }
    if (eval.seeds.empty()) throw std::invalid_argument("config: eval.seeds must not be empty");
    attention_mode_from_name(lm.attention_mode);
    pooling_from_name(lm.pooling);
    if (stages.finetune_epochs_pair < 1 || stages.finetune_epochs_single < 1 ||
        stages.finetune_epochs_multiple_choice < 1) {
      throw std::invalid_argument("config: fine-tuning epoch counts must be >= 1");
    }
  }
};

// ---------------------------------------------------------------------------
// JSON (de)serialization

inline Json train_config_to_json(const TrainConfig& c) {
  return Json{{"peak_lr", c.peak_lr},
              {"total_steps", c.total_steps},
              {"warmup_fraction", c.warmup_fraction},
              {"batch_size", c.batch_size},
              {"weight_decay", c.weight_decay},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps", c.eps},
              {"seed", c.seed},
              {"validate_every_fraction", c.validate_every_fraction},
              {"epochs", c.epochs}};
}

inline TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  c.peak_lr = j.at("peak_lr").get<double>();
  c.total_steps = j.at("total_steps").get<int>();
  c.warmup_fraction = j.at("warmup_fraction").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.seed = j.at("seed").get<unsigned>();
  c.validate_every_fraction = j.at("validate_every_fraction").get<double>();
  c.epochs = j.at("epochs").get<int>();
  return c;
}

inline Json task_sizes_to_json(const TaskSizes& s) {
  return Json{{"train", s.train}, {"dev", s.dev}, {"test", s.test}};
}

inline TaskSizes task_sizes_from_json(const Json& j) {
  return TaskSizes{j.at("train").get<int>(), j.at("dev").get<int>(), j.at("test").get<int>()};
}

inline Json run_config_to_json(const RunConfig& c) {
  Json j;
  j["data"] = Json{{"seed", c.data.seed},
                   {"n_languages", c.data.n_languages},
                   {"flip_threshold", c.data.flip_threshold},
                   {"lm_corpus_size", c.data.lm_corpus_size},
                   {"stage1_corpus_size", c.data.stage1_corpus_size},
                   {"heldout_pairs", c.data.heldout_pairs},
                   {"pair", task_sizes_to_json(c.data.pair)},
                   {"single", task_sizes_to_json(c.data.single)},
                   {"multiple_choice", task_sizes_to_json(c.data.multiple_choice)}};
  j["mt"] = Json{{"d_model", c.mt.d_model},         {"n_layers", c.mt.n_layers}, {"n_heads", c.mt.n_heads},
                 {"d_ff", c.mt.d_ff},               {"max_len", c.mt.max_len},   {"pretrain", train_config_to_json(c.mt.pretrain)}};
  j["lm"] = Json{{"d_model", c.lm.d_model},
                 {"n_layers", c.lm.n_layers},
                 {"n_heads", c.lm.n_heads},
                 {"d_ff", c.lm.d_ff},
                 {"max_len", c.lm.max_len},
                 {"attention_mode", c.lm.attention_mode},
                 {"pooling", c.lm.pooling},
                 {"pretrain", train_config_to_json(c.lm.pretrain)}};
  j["fusion"] = Json{{"rank", c.fusion.rank},
                     {"alpha", c.fusion.alpha},
                     {"dropout", c.fusion.dropout},
                     {"encoder_layer_index", c.fusion.encoder_layer_index}};
  j["stages"] = Json{{"stage1", train_config_to_json(c.stages.stage1)},
                     {"finetune", train_config_to_json(c.stages.finetune)},
                     {"finetune_epochs_pair", c.stages.finetune_epochs_pair},
                     {"finetune_epochs_single", c.stages.finetune_epochs_single},
                     {"finetune_epochs_multiple_choice", c.stages.finetune_epochs_multiple_choice},
                     {"stage2", train_config_to_json(c.stages.stage2)}};
  j["eval"] = Json{{"selection", c.eval.selection}, {"seeds", c.eval.seeds}};
  return j;
}

inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  const Json& d = j.at("data");
  c.data.seed = d.at("seed").get<unsigned>();
  c.data.n_languages = d.at("n_languages").get<int>();
  c.data.flip_threshold = d.at("flip_threshold").get<int>();
  c.data.lm_corpus_size = d.at("lm_corpus_size").get<int>();
  c.data.stage1_corpus_size = d.at("stage1_corpus_size").get<int>();
  c.data.heldout_pairs = d.at("heldout_pairs").get<int>();
  c.data.pair = task_sizes_from_json(d.at("pair"));
  c.data.single = task_sizes_from_json(d.at("single"));
  c.data.multiple_choice = task_sizes_from_json(d.at("multiple_choice"));
  const Json& m = j.at("mt");
  c.mt.d_model = m.at("d_model").get<int>();
  c.mt.n_layers = m.at("n_layers").get<int>();
  c.mt.n_heads = m.at("n_heads").get<int>();
  c.mt.d_ff = m.at("d_ff").get<int>();
  c.mt.max_len = m.at("max_len").get<int>();
  c.mt.pretrain = train_config_from_json(m.at("pretrain"));
  const Json& l = j.at("lm");
  c.lm.d_model = l.at("d_model").get<int>();
  c.lm.n_layers = l.at("n_layers").get<int>();
  c.lm.n_heads = l.at("n_heads").get<int>();
  c.lm.d_ff = l.at("d_ff").get<int>();
  c.lm.max_len = l.at("max_len").get<int>();
  c.lm.attention_mode = l.at("attention_mode").get<std::string>();
  c.lm.pooling = l.at("pooling").get<std::string>();
  c.lm.pretrain = train_config_from_json(l.at("pretrain"));
  const Json& f = j.at("fusion");
  c.fusion.rank = f.at("rank").get<int>();
  c.fusion.alpha = f.at("alpha").get<double>();
  c.fusion.dropout = f.at("dropout").get<double>();
  c.fusion.encoder_layer_index = f.at("encoder_layer_index").get<int>();
  const Json& s = j.at("stages");
  c.stages.stage1 = train_config_from_json(s.at("stage1"));
  c.stages.finetune = train_config_from_json(s.at("finetune"));
  c.stages.finetune_epochs_pair = s.at("finetune_epochs_pair").get<int>();
  c.stages.finetune_epochs_single = s.at("finetune_epochs_single").get<int>();
  c.stages.finetune_epochs_multiple_choice = s.at("finetune_epochs_multiple_choice").get<int>();
  c.stages.stage2 = train_config_from_json(s.at("stage2"));
  const Json& e = j.at("eval");
  c.eval.selection = e.at("selection").get<std::string>();
  c.eval.seeds = e.at("seeds").get<std::vector<unsigned>>();
  return c;
}

// ---------------------------------------------------------------------------
// Resolution: reject unknown keys (by full path), fill defaults, hash.

namespace detail {

inline void check_unknown_keys(const Json& user, const Json& defaults, const std::string& prefix) {
  if (!user.is_object()) return;
  for (const auto& [key, value] : user.items()) {
    std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.is_object() || !defaults.contains(key)) {
      throw std::invalid_argument("unknown config key: " + path);
    }
    if (value.is_object()) check_unknown_keys(value, defaults.at(key), path);
  }
}

}  // namespace detail

// Apply a (possibly partial) user document over the defaults. Unknown keys
// anywhere in the tree are an error naming the offending key.
inline RunConfig resolve_config(const Json& user) {
  Json defaults = run_config_to_json(RunConfig{});
  detail::check_unknown_keys(user, defaults, "");
  Json merged = defaults;
  merged.merge_patch(user);
  RunConfig cfg = run_config_from_json(merged);
  cfg.validate();
  return cfg;
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Hash of the resolved document (nlohmann::json orders keys, so the dump is
// canonical for a given config).
inline std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(run_config_to_json(cfg).dump()); }

// The documented large-scale preset: the same pipeline with the bigger
// alignment budget (10K steps at batch 256). Not runnable on a desk budget.
inline RunConfig paper_scale_config() {
  RunConfig c;
  c.stages.stage1.total_steps = 10000;
  c.stages.stage1.batch_size = 256;
  c.stages.stage2.total_steps = 10000;
  c.stages.stage2.batch_size = 256;
  return c;
}

// ---------------------------------------------------------------------------
// Derived component configs

inline SynthConfig synth_config(const RunConfig& c) {
  SynthConfig s;
  s.seed = c.data.seed;
  s.n_languages = c.data.n_languages;
  s.flip_threshold = c.data.flip_threshold;
  return s;
}

inline MTConfig mt_model_config(const RunConfig& c, unsigned seed) {
  MTConfig m;
  m.d_model = c.mt.d_model;
  m.n_layers = c.mt.n_layers;
  m.n_heads = c.mt.n_heads;
  m.d_ff = c.mt.d_ff;
  m.max_len = c.mt.max_len;
  m.n_languages = c.data.n_languages;
  m.seed = seed;
  return m;
}

inline ModelConfig lm_model_config(const RunConfig& c, unsigned seed) {
  ModelConfig m;
  m.d_model = c.lm.d_model;
  m.n_layers = c.lm.n_layers;
  m.n_heads = c.lm.n_heads;
  m.d_ff = c.lm.d_ff;
  m.max_len = c.lm.max_len;
  m.vocab_size = synth_config(c).vocab_size;
  m.attention_mode = attention_mode_from_name(c.lm.attention_mode);
  m.default_pooling = pooling_from_name(c.lm.pooling);
  m.seed = seed;
  return m;
}

inline TaskSpec task_spec(const RunConfig& c, TaskKind kind) {
  TaskSpec s;
  s.kind = kind;
  s.num_classes = kind == TaskKind::kMultipleChoice ? 4 : 3;
  const TaskSizes& sz = kind == TaskKind::kPair     ? c.data.pair
                        : kind == TaskKind::kSingle ? c.data.single
                                                    : c.data.multiple_choice;
  s.train_size = sz.train;
  s.dev_size = sz.dev;
  s.test_size = sz.test;
  return s;
}

inline TrainConfig finetune_config(const RunConfig& c, TaskKind kind) {
  TrainConfig t = c.stages.finetune;
  t.epochs = kind == TaskKind::kPair     ? c.stages.finetune_epochs_pair
             : kind == TaskKind::kSingle ? c.stages.finetune_epochs_single
                                         : c.stages.finetune_epochs_multiple_choice;
  return t;
}

}  // namespace mtfuse
