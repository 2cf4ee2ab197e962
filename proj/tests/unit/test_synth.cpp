// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Label rules are re-derived here by brute force, independently of the
// generator's construction, and checked over large samples.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "mtfuse/synth.hpp"

using namespace mtfuse;

namespace {

SynthConfig desk_config() {
  SynthConfig c;
  c.seed = 2024;
  return c;
}

// Independent pair-task rule: B subset of A -> 0, disjoint -> 1, else 2.
int brute_force_pair_label(const SynthConfig& cfg, const LabeledExample& ex) {
  std::set<int> a, b;
  for (int t : ex.text_a)
    if (cfg.is_attr(t)) a.insert(t);
  for (int t : ex.text_b)
    if (cfg.is_attr(t)) b.insert(t);
  int common = 0;
  for (int t : b) common += a.count(t) ? 1 : 0;
  if (common == static_cast<int>(b.size())) return 0;
  if (common == 0) return 1;
  return 2;
}

// Independent single-task rule: strict majority polarity group.
int brute_force_single_label(const SynthConfig& cfg, const LabeledExample& ex) {
  int counts[3] = {0, 0, 0};
  for (int t : ex.text_a) {
    int group = cfg.polarity_group(t);
    if (group >= 0) ++counts[group];
  }
  int best = 0;
  for (int g = 1; g < 3; ++g)
    if (counts[g] > counts[best]) best = g;
  for (int g = 0; g < 3; ++g) {
    if (g != best && counts[g] == counts[best]) throw std::runtime_error("polarity tie: label ill-defined");
  }
  return best;
}

// Independent multiple-choice rule: a choice [entity, verb, attr] is true iff
// some SEP-delimited paragraph clause has that entity and verb and contains
// that attr. Exactly one choice must be true.
int brute_force_mc_label(const LabeledExample& ex) {
  std::vector<std::vector<int>> clauses(1);
  for (int t : ex.text_a) {
    if (t == kSepId) {
      clauses.emplace_back();
    } else {
      clauses.back().push_back(t);
    }
  }
  std::vector<int> truth;
  for (std::size_t c = 0; c < ex.choices.size(); ++c) {
    const auto& ch = ex.choices[c];
    REQUIRE(ch.size() == 3);
    bool found = false;
    for (const auto& clause : clauses) {
      if (clause.size() < 3) continue;
      if (clause[0] == ch[0] && clause[1] == ch[1] &&
          std::find(clause.begin() + 2, clause.end(), ch[2]) != clause.end()) {
        found = true;
      }
    }
    if (found) truth.push_back(static_cast<int>(c));
  }
  REQUIRE(truth.size() == 1);
  return truth[0];
}

}  // namespace

TEST_CASE("language 0 is the identity, others are content bijections", "[synth]") {
  SynthConfig cfg = desk_config();
  auto l0 = make_language(cfg, 0);
  for (int i = 0; i < cfg.vocab_size; ++i) REQUIRE(l0.permutation[i] == i);
  REQUIRE_FALSE(l0.flip_order);

  for (int id = 1; id < cfg.n_languages; ++id) {
    auto lk = make_language(cfg, id);
    // specials fixed
    for (int i = 0; i < cfg.content_base(); ++i) REQUIRE(lk.permutation[i] == i);
    // sorted image of the content range equals the content range
    std::vector<int> image(lk.permutation.begin() + cfg.content_base(), lk.permutation.end());
    std::sort(image.begin(), image.end());
    for (int i = 0; i < cfg.content_count(); ++i) REQUIRE(image[i] == cfg.content_base() + i);
    REQUIRE(lk.flip_order == (id >= cfg.flip_threshold));
  }
  REQUIRE_THROWS_AS(make_language(cfg, cfg.n_languages), std::invalid_argument);
  REQUIRE_THROWS_AS(make_language(cfg, -1), std::invalid_argument);
}

TEST_CASE("translate_gold identity, round trip and composition", "[synth]") {
  SynthConfig cfg = desk_config();
  SynthGen gen(cfg);
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<int> base = gen.sample_sentence(rng);
    for (int k = 1; k < cfg.n_languages; ++k) {
      const auto& l0 = gen.language(0);
      const auto& lk = gen.language(k);
      REQUIRE(translate_gold(cfg, lk, lk, translate_gold(cfg, l0, lk, base)) ==
              translate_gold(cfg, l0, lk, base));  // to == from is identity
      REQUIRE(translate_gold(cfg, lk, l0, translate_gold(cfg, l0, lk, base)) == base);  // round trip
      // composition 0 -> j -> k equals 0 -> k
      int j = 1 + (k % (cfg.n_languages - 1));
      const auto& lj = gen.language(j);
      REQUIRE(translate_gold(cfg, lj, lk, translate_gold(cfg, l0, lj, base)) == translate_gold(cfg, l0, lk, base));
    }
  }
}

TEST_CASE("distant languages reverse word order within clauses", "[synth]") {
  SynthConfig cfg = desk_config();
  SynthGen gen(cfg);
  const auto& flipped = gen.language(cfg.flip_threshold);
  std::vector<int> e = {cfg.entity_id(0), cfg.verb_id(1), cfg.attr_id(2), kSepId, cfg.entity_id(3), cfg.attr_id(4)};
  auto out = translate_gold(cfg, gen.language(0), flipped, e);
  REQUIRE(out[3] == kSepId);  // separator fixed in place
  REQUIRE(out[0] == flipped.permutation[cfg.attr_id(2)]);
  REQUIRE(out[1] == flipped.permutation[cfg.verb_id(1)]);
  REQUIRE(out[2] == flipped.permutation[cfg.entity_id(0)]);
  REQUIRE(out[4] == flipped.permutation[cfg.attr_id(4)]);
  REQUIRE(out[5] == flipped.permutation[cfg.entity_id(3)]);
}

TEST_CASE("parallel corpus is deterministic, in-range, gold-consistent", "[synth]") {
  SynthConfig cfg = desk_config();
  SynthGen gen(cfg);
  std::vector<int> langs = {0, 1, 2, 3, 4, 5};
  auto corpus = gen.gen_parallel_corpus(9, 400, langs);
  auto corpus2 = gen.gen_parallel_corpus(9, 400, langs);
  auto corpus3 = gen.gen_parallel_corpus(10, 400, langs);
  REQUIRE(corpus.size() == 400);
  bool identical = true;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    identical = identical && corpus[i].src == corpus2[i].src && corpus[i].tgt == corpus2[i].tgt;
  }
  REQUIRE(identical);
  bool any_differ = false;
  for (std::size_t i = 0; i < corpus.size(); ++i) any_differ = any_differ || corpus[i].src != corpus3[i].src;
  REQUIRE(any_differ);

  std::set<int> seen_src_langs;
  for (const auto& p : corpus) {
    REQUIRE(p.src.size() >= 4);
    REQUIRE(p.src.size() <= 12);
    REQUIRE(p.tgt == translate_gold(cfg, gen.language(p.src_lang), gen.language(p.tgt_lang), p.src));
    seen_src_langs.insert(p.src_lang);
  }
  REQUIRE(seen_src_langs.size() == 6);
}

TEST_CASE("pair task labels agree with the brute-force rule", "[synth]") {
  SynthConfig cfg = desk_config();
  SynthGen gen(cfg);
  TaskSpec spec;
  spec.kind = TaskKind::kPair;
  spec.num_classes = 3;
  spec.train_size = 600;
  spec.dev_size = 200;
  spec.test_size = 200;
  auto ds = gen.gen_task_dataset(spec, 1, {0, 1, 5});
  int checked = 0;
  for (const auto& ex : ds.train) {
    REQUIRE(brute_force_pair_label(cfg, ex) == ex.label);
    ++checked;
  }
  for (const auto& ex : ds.dev.at(0)) {
    REQUIRE(brute_force_pair_label(cfg, ex) == ex.label);
    ++checked;
  }
  for (const auto& ex : ds.test.at(0)) {
    REQUIRE(brute_force_pair_label(cfg, ex) == ex.label);
    ++checked;
  }
  REQUIRE(checked == 1000);
}

TEST_CASE("single task labels agree with the brute-force rule", "[synth]") {
  SynthConfig cfg = desk_config();
  SynthGen gen(cfg);
  TaskSpec spec;
  spec.kind = TaskKind::kSingle;
  spec.num_classes = 3;
  spec.train_size = 600;
  spec.dev_size = 200;
  spec.test_size = 200;
  auto ds = gen.gen_task_dataset(spec, 2, {0, 3});
  int checked = 0;
  for (const auto* split : {&ds.train, &ds.dev.at(0), &ds.test.at(0)}) {
    for (const auto& ex : *split) {
      REQUIRE(brute_force_single_label(cfg, ex) == ex.label);
      ++checked;
    }
  }
  REQUIRE(checked == 1000);
}

TEST_CASE("multiple-choice labels agree with the brute-force rule", "[synth]") {
  SynthConfig cfg = desk_config();
  SynthGen gen(cfg);
  TaskSpec spec;
  spec.kind = TaskKind::kMultipleChoice;
  spec.num_classes = 4;
  spec.train_size = 600;
  spec.dev_size = 200;
  spec.test_size = 200;
  auto ds = gen.gen_task_dataset(spec, 3, {0, 2});
  int checked = 0;
  for (const auto* split : {&ds.train, &ds.dev.at(0), &ds.test.at(0)}) {
    for (const auto& ex : *split) {
      REQUIRE(brute_force_mc_label(ex) == ex.label);
      ++checked;
    }
  }
  REQUIRE(checked == 1000);
}

TEST_CASE("splits are balanced within one, zero-shot hygiene holds", "[synth]") {
  SynthConfig cfg = desk_config();
  SynthGen gen(cfg);
  for (TaskKind kind : {TaskKind::kPair, TaskKind::kSingle, TaskKind::kMultipleChoice}) {
    TaskSpec spec;
    spec.kind = kind;
    spec.num_classes = kind == TaskKind::kMultipleChoice ? 4 : 3;
    spec.train_size = 101;
    spec.dev_size = 31;
    spec.test_size = 50;
    auto ds = gen.gen_task_dataset(spec, 4, {0, 1, 4, 5});
    auto check_balance = [&](const std::vector<LabeledExample>& split) {
      std::vector<int> hist(static_cast<std::size_t>(spec.num_classes), 0);
      for (const auto& ex : split) ++hist[static_cast<std::size_t>(ex.label)];
      int lo = *std::min_element(hist.begin(), hist.end());
      int hi = *std::max_element(hist.begin(), hist.end());
      REQUIRE(hi - lo <= 1);
    };
    check_balance(ds.train);
    for (const auto& [lang, split] : ds.dev) check_balance(split);
    for (const auto& [lang, split] : ds.test) check_balance(split);
    for (const auto& ex : ds.train) REQUIRE(ex.language == 0);  // zero-shot hygiene
    REQUIRE(ds.dev.size() == 4);
    REQUIRE(ds.test.size() == 4);
  }
}

TEST_CASE("translated splits preserve labels and parallel meaning", "[synth]") {
  SynthConfig cfg = desk_config();
  SynthGen gen(cfg);
  TaskSpec spec;
  spec.kind = TaskKind::kPair;
  spec.num_classes = 3;
  spec.train_size = 30;
  spec.dev_size = 30;
  spec.test_size = 60;
  auto ds = gen.gen_task_dataset(spec, 5, {0, 1, 5});
  for (int lang : {1, 5}) {
    const auto& l0 = gen.language(0);
    const auto& lk = gen.language(lang);
    for (std::size_t i = 0; i < ds.test.at(0).size(); ++i) {
      const auto& base = ds.test.at(0)[i];
      const auto& tr = ds.test.at(lang)[i];
      REQUIRE(tr.label == base.label);
      REQUIRE(tr.language == lang);
      REQUIRE(translate_gold(cfg, lk, l0, tr.text_a) == base.text_a);
      REQUIRE(translate_gold(cfg, lk, l0, tr.text_b) == base.text_b);
    }
  }
}

TEST_CASE("task generation is deterministic and validates sizes", "[synth]") {
  SynthConfig cfg = desk_config();
  SynthGen gen(cfg);
  TaskSpec spec;
  spec.kind = TaskKind::kSingle;
  spec.num_classes = 3;
  spec.train_size = 12;
  spec.dev_size = 6;
  spec.test_size = 9;
  auto a = gen.gen_task_dataset(spec, 7, {0, 1});
  auto b = gen.gen_task_dataset(spec, 7, {0, 1});
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    REQUIRE(a.train[i].text_a == b.train[i].text_a);
    REQUIRE(a.train[i].label == b.train[i].label);
  }
  TaskSpec tiny = spec;
  tiny.dev_size = 2;  // cannot hold 3 classes
  REQUIRE_THROWS_AS(gen.gen_task_dataset(tiny, 7, {0}), std::invalid_argument);
  TaskSpec wrong = spec;
  wrong.num_classes = 4;
  REQUIRE_THROWS_AS(gen.gen_task_dataset(wrong, 7, {0}), std::invalid_argument);
}

TEST_CASE("dataset and corpus lines round-trip", "[synth]") {
  SynthConfig cfg = desk_config();
  SynthGen gen(cfg);
  TaskSpec spec;
  spec.kind = TaskKind::kMultipleChoice;
  spec.num_classes = 4;
  spec.train_size = 8;
  spec.dev_size = 4;
  spec.test_size = 4;
  auto ds = gen.gen_task_dataset(spec, 8, {0, 1});
  for (const auto& ex : ds.train) {
    LabeledExample rt = example_from_line(example_to_line(ex));
    REQUIRE(rt.language == ex.language);
    REQUIRE(rt.label == ex.label);
    REQUIRE(rt.text_a == ex.text_a);
    REQUIRE(rt.text_b == ex.text_b);
    REQUIRE(rt.choices == ex.choices);
  }
  auto corpus = gen.gen_parallel_corpus(11, 20, {0, 3});
  for (const auto& p : corpus) {
    MTPair rt = pair_from_line(pair_to_line(p));
    REQUIRE(rt.src == p.src);
    REQUIRE(rt.tgt == p.tgt);
    REQUIRE(rt.src_lang == p.src_lang);
    REQUIRE(rt.tgt_lang == p.tgt_lang);
  }
  REQUIRE_THROWS_AS(example_from_line("1\t2\t3"), std::invalid_argument);
}

TEST_CASE("synth config validation", "[synth]") {
  SynthConfig c = desk_config();
  c.vocab_size = 80;  // too small for the grammar groups
  REQUIRE_THROWS_WITH(c.validate(), Catch::Matchers::ContainsSubstring("content ids"));
  c = desk_config();
  c.markov_mix = 1.5;
  REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
  c = desk_config();
  c.n_languages = 0;
  REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
}
