// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic data: a seeded probabilistic grammar over integer tokens, cipher
// "languages" derived from it by content-token permutation (plus word-order
// reversal for the "distant" ones), gold translation between any two
// languages, a parallel corpus generator, and three classification tasks
// whose labels are invariant under translation by construction.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "mtfuse/tensor.hpp"

namespace mtfuse {

// Reserved token ids, fixed by every language's permutation.
constexpr int kPadId = 0;
constexpr int kBosId = 1;
constexpr int kEosId = 2;
constexpr int kSepId = 3;
constexpr int kMaskId = 4;
constexpr int kFirstLangTag = 5;

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a + 0x9E3779B97F4A7C15ull * (b + 1);
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return x;
}

struct SynthConfig {
  int vocab_size = 128;
  int n_languages = 6;
  int flip_threshold = 4;  // languages with id >= this also reverse clause word order
  int n_entities = 24;
  int n_verbs = 16;
  int n_attrs = 36;
  int polarity_group_size = 8;  // three polarity groups of this size
  double zipf_exponent = 1.5;
  double markov_mix = 0.3;  // weight of the deterministic attr-successor habit
  unsigned seed = 0;

  int content_base() const { return kFirstLangTag + n_languages; }
  int content_count() const { return vocab_size - content_base(); }
  int lang_tag(int lang) const { return kFirstLangTag + lang; }

  // content-id layout, in order: entities, verbs, attrs, 3 polarity groups
  int entity_id(int i) const { return content_base() + i; }
  int verb_id(int i) const { return content_base() + n_entities + i; }
  int attr_id(int i) const { return content_base() + n_entities + n_verbs + i; }
  int polarity_id(int group, int i) const {
    return content_base() + n_entities + n_verbs + n_attrs + group * polarity_group_size + i;
  }
  bool is_attr(int tok) const { return tok >= attr_id(0) && tok < attr_id(n_attrs); }
  // -1 for non-polarity tokens, else the group index 0..2
  int polarity_group(int tok) const {
    int lo = polarity_id(0, 0);
    if (tok < lo || tok >= lo + 3 * polarity_group_size) return -1;
    return (tok - lo) / polarity_group_size;
  }

  void validate() const {
    if (n_languages < 1) throw std::invalid_argument("synth config: n_languages must be >= 1");
    if (flip_threshold < 1) throw std::invalid_argument("synth config: flip_threshold must be >= 1");
    if (n_entities < 4 || n_verbs < 2 || n_attrs < 8 || polarity_group_size < 1) {
      throw std::invalid_argument("synth config: token group sizes too small for the grammar");
    }
    int needed = n_entities + n_verbs + n_attrs + 3 * polarity_group_size;
    if (content_count() < needed) {
      throw std::invalid_argument("synth config: vocab_size " + std::to_string(vocab_size) + " leaves " +
                                  std::to_string(content_count()) + " content ids but the grammar needs " +
                                  std::to_string(needed));
    }
    if (zipf_exponent <= 0.0) throw std::invalid_argument("synth config: zipf_exponent must be positive");
    if (markov_mix < 0.0 || markov_mix > 1.0) throw std::invalid_argument("synth config: markov_mix must be in [0,1]");
  }
};

// A cipher language: a bijection over the content-id range (identity on all
// special ids) plus an optional word-order reversal within SEP-delimited
// clauses. Language 0 is the identity language.
struct SyntheticLanguage {
  int id = 0;
  std::vector<int> permutation;  // full-vocab map; identity below content_base
  std::vector<int> inverse;
  bool flip_order = false;
};

inline SyntheticLanguage make_language(const SynthConfig& cfg, int id) {
  cfg.validate();
  if (id < 0 || id >= cfg.n_languages) {
    throw std::invalid_argument("make_language: id " + std::to_string(id) + " outside [0," +
                                std::to_string(cfg.n_languages) + ")");
  }
  SyntheticLanguage lang;
  lang.id = id;
  lang.flip_order = id >= cfg.flip_threshold;
  lang.permutation.resize(cfg.vocab_size);
  for (int i = 0; i < cfg.vocab_size; ++i) lang.permutation[i] = i;
  if (id != 0) {
    std::vector<int> content(cfg.content_count());
    for (int i = 0; i < cfg.content_count(); ++i) content[i] = cfg.content_base() + i;
    Rng rng(mix_seed(cfg.seed, 0xA11CEull + static_cast<std::uint64_t>(id)));
    rng.shuffle(content);
    for (int i = 0; i < cfg.content_count(); ++i) lang.permutation[cfg.content_base() + i] = content[i];
  }
  lang.inverse.resize(cfg.vocab_size);
  for (int i = 0; i < cfg.vocab_size; ++i) lang.inverse[lang.permutation[i]] = i;
  return lang;
}

namespace detail {

// Reverses every maximal run of content tokens; special tokens (SEP and any
// other id below content_base) act as fixed clause boundaries.
inline void flip_clauses(std::vector<int>& seq, int content_base) {
  std::size_t i = 0;
  while (i < seq.size()) {
    if (seq[i] < content_base) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < seq.size() && seq[j] >= content_base) ++j;
    std::reverse(seq.begin() + static_cast<std::ptrdiff_t>(i), seq.begin() + static_cast<std::ptrdiff_t>(j));
    i = j;
  }
}

}  // namespace detail

// Gold translation: decode `from`'s cipher back to the base language, then
// apply `to`'s. Token-wise permutation remap plus the word-order transform.
inline std::vector<int> translate_gold(const SynthConfig& cfg, const SyntheticLanguage& from,
                                       const SyntheticLanguage& to, const std::vector<int>& seq) {
  std::vector<int> base(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    int tok = seq[i];
    if (tok < 0 || tok >= cfg.vocab_size) {
      throw std::invalid_argument("translate_gold: token " + std::to_string(tok) + " outside vocabulary");
    }
    base[i] = from.inverse[tok];
  }
  if (from.flip_order) detail::flip_clauses(base, cfg.content_base());
  for (auto& tok : base) tok = to.permutation[tok];
  if (to.flip_order) detail::flip_clauses(base, cfg.content_base());
  return base;
}

// ---- grammar and generators ----

enum class TaskKind { kSingle, kPair, kMultipleChoice };

inline const char* task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::kSingle: return "single";
    case TaskKind::kPair: return "pair";
    case TaskKind::kMultipleChoice: return "mc";
  }
  return "?";
}

inline TaskKind task_kind_from_name(const std::string& name) {
  if (name == "single") return TaskKind::kSingle;
  if (name == "pair") return TaskKind::kPair;
  if (name == "mc") return TaskKind::kMultipleChoice;
  throw std::invalid_argument("unknown task kind '" + name + "' (expected single|pair|mc)");
}

struct TaskSpec {
  TaskKind kind = TaskKind::kPair;
  int num_classes = 3;  // = num_choices for multiple choice
  int train_size = 256;
  int dev_size = 64;
  int test_size = 128;

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("task spec: num_classes must be >= 2");
    if (kind == TaskKind::kMultipleChoice && num_classes != 4) {
      throw std::invalid_argument("task spec: multiple choice uses exactly 4 choices");
    }
    if (kind != TaskKind::kMultipleChoice && num_classes != 3) {
      throw std::invalid_argument("task spec: single and pair tasks use exactly 3 classes");
    }
    for (int size : {train_size, dev_size, test_size}) {
      if (size < num_classes) {
        throw std::invalid_argument("task spec: split size " + std::to_string(size) + " cannot balance " +
                                    std::to_string(num_classes) + " classes within +/-1");
      }
    }
  }
};

struct LabeledExample {
  std::vector<int> text_a;
  std::vector<int> text_b;                 // pair task only
  std::vector<std::vector<int>> choices;   // multiple choice only
  int label = 0;
  int language = 0;
};

struct TaskDataset {
  TaskSpec spec;
  std::vector<LabeledExample> train;             // language 0 only (zero-shot regime)
  std::map<int, std::vector<LabeledExample>> dev;   // per language, parallel across languages
  std::map<int, std::vector<LabeledExample>> test;  // per language, parallel across languages
};

struct MTPair {
  std::vector<int> src, tgt;
  int src_lang = 0, tgt_lang = 0;
};

inline LabeledExample translate_example(const SynthConfig& cfg, const SyntheticLanguage& from,
                                        const SyntheticLanguage& to, const LabeledExample& ex) {
  LabeledExample out;
  out.text_a = translate_gold(cfg, from, to, ex.text_a);
  if (!ex.text_b.empty()) out.text_b = translate_gold(cfg, from, to, ex.text_b);
  out.choices.reserve(ex.choices.size());
  for (const auto& c : ex.choices) out.choices.push_back(translate_gold(cfg, from, to, c));
  out.label = ex.label;  // labels are invariant under translation
  out.language = to.id;
  return out;
}

// Grammar sampler plus the full language set. All sampling is Zipf-weighted
// within token groups; attribute sequences follow a first-order chain mixing
// a Zipf draw with a deterministic successor habit, giving the corpus enough
// structure for a small LM to beat the uniform baseline comfortably.
class SynthGen {
 public:
  explicit SynthGen(const SynthConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    for (int i = 0; i < cfg_.n_languages; ++i) langs_.push_back(make_language(cfg_, i));
    entity_w_ = zipf(cfg_.n_entities);
    verb_w_ = zipf(cfg_.n_verbs);
    attr_w_ = zipf(cfg_.n_attrs);
    pol_w_ = zipf(cfg_.polarity_group_size);
  }

  const SynthConfig& config() const { return cfg_; }
  const SyntheticLanguage& language(int id) const {
    if (id < 0 || id >= static_cast<int>(langs_.size())) {
      throw std::invalid_argument("unknown language id " + std::to_string(id));
    }
    return langs_[static_cast<std::size_t>(id)];
  }

  // One base-language sentence: [entity, verb, attr chain...], optionally
  // ending in a polarity token. Length uniform in [4,12].
  std::vector<int> sample_sentence(Rng& rng) const {
    int len = rng.uniform_int(4, 12);
    return sample_clause(rng, len, rng.uniform() < 0.35);
  }

  // A clause of `len` tokens; when with_polarity, the final slot holds a
  // polarity token from a uniformly chosen group.
  std::vector<int> sample_clause(Rng& rng, int len, bool with_polarity) const {
    if (len < 3) throw std::invalid_argument("sample_clause: length must be >= 3");
    std::vector<int> toks;
    toks.reserve(static_cast<std::size_t>(len));
    toks.push_back(cfg_.entity_id(rng.weighted_index(entity_w_)));
    toks.push_back(cfg_.verb_id(rng.weighted_index(verb_w_)));
    int n_attr = len - 2 - (with_polarity ? 1 : 0);
    int prev = -1;
    for (int i = 0; i < n_attr; ++i) {
      prev = next_attr(rng, prev);
      toks.push_back(cfg_.attr_id(prev));
    }
    if (with_polarity) {
      int group = rng.uniform_int(0, 2);
      toks.push_back(cfg_.polarity_id(group, rng.weighted_index(pol_w_)));
    }
    return toks;
  }

  std::vector<MTPair> gen_parallel_corpus(unsigned seed, int n_pairs, const std::vector<int>& languages) const {
    if (n_pairs < 1) throw std::invalid_argument("gen_parallel_corpus: n_pairs must be >= 1");
    if (languages.empty()) throw std::invalid_argument("gen_parallel_corpus: no languages given");
    Rng rng(mix_seed(cfg_.seed, mix_seed(0xC0B0ull, seed)));
    std::vector<MTPair> out;
    out.reserve(static_cast<std::size_t>(n_pairs));
    for (int i = 0; i < n_pairs; ++i) {
      std::vector<int> base = sample_sentence(rng);
      int sl = languages[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(languages.size()) - 1))];
      int tl = languages[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(languages.size()) - 1))];
      MTPair p;
      p.src_lang = sl;
      p.tgt_lang = tl;
      p.src = translate_gold(cfg_, language(0), language(sl), base);
      p.tgt = translate_gold(cfg_, language(sl), language(tl), p.src);
      out.push_back(std::move(p));
    }
    return out;
  }

  TaskDataset gen_task_dataset(const TaskSpec& spec, unsigned seed, const std::vector<int>& languages) const {
    spec.validate();
    if (languages.empty()) throw std::invalid_argument("gen_task_dataset: no languages given");
    Rng rng(mix_seed(cfg_.seed, mix_seed(0x7A5Cull + static_cast<std::uint64_t>(spec.kind), seed)));
    TaskDataset ds;
    ds.spec = spec;
    ds.train = gen_split(spec, rng, spec.train_size);
    std::vector<LabeledExample> dev_base = gen_split(spec, rng, spec.dev_size);
    std::vector<LabeledExample> test_base = gen_split(spec, rng, spec.test_size);
    for (int lang : languages) {
      const SyntheticLanguage& to = language(lang);
      auto translate_all = [&](const std::vector<LabeledExample>& base) {
        std::vector<LabeledExample> out;
        out.reserve(base.size());
        for (const auto& ex : base) out.push_back(translate_example(cfg_, language(0), to, ex));
        return out;
      };
      ds.dev[lang] = translate_all(dev_base);
      ds.test[lang] = translate_all(test_base);
    }
    return ds;
  }

 private:
  SynthConfig cfg_;
  std::vector<SyntheticLanguage> langs_;
  std::vector<double> entity_w_, verb_w_, attr_w_, pol_w_;

  std::vector<double> zipf(int n) const {
    std::vector<double> w(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = std::pow(i + 1.0, -cfg_.zipf_exponent);
    return w;
  }

  int next_attr(Rng& rng, int prev) const {
    if (prev >= 0 && rng.uniform() < cfg_.markov_mix) return (prev * 7 + 3) % cfg_.n_attrs;
    return rng.weighted_index(attr_w_);
  }

  // Sample `count` attr indices without replacement from `pool`.
  std::vector<int> pick_attrs(Rng& rng, std::vector<int> pool, int count) const {
    rng.shuffle(pool);
    pool.resize(static_cast<std::size_t>(count));
    return pool;
  }

  std::vector<LabeledExample> gen_split(const TaskSpec& spec, Rng& rng, int size) const {
    std::vector<LabeledExample> out;
    out.reserve(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) {
      int label = i % spec.num_classes;  // round-robin keeps the histogram within +/-1
      switch (spec.kind) {
        case TaskKind::kPair: out.push_back(gen_pair_example(rng, label)); break;
        case TaskKind::kSingle: out.push_back(gen_single_example(rng, label)); break;
        case TaskKind::kMultipleChoice: out.push_back(gen_mc_example(rng, label)); break;
      }
    }
    rng.shuffle(out);
    return out;
  }

  // Pair task: text_b's attribute set against text_a's.
  //   subset -> 0 (entail), disjoint -> 1 (contradiction), partial -> 2 (neutral)
  LabeledExample gen_pair_example(Rng& rng, int label) const {
    std::vector<int> all(static_cast<std::size_t>(cfg_.n_attrs));
    for (int i = 0; i < cfg_.n_attrs; ++i) all[static_cast<std::size_t>(i)] = i;
    int na = rng.uniform_int(4, 6);
    std::vector<int> a_attrs = pick_attrs(rng, all, na);
    std::vector<int> complement;
    for (int i = 0; i < cfg_.n_attrs; ++i) {
      if (std::find(a_attrs.begin(), a_attrs.end(), i) == a_attrs.end()) complement.push_back(i);
    }
    std::vector<int> b_attrs;
    if (label == 0) {
      b_attrs = pick_attrs(rng, a_attrs, rng.uniform_int(2, 3));
    } else if (label == 1) {
      b_attrs = pick_attrs(rng, complement, rng.uniform_int(2, 3));
    } else {
      std::vector<int> inside = pick_attrs(rng, a_attrs, rng.uniform_int(1, 2));
      std::vector<int> outside = pick_attrs(rng, complement, rng.uniform_int(1, 2));
      b_attrs = inside;
      b_attrs.insert(b_attrs.end(), outside.begin(), outside.end());
      rng.shuffle(b_attrs);
    }
    LabeledExample ex;
    ex.label = label;
    ex.language = 0;
    int entity = rng.weighted_index(entity_w_);
    ex.text_a.push_back(cfg_.entity_id(entity));
    ex.text_a.push_back(cfg_.verb_id(rng.weighted_index(verb_w_)));
    for (int a : a_attrs) ex.text_a.push_back(cfg_.attr_id(a));
    ex.text_b.push_back(cfg_.entity_id(entity));
    ex.text_b.push_back(cfg_.verb_id(rng.weighted_index(verb_w_)));
    for (int a : b_attrs) ex.text_b.push_back(cfg_.attr_id(a));
    return ex;
  }

  // Single-text task: three SEP-joined clauses, each carrying one polarity
  // token; the label is the strict-majority polarity group.
  LabeledExample gen_single_example(Rng& rng, int label) const {
    int majority_count = rng.uniform() < 0.5 ? 3 : 2;
    std::vector<int> groups(3, label);
    if (majority_count == 2) {
      int other = (label + 1 + rng.uniform_int(0, 1)) % 3;
      groups[static_cast<std::size_t>(rng.uniform_int(0, 2))] = other;
    }
    LabeledExample ex;
    ex.label = label;
    ex.language = 0;
    for (int c = 0; c < 3; ++c) {
      if (c > 0) ex.text_a.push_back(kSepId);
      std::vector<int> clause = sample_clause(rng, 3, false);  // entity verb attr
      clause.push_back(cfg_.polarity_id(groups[static_cast<std::size_t>(c)], rng.weighted_index(pol_w_)));
      ex.text_a.insert(ex.text_a.end(), clause.begin(), clause.end());
    }
    return ex;
  }

  // Multiple choice: a paragraph of distinct-entity fact clauses, a one-token
  // question naming an entity, and 4 choices [entity, verb, attr] of which
  // exactly one states a fact present in the paragraph. Label = index of the
  // true choice.
  LabeledExample gen_mc_example(Rng& rng, int label) const {
    int n_facts = rng.uniform_int(3, 4);
    std::vector<int> entities(static_cast<std::size_t>(cfg_.n_entities));
    for (int i = 0; i < cfg_.n_entities; ++i) entities[static_cast<std::size_t>(i)] = i;
    rng.shuffle(entities);
    entities.resize(static_cast<std::size_t>(n_facts));

    std::vector<int> all(static_cast<std::size_t>(cfg_.n_attrs));
    for (int i = 0; i < cfg_.n_attrs; ++i) all[static_cast<std::size_t>(i)] = i;

    LabeledExample ex;
    ex.label = label;
    ex.language = 0;
    std::vector<std::vector<int>> fact_attrs(static_cast<std::size_t>(n_facts));
    std::vector<int> fact_verbs(static_cast<std::size_t>(n_facts));
    for (int f = 0; f < n_facts; ++f) {
      if (f > 0) ex.text_a.push_back(kSepId);
      fact_verbs[static_cast<std::size_t>(f)] = rng.weighted_index(verb_w_);
      fact_attrs[static_cast<std::size_t>(f)] = pick_attrs(rng, all, 3);
      ex.text_a.push_back(cfg_.entity_id(entities[static_cast<std::size_t>(f)]));
      ex.text_a.push_back(cfg_.verb_id(fact_verbs[static_cast<std::size_t>(f)]));
      for (int a : fact_attrs[static_cast<std::size_t>(f)]) ex.text_a.push_back(cfg_.attr_id(a));
    }

    int q = rng.uniform_int(0, n_facts - 1);  // which fact is queried
    int q_entity = entities[static_cast<std::size_t>(q)];
    int q_verb = fact_verbs[static_cast<std::size_t>(q)];
    const std::vector<int>& q_attrs = fact_attrs[static_cast<std::size_t>(q)];
    ex.text_b.push_back(cfg_.entity_id(q_entity));  // the "question" names the entity

    std::vector<int> wrong_pool;
    for (int i = 0; i < cfg_.n_attrs; ++i) {
      if (std::find(q_attrs.begin(), q_attrs.end(), i) == q_attrs.end()) wrong_pool.push_back(i);
    }
    std::vector<int> wrong = pick_attrs(rng, wrong_pool, 3);
    int true_attr = q_attrs[static_cast<std::size_t>(rng.uniform_int(0, 2))];
    ex.choices.resize(4);
    int w = 0;
    for (int c = 0; c < 4; ++c) {
      int attr = (c == label) ? true_attr : wrong[static_cast<std::size_t>(w++)];
      ex.choices[static_cast<std::size_t>(c)] = {cfg_.entity_id(q_entity), cfg_.verb_id(q_verb), cfg_.attr_id(attr)};
    }
    return ex;
  }
};

// ---- line-delimited serialization ----
//
// One example per line, tab-separated fields in this order:
//   language <TAB> label <TAB> text_a <TAB> text_b <TAB> choices
// Token arrays are space-separated ids; an absent text_b is "-"; choices are
// "|"-joined token arrays or "-" when absent.

inline std::string tokens_to_field(const std::vector<int>& toks) {
  if (toks.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(toks[i]);
  }
  return s;
}

inline std::vector<int> field_to_tokens(const std::string& field) {
  std::vector<int> out;
  if (field == "-") return out;
  std::size_t i = 0;
  while (i < field.size()) {
    std::size_t j = field.find(' ', i);
    if (j == std::string::npos) j = field.size();
    out.push_back(std::stoi(field.substr(i, j - i)));
    i = j + 1;
  }
  return out;
}

inline std::string example_to_line(const LabeledExample& ex) {
  std::string line = std::to_string(ex.language) + "\t" + std::to_string(ex.label) + "\t" +
                     tokens_to_field(ex.text_a) + "\t" + tokens_to_field(ex.text_b) + "\t";
  if (ex.choices.empty()) {
    line += "-";
  } else {
    for (std::size_t i = 0; i < ex.choices.size(); ++i) {
      if (i) line += '|';
      line += tokens_to_field(ex.choices[i]);
    }
  }
  return line;
}

inline LabeledExample example_from_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t i = 0;
  while (true) {
    std::size_t j = line.find('\t', i);
    if (j == std::string::npos) {
      fields.push_back(line.substr(i));
      break;
    }
    fields.push_back(line.substr(i, j - i));
    i = j + 1;
  }
  if (fields.size() != 5) {
    throw std::invalid_argument("dataset line has " + std::to_string(fields.size()) + " fields, expected 5");
  }
  LabeledExample ex;
  ex.language = std::stoi(fields[0]);
  ex.label = std::stoi(fields[1]);
  ex.text_a = field_to_tokens(fields[2]);
  ex.text_b = field_to_tokens(fields[3]);
  if (fields[4] != "-") {
    std::size_t k = 0;
    while (k <= fields[4].size()) {
      std::size_t j = fields[4].find('|', k);
      if (j == std::string::npos) j = fields[4].size();
      ex.choices.push_back(field_to_tokens(fields[4].substr(k, j - k)));
      k = j + 1;
    }
  }
  return ex;
}

// Parallel-corpus lines: src_lang <TAB> tgt_lang <TAB> src tokens <TAB> tgt tokens
inline std::string pair_to_line(const MTPair& p) {
  return std::to_string(p.src_lang) + "\t" + std::to_string(p.tgt_lang) + "\t" + tokens_to_field(p.src) + "\t" +
         tokens_to_field(p.tgt);
}

inline MTPair pair_from_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t i = 0;
  while (true) {
    std::size_t j = line.find('\t', i);
    if (j == std::string::npos) {
      fields.push_back(line.substr(i));
      break;
    }
    fields.push_back(line.substr(i, j - i));
    i = j + 1;
  }
  if (fields.size() != 4) {
    throw std::invalid_argument("corpus line has " + std::to_string(fields.size()) + " fields, expected 4");
  }
  MTPair p;
  p.src_lang = std::stoi(fields[0]);
  p.tgt_lang = std::stoi(fields[1]);
  p.src = field_to_tokens(fields[2]);
  p.tgt = field_to_tokens(fields[3]);
  return p;
}

}  // namespace mtfuse
