// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy translation model: a bidirectional transformer encoder over
// tag-prefixed sources and a causal decoder with cross-attention over the
// final encoder states. Languages are identified by reserved tag tokens on
// both sides; generation is greedy only.

#pragma once

#include <string>
#include <vector>

#include "mtfuse/synth.hpp"
#include "mtfuse/transformer.hpp"

namespace mtfuse {

struct MTConfig {
  int d_model = 64;  // d_E, the encoder width consumed by the fusion bridge
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size = 128;
  int max_len = 48;
  int n_languages = 6;
  unsigned seed = 0;

  void validate() const {
    ModelConfig probe = encoder_config();
    probe.validate();
    if (n_languages < 1) throw std::invalid_argument("mt config: n_languages must be >= 1");
    if (kFirstLangTag + n_languages > vocab_size) {
      throw std::invalid_argument("mt config: vocab_size too small for " + std::to_string(n_languages) +
                                  " language tags");
    }
  }

  ModelConfig encoder_config() const {
    ModelConfig c;
    c.d_model = d_model;
    c.n_layers = n_layers;
    c.n_heads = n_heads;
    c.d_ff = d_ff;
    c.vocab_size = vocab_size;
    c.max_len = max_len;
    c.attention_mode = AttentionMode::kBidirectional;
    c.default_pooling = PoolingMode::kMean;
    c.seed = static_cast<unsigned>(mix_seed(seed, 0xE0C0));
    return c;
  }
};

template <typename Real>
struct DecoderBlock {
  LayerNormParams<Real> ln_self;
  Linear<Real> wq, wk, wv, wo;  // causal self-attention
  LayerNormParams<Real> ln_cross;
  Linear<Real> cq, ck, cv, co;  // cross-attention over encoder states
  LayerNormParams<Real> ln_mlp;
  Linear<Real> fc, proj;
};

template <typename Real>
struct MTModel {
  MTConfig config;
  TransformerModel<Real> encoder;
  // decoder
  Tensor<Real> dec_token_embedding;     // [vocab, d]
  Tensor<Real> dec_position_embedding;  // [max_len, d]
  std::vector<DecoderBlock<Real>> dec_blocks;
  LayerNormParams<Real> dec_final_norm;
  Linear<Real> dec_head;  // [d, vocab], no bias

  int lang_tag(int lang) const {
    if (lang < 0 || lang >= config.n_languages) {
      throw std::invalid_argument("unknown language id " + std::to_string(lang));
    }
    return kFirstLangTag + lang;
  }
};

inline std::int64_t mt_decoder_param_count(const MTConfig& c) {
  std::int64_t d = c.d_model, ff = c.d_ff, v = c.vocab_size;
  std::int64_t per_block = 2 * d + 4 * (d * d + d)    // self-attention
                           + 2 * d + 4 * (d * d + d)  // cross-attention
                           + 2 * d + (d * ff + ff) + (ff * d + d);
  return v * d + static_cast<std::int64_t>(c.max_len) * d + c.n_layers * per_block + 2 * d + d * v;
}

template <typename Real>
void visit_decoder_params(MTModel<Real>& m,
                          const std::function<void(const std::string&, Tensor<Real>&)>& fn) {
  fn("dec.tok_emb", m.dec_token_embedding);
  fn("dec.pos_emb", m.dec_position_embedding);
  auto visit_linear = [&](const std::string& name, Linear<Real>& l) {
    fn(name + ".weight", l.weight);
    if (l.has_bias) fn(name + ".bias", l.bias);
    if (l.adapter) {
      fn(name + ".lora_down", l.adapter->down);
      fn(name + ".lora_up", l.adapter->up);
    }
  };
  for (std::size_t i = 0; i < m.dec_blocks.size(); ++i) {
    std::string p = "dec.block" + std::to_string(i);
    auto& b = m.dec_blocks[i];
    fn(p + ".ln_self.gain", b.ln_self.gain);
    fn(p + ".ln_self.bias", b.ln_self.bias);
    visit_linear(p + ".self.q", b.wq);
    visit_linear(p + ".self.k", b.wk);
    visit_linear(p + ".self.v", b.wv);
    visit_linear(p + ".self.o", b.wo);
    fn(p + ".ln_cross.gain", b.ln_cross.gain);
    fn(p + ".ln_cross.bias", b.ln_cross.bias);
    visit_linear(p + ".cross.q", b.cq);
    visit_linear(p + ".cross.k", b.ck);
    visit_linear(p + ".cross.v", b.cv);
    visit_linear(p + ".cross.o", b.co);
    fn(p + ".ln_mlp.gain", b.ln_mlp.gain);
    fn(p + ".ln_mlp.bias", b.ln_mlp.bias);
    visit_linear(p + ".mlp.fc", b.fc);
    visit_linear(p + ".mlp.proj", b.proj);
  }
  fn("dec.final_norm.gain", m.dec_final_norm.gain);
  fn("dec.final_norm.bias", m.dec_final_norm.bias);
  visit_linear("dec.head", m.dec_head);
}

template <typename Real>
void visit_mt_params(MTModel<Real>& m, const std::function<void(const std::string&, Tensor<Real>&)>& fn) {
  visit_params<Real>(m.encoder, [&](const std::string& n, Tensor<Real>& t) { fn("enc." + n, t); });
  visit_decoder_params<Real>(m, fn);
}

template <typename Real>
std::vector<NamedParam<Real>> named_mt_params(MTModel<Real>& m) {
  std::vector<NamedParam<Real>> out;
  visit_mt_params<Real>(m, [&](const std::string& n, Tensor<Real>& t) { out.push_back({n, &t}); });
  return out;
}

template <typename Real>
MTModel<Real> init_mt_model(const MTConfig& config) {
  config.validate();
  MTModel<Real> m;
  m.config = config;
  m.encoder = init_model<Real>(config.encoder_config());
  Rng rng(mix_seed(config.seed, 0xDEC0));
  int d = config.d_model;
  m.dec_token_embedding = gaussian_tensor<Real>({config.vocab_size, d}, rng, Real(0.02));
  m.dec_position_embedding = gaussian_tensor<Real>({config.max_len, d}, rng, Real(0.02));
  m.dec_blocks.resize(config.n_layers);
  for (auto& b : m.dec_blocks) {
    b.ln_self = detail::init_layer_norm<Real>(d);
    b.wq = detail::init_linear<Real>(d, d, true, rng);
    b.wk = detail::init_linear<Real>(d, d, true, rng);
    b.wv = detail::init_linear<Real>(d, d, true, rng);
    b.wo = detail::init_linear<Real>(d, d, true, rng);
    b.ln_cross = detail::init_layer_norm<Real>(d);
    b.cq = detail::init_linear<Real>(d, d, true, rng);
    b.ck = detail::init_linear<Real>(d, d, true, rng);
    b.cv = detail::init_linear<Real>(d, d, true, rng);
    b.co = detail::init_linear<Real>(d, d, true, rng);
    b.ln_mlp = detail::init_layer_norm<Real>(d);
    b.fc = detail::init_linear<Real>(d, config.d_ff, true, rng);
    b.proj = detail::init_linear<Real>(config.d_ff, d, true, rng);
  }
  m.dec_final_norm = detail::init_layer_norm<Real>(d);
  m.dec_head = detail::init_linear<Real>(d, config.vocab_size, false, rng);

  std::int64_t dec_count = 0;
  visit_decoder_params<Real>(m, [&](const std::string&, Tensor<Real>& t) {
    dec_count += static_cast<std::int64_t>(t.size());
  });
  if (dec_count != mt_decoder_param_count(config)) {
    throw std::logic_error("init_mt_model: decoder parameter count " + std::to_string(dec_count) +
                           " does not match closed form " + std::to_string(mt_decoder_param_count(config)));
  }
  visit_mt_params<Real>(m, [](const std::string&, Tensor<Real>& t) { t.requires_grad = true; });
  return m;
}

template <typename Real>
void set_mt_requires_grad(MTModel<Real>& m, bool value) {
  visit_mt_params<Real>(m, [&](const std::string&, Tensor<Real>& t) { t.requires_grad = value; });
}

// Tag-prefixed encoder tokenization of a source sentence: [lang_tag, tokens].
template <typename Real>
std::vector<int> mt_source_tokens(const MTModel<Real>& m, const std::vector<int>& src, int src_lang) {
  std::vector<int> toks;
  toks.reserve(src.size() + 1);
  toks.push_back(m.lang_tag(src_lang));
  toks.insert(toks.end(), src.begin(), src.end());
  return toks;
}

// All encoder layer states for the tag-prefixed source.
template <typename Real>
std::vector<NodeId> encoder_states_graph(Graph<Real>& g, MTModel<Real>& m, const std::vector<int>& src,
                                         int src_lang) {
  std::vector<int> toks = mt_source_tokens(m, src, src_lang);
  return run_blocks(g, m.encoder, token_input(g, m.encoder, toks), {});
}

template <typename Real>
LayerStates<Real> encoder_states(MTModel<Real>& m, const std::vector<int>& src, int src_lang) {
  Graph<Real> g;
  auto ids = encoder_states_graph(g, m, src, src_lang);
  LayerStates<Real> out;
  for (NodeId id : ids) out.states.push_back(g.value(id));
  out.mask.assign(static_cast<std::size_t>(g.shape(ids[0])[0]), 1);
  return out;
}

// Decoder stack over `dec_tokens` attending `enc_final` ([T_src, d]); returns
// the final pre-norm state [T_dec, d].
template <typename Real>
NodeId run_decoder(Graph<Real>& g, MTModel<Real>& m, NodeId enc_final, const std::vector<int>& dec_tokens) {
  int t = static_cast<int>(dec_tokens.size());
  if (t == 0) throw std::invalid_argument("run_decoder: empty decoder input");
  if (t > m.config.max_len) {
    throw std::invalid_argument("decoder length " + std::to_string(t) + " exceeds max_len " +
                                std::to_string(m.config.max_len));
  }
  int d = m.config.d_model;
  int n_heads = m.config.n_heads;
  int d_head = d / n_heads;
  Real inv_sqrt = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(d_head)));

  NodeId x = g.add(g.embedding(g.leaf(m.dec_token_embedding), dec_tokens),
                   g.slice_rows(g.leaf(m.dec_position_embedding), 0, t));
  NodeId causal = g.constant(attention_mask<Real>(t, {}, AttentionMode::kCausal));

  auto attend = [&](NodeId q, NodeId k, NodeId v, NodeId mask_node) {
    std::vector<NodeId> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    for (int hd = 0; hd < n_heads; ++hd) {
      int c0 = hd * d_head, c1 = (hd + 1) * d_head;
      NodeId scores = g.scale(g.matmul(g.slice_cols(q, c0, c1), g.transpose(g.slice_cols(k, c0, c1))), inv_sqrt);
      if (mask_node >= 0) scores = g.add(scores, mask_node);
      heads.push_back(g.matmul(g.softmax_rows(scores), g.slice_cols(v, c0, c1)));
    }
    return n_heads == 1 ? heads[0] : g.concat_cols(heads);
  };

  for (auto& b : m.dec_blocks) {
    NodeId h = g.layer_norm(x, g.leaf(b.ln_self.gain), g.leaf(b.ln_self.bias));
    NodeId ctx = attend(b.wq.apply(g, h), b.wk.apply(g, h), b.wv.apply(g, h), causal);
    x = g.add(x, b.wo.apply(g, ctx));

    NodeId hc = g.layer_norm(x, g.leaf(b.ln_cross.gain), g.leaf(b.ln_cross.bias));
    NodeId cctx = attend(b.cq.apply(g, hc), b.ck.apply(g, enc_final), b.cv.apply(g, enc_final), NodeId(-1));
    x = g.add(x, b.co.apply(g, cctx));

    NodeId hm = g.layer_norm(x, g.leaf(b.ln_mlp.gain), g.leaf(b.ln_mlp.bias));
    x = g.add(x, b.proj.apply(g, g.gelu(b.fc.apply(g, hm))));
  }
  return x;
}

template <typename Real>
NodeId decoder_logits_graph(Graph<Real>& g, MTModel<Real>& m, NodeId dec_final) {
  NodeId h = g.layer_norm(dec_final, g.leaf(m.dec_final_norm.gain), g.leaf(m.dec_final_norm.bias));
  return m.dec_head.apply(g, h);
}

// Teacher-forced translation loss for one pair:
//   decoder input  [BOS, tgt_tag, tgt...]
//   labels         [tgt_tag, tgt..., EOS]
template <typename Real>
NodeId mt_pair_loss_graph(Graph<Real>& g, MTModel<Real>& m, const MTPair& pair) {
  auto enc = encoder_states_graph(g, m, pair.src, pair.src_lang);
  std::vector<int> dec_in;
  dec_in.reserve(pair.tgt.size() + 2);
  dec_in.push_back(kBosId);
  dec_in.push_back(m.lang_tag(pair.tgt_lang));
  dec_in.insert(dec_in.end(), pair.tgt.begin(), pair.tgt.end());
  std::vector<int> labels;
  labels.reserve(pair.tgt.size() + 2);
  labels.push_back(m.lang_tag(pair.tgt_lang));
  labels.insert(labels.end(), pair.tgt.begin(), pair.tgt.end());
  labels.push_back(kEosId);
  NodeId logits = decoder_logits_graph(g, m, run_decoder(g, m, enc.back(), dec_in));
  return g.cross_entropy_rows(logits, labels, {});
}

// One optimizer step on a batch; returns the mean token cross-entropy over
// all label positions in the batch. Per-example losses are weighted by their
// token counts so the batch loss is an exact token-level mean.
template <typename Real, typename Opt>
double mt_train_step(MTModel<Real>& m, const std::vector<MTPair>& batch, Opt& opt, double lr) {
  if (batch.empty()) throw std::invalid_argument("mt_train_step: empty batch");
  std::size_t total_tokens = 0;
  for (const auto& p : batch) total_tokens += p.tgt.size() + 2;  // + tag and EOS labels
  opt.zero_grad();
  double loss_sum = 0.0;
  for (const auto& p : batch) {
    Graph<Real> g;
    NodeId loss = mt_pair_loss_graph(g, m, p);
    Real w = static_cast<Real>(static_cast<double>(p.tgt.size() + 2) / static_cast<double>(total_tokens));
    NodeId scaled = g.scale(loss, w);
    g.backward(scaled);
    loss_sum += static_cast<double>(g.vals(scaled)[0]);
  }
  opt.step(lr);
  return loss_sum;
}

// Greedy decoding: argmax at each step (ties break to the lowest token id),
// stopping at EOS or after max_new tokens. The returned sequence excludes
// BOS, the language tag, and EOS.
template <typename Real>
std::vector<int> translate_greedy(MTModel<Real>& m, const std::vector<int>& src, int src_lang, int tgt_lang,
                                  int max_new) {
  if (max_new < 1) throw std::invalid_argument("translate_greedy: max_new must be >= 1");
  Graph<Real> g;
  auto enc = encoder_states_graph(g, m, src, src_lang);
  NodeId enc_final = enc.back();
  std::vector<int> dec_in = {kBosId, m.lang_tag(tgt_lang)};
  std::vector<int> out;
  while (static_cast<int>(out.size()) < max_new &&
         static_cast<int>(dec_in.size()) < m.config.max_len) {
    NodeId logits = decoder_logits_graph(g, m, run_decoder(g, m, enc_final, dec_in));
    const auto& lv = g.vals(logits);
    int t = g.shape(logits)[0];
    int v = g.shape(logits)[1];
    const Real* row = lv.data() + static_cast<std::size_t>(t - 1) * v;
    int best = 0;
    for (int j = 1; j < v; ++j) {
      if (row[j] > row[best]) best = j;  // strict: ties keep the lowest id
    }
    if (best == kEosId) break;
    out.push_back(best);
    dec_in.push_back(best);
  }
  return out;
}

}  // namespace mtfuse
