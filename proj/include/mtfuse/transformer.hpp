// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// A small pre-norm transformer usable in causal or bidirectional attention
// mode. One graph-building forward implementation serves both training (the
// caller backprops) and evaluation (the caller reads values); eval wrappers
// below run the graph and copy tensors out.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mtfuse/graph.hpp"
#include "mtfuse/lora.hpp"
#include "mtfuse/tensor.hpp"

namespace mtfuse {

enum class AttentionMode { kCausal, kBidirectional };
enum class PoolingMode { kBos, kMean, kEos };

inline const char* pooling_name(PoolingMode m) {
  switch (m) {
    case PoolingMode::kBos: return "bos";
    case PoolingMode::kMean: return "mean";
    case PoolingMode::kEos: return "eos";
  }
  return "?";
}

struct ModelConfig {
  int d_model = 0;
  int n_layers = 0;
  int n_heads = 0;
  int d_ff = 0;
  int vocab_size = 0;
  int max_len = 0;
  AttentionMode attention_mode = AttentionMode::kBidirectional;
  PoolingMode default_pooling = PoolingMode::kMean;
  unsigned seed = 0;

  void validate() const {
    if (d_model <= 0) throw std::invalid_argument("model config: d_model must be positive");
    if (n_layers <= 0) throw std::invalid_argument("model config: n_layers must be positive");
    if (n_heads <= 0) throw std::invalid_argument("model config: n_heads must be positive");
    if (d_model % n_heads != 0) throw std::invalid_argument("model config: n_heads must divide d_model");
    if (d_ff <= 0) throw std::invalid_argument("model config: d_ff must be positive");
    if (vocab_size <= 0) throw std::invalid_argument("model config: vocab_size must be positive");
    if (max_len <= 0) throw std::invalid_argument("model config: max_len must be positive");
  }
};

// Linear layer with an optional low-rank adapter on the side path.
template <typename Real>
struct Linear {
  Tensor<Real> weight;  // [d_in, d_out]
  Tensor<Real> bias;    // [d_out] when has_bias
  bool has_bias = true;
  std::unique_ptr<LoraAdapter<Real>> adapter;

  int d_in() const { return weight.shape[0]; }
  int d_out() const { return weight.shape[1]; }

  NodeId apply(Graph<Real>& g, NodeId x, bool training = false, Rng* rng = nullptr) {
    NodeId y = g.matmul(x, g.leaf(weight));
    if (has_bias) y = g.add_bias(y, g.leaf(bias));
    if (adapter && adapter->enabled) {
      NodeId xin = g.dropout(x, adapter->dropout_p, training, rng);
      NodeId delta = g.matmul(g.matmul(xin, g.leaf(adapter->down)), g.leaf(adapter->up));
      y = g.add(y, g.scale(delta, adapter->scaling()));
    }
    return y;
  }
};

template <typename Real>
struct LayerNormParams {
  Tensor<Real> gain;  // ones at init
  Tensor<Real> bias;  // zeros at init
};

template <typename Real>
struct TransformerBlock {
  LayerNormParams<Real> ln1;
  Linear<Real> wq, wk, wv, wo;
  LayerNormParams<Real> ln2;
  Linear<Real> fc;    // d_model -> d_ff
  Linear<Real> proj;  // d_ff -> d_model
};

template <typename Real>
struct TransformerModel {
  ModelConfig config;
  Tensor<Real> token_embedding;     // [vocab, d_model]
  Tensor<Real> position_embedding;  // [max_len, d_model]
  std::vector<TransformerBlock<Real>> blocks;
  LayerNormParams<Real> final_norm;
  Linear<Real> lm_head;  // [d_model, vocab], no bias
};

// All layer states of one forward pass, as plain tensors. states[0] is the
// post-embedding input; states[n_layers] is the final pre-pooling
// representation (before the final layer norm, which belongs to the LM-head
// path). mask[i] is true at real (non-pad) positions.
template <typename Real>
struct LayerStates {
  std::vector<Tensor<Real>> states;
  std::vector<std::uint8_t> mask;
};

// Closed-form parameter count for a config; init_model cross-checks the
// enumerated parameters against this.
inline std::int64_t transformer_param_count(const ModelConfig& c) {
  std::int64_t d = c.d_model, ff = c.d_ff, v = c.vocab_size;
  std::int64_t per_block = 2 * d                    // ln1
                           + 4 * (d * d + d)        // q,k,v,o with biases
                           + 2 * d                  // ln2
                           + (d * ff + ff)          // fc
                           + (ff * d + d);          // proj
  return v * d + static_cast<std::int64_t>(c.max_len) * d + c.n_layers * per_block + 2 * d + d * v;
}

namespace detail {

template <typename Real>
Linear<Real> init_linear(int d_in, int d_out, bool has_bias, Rng& rng) {
  Linear<Real> l;
  l.weight = gaussian_tensor<Real>({d_in, d_out}, rng, Real(0.02));
  l.has_bias = has_bias;
  if (has_bias) l.bias = Tensor<Real>({d_out});
  return l;
}

template <typename Real>
LayerNormParams<Real> init_layer_norm(int d) {
  return {Tensor<Real>::full({d}, Real(1)), Tensor<Real>({d})};
}

}  // namespace detail

// Enumerates every parameter tensor (base weights first, then any adapters)
// in a stable order with stable names; shared by optimizers and checkpoints.
template <typename Real>
void visit_params(TransformerModel<Real>& m,
                  const std::function<void(const std::string&, Tensor<Real>&)>& fn) {
  fn("tok_emb", m.token_embedding);
  fn("pos_emb", m.position_embedding);
  auto visit_linear = [&](const std::string& name, Linear<Real>& l) {
    fn(name + ".weight", l.weight);
    if (l.has_bias) fn(name + ".bias", l.bias);
    if (l.adapter) {
      fn(name + ".lora_down", l.adapter->down);
      fn(name + ".lora_up", l.adapter->up);
    }
  };
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    std::string p = "block" + std::to_string(i);
    auto& b = m.blocks[i];
    fn(p + ".ln1.gain", b.ln1.gain);
    fn(p + ".ln1.bias", b.ln1.bias);
    visit_linear(p + ".attn.q", b.wq);
    visit_linear(p + ".attn.k", b.wk);
    visit_linear(p + ".attn.v", b.wv);
    visit_linear(p + ".attn.o", b.wo);
    fn(p + ".ln2.gain", b.ln2.gain);
    fn(p + ".ln2.bias", b.ln2.bias);
    visit_linear(p + ".mlp.fc", b.fc);
    visit_linear(p + ".mlp.proj", b.proj);
  }
  fn("final_norm.gain", m.final_norm.gain);
  fn("final_norm.bias", m.final_norm.bias);
  visit_linear("lm_head", m.lm_head);
}

// Visits exactly the adapter-targetable linear maps: attention Q/K/V/O, both
// MLP projections, and the lm_head.
template <typename Real>
void for_each_linear(TransformerModel<Real>& m,
                     const std::function<void(const std::string&, Linear<Real>&)>& fn) {
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    std::string p = "block" + std::to_string(i);
    auto& b = m.blocks[i];
    fn(p + ".attn.q", b.wq);
    fn(p + ".attn.k", b.wk);
    fn(p + ".attn.v", b.wv);
    fn(p + ".attn.o", b.wo);
    fn(p + ".mlp.fc", b.fc);
    fn(p + ".mlp.proj", b.proj);
  }
  fn("lm_head", m.lm_head);
}

template <typename Real>
std::vector<NamedParam<Real>> named_params(TransformerModel<Real>& m, const std::string& prefix = "") {
  std::vector<NamedParam<Real>> out;
  visit_params<Real>(m, [&](const std::string& n, Tensor<Real>& t) { out.push_back({prefix + n, &t}); });
  return out;
}

template <typename Real>
std::int64_t count_params(TransformerModel<Real>& m) {
  std::int64_t n = 0;
  visit_params<Real>(m, [&](const std::string&, Tensor<Real>& t) { n += static_cast<std::int64_t>(t.size()); });
  return n;
}

// Deterministic Gaussian(0, 0.02) init for weights; zeros for biases and
// layer-norm shifts, ones for layer-norm scales. Pure function of
// (config, config.seed).
template <typename Real>
TransformerModel<Real> init_model(const ModelConfig& config) {
  config.validate();
  TransformerModel<Real> m;
  m.config = config;
  Rng rng(config.seed);
  int d = config.d_model;
  m.token_embedding = gaussian_tensor<Real>({config.vocab_size, d}, rng, Real(0.02));
  m.position_embedding = gaussian_tensor<Real>({config.max_len, d}, rng, Real(0.02));
  m.blocks.resize(config.n_layers);
  for (auto& b : m.blocks) {
    b.ln1 = detail::init_layer_norm<Real>(d);
    b.wq = detail::init_linear<Real>(d, d, true, rng);
    b.wk = detail::init_linear<Real>(d, d, true, rng);
    b.wv = detail::init_linear<Real>(d, d, true, rng);
    b.wo = detail::init_linear<Real>(d, d, true, rng);
    b.ln2 = detail::init_layer_norm<Real>(d);
    b.fc = detail::init_linear<Real>(d, config.d_ff, true, rng);
    b.proj = detail::init_linear<Real>(config.d_ff, d, true, rng);
  }
  m.final_norm = detail::init_layer_norm<Real>(d);
  m.lm_head = detail::init_linear<Real>(d, config.vocab_size, false, rng);
  std::int64_t counted = count_params(m);
  std::int64_t expected = transformer_param_count(config);
  if (counted != expected) {
    throw std::logic_error("init_model: enumerated parameter count " + std::to_string(counted) +
                           " does not match closed form " + std::to_string(expected));
  }
  // Fresh models are trainable; freezing happens at adapter injection.
  visit_params<Real>(m, [](const std::string&, Tensor<Real>& t) { t.requires_grad = true; });
  return m;
}

template <typename Real>
void set_requires_grad(TransformerModel<Real>& m, bool value) {
  visit_params<Real>(m, [&](const std::string&, Tensor<Real>& t) { t.requires_grad = value; });
}

// Additive attention mask. 0 where row i may attend column j, -1e9 where it
// must not (future positions in causal mode; pad columns in both modes).
// exp underflows the -1e9 entries to exact zero weight, so masked positions
// contribute nothing, bitwise.
template <typename Real>
Tensor<Real> attention_mask(int t, const std::vector<std::uint8_t>& mask, AttentionMode mode) {
  Tensor<Real> m({t, t});
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < t; ++j) {
      bool blocked = (!mask.empty() && !mask[static_cast<std::size_t>(j)]) ||
                     (mode == AttentionMode::kCausal && j > i);
      m.at(i, j) = blocked ? Real(-1e9) : Real(0);
    }
  }
  return m;
}

// Input embeddings: token rows plus the first T position rows.
template <typename Real>
NodeId token_input(Graph<Real>& g, TransformerModel<Real>& m, const std::vector<int>& tokens) {
  int t = static_cast<int>(tokens.size());
  if (t == 0) throw std::invalid_argument("token_input: empty sequence");
  if (t > m.config.max_len) {
    throw std::invalid_argument("sequence length " + std::to_string(t) + " exceeds max_len " +
                                std::to_string(m.config.max_len));
  }
  NodeId tok = g.embedding(g.leaf(m.token_embedding), tokens);
  NodeId pos = g.slice_rows(g.leaf(m.position_embedding), 0, t);
  return g.add(tok, pos);
}

// Runs the block stack over an arbitrary [T, d_model] input node (token
// embeddings, or projected encoder states on the fused path). Returns all
// n_layers+1 states; index 0 is the input itself.
template <typename Real>
std::vector<NodeId> run_blocks(Graph<Real>& g, TransformerModel<Real>& m, NodeId x,
                               const std::vector<std::uint8_t>& mask, bool training = false,
                               Rng* rng = nullptr) {
  const Shape& sx = g.shape(x);
  if (sx.size() != 2 || sx[1] != m.config.d_model) {
    throw std::invalid_argument("run_blocks: input must be [T," + std::to_string(m.config.d_model) + "], got " +
                                shape_str(sx));
  }
  int t = sx[0];
  if (t > m.config.max_len) {
    throw std::invalid_argument("sequence length " + std::to_string(t) + " exceeds max_len " +
                                std::to_string(m.config.max_len));
  }
  if (!mask.empty() && static_cast<int>(mask.size()) != t) {
    throw std::invalid_argument("run_blocks: mask length " + std::to_string(mask.size()) +
                                " does not match sequence length " + std::to_string(t));
  }
  int n_heads = m.config.n_heads;
  int d_head = m.config.d_model / n_heads;
  Real inv_sqrt = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(d_head)));
  NodeId mask_node = g.constant(attention_mask<Real>(t, mask, m.config.attention_mode));

  std::vector<NodeId> states;
  states.reserve(m.blocks.size() + 1);
  states.push_back(x);
  for (auto& b : m.blocks) {
    // attention sublayer, pre-norm
    NodeId h = g.layer_norm(x, g.leaf(b.ln1.gain), g.leaf(b.ln1.bias));
    NodeId q = b.wq.apply(g, h, training, rng);
    NodeId k = b.wk.apply(g, h, training, rng);
    NodeId v = b.wv.apply(g, h, training, rng);
    std::vector<NodeId> heads;
    heads.reserve(n_heads);
    for (int hd = 0; hd < n_heads; ++hd) {
      int c0 = hd * d_head, c1 = (hd + 1) * d_head;
      NodeId qh = g.slice_cols(q, c0, c1);
      NodeId kh = g.slice_cols(k, c0, c1);
      NodeId vh = g.slice_cols(v, c0, c1);
      NodeId scores = g.add(g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt), mask_node);
      heads.push_back(g.matmul(g.softmax_rows(scores), vh));
    }
    NodeId ctx = n_heads == 1 ? heads[0] : g.concat_cols(heads);
    x = g.add(x, b.wo.apply(g, ctx, training, rng));
    // MLP sublayer, pre-norm
    NodeId h2 = g.layer_norm(x, g.leaf(b.ln2.gain), g.leaf(b.ln2.bias));
    NodeId up = g.gelu(b.fc.apply(g, h2, training, rng));
    x = g.add(x, b.proj.apply(g, up, training, rng));
    states.push_back(x);
  }
  return states;
}

// Final layer norm then lm_head over the last state: [T, vocab] logits.
template <typename Real>
NodeId lm_logits_graph(Graph<Real>& g, TransformerModel<Real>& m, NodeId final_state, bool training = false,
                       Rng* rng = nullptr) {
  NodeId h = g.layer_norm(final_state, g.leaf(m.final_norm.gain), g.leaf(m.final_norm.bias));
  return m.lm_head.apply(g, h, training, rng);
}

// Pooling over the final state. BOS takes position 0 (which must be a real
// token); MEAN averages non-pad positions; EOS takes the last non-pad one.
template <typename Real>
NodeId pool_graph(Graph<Real>& g, NodeId final_state, const std::vector<std::uint8_t>& mask, PoolingMode mode) {
  const Shape& s = g.shape(final_state);
  if (s.size() != 2) throw std::invalid_argument("pool: expected [T,d] state, got " + shape_str(s));
  int t = s[0], d = s[1];
  std::vector<std::uint8_t> keep = mask.empty() ? std::vector<std::uint8_t>(t, 1) : mask;
  if (static_cast<int>(keep.size()) != t) throw std::invalid_argument("pool: mask length mismatch");
  int last = -1;
  for (int i = 0; i < t; ++i)
    if (keep[i]) last = i;
  if (last < 0) throw std::invalid_argument("pool: all positions are pad");
  switch (mode) {
    case PoolingMode::kMean:
      return g.masked_mean_rows(final_state, keep);
    case PoolingMode::kBos:
      if (!keep[0]) throw std::invalid_argument("pool: BOS pooling requires a real token at position 0");
      return g.reshape(g.slice_rows(final_state, 0, 1), {d});
    case PoolingMode::kEos:
      return g.reshape(g.slice_rows(final_state, last, last + 1), {d});
  }
  throw std::logic_error("pool: unreachable");
}

// ---- eval wrappers (no gradients kept; values copied out of a local graph) ----

template <typename Real>
LayerStates<Real> encode(TransformerModel<Real>& m, const std::vector<int>& tokens,
                         const std::vector<std::uint8_t>& mask = {}) {
  if (!mask.empty() && mask.size() != tokens.size()) {
    throw std::invalid_argument("encode: mask length does not match token length");
  }
  Graph<Real> g;
  std::vector<NodeId> ids = run_blocks(g, m, token_input(g, m, tokens), mask);
  LayerStates<Real> out;
  out.states.reserve(ids.size());
  for (NodeId id : ids) out.states.push_back(g.value(id));
  out.mask = mask.empty() ? std::vector<std::uint8_t>(tokens.size(), 1) : mask;
  return out;
}

template <typename Real>
Tensor<Real> pool(const LayerStates<Real>& states, PoolingMode mode) {
  Graph<Real> g;
  Tensor<Real> final_state = states.states.back();
  return g.value(pool_graph(g, g.constant(std::move(final_state)), states.mask, mode));
}

template <typename Real>
Tensor<Real> lm_logits(TransformerModel<Real>& m, const LayerStates<Real>& states) {
  Graph<Real> g;
  return g.value(lm_logits_graph(g, m, g.constant(states.states.back())));
}

}  // namespace mtfuse
