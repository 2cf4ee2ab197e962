// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Fusing the MT encoder into the LM: low-rank adapters on every linear layer
// of the LM, the d_E -> d_M projection bridge, the frozen/trainable parameter
// partition, and the fused and teacher forward passes.

#pragma once

#include <string>
#include <vector>

#include "mtfuse/mt_model.hpp"
#include "mtfuse/transformer.hpp"

namespace mtfuse {

template <typename Real>
bool has_adapters(TransformerModel<Real>& m) {
  bool any = false;
  for_each_linear<Real>(m, [&](const std::string&, Linear<Real>& l) { any = any || (l.adapter != nullptr); });
  return any;
}

// Inserts adapters into every linear layer (attention Q/K/V/O, both MLP maps,
// lm_head) and freezes all base weights. down ~ Gaussian(0, 0.02), up = 0, so
// the adapted forward is bit-identical to the base model until training.
template <typename Real>
void inject_lora(TransformerModel<Real>& m, int r, Real alpha, double dropout_p, unsigned seed) {
  if (has_adapters(m)) throw std::logic_error("inject_lora: model already has adapters");
  Rng rng(mix_seed(seed, 0x10A0));
  for_each_linear<Real>(m, [&](const std::string&, Linear<Real>& l) {
    l.adapter = std::make_unique<LoraAdapter<Real>>(make_lora_adapter<Real>(l.d_in(), l.d_out(), r, alpha, dropout_p, rng));
  });
  visit_params<Real>(m, [](const std::string& name, Tensor<Real>& t) {
    bool is_adapter = name.find(".lora_") != std::string::npos;
    t.requires_grad = is_adapter;
  });
}

// Trainable adapter parameter count: sum of r * (d_in + d_out) over layers.
template <typename Real>
std::int64_t lora_param_count(TransformerModel<Real>& m) {
  std::int64_t n = 0;
  for_each_linear<Real>(m, [&](const std::string&, Linear<Real>& l) {
    if (l.adapter) n += static_cast<std::int64_t>(l.adapter->down.size() + l.adapter->up.size());
  });
  return n;
}

template <typename Real>
void set_adapters_enabled(TransformerModel<Real>& m, bool enabled) {
  for_each_linear<Real>(m, [&](const std::string&, Linear<Real>& l) {
    if (l.adapter) l.adapter->enabled = enabled;
  });
}

// Scope guard that disables every adapter and restores the previous
// per-adapter enabled flags on exit; the teacher pass runs under this.
template <typename Real>
class AdapterDisableGuard {
 public:
  explicit AdapterDisableGuard(TransformerModel<Real>& m) {
    for_each_linear<Real>(m, [&](const std::string&, Linear<Real>& l) {
      if (l.adapter) {
        saved_.emplace_back(l.adapter.get(), l.adapter->enabled);
        l.adapter->enabled = false;
      }
    });
  }
  ~AdapterDisableGuard() {
    for (auto& [adapter, was_enabled] : saved_) adapter->enabled = was_enabled;
  }
  AdapterDisableGuard(const AdapterDisableGuard&) = delete;
  AdapterDisableGuard& operator=(const AdapterDisableGuard&) = delete;

 private:
  std::vector<std::pair<LoraAdapter<Real>*, bool>> saved_;
};

template <typename Real>
struct ProjectionBridge {
  Tensor<Real> weight;  // [d_E, d_M], no bias
};

// The MT-LM composite. Both backbones are borrowed (caller keeps them alive);
// the trainable set is exactly {bridge.weight} plus the LM's adapter tensors.
template <typename Real>
struct FusedModel {
  MTModel<Real>* mt = nullptr;
  TransformerModel<Real>* lm = nullptr;
  ProjectionBridge<Real> bridge;
  int encoder_layer_index = -1;  // index into encoder LayerStates; default last
  PoolingMode pooling = PoolingMode::kMean;
};

template <typename Real>
FusedModel<Real> build_fused(MTModel<Real>& mt, TransformerModel<Real>& lm, int encoder_layer_index,
                             PoolingMode pooling, unsigned seed) {
  if (!has_adapters(lm)) throw std::invalid_argument("build_fused: lm must be adapter-injected first");
  if (encoder_layer_index < 0 || encoder_layer_index > mt.config.n_layers) {
    throw std::invalid_argument("build_fused: encoder_layer_index " + std::to_string(encoder_layer_index) +
                                " outside [0," + std::to_string(mt.config.n_layers) + "]");
  }
  FusedModel<Real> f;
  f.mt = &mt;
  f.lm = &lm;
  f.encoder_layer_index = encoder_layer_index;
  f.pooling = pooling;
  Rng rng(mix_seed(seed, 0xB21D));
  f.bridge.weight = gaussian_tensor<Real>({mt.config.d_model, lm.config.d_model}, rng, Real(0.02));
  f.bridge.weight.requires_grad = true;
  set_mt_requires_grad(mt, false);
  visit_params<Real>(lm, [](const std::string& name, Tensor<Real>& t) {
    t.requires_grad = name.find(".lora_") != std::string::npos;
  });
  return f;
}

// Theta: the only tensors any fused-training optimizer may touch.
template <typename Real>
std::vector<NamedParam<Real>> fused_trainable_params(FusedModel<Real>& f) {
  std::vector<NamedParam<Real>> out;
  out.push_back({"bridge.weight", &f.bridge.weight});
  for_each_linear<Real>(*f.lm, [&](const std::string& name, Linear<Real>& l) {
    if (l.adapter) {
      out.push_back({"lm." + name + ".lora_down", &l.adapter->down});
      out.push_back({"lm." + name + ".lora_up", &l.adapter->up});
    }
  });
  return out;
}

// z-bar: MT-encode (tag-prefixed), select a layer, project d_E -> d_M, add LM
// position embeddings, run the adapted LM blocks, pool. The pooling mode is
// explicit so task phases can pool differently from the alignment default.
template <typename Real>
NodeId fused_forward_graph(Graph<Real>& g, FusedModel<Real>& f, const std::vector<int>& tokens, int lang,
                           PoolingMode pooling, bool training = false, Rng* rng = nullptr) {
  auto enc = encoder_states_graph(g, *f.mt, tokens, lang);
  NodeId sel = enc[static_cast<std::size_t>(f.encoder_layer_index)];
  NodeId proj = g.matmul(sel, g.leaf(f.bridge.weight));
  int t_e = g.shape(proj)[0];
  if (t_e > f.lm->config.max_len) {
    throw std::invalid_argument("fused_forward: encoder length " + std::to_string(t_e) + " exceeds LM max_len " +
                                std::to_string(f.lm->config.max_len));
  }
  NodeId x0 = g.add(proj, g.slice_rows(g.leaf(f.lm->position_embedding), 0, t_e));
  auto states = run_blocks(g, *f.lm, x0, {}, training, rng);
  return pool_graph(g, states.back(), {}, pooling);
}

template <typename Real>
NodeId fused_forward_graph(Graph<Real>& g, FusedModel<Real>& f, const std::vector<int>& tokens, int lang,
                           bool training = false, Rng* rng = nullptr) {
  return fused_forward_graph(g, f, tokens, lang, f.pooling, training, rng);
}

template <typename Real>
Tensor<Real> fused_forward(FusedModel<Real>& f, const std::vector<int>& tokens, int lang) {
  Graph<Real> g;
  return g.value(fused_forward_graph(g, f, tokens, lang));
}

// x-bar: the unmodified base LM (all adapters disabled) on the LM's own
// tokenization, pooled with the same mode. Carries no gradient.
template <typename Real>
Tensor<Real> teacher_forward(FusedModel<Real>& f, const std::vector<int>& tokens_lm) {
  AdapterDisableGuard<Real> guard(*f.lm);
  Graph<Real> g;
  auto states = run_blocks(g, *f.lm, token_input(g, *f.lm, tokens_lm), {});
  return g.value(pool_graph(g, states.back(), {}, f.pooling));
}

}  // namespace mtfuse
