// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mtfuse/gradcheck.hpp"
#include "mtfuse/mt_model.hpp"
#include "mtfuse/optim.hpp"

using namespace mtfuse;

namespace {

MTConfig tiny_mt_config() {
  MTConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = 128;
  c.max_len = 24;
  c.n_languages = 6;
  c.seed = 5;
  return c;
}

SynthConfig data_config() {
  SynthConfig c;
  c.seed = 77;
  return c;
}

}  // namespace

TEST_CASE("decoder parameter count matches an independent per-tensor count", "[mt]") {
  MTConfig c = tiny_mt_config();
  auto m = init_mt_model<float>(c);
  // independent recount: embeddings, per-block self/cross/mlp, final, head
  std::int64_t d = 16, ff = 32, v = 128, maxlen = 24;
  std::int64_t expect = v * d + maxlen * d;
  expect += 2 * d + 4 * (d * d + d);  // ln_self + self-attention
  expect += 2 * d + 4 * (d * d + d);  // ln_cross + cross-attention
  expect += 2 * d + (d * ff + ff) + (ff * d + d);
  expect += 2 * d + d * v;
  std::int64_t dec_count = 0;
  visit_decoder_params<float>(m, [&](const std::string&, Tensor<float>& t) {
    dec_count += static_cast<std::int64_t>(t.size());
  });
  REQUIRE(dec_count == expect);
  REQUIRE(mt_decoder_param_count(c) == expect);
}

TEST_CASE("encoder states are d_E wide, deterministic, tag-aware", "[mt]") {
  auto m = init_mt_model<float>(tiny_mt_config());
  std::vector<int> src = {20, 45, 33, 71};
  auto st = encoder_states(m, src, 2);
  REQUIRE(st.states.size() == 2);  // 1 layer + input
  for (const auto& s : st.states) REQUIRE(s.shape == Shape{5, 16});  // tag + 4 tokens

  auto again = encoder_states(m, src, 2);
  bool identical = true;
  for (std::size_t l = 0; l < st.states.size(); ++l) identical = identical && st.states[l].values == again.states[l].values;
  REQUIRE(identical);

  auto other_lang = encoder_states(m, src, 3);
  REQUIRE(other_lang.states.back().values != st.states.back().values);

  REQUIRE_THROWS_AS(encoder_states(m, src, 6), std::invalid_argument);
  REQUIRE_THROWS_AS(encoder_states(m, src, -1), std::invalid_argument);
}

TEST_CASE("untrained translation loss sits at the uniform-logit level", "[mt]") {
  auto m = init_mt_model<double>(tiny_mt_config());
  SynthGen gen(data_config());
  auto corpus = gen.gen_parallel_corpus(1, 24, {0, 1, 2, 3, 4, 5});
  double total = 0;
  for (const auto& p : corpus) {
    Graph<double> g;
    total += g.vals(mt_pair_loss_graph(g, m, p))[0];
  }
  REQUIRE_THAT(total / corpus.size(), Catch::Matchers::WithinRel(std::log(128.0), 0.15));
}

TEST_CASE("mt_train_step reduces loss on a small corpus", "[mt]") {
  auto m = init_mt_model<float>(tiny_mt_config());
  SynthGen gen(data_config());
  auto corpus = gen.gen_parallel_corpus(2, 64, {0, 1});
  TrainConfig tc;
  tc.weight_decay = 0.01;
  AdamW<float> opt(named_mt_params(m), tc);
  REQUIRE_THROWS_AS(mt_train_step(m, std::vector<MTPair>{}, opt, 1e-3), std::invalid_argument);

  double first10 = 0, last10 = 0;
  int steps = 60, bs = 8;
  for (int s = 0; s < steps; ++s) {
    std::vector<MTPair> batch;
    for (int b = 0; b < bs; ++b) batch.push_back(corpus[static_cast<std::size_t>((s * bs + b) % corpus.size())]);
    double loss = mt_train_step(m, batch, opt, 3e-3);
    if (s < 10) first10 += loss;
    if (s >= steps - 10) last10 += loss;
  }
  REQUIRE(last10 < first10);
  REQUIRE(opt.step_count() == steps);
}

TEST_CASE("greedy decoding is deterministic and length-capped", "[mt]") {
  auto m = init_mt_model<float>(tiny_mt_config());
  std::vector<int> src = {30, 41, 52, 63, 74};
  auto a = translate_greedy(m, src, 1, 2, 12);
  auto b = translate_greedy(m, src, 1, 2, 12);
  REQUIRE(a == b);
  REQUIRE(a.size() <= 12);
  auto short_out = translate_greedy(m, src, 1, 2, 3);
  REQUIRE(short_out.size() <= 3);
  REQUIRE_THROWS_AS(translate_greedy(m, src, 1, 2, 0), std::invalid_argument);
  REQUIRE_THROWS_AS(translate_greedy(m, src, 9, 2, 4), std::invalid_argument);
}

TEST_CASE("decoder is causal: later inputs cannot touch earlier logits", "[mt]") {
  auto m = init_mt_model<float>(tiny_mt_config());
  std::vector<int> src = {30, 41, 52};
  std::vector<int> dec_in = {kBosId, m.lang_tag(1), 44, 67};
  Graph<float> g;
  auto enc = encoder_states_graph(g, m, src, 0);
  NodeId logits = decoder_logits_graph(g, m, run_decoder(g, m, enc.back(), dec_in));
  std::vector<int> longer = dec_in;
  longer.push_back(99);
  Graph<float> g2;
  auto enc2 = encoder_states_graph(g2, m, src, 0);
  NodeId logits2 = decoder_logits_graph(g2, m, run_decoder(g2, m, enc2.back(), longer));
  for (int t = 0; t < 4; ++t) {
    for (int vcb = 0; vcb < 128; ++vcb) {
      REQUIRE(g.vals(logits)[t * 128 + vcb] == g2.vals(logits2)[t * 128 + vcb]);
    }
  }
}

TEST_CASE("translation gradient check in double precision", "[mt][gradcheck]") {
  MTConfig c = tiny_mt_config();
  c.d_model = 12;
  c.n_heads = 2;
  c.d_ff = 24;
  c.vocab_size = 40;
  c.max_len = 16;
  c.n_languages = 3;
  auto m = init_mt_model<double>(c);
  MTPair p;
  p.src = {20, 31, 25};
  p.tgt = {31, 20, 25};
  p.src_lang = 0;
  p.tgt_lang = 2;
  Rng rng(9);
  auto res = finite_diff_check<double>(
      named_mt_params(m),
      [&] {
        Graph<double> g;
        return g.vals(mt_pair_loss_graph(g, m, p))[0];
      },
      [&] {
        Graph<double> g;
        g.backward(mt_pair_loss_graph(g, m, p));
      },
      rng, 1e-5, 4);
  INFO("worst: " << res.worst_coord << " err " << res.max_rel_err);
  REQUIRE(res.max_rel_err <= 1e-5);
}
