// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <set>

#include "mtfuse/tensor.hpp"

using namespace mtfuse;

TEST_CASE("shape helpers", "[tensor]") {
  REQUIRE(shape_numel({3, 4}) == 12);
  REQUIRE(shape_numel({7}) == 7);
  REQUIRE(shape_str({3, 4}) == "[3,4]");
  REQUIRE_THROWS_AS(shape_numel({3, 0}), std::invalid_argument);
  REQUIRE_THROWS_AS(shape_numel({-1}), std::invalid_argument);
  REQUIRE_THROWS_AS(shape_numel({}), std::invalid_argument);
}

TEST_CASE("tensor construction and invariants", "[tensor]") {
  Tensor<double> t({2, 3});
  REQUIRE(t.size() == 6);
  REQUIRE(t.rows() == 2);
  REQUIRE(t.cols() == 3);
  for (double v : t.values) REQUIRE(v == 0.0);

  Tensor<double> u({2, 2}, {1, 2, 3, 4});
  REQUIRE(u.at(1, 0) == 3.0);
  u.at(1, 0) = 9.0;
  REQUIRE(u.values[2] == 9.0);

  REQUIRE_THROWS_AS(Tensor<double>({2, 2}, {1, 2, 3}), std::invalid_argument);

  Tensor<float> f = Tensor<float>::full({3}, 2.5f);
  REQUIRE(f.values == std::vector<float>{2.5f, 2.5f, 2.5f});
}

TEST_CASE("gradient slot lifecycle", "[tensor]") {
  Tensor<double> t({2, 2}, {1, 2, 3, 4});
  REQUIRE_FALSE(t.has_grad());
  t.zero_grad();
  REQUIRE(t.has_grad());
  REQUIRE(t.grad.size() == 4);
  t.grad[1] = 7.0;
  t.zero_grad();
  REQUIRE(t.grad[1] == 0.0);
  t.clear_grad();
  REQUIRE_FALSE(t.has_grad());
}

TEST_CASE("all_finite flags NaN and infinity", "[tensor]") {
  Tensor<double> t({3}, {1.0, 2.0, 3.0});
  REQUIRE(t.all_finite());
  t.values[1] = std::nan("");
  REQUIRE_FALSE(t.all_finite());
  t.values[1] = std::numeric_limits<double>::infinity();
  REQUIRE_FALSE(t.all_finite());
}

TEST_CASE("rng determinism and stream independence", "[rng]") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_differ = false;
  for (int i = 0; i < 100; ++i) {
    double va = a.uniform(), vb = b.uniform(), vc = c.uniform();
    all_equal = all_equal && (va == vb);
    any_differ = any_differ || (va != vc);
  }
  REQUIRE(all_equal);
  REQUIRE(any_differ);
}

TEST_CASE("uniform is in [0,1) with plausible mean", "[rng]") {
  Rng rng(7);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) {
    double v = rng.uniform();
    REQUIRE(v >= 0.0);
    REQUIRE(v < 1.0);
    sum += v;
  }
  REQUIRE_THAT(sum / 20000, Catch::Matchers::WithinAbs(0.5, 0.01));
}

TEST_CASE("normal has unit moments", "[rng]") {
  Rng rng(11);
  const int n = 50000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(0.0, 0.02));
  REQUIRE_THAT(var, Catch::Matchers::WithinAbs(1.0, 0.03));
}

TEST_CASE("uniform_int covers inclusive range", "[rng]") {
  Rng rng(5);
  std::set<int> seen;
  for (int i = 0; i < 2000; ++i) {
    int v = rng.uniform_int(3, 7);
    REQUIRE(v >= 3);
    REQUIRE(v <= 7);
    seen.insert(v);
  }
  REQUIRE(seen.size() == 5);
  REQUIRE(rng.uniform_int(4, 4) == 4);
  REQUIRE_THROWS_AS(rng.uniform_int(5, 4), std::invalid_argument);
}

TEST_CASE("weighted_index matches weights", "[rng]") {
  Rng rng(13);
  std::vector<double> w = {1.0, 3.0, 6.0};
  std::vector<int> counts(3, 0);
  const int n = 30000;
  for (int i = 0; i < n; ++i) ++counts[rng.weighted_index(w)];
  REQUIRE_THAT(counts[0] / double(n), Catch::Matchers::WithinAbs(0.1, 0.01));
  REQUIRE_THAT(counts[1] / double(n), Catch::Matchers::WithinAbs(0.3, 0.015));
  REQUIRE_THAT(counts[2] / double(n), Catch::Matchers::WithinAbs(0.6, 0.015));
  REQUIRE_THROWS_AS(rng.weighted_index(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("shuffle is a permutation and seed-stable", "[rng]") {
  std::vector<int> v(20);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> w = v;
  Rng a(99), b(99);
  a.shuffle(v);
  b.shuffle(w);
  REQUIRE(v == w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> expect(20);
  std::iota(expect.begin(), expect.end(), 0);
  REQUIRE(sorted == expect);
}

TEST_CASE("gaussian_tensor is seed-deterministic with requested spread", "[rng]") {
  Rng a(3), b(3);
  auto t = gaussian_tensor<double>({50, 40}, a, 0.02);
  auto u = gaussian_tensor<double>({50, 40}, b, 0.02);
  REQUIRE(t.values == u.values);
  double sq = 0;
  for (double v : t.values) sq += v * v;
  REQUIRE_THAT(std::sqrt(sq / t.size()), Catch::Matchers::WithinRel(0.02, 0.05));
}
