// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff on a tape. Nodes are appended in construction order,
// which is a topological order by construction; backward walks the tape once
// in reverse. Leaf nodes may reference long-lived parameter tensors, whose
// persistent .grad slots accumulate across backward calls until cleared.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mtfuse/tensor.hpp"

namespace mtfuse {

using NodeId = int;

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <typename Real>
void gemm_acc(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* arow = a + static_cast<std::size_t>(i) * k;
    Real* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == Real(0)) continue;
      const Real* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T  (rows of B dotted with rows of A)
template <typename Real>
void gemm_acc_nt(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* arow = a + static_cast<std::size_t>(i) * k;
    Real* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const Real* brow = b + static_cast<std::size_t>(j) * k;
      Real acc = 0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename Real>
void gemm_acc_tn(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* arow = a + static_cast<std::size_t>(i) * k;
    const Real* brow = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == Real(0)) continue;
      Real* crow = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

constexpr double kGeluCoef = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

}  // namespace detail

template <typename Real>
class Graph {
 public:
  struct Node {
    const char* op;
    std::vector<NodeId> inputs;
    Tensor<Real> owned;                 // storage for op outputs
    const Tensor<Real>* external = nullptr;  // leaf view into a parameter
    Tensor<Real>* param = nullptr;      // gradient sink for trainable leaves
    std::vector<Real> grad;             // per-backward-call, lazily allocated
    bool needs_grad = false;
    std::function<void()> backward_fn;
  };

  bool check_finite = true;

  const Tensor<Real>& value(NodeId id) const {
    const Node& n = node(id);
    return n.external ? *n.external : n.owned;
  }
  const std::vector<Real>& vals(NodeId id) const { return value(id).values; }
  const Shape& shape(NodeId id) const { return value(id).shape; }
  std::size_t node_count() const { return nodes_.size(); }
  const char* op_name(NodeId id) const { return node(id).op; }
  // Gradient of a node from the most recent backward (empty if untouched).
  const std::vector<Real>& grad(NodeId id) const { return node(id).grad; }

  // ---- leaves ----

  // References t's storage; t must outlive the graph. If t.requires_grad,
  // backward accumulates into t.grad.
  NodeId leaf(Tensor<Real>& t) {
    Node n;
    n.op = "leaf";
    n.external = &t;
    n.param = t.requires_grad ? &t : nullptr;
    n.needs_grad = t.requires_grad;
    return push(std::move(n));
  }

  // Owns a copy; never requires gradients.
  NodeId constant(Tensor<Real> t) {
    Node n;
    n.op = "constant";
    n.owned = std::move(t);
    return push(std::move(n));
  }

  // ---- elementwise and structural ops ----

  NodeId add(NodeId a, NodeId b) {
    require_same_shape("add", a, b);
    Node n = make("add", {a, b}, Tensor<Real>(shape(a)));
    const auto& av = vals(a);
    const auto& bv = vals(b);
    for (std::size_t i = 0; i < av.size(); ++i) n.owned.values[i] = av[i] + bv[i];
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, a, b] {
      const auto& g = nodes_[id].grad;
      if (input_needs_grad(a)) {
        auto& ga = grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (input_needs_grad(b)) {
        auto& gb = grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
    return id;
  }

  // [m,n] + [n], broadcast over rows.
  NodeId add_bias(NodeId a, NodeId b) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    if (sa.size() != 2 || sb.size() != 1 || sa[1] != sb[0]) {
      fail("add_bias", "expected [m,n] + [n], got " + shape_str(sa) + " + " + shape_str(sb));
    }
    int m = sa[0], nn = sa[1];
    Node n = make("add_bias", {a, b}, Tensor<Real>(sa));
    const auto& av = vals(a);
    const auto& bv = vals(b);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < nn; ++j)
        n.owned.values[static_cast<std::size_t>(i) * nn + j] = av[static_cast<std::size_t>(i) * nn + j] + bv[j];
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, a, b, m, nn] {
      const auto& g = nodes_[id].grad;
      if (input_needs_grad(a)) {
        auto& ga = grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (input_needs_grad(b)) {
        auto& gb = grad_buf(b);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < nn; ++j) gb[j] += g[static_cast<std::size_t>(i) * nn + j];
      }
    });
    return id;
  }

  NodeId mul(NodeId a, NodeId b) {
    require_same_shape("mul", a, b);
    Node n = make("mul", {a, b}, Tensor<Real>(shape(a)));
    const auto& av = vals(a);
    const auto& bv = vals(b);
    for (std::size_t i = 0; i < av.size(); ++i) n.owned.values[i] = av[i] * bv[i];
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, a, b] {
      const auto& g = nodes_[id].grad;
      const auto& av = vals(a);
      const auto& bv = vals(b);
      if (input_needs_grad(a)) {
        auto& ga = grad_buf(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (input_needs_grad(b)) {
        auto& gb = grad_buf(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
    return id;
  }

  NodeId scale(NodeId a, Real c) {
    Node n = make("scale", {a}, Tensor<Real>(shape(a)));
    const auto& av = vals(a);
    for (std::size_t i = 0; i < av.size(); ++i) n.owned.values[i] = av[i] * c;
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, a, c] {
      if (!input_needs_grad(a)) return;
      const auto& g = nodes_[id].grad;
      auto& ga = grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
    return id;
  }

  NodeId reshape(NodeId a, Shape target) {
    if (shape_numel(target) != static_cast<std::int64_t>(vals(a).size())) {
      fail("reshape", "cannot reshape " + shape_str(shape(a)) + " to " + shape_str(target));
    }
    Node n = make("reshape", {a}, Tensor<Real>(target, vals(a)));
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, a] {
      if (!input_needs_grad(a)) return;
      const auto& g = nodes_[id].grad;
      auto& ga = grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return id;
  }

  NodeId transpose(NodeId a) {
    const Shape& sa = shape(a);
    if (sa.size() != 2) fail("transpose", "expected rank-2, got " + shape_str(sa));
    int m = sa[0], nn = sa[1];
    Node n = make("transpose", {a}, Tensor<Real>({nn, m}));
    const auto& av = vals(a);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < nn; ++j)
        n.owned.values[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * nn + j];
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, a, m, nn] {
      if (!input_needs_grad(a)) return;
      const auto& g = nodes_[id].grad;
      auto& ga = grad_buf(a);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < nn; ++j)
          ga[static_cast<std::size_t>(i) * nn + j] += g[static_cast<std::size_t>(j) * m + i];
    });
    return id;
  }

  NodeId slice_rows(NodeId a, int r0, int r1) {
    const Shape& sa = shape(a);
    if (sa.size() != 2 || r0 < 0 || r1 > sa[0] || r0 >= r1) {
      fail("slice_rows", "rows [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " + shape_str(sa));
    }
    int nn = sa[1];
    Node n = make("slice_rows", {a}, Tensor<Real>({r1 - r0, nn}));
    const auto& av = vals(a);
    std::copy(av.begin() + static_cast<std::size_t>(r0) * nn, av.begin() + static_cast<std::size_t>(r1) * nn,
              n.owned.values.begin());
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, a, r0, nn] {
      if (!input_needs_grad(a)) return;
      const auto& g = nodes_[id].grad;
      auto& ga = grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[static_cast<std::size_t>(r0) * nn + i] += g[i];
    });
    return id;
  }

  NodeId slice_cols(NodeId a, int c0, int c1) {
    const Shape& sa = shape(a);
    if (sa.size() != 2 || c0 < 0 || c1 > sa[1] || c0 >= c1) {
      fail("slice_cols", "cols [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " + shape_str(sa));
    }
    int m = sa[0], nn = sa[1], w = c1 - c0;
    Node n = make("slice_cols", {a}, Tensor<Real>({m, w}));
    const auto& av = vals(a);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        n.owned.values[static_cast<std::size_t>(i) * w + j] = av[static_cast<std::size_t>(i) * nn + c0 + j];
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, a, m, nn, c0, w] {
      if (!input_needs_grad(a)) return;
      const auto& g = nodes_[id].grad;
      auto& ga = grad_buf(a);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          ga[static_cast<std::size_t>(i) * nn + c0 + j] += g[static_cast<std::size_t>(i) * w + j];
    });
    return id;
  }

  // Stack along rows. Rank-1 inputs concatenate into one rank-1 vector.
  NodeId concat_rows(const std::vector<NodeId>& parts) {
    if (parts.empty()) fail("concat_rows", "no inputs");
    bool vec = shape(parts[0]).size() == 1;
    int nn = vec ? 0 : shape(parts[0])[1];
    std::int64_t total = 0;
    for (NodeId p : parts) {
      const Shape& sp = shape(p);
      if (vec) {
        if (sp.size() != 1) fail("concat_rows", "mixed ranks");
        total += sp[0];
      } else {
        if (sp.size() != 2 || sp[1] != nn) fail("concat_rows", "column mismatch at " + shape_str(sp));
        total += sp[0];
      }
    }
    Shape out = vec ? Shape{static_cast<int>(total)} : Shape{static_cast<int>(total), nn};
    Node n = make("concat_rows", parts, Tensor<Real>(out));
    std::size_t off = 0;
    for (NodeId p : parts) {
      const auto& pv = vals(p);
      std::copy(pv.begin(), pv.end(), n.owned.values.begin() + off);
      off += pv.size();
    }
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, parts] {
      const auto& g = nodes_[id].grad;
      std::size_t off = 0;
      for (NodeId p : parts) {
        std::size_t len = vals(p).size();
        if (input_needs_grad(p)) {
          auto& gp = grad_buf(p);
          for (std::size_t i = 0; i < len; ++i) gp[i] += g[off + i];
        }
        off += len;
      }
    });
    return id;
  }

  NodeId concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) fail("concat_cols", "no inputs");
    int m = shape(parts[0]).size() == 2 ? shape(parts[0])[0] : -1;
    if (m < 0) fail("concat_cols", "expected rank-2 inputs");
    int total = 0;
    for (NodeId p : parts) {
      const Shape& sp = shape(p);
      if (sp.size() != 2 || sp[0] != m) fail("concat_cols", "row mismatch at " + shape_str(sp));
      total += sp[1];
    }
    Node n = make("concat_cols", parts, Tensor<Real>({m, total}));
    int coff = 0;
    for (NodeId p : parts) {
      const auto& pv = vals(p);
      int w = shape(p)[1];
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          n.owned.values[static_cast<std::size_t>(i) * total + coff + j] = pv[static_cast<std::size_t>(i) * w + j];
      coff += w;
    }
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, parts, m, total] {
      const auto& g = nodes_[id].grad;
      int coff = 0;
      for (NodeId p : parts) {
        int w = this->shape(p)[1];
        if (input_needs_grad(p)) {
          auto& gp = grad_buf(p);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
              gp[static_cast<std::size_t>(i) * w + j] += g[static_cast<std::size_t>(i) * total + coff + j];
        }
        coff += w;
      }
    });
    return id;
  }

  // ---- linear algebra ----

  NodeId matmul(NodeId a, NodeId b) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
      fail("matmul", "incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
    }
    int m = sa[0], k = sa[1], nn = sb[1];
    Node n = make("matmul", {a, b}, Tensor<Real>({m, nn}));
    detail::gemm_acc(vals(a).data(), vals(b).data(), n.owned.values.data(), m, k, nn);
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, a, b, m, k, nn] {
      const auto& g = nodes_[id].grad;
      if (input_needs_grad(a)) {
        // dA += dC * B^T
        detail::gemm_acc_nt(g.data(), vals(b).data(), grad_buf(a).data(), m, nn, k);
      }
      if (input_needs_grad(b)) {
        // dB += A^T * dC
        detail::gemm_acc_tn(vals(a).data(), g.data(), grad_buf(b).data(), m, k, nn);
      }
    });
    return id;
  }

  // ---- nonlinearities ----

  NodeId gelu(NodeId a) {
    Node n = make("gelu", {a}, Tensor<Real>(shape(a)));
    const auto& av = vals(a);
    for (std::size_t i = 0; i < av.size(); ++i) {
      double x = static_cast<double>(av[i]);
      double u = detail::kGeluCoef * (x + detail::kGeluCubic * x * x * x);
      n.owned.values[i] = static_cast<Real>(0.5 * x * (1.0 + std::tanh(u)));
    }
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, a] {
      if (!input_needs_grad(a)) return;
      const auto& g = nodes_[id].grad;
      const auto& av = vals(a);
      auto& ga = grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double x = static_cast<double>(av[i]);
        double u = detail::kGeluCoef * (x + detail::kGeluCubic * x * x * x);
        double t = std::tanh(u);
        double du = detail::kGeluCoef * (1.0 + 3.0 * detail::kGeluCubic * x * x);
        double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        ga[i] += g[i] * static_cast<Real>(d);
      }
    });
    return id;
  }

  // Row softmax with max subtraction.
  NodeId softmax_rows(NodeId a) {
    const Shape& sa = shape(a);
    if (sa.size() != 2) fail("softmax_rows", "expected rank-2, got " + shape_str(sa));
    int m = sa[0], nn = sa[1];
    Node n = make("softmax_rows", {a}, Tensor<Real>(sa));
    const auto& av = vals(a);
    for (int i = 0; i < m; ++i) {
      const Real* row = av.data() + static_cast<std::size_t>(i) * nn;
      Real* out = n.owned.values.data() + static_cast<std::size_t>(i) * nn;
      Real mx = row[0];
      for (int j = 1; j < nn; ++j) mx = std::max(mx, row[j]);
      Real sum = 0;
      for (int j = 0; j < nn; ++j) {
        out[j] = static_cast<Real>(std::exp(static_cast<double>(row[j] - mx)));
        sum += out[j];
      }
      for (int j = 0; j < nn; ++j) out[j] /= sum;
    }
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, a, m, nn] {
      if (!input_needs_grad(a)) return;
      const auto& g = nodes_[id].grad;
      const auto& y = vals(id);
      auto& ga = grad_buf(a);
      for (int i = 0; i < m; ++i) {
        const Real* yr = y.data() + static_cast<std::size_t>(i) * nn;
        const Real* gr = g.data() + static_cast<std::size_t>(i) * nn;
        Real dot = 0;
        for (int j = 0; j < nn; ++j) dot += yr[j] * gr[j];
        Real* gar = ga.data() + static_cast<std::size_t>(i) * nn;
        for (int j = 0; j < nn; ++j) gar[j] += yr[j] * (gr[j] - dot);
      }
    });
    return id;
  }

  // Per-row normalization over the last dimension with learned scale/shift.
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, Real eps = Real(1e-5)) {
    const Shape& sx = shape(x);
    if (sx.size() != 2) fail("layer_norm", "expected rank-2 input, got " + shape_str(sx));
    int m = sx[0], nn = sx[1];
    if (shape(gain) != Shape{nn} || shape(bias) != Shape{nn}) {
      fail("layer_norm", "gain/bias must be [" + std::to_string(nn) + "]");
    }
    Node n = make("layer_norm", {x, gain, bias}, Tensor<Real>(sx));
    const auto& xv = vals(x);
    const auto& gv = vals(gain);
    const auto& bv = vals(bias);
    // inv-stddev and normalized values are needed by backward
    auto xhat = std::make_shared<std::vector<Real>>(xv.size());
    auto inv_std = std::make_shared<std::vector<Real>>(m);
    for (int i = 0; i < m; ++i) {
      const Real* row = xv.data() + static_cast<std::size_t>(i) * nn;
      Real mean = 0;
      for (int j = 0; j < nn; ++j) mean += row[j];
      mean /= nn;
      Real var = 0;
      for (int j = 0; j < nn; ++j) var += (row[j] - mean) * (row[j] - mean);
      var /= nn;
      Real is = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(var + eps)));
      (*inv_std)[i] = is;
      for (int j = 0; j < nn; ++j) {
        Real h = (row[j] - mean) * is;
        (*xhat)[static_cast<std::size_t>(i) * nn + j] = h;
        n.owned.values[static_cast<std::size_t>(i) * nn + j] = h * gv[j] + bv[j];
      }
    }
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, x, gain, bias, m, nn, xhat, inv_std] {
      const auto& g = nodes_[id].grad;
      const auto& gv = vals(gain);
      if (input_needs_grad(gain)) {
        auto& gg = grad_buf(gain);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < nn; ++j)
            gg[j] += g[static_cast<std::size_t>(i) * nn + j] * (*xhat)[static_cast<std::size_t>(i) * nn + j];
      }
      if (input_needs_grad(bias)) {
        auto& gb = grad_buf(bias);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < nn; ++j) gb[j] += g[static_cast<std::size_t>(i) * nn + j];
      }
      if (input_needs_grad(x)) {
        auto& gx = grad_buf(x);
        for (int i = 0; i < m; ++i) {
          const Real* gr = g.data() + static_cast<std::size_t>(i) * nn;
          const Real* hr = xhat->data() + static_cast<std::size_t>(i) * nn;
          Real sum_dh = 0, sum_dh_h = 0;
          for (int j = 0; j < nn; ++j) {
            Real dh = gr[j] * gv[j];
            sum_dh += dh;
            sum_dh_h += dh * hr[j];
          }
          Real inv_n = Real(1) / nn;
          for (int j = 0; j < nn; ++j) {
            Real dh = gr[j] * gv[j];
            gx[static_cast<std::size_t>(i) * nn + j] +=
                (*inv_std)[i] * (dh - inv_n * sum_dh - hr[j] * inv_n * sum_dh_h);
          }
        }
      }
    });
    return id;
  }

  // ---- lookup, dropout ----

  NodeId embedding(NodeId table, const std::vector<int>& ids) {
    const Shape& st = shape(table);
    if (st.size() != 2) fail("embedding", "table must be rank-2, got " + shape_str(st));
    int vocab = st[0], d = st[1];
    for (int tok : ids) {
      if (tok < 0 || tok >= vocab) {
        fail("embedding", "token id " + std::to_string(tok) + " out of vocabulary [0," + std::to_string(vocab) + ")");
      }
    }
    int t = static_cast<int>(ids.size());
    Node n = make("embedding", {table}, Tensor<Real>({t, d}));
    const auto& tv = vals(table);
    for (int i = 0; i < t; ++i)
      std::copy(tv.begin() + static_cast<std::size_t>(ids[i]) * d, tv.begin() + static_cast<std::size_t>(ids[i] + 1) * d,
                n.owned.values.begin() + static_cast<std::size_t>(i) * d);
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, table, ids, d] {
      if (!input_needs_grad(table)) return;
      const auto& g = nodes_[id].grad;
      auto& gt = grad_buf(table);
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j) gt[static_cast<std::size_t>(ids[i]) * d + j] += g[i * d + j];
    });
    return id;
  }

  // Inverted scaling: kept positions are multiplied by 1/(1-p) at train time,
  // eval forward is the identity (returns the input node).
  NodeId dropout(NodeId a, double p, bool training, Rng* rng) {
    if (p < 0.0 || p >= 1.0) fail("dropout", "p must be in [0,1), got " + std::to_string(p));
    if (!training || p == 0.0) return a;
    if (rng == nullptr) fail("dropout", "training-mode dropout requires an rng");
    auto mask = std::make_shared<std::vector<Real>>(vals(a).size());
    Real keep_scale = static_cast<Real>(1.0 / (1.0 - p));
    for (auto& mv : *mask) mv = (rng->uniform() >= p) ? keep_scale : Real(0);
    Node n = make("dropout", {a}, Tensor<Real>(shape(a)));
    const auto& av = vals(a);
    for (std::size_t i = 0; i < av.size(); ++i) n.owned.values[i] = av[i] * (*mask)[i];
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, a, mask] {
      if (!input_needs_grad(a)) return;
      const auto& g = nodes_[id].grad;
      auto& ga = grad_buf(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
    });
    return id;
  }

  // ---- reductions ----

  NodeId sum_all(NodeId a) { return reduce(a, false); }
  NodeId mean_all(NodeId a) { return reduce(a, true); }

  // Mean over rows whose mask bit is set -> [n].
  NodeId masked_mean_rows(NodeId a, const std::vector<std::uint8_t>& mask) {
    const Shape& sa = shape(a);
    if (sa.size() != 2) fail("masked_mean_rows", "expected rank-2, got " + shape_str(sa));
    int m = sa[0], nn = sa[1];
    if (static_cast<int>(mask.size()) != m) fail("masked_mean_rows", "mask length mismatch");
    int count = 0;
    for (auto b : mask) count += b ? 1 : 0;
    if (count == 0) fail("masked_mean_rows", "all rows masked out");
    Node n = make("masked_mean_rows", {a}, Tensor<Real>({nn}));
    const auto& av = vals(a);
    for (int i = 0; i < m; ++i) {
      if (!mask[i]) continue;
      for (int j = 0; j < nn; ++j) n.owned.values[j] += av[static_cast<std::size_t>(i) * nn + j];
    }
    Real inv = Real(1) / static_cast<Real>(count);
    for (int j = 0; j < nn; ++j) n.owned.values[j] *= inv;
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, a, mask, m, nn, inv] {
      if (!input_needs_grad(a)) return;
      const auto& g = nodes_[id].grad;
      auto& ga = grad_buf(a);
      for (int i = 0; i < m; ++i) {
        if (!mask[i]) continue;
        for (int j = 0; j < nn; ++j) ga[static_cast<std::size_t>(i) * nn + j] += g[j] * inv;
      }
    });
    return id;
  }

  // ---- losses ----

  // Mean over all elements of squared differences. The target must not carry
  // gradients.
  NodeId mse_loss(NodeId pred, NodeId target) {
    if (shape(pred) != shape(target)) {
      fail("mse_loss", "shape mismatch: pred " + shape_str(shape(pred)) + " vs target " + shape_str(shape(target)));
    }
    if (node(target).needs_grad) fail("mse_loss", "target must not require gradients");
    Node n = make("mse_loss", {pred, target}, Tensor<Real>({1}));
    const auto& pv = vals(pred);
    const auto& tv = vals(target);
    double acc = 0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      double d = static_cast<double>(pv[i]) - static_cast<double>(tv[i]);
      acc += d * d;
    }
    n.owned.values[0] = static_cast<Real>(acc / static_cast<double>(pv.size()));
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, pred, target] {
      if (!input_needs_grad(pred)) return;
      const Real g = nodes_[id].grad[0];
      const auto& pv = vals(pred);
      const auto& tv = vals(target);
      auto& gp = grad_buf(pred);
      Real inv = Real(2) / static_cast<Real>(pv.size());
      for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += g * inv * (pv[i] - tv[i]);
    });
    return id;
  }

  // -log softmax(logits)[label] for a rank-1 logit vector, K >= 2.
  NodeId cross_entropy(NodeId logits, int label) {
    const Shape& sl = shape(logits);
    if (sl.size() != 1 || sl[0] < 2) fail("cross_entropy", "logits must be rank-1 with K >= 2, got " + shape_str(sl));
    int k = sl[0];
    if (label < 0 || label >= k) {
      fail("cross_entropy", "label " + std::to_string(label) + " out of range [0," + std::to_string(k) + ")");
    }
    Node n = make("cross_entropy", {logits}, Tensor<Real>({1}));
    const auto& lv = vals(logits);
    auto probs = std::make_shared<std::vector<Real>>(k);
    n.owned.values[0] = static_cast<Real>(row_ce(lv.data(), k, label, probs->data()));
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, logits, label, k, probs] {
      if (!input_needs_grad(logits)) return;
      const Real g = nodes_[id].grad[0];
      auto& gl = grad_buf(logits);
      for (int j = 0; j < k; ++j) gl[j] += g * ((*probs)[j] - (j == label ? Real(1) : Real(0)));
    });
    return id;
  }

  // Mean cross-entropy over unmasked rows of [t, vocab] logits.
  NodeId cross_entropy_rows(NodeId logits, const std::vector<int>& labels, const std::vector<std::uint8_t>& mask) {
    const Shape& sl = shape(logits);
    if (sl.size() != 2) fail("cross_entropy_rows", "expected rank-2 logits, got " + shape_str(sl));
    int t = sl[0], vocab = sl[1];
    if (static_cast<int>(labels.size()) != t || (!mask.empty() && static_cast<int>(mask.size()) != t)) {
      fail("cross_entropy_rows", "labels/mask length mismatch");
    }
    int count = 0;
    for (int i = 0; i < t; ++i) {
      if (!mask.empty() && !mask[i]) continue;
      if (labels[i] < 0 || labels[i] >= vocab) {
        fail("cross_entropy_rows", "label " + std::to_string(labels[i]) + " out of range at row " + std::to_string(i));
      }
      ++count;
    }
    if (count == 0) fail("cross_entropy_rows", "no unmasked label positions");
    Node n = make("cross_entropy_rows", {logits}, Tensor<Real>({1}));
    const auto& lv = vals(logits);
    auto probs = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(t) * vocab);
    double acc = 0;
    for (int i = 0; i < t; ++i) {
      if (!mask.empty() && !mask[i]) continue;
      acc += row_ce(lv.data() + static_cast<std::size_t>(i) * vocab, vocab, labels[i],
                    probs->data() + static_cast<std::size_t>(i) * vocab);
    }
    n.owned.values[0] = static_cast<Real>(acc / count);
    NodeId id = push(std::move(n));
    set_backward(id, [this, id, logits, labels, mask, t, vocab, count, probs] {
      if (!input_needs_grad(logits)) return;
      const Real g = nodes_[id].grad[0] / static_cast<Real>(count);
      auto& gl = grad_buf(logits);
      for (int i = 0; i < t; ++i) {
        if (!mask.empty() && !mask[i]) continue;
        const Real* pr = probs->data() + static_cast<std::size_t>(i) * vocab;
        Real* gr = gl.data() + static_cast<std::size_t>(i) * vocab;
        for (int j = 0; j < vocab; ++j) gr[j] += g * (pr[j] - (j == labels[i] ? Real(1) : Real(0)));
      }
    });
    return id;
  }

  // ---- backward ----

  // Seeds d(loss)/d(loss) = 1 and walks the tape in reverse. Parameter .grad
  // slots accumulate; node-local grads are reset every call.
  void backward(NodeId loss) {
    const Tensor<Real>& lv = value(loss);
    if (lv.size() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(lv.shape));
    }
    for (Node& n : nodes_) n.grad.clear();
    if (!node(loss).needs_grad) return;  // loss constant w.r.t. every parameter
    grad_buf(loss)[0] = Real(1);
    for (NodeId id = loss; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (check_finite) check_grad_finite(id);
      if (n.backward_fn) n.backward_fn();
      if (n.param != nullptr) {
        if (!n.param->has_grad()) n.param->zero_grad();
        auto& pg = n.param->grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i];
      }
    }
  }

 private:
  std::vector<Node> nodes_;

  Node& node(NodeId id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  Node make(const char* op, std::vector<NodeId> inputs, Tensor<Real> out) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.owned = std::move(out);
    for (NodeId i : n.inputs) n.needs_grad = n.needs_grad || node(i).needs_grad;
    return n;
  }

  NodeId push(Node n) {
    NodeId id = static_cast<NodeId>(nodes_.size());
    nodes_.push_back(std::move(n));
    if (check_finite && nodes_.back().external == nullptr) check_value_finite(id);
    return id;
  }

  void set_backward(NodeId id, std::function<void()> fn) { nodes_[static_cast<std::size_t>(id)].backward_fn = std::move(fn); }

  bool input_needs_grad(NodeId id) const { return node(id).needs_grad; }

  std::vector<Real>& grad_buf(NodeId id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad.assign(value(id).values.size(), Real(0));
    return n.grad;
  }

  void check_value_finite(NodeId id) const {
    for (Real v : value(id).values) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw std::runtime_error("non-finite value in forward output of node " + std::to_string(id) + " (" +
                                 node(id).op + ")");
      }
    }
  }

  void check_grad_finite(NodeId id) const {
    for (Real v : node(id).grad) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw std::runtime_error("non-finite gradient at node " + std::to_string(id) + " (" + node(id).op + ")");
      }
    }
  }

  NodeId reduce(NodeId a, bool mean) {
    const char* opname = mean ? "mean_all" : "sum_all";
    std::int64_t count = static_cast<std::int64_t>(vals(a).size());
    Node n = make(opname, {a}, Tensor<Real>({1}));
    double acc = 0;
    for (Real v : vals(a)) acc += static_cast<double>(v);
    n.owned.values[0] = static_cast<Real>(mean ? acc / static_cast<double>(count) : acc);
    NodeId id = push(std::move(n));
    Real w = mean ? Real(1) / static_cast<Real>(count) : Real(1);
    set_backward(id, [this, id, a, w] {
      if (!input_needs_grad(a)) return;
      const Real g = nodes_[id].grad[0];
      auto& ga = grad_buf(a);
      for (auto& v : ga) v += g * w;
    });
    return id;
  }

  // Stable -log softmax(row)[label]; fills probs.
  static double row_ce(const Real* row, int k, int label, Real* probs) {
    Real mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (int j = 0; j < k; ++j) {
      double e = std::exp(static_cast<double>(row[j] - mx));
      probs[j] = static_cast<Real>(e);
      sum += e;
    }
    for (int j = 0; j < k; ++j) probs[j] = static_cast<Real>(static_cast<double>(probs[j]) / sum);
    return std::log(sum) - static_cast<double>(row[label] - mx);
  }

  [[noreturn]] static void fail(const char* op, const std::string& msg) {
    throw std::invalid_argument(std::string(op) + ": " + msg);
  }

  void require_same_shape(const char* op, NodeId a, NodeId b) const {
    if (shape(a) != shape(b)) {
      fail(op, "shape mismatch: " + shape_str(shape(a)) + " vs " + shape_str(shape(b)));
    }
  }
};

}  // namespace mtfuse
