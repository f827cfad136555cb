// Copyright 2026 The LCT Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode differentiation over whole-tensor primitives.
//
// Every primitive records its forward value and, if any input requires a
// gradient, a closure that maps the output gradient to input gradients.
// GradTape::backward walks the record once in reverse, so each node (and
// therefore each registered parameter) has its backward evaluated exactly
// once. Nodes built only from constants are never differentiated; this is
// how the feature bank stays gradient-detached.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lct/tensor.hpp"

namespace lct {

class GradTape;

/// Handle to a node on a GradTape.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const noexcept { return id != std::numeric_limits<std::size_t>::max(); }
};

class GradTape {
 public:
  using BackwardFn = std::function<void(GradTape&, const Tensor2D& out_grad)>;

  Var constant(Tensor2D value) { return push(std::move(value), false, {}); }

  /// Registers a differentiable leaf.
  Var parameter(Tensor2D value) { return push(std::move(value), true, {}); }

  /// Records an op. The backward closure is dropped when no input needs it.
  Var record(Tensor2D value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor2D& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient accumulated into v by the last backward(), or nullptr when the
  /// node is detached or never reached.
  const Tensor2D* grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    return n.grad ? &*n.grad : nullptr;
  }

  /// Accumulation slot for op implementations. No-op target for detached
  /// nodes is the caller's responsibility (check requires_grad first).
  Tensor2D& grad_slot(Var v) {
    auto& n = nodes_.at(v.id);
    if (!n.grad) n.grad.emplace(n.value.rows(), n.value.cols(), 0.0);
    return *n.grad;
  }

  void backward(Var loss) {
    const Tensor2D& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ConfigError("GradTape::backward: loss must be 1x1, got " + shape_str(lv));
    }
    for (auto& n : nodes_) n.grad.reset();
    if (!requires_grad(loss)) return;
    grad_slot(loss)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.backward || !n.grad) continue;
      n.backward(*this, *n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor2D value;
    bool requires_grad = false;
    BackwardFn backward;
    std::optional<Tensor2D> grad;
  };

  Var push(Tensor2D value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(backward), std::nullopt});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

/// Differentiable primitives. Each function mirrors a pure forward in
/// tensor.hpp or in the module that owns the math.
namespace ad {

namespace detail {
inline void accumulate(GradTape& t, Var v, const Tensor2D& g) {
  if (!t.requires_grad(v)) return;
  Tensor2D& slot = t.grad_slot(v);
  for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
}
}  // namespace detail

inline Var matmul(GradTape& t, Var a, Var b) {
  Tensor2D out = lct::matmul(t.value(a), t.value(b));
  return t.record(std::move(out), {a, b}, [a, b](GradTape& tp, const Tensor2D& g) {
    if (tp.requires_grad(a)) detail::accumulate(tp, a, lct::matmul_nt(g, tp.value(b)));
    if (tp.requires_grad(b)) detail::accumulate(tp, b, lct::matmul_tn(tp.value(a), g));
  });
}

/// a * b^T
inline Var matmul_nt(GradTape& t, Var a, Var b) {
  Tensor2D out = lct::matmul_nt(t.value(a), t.value(b));
  return t.record(std::move(out), {a, b}, [a, b](GradTape& tp, const Tensor2D& g) {
    if (tp.requires_grad(a)) detail::accumulate(tp, a, lct::matmul(g, tp.value(b)));
    if (tp.requires_grad(b)) detail::accumulate(tp, b, lct::matmul_tn(g, tp.value(a)));
  });
}

/// a + bias, with the 1 x c bias broadcast over rows.
inline Var add_row(GradTape& t, Var a, Var bias) {
  const Tensor2D& av = t.value(a);
  const Tensor2D& bv = t.value(bias);
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw ConfigError("add_row: bias " + shape_str(bv) + " vs input " + shape_str(av));
  }
  Tensor2D out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv[j];
  return t.record(std::move(out), {a, bias}, [a, bias](GradTape& tp, const Tensor2D& g) {
    detail::accumulate(tp, a, g);
    if (tp.requires_grad(bias)) {
      Tensor2D& slot = tp.grad_slot(bias);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) slot[j] += g(i, j);
    }
  });
}

inline Var tanh(GradTape& t, Var a) {
  Tensor2D out = t.value(a);
  for (double& v : out.data()) v = std::tanh(v);
  return t.record(std::move(out), {a}, [a](GradTape& tp, const Tensor2D& g) {
    // Output value is not captured; recompute from the input.
    const Tensor2D& x = tp.value(a);
    Tensor2D d(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = std::tanh(x[i]);
      d[i] = g[i] * (1.0 - y * y);
    }
    detail::accumulate(tp, a, d);
  });
}

inline Var sigmoid(GradTape& t, Var a) {
  Tensor2D out = lct::sigmoid(t.value(a));
  return t.record(std::move(out), {a}, [a](GradTape& tp, const Tensor2D& g) {
    const Tensor2D& x = tp.value(a);
    Tensor2D d(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = lct::sigmoid(x[i]);
      d[i] = g[i] * y * (1.0 - y);
    }
    detail::accumulate(tp, a, d);
  });
}

inline Var softmax_rows(GradTape& t, Var a, double temperature) {
  Tensor2D out = lct::softmax_rows(t.value(a), temperature);
  Tensor2D saved = out;
  return t.record(std::move(out), {a},
                  [a, temperature, s = std::move(saved)](GradTape& tp, const Tensor2D& g) {
                    Tensor2D d(g.rows(), g.cols());
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                      auto sr = s.row(i);
                      auto gr = g.row(i);
                      const double inner = lct::dot(sr, gr);
                      for (std::size_t j = 0; j < g.cols(); ++j)
                        d(i, j) = sr[j] * (gr[j] - inner) / temperature;
                    }
                    detail::accumulate(tp, a, d);
                  });
}

/// scores (N x K), w (1 x K) -> N x 1 with agg_i = sum_k scores_ik w_k.
inline Var prototype_aggregate(GradTape& t, Var scores, Var w) {
  Tensor2D out = lct::prototype_aggregate(t.value(scores), t.value(w));
  return t.record(std::move(out), {scores, w}, [scores, w](GradTape& tp, const Tensor2D& g) {
    const Tensor2D& sv = tp.value(scores);
    const Tensor2D& wv = tp.value(w);
    if (tp.requires_grad(scores)) {
      Tensor2D d(sv.rows(), sv.cols());
      for (std::size_t i = 0; i < sv.rows(); ++i)
        for (std::size_t k = 0; k < sv.cols(); ++k) d(i, k) = g[i] * wv[k];
      detail::accumulate(tp, scores, d);
    }
    if (tp.requires_grad(w)) detail::accumulate(tp, w, lct::matmul_tn(g, sv));
  });
}

/// 1 - a
inline Var one_minus(GradTape& t, Var a) {
  Tensor2D out = t.value(a);
  for (double& v : out.data()) v = 1.0 - v;
  return t.record(std::move(out), {a}, [a](GradTape& tp, const Tensor2D& g) {
    Tensor2D d = g;
    for (double& v : d.data()) v = -v;
    detail::accumulate(tp, a, d);
  });
}

/// scale * x + bias elementwise, with 1x1 scale and bias.
inline Var affine_scalar(GradTape& t, Var x, Var scale, Var bias) {
  const double s = t.value(scale)[0];
  const double b = t.value(bias)[0];
  Tensor2D out = t.value(x);
  for (double& v : out.data()) v = s * v + b;
  return t.record(std::move(out), {x, scale, bias}, [x, scale, bias](GradTape& tp, const Tensor2D& g) {
    const Tensor2D& xv = tp.value(x);
    const double sv = tp.value(scale)[0];
    if (tp.requires_grad(x)) {
      Tensor2D d = g;
      for (double& v : d.data()) v *= sv;
      detail::accumulate(tp, x, d);
    }
    double ds = 0.0, db = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ds += g[i] * xv[i];
      db += g[i];
    }
    if (tp.requires_grad(scale)) tp.grad_slot(scale)[0] += ds;
    if (tp.requires_grad(bias)) tp.grad_slot(bias)[0] += db;
  });
}

/// f * m + f with the r x 1 gate m broadcast across columns.
inline Var residual_gate(GradTape& t, Var f, Var m) {
  const Tensor2D& fv = t.value(f);
  const Tensor2D& mv = t.value(m);
  if (mv.cols() != 1 || mv.rows() != fv.rows()) {
    throw ConfigError("residual_gate: mask " + shape_str(mv) + " vs features " + shape_str(fv));
  }
  Tensor2D out(fv.rows(), fv.cols());
  for (std::size_t i = 0; i < fv.rows(); ++i)
    for (std::size_t j = 0; j < fv.cols(); ++j) out(i, j) = fv(i, j) * mv[i] + fv(i, j);
  return t.record(std::move(out), {f, m}, [f, m](GradTape& tp, const Tensor2D& g) {
    const Tensor2D& fv2 = tp.value(f);
    const Tensor2D& mv2 = tp.value(m);
    if (tp.requires_grad(f)) {
      Tensor2D d(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) d(i, j) = g(i, j) * (1.0 + mv2[i]);
      detail::accumulate(tp, f, d);
    }
    if (tp.requires_grad(m)) {
      Tensor2D d(mv2.rows(), 1);
      for (std::size_t i = 0; i < g.rows(); ++i) d[i] = lct::dot(g.row(i), fv2.row(i));
      detail::accumulate(tp, m, d);
    }
  });
}

/// Mean of consecutive groups of `group` rows: (n*group) x c -> n x c.
inline Var segment_mean(GradTape& t, Var a, std::size_t group) {
  const Tensor2D& av = t.value(a);
  if (group == 0 || av.rows() % group != 0) {
    throw ConfigError("segment_mean: " + std::to_string(av.rows()) +
                      " rows not divisible into groups of " + std::to_string(group));
  }
  const std::size_t n = av.rows() / group;
  Tensor2D out(n, av.cols());
  const double inv = 1.0 / static_cast<double>(group);
  for (std::size_t s = 0; s < n; ++s) {
    auto o = out.row(s);
    for (std::size_t r = 0; r < group; ++r) {
      auto in = av.row(s * group + r);
      for (std::size_t j = 0; j < av.cols(); ++j) o[j] += in[j];
    }
    for (double& v : o) v *= inv;
  }
  return t.record(std::move(out), {a}, [a, group, inv](GradTape& tp, const Tensor2D& g) {
    const Tensor2D& av2 = tp.value(a);
    Tensor2D d(av2.rows(), av2.cols());
    for (std::size_t i = 0; i < av2.rows(); ++i) {
      auto gr = g.row(i / group);
      auto dr = d.row(i);
      for (std::size_t j = 0; j < gr.size(); ++j) dr[j] = gr[j] * inv;
    }
    detail::accumulate(tp, a, d);
  });
}

/// Mean over all rows: r x c -> 1 x c.
inline Var mean_rows(GradTape& t, Var a) { return segment_mean(t, a, t.value(a).rows()); }

inline Var gather_rows(GradTape& t, Var table, std::vector<std::size_t> indices) {
  const Tensor2D& tv = t.value(table);
  Tensor2D out(indices.size(), tv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= tv.rows()) {
      throw DataError("gather_rows: index " + std::to_string(indices[i]) + " out of range " +
                      std::to_string(tv.rows()));
    }
    auto src = tv.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return t.record(std::move(out), {table},
                  [table, idx = std::move(indices)](GradTape& tp, const Tensor2D& g) {
                    Tensor2D& slot = tp.grad_slot(table);
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      auto dst = slot.row(idx[i]);
                      auto src = g.row(i);
                      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
                    }
                  });
}

inline Var concat_cols(GradTape& t, std::vector<Var> parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  const std::size_t rows = t.value(parts.front()).rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) {
      throw ConfigError("concat_cols: row mismatch " + shape_str(t.value(parts.front())) +
                        " vs " + shape_str(t.value(p)));
    }
    cols += t.value(p).cols();
  }
  Tensor2D out(rows, cols);
  std::size_t off = 0;
  bool needs = false;
  for (Var p : parts) {
    const Tensor2D& pv = t.value(p);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
    off += pv.cols();
    needs = needs || t.requires_grad(p);
  }
  GradTape::BackwardFn fn = [parts](GradTape& tp, const Tensor2D& g) {
    std::size_t o = 0;
    for (Var p : parts) {
      const std::size_t c = tp.value(p).cols();
      if (tp.requires_grad(p)) {
        Tensor2D d(g.rows(), c);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < c; ++j) d(i, j) = g(i, o + j);
        detail::accumulate(tp, p, d);
      }
      o += c;
    }
  };
  if (!needs) return t.constant(std::move(out));
  // Any differentiable input marks the node as requiring a gradient.
  Var anchor{};
  for (Var p : parts)
    if (t.requires_grad(p)) anchor = p;
  return t.record(std::move(out), {anchor}, std::move(fn));
}

/// Row i of `a` dotted with row i / group of `centers`: (n*group) x c and
/// n x c -> (n*group) x 1.
inline Var segment_dot(GradTape& t, Var a, Var centers, std::size_t group) {
  const Tensor2D& av = t.value(a);
  const Tensor2D& cv = t.value(centers);
  if (group == 0 || av.rows() != cv.rows() * group || av.cols() != cv.cols()) {
    throw ConfigError("segment_dot: " + shape_str(av) + " vs centers " + shape_str(cv) +
                      " with group " + std::to_string(group));
  }
  Tensor2D out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) out[i] = lct::dot(av.row(i), cv.row(i / group));
  return t.record(std::move(out), {a, centers}, [a, centers, group](GradTape& tp, const Tensor2D& g) {
    const Tensor2D& av2 = tp.value(a);
    const Tensor2D& cv2 = tp.value(centers);
    if (tp.requires_grad(a)) {
      Tensor2D d(av2.rows(), av2.cols());
      for (std::size_t i = 0; i < av2.rows(); ++i) {
        auto c = cv2.row(i / group);
        auto dr = d.row(i);
        for (std::size_t j = 0; j < c.size(); ++j) dr[j] = g[i] * c[j];
      }
      detail::accumulate(tp, a, d);
    }
    if (tp.requires_grad(centers)) {
      Tensor2D d(cv2.rows(), cv2.cols());
      for (std::size_t i = 0; i < av2.rows(); ++i) {
        auto ar = av2.row(i);
        auto dr = d.row(i / group);
        for (std::size_t j = 0; j < ar.size(); ++j) dr[j] += g[i] * ar[j];
      }
      detail::accumulate(tp, centers, d);
    }
  });
}

inline constexpr double kProbClamp = 1e-12;

/// Mean binary cross-entropy over every entry of `probs` against 0/1
/// `targets`. Probabilities are clamped to [1e-12, 1 - 1e-12] before the
/// logs; clamped entries pass no gradient.
inline Var bce_mean(GradTape& t, Var probs, Tensor2D targets) {
  const Tensor2D& p = t.value(probs);
  if (!p.same_shape(targets)) {
    throw ConfigError("bce_mean: probs " + shape_str(p) + " vs targets " + shape_str(targets));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    sum += -(targets[i] * std::log(pc) + (1.0 - targets[i]) * std::log(1.0 - pc));
  }
  const double inv = 1.0 / static_cast<double>(p.size());
  Tensor2D out(1, 1, sum * inv);
  return t.record(std::move(out), {probs},
                  [probs, y = std::move(targets), inv](GradTape& tp, const Tensor2D& g) {
                    const Tensor2D& pv = tp.value(probs);
                    Tensor2D d(pv.rows(), pv.cols());
                    for (std::size_t i = 0; i < pv.size(); ++i) {
                      const double pi = pv[i];
                      if (pi < kProbClamp || pi > 1.0 - kProbClamp) continue;
                      d[i] = g[0] * inv * (-(y[i] / pi) + (1.0 - y[i]) / (1.0 - pi));
                    }
                    detail::accumulate(tp, probs, d);
                  });
}

/// cos^2 between two 1 x c rows. Returns 0 (with zero gradient) when either
/// norm vanishes.
inline Var squared_cosine(GradTape& t, Var a, Var b) {
  const Tensor2D& av = t.value(a);
  const Tensor2D& bv = t.value(b);
  if (av.rows() != 1 || !av.same_shape(bv)) {
    throw ConfigError("squared_cosine: expects two 1 x c rows, got " + shape_str(av) + " and " +
                      shape_str(bv));
  }
  const double ab = lct::dot(av.data(), bv.data());
  const double aa = lct::dot(av.data(), av.data());
  const double bb = lct::dot(bv.data(), bv.data());
  if (aa == 0.0 || bb == 0.0) {
    std::cerr << "warning: squared_cosine on a zero-norm vector; returning 0\n";
    return t.constant(Tensor2D(1, 1, 0.0));
  }
  const double c2 = (ab * ab) / (aa * bb);
  Tensor2D out(1, 1, std::min(c2, 1.0));
  return t.record(std::move(out), {a, b}, [a, b, ab, aa, bb](GradTape& tp, const Tensor2D& g) {
    // d/da (ab^2 / (aa bb)) = 2 ab b / (aa bb) - 2 ab^2 a / (aa^2 bb)
    const Tensor2D& av2 = tp.value(a);
    const Tensor2D& bv2 = tp.value(b);
    const double k1 = 2.0 * ab / (aa * bb);
    const double k2 = 2.0 * ab * ab / (aa * aa * bb);
    const double k3 = 2.0 * ab * ab / (aa * bb * bb);
    if (tp.requires_grad(a)) {
      Tensor2D d(av2.rows(), av2.cols());
      for (std::size_t j = 0; j < d.size(); ++j) d[j] = g[0] * (k1 * bv2[j] - k2 * av2[j]);
      detail::accumulate(tp, a, d);
    }
    if (tp.requires_grad(b)) {
      Tensor2D d(bv2.rows(), bv2.cols());
      for (std::size_t j = 0; j < d.size(); ++j) d[j] = g[0] * (k1 * av2[j] - k3 * bv2[j]);
      detail::accumulate(tp, b, d);
    }
  });
}

/// a + lambda * b on 1x1 values. The value is computed as exactly
/// `a + lambda * b` so callers can rely on the identity bitwise.
inline Var add_scaled(GradTape& t, Var a, Var b, double lambda) {
  const double av = t.value(a)[0];
  const double bv = t.value(b)[0];
  Tensor2D out(1, 1, av + lambda * bv);
  return t.record(std::move(out), {a, b}, [a, b, lambda](GradTape& tp, const Tensor2D& g) {
    if (tp.requires_grad(a)) tp.grad_slot(a)[0] += g[0];
    if (tp.requires_grad(b)) tp.grad_slot(b)[0] += lambda * g[0];
  });
}

}  // namespace ad
}  // namespace lct
