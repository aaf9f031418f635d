// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode ops over cad::Tensor. Each op builds one graph node whose
// backprop closure accumulates into the parents' grads. Statistical
// reductions (softmax, norm stats, means, log-sum-exp) accumulate in double
// regardless of the storage scalar.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cad/tensor.hpp"

namespace cad {

namespace detail {

template <typename S>
Tensor<S> make_result(Shape shape, std::vector<S> value,
                      std::vector<typename Tensor<S>::NodePtr> parents,
                      std::function<void(Node<S>&)> backprop) {
  auto node = std::make_shared<Node<S>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  node->requires_grad = rg;
  if (rg) {
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return Tensor<S>(std::move(node));
}

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {

/// Right-aligned broadcast of leading (batch) extents; absent dims act as 1.
struct MatmulPlan {
  Index m = 0, k = 0, n = 0, nbatch = 1;
  Shape out_batch;
  std::vector<Index> a_slice, b_slice;  // out batch slice -> operand slice
};

inline MatmulPlan plan_matmul(const Shape& sa, const Shape& sb) {
  check(sa.size() >= 2 && sb.size() >= 2,
        "matmul: operands must have rank >= 2, got " + shape_str(sa) + " and " +
            shape_str(sb));
  MatmulPlan p;
  p.m = sa[sa.size() - 2];
  p.k = sa[sa.size() - 1];
  const Index kb = sb[sb.size() - 2];
  p.n = sb[sb.size() - 1];
  if (p.k != kb)
    fail("matmul: inner extents differ between " + shape_str(sa) + " and " +
         shape_str(sb));

  const std::size_t ra = sa.size() - 2, rb = sb.size() - 2;
  const std::size_t br = std::max(ra, rb);
  Shape pa(br, 1), pb(br, 1);
  for (std::size_t i = 0; i < ra; ++i) pa[br - ra + i] = sa[i];
  for (std::size_t i = 0; i < rb; ++i) pb[br - rb + i] = sb[i];
  p.out_batch.resize(br);
  for (std::size_t i = 0; i < br; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
      fail("matmul: batch extents differ between " + shape_str(sa) + " and " +
           shape_str(sb));
    p.out_batch[i] = std::max(pa[i], pb[i]);
  }
  p.nbatch = numel(p.out_batch);

  // Row-major strides over the padded batch shapes; broadcast dims use 0.
  std::vector<Index> stra(br, 0), strb(br, 0);
  Index acc_a = 1, acc_b = 1;
  for (std::size_t i = br; i-- > 0;) {
    stra[i] = (pa[i] == 1) ? 0 : acc_a;
    strb[i] = (pb[i] == 1) ? 0 : acc_b;
    acc_a *= pa[i];
    acc_b *= pb[i];
  }
  p.a_slice.resize(static_cast<std::size_t>(p.nbatch));
  p.b_slice.resize(static_cast<std::size_t>(p.nbatch));
  for (Index flat = 0; flat < p.nbatch; ++flat) {
    Index rem = flat, ia = 0, ib = 0;
    for (std::size_t i = br; i-- > 0;) {
      const Index c = rem % p.out_batch[i];
      rem /= p.out_batch[i];
      ia += c * stra[i];
      ib += c * strb[i];
    }
    p.a_slice[static_cast<std::size_t>(flat)] = ia;
    p.b_slice[static_cast<std::size_t>(flat)] = ib;
  }
  return p;
}

}  // namespace detail

/// Batched matrix product [..., m, k] x [..., k, n] -> [..., m, n]; leading
/// extents must match or broadcast from 1 (or be absent).
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  using Mat = detail::RowMat<S>;
  const auto plan = detail::plan_matmul(a.shape(), b.shape());
  const Index m = plan.m, k = plan.k, n = plan.n;

  Shape out_shape = plan.out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<S> out(static_cast<std::size_t>(plan.nbatch * m * n));
  for (Index bi = 0; bi < plan.nbatch; ++bi) {
    Eigen::Map<const Mat> A(
        a.data() + plan.a_slice[static_cast<std::size_t>(bi)] * m * k, m, k);
    Eigen::Map<const Mat> B(
        b.data() + plan.b_slice[static_cast<std::size_t>(bi)] * k * n, k, n);
    Eigen::Map<Mat> O(out.data() + bi * m * n, m, n);
    O.noalias() = A * B;
  }

  auto backprop = [plan, m, k, n](detail::Node<S>& nd) {
    auto& pa = *nd.parents[0];
    auto& pb = *nd.parents[1];
    for (Index bi = 0; bi < plan.nbatch; ++bi) {
      const Index ao = plan.a_slice[static_cast<std::size_t>(bi)] * m * k;
      const Index bo = plan.b_slice[static_cast<std::size_t>(bi)] * k * n;
      Eigen::Map<const Mat> G(nd.grad.data() + bi * m * n, m, n);
      if (pa.requires_grad) {
        Eigen::Map<const Mat> B(pb.value.data() + bo, k, n);
        Eigen::Map<Mat> dA(pa.grad.data() + ao, m, k);
        dA.noalias() += G * B.transpose();
      }
      if (pb.requires_grad) {
        Eigen::Map<const Mat> A(pa.value.data() + ao, m, k);
        Eigen::Map<Mat> dB(pb.grad.data() + bo, k, n);
        dB.noalias() += A.transpose() * G;
      }
    }
  };
  return detail::make_result<S>(std::move(out_shape), std::move(out),
                                {a.node(), b.node()}, std::move(backprop));
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape target) {
  check(numel(target) == x.size(), "reshape: cannot view " +
                                       shape_str(x.shape()) + " as " +
                                       shape_str(target));
  auto backprop = [](detail::Node<S>& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < nd.grad.size(); ++i) p.grad[i] += nd.grad[i];
  };
  return detail::make_result<S>(std::move(target), x.values(), {x.node()},
                                std::move(backprop));
}

/// Swap the last two extents.
template <typename S>
Tensor<S> transpose_last2(const Tensor<S>& x) {
  const Shape& s = x.shape();
  check(s.size() >= 2, "transpose_last2: rank must be >= 2, got " + shape_str(s));
  const Index r = s[s.size() - 2], c = s[s.size() - 1];
  const Index slices = x.size() / (r * c);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);

  std::vector<S> out(static_cast<std::size_t>(x.size()));
  const S* in = x.data();
  for (Index sl = 0; sl < slices; ++sl) {
    const Index off = sl * r * c;
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) out[off + j * r + i] = in[off + i * c + j];
  }
  auto backprop = [r, c, slices](detail::Node<S>& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    for (Index sl = 0; sl < slices; ++sl) {
      const Index off = sl * r * c;
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j)
          p.grad[off + i * c + j] += nd.grad[off + j * r + i];
    }
  };
  return detail::make_result<S>(std::move(out_shape), std::move(out), {x.node()},
                                std::move(backprop));
}

/// Swap extents 1 and 2 of a rank-4 tensor: [a, b, c, d] -> [a, c, b, d].
template <typename S>
Tensor<S> transpose_12(const Tensor<S>& x) {
  const Shape& s = x.shape();
  check(s.size() == 4, "transpose_12: rank must be 4, got " + shape_str(s));
  const Index d0 = s[0], d1 = s[1], d2 = s[2], d3 = s[3];
  Shape out_shape{d0, d2, d1, d3};
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  const S* in = x.data();
  for (Index a = 0; a < d0; ++a)
    for (Index b = 0; b < d1; ++b)
      for (Index c = 0; c < d2; ++c) {
        const S* src = in + ((a * d1 + b) * d2 + c) * d3;
        S* dst = out.data() + ((a * d2 + c) * d1 + b) * d3;
        std::copy(src, src + d3, dst);
      }
  auto backprop = [d0, d1, d2, d3](detail::Node<S>& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    for (Index a = 0; a < d0; ++a)
      for (Index b = 0; b < d1; ++b)
        for (Index c = 0; c < d2; ++c) {
          const S* g = nd.grad.data() + ((a * d2 + c) * d1 + b) * d3;
          S* dst = p.grad.data() + ((a * d1 + b) * d2 + c) * d3;
          for (Index i = 0; i < d3; ++i) dst[i] += g[i];
        }
  };
  return detail::make_result<S>(std::move(out_shape), std::move(out), {x.node()},
                                std::move(backprop));
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

/// a + b. b may be lower rank, in which case its shape must equal the
/// trailing extents of a and it broadcasts over the leading ones.
template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool same = sa == sb;
  if (!same) {
    const bool suffix =
        sb.size() < sa.size() &&
        std::equal(sb.begin(), sb.end(), sa.end() - static_cast<long>(sb.size()));
    if (!suffix)
      fail("add: shapes " + shape_str(sa) + " and " + shape_str(sb) +
           " are not broadcast-compatible");
  }
  const Index bn = b.size() == 0 ? 1 : b.size();
  std::vector<S> out(static_cast<std::size_t>(a.size()));
  const S* pa = a.data();
  const S* pb = b.data();
  for (Index i = 0; i < a.size(); ++i) out[i] = pa[i] + pb[i % bn];

  auto backprop = [bn](detail::Node<S>& nd) {
    auto& na = *nd.parents[0];
    auto& nb = *nd.parents[1];
    if (na.requires_grad)
      for (std::size_t i = 0; i < nd.grad.size(); ++i) na.grad[i] += nd.grad[i];
    if (nb.requires_grad)
      for (std::size_t i = 0; i < nd.grad.size(); ++i)
        nb.grad[i % static_cast<std::size_t>(bn)] += nd.grad[i];
  };
  return detail::make_result<S>(sa, std::move(out), {a.node(), b.node()},
                                std::move(backprop));
}

/// Elementwise product of same-shape tensors.
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.shape() == b.shape(), "mul: shapes " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()) + " differ");
  std::vector<S> out(static_cast<std::size_t>(a.size()));
  for (Index i = 0; i < a.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto backprop = [](detail::Node<S>& nd) {
    auto& na = *nd.parents[0];
    auto& nb = *nd.parents[1];
    if (na.requires_grad)
      for (std::size_t i = 0; i < nd.grad.size(); ++i)
        na.grad[i] += nd.grad[i] * nb.value[i];
    if (nb.requires_grad)
      for (std::size_t i = 0; i < nd.grad.size(); ++i)
        nb.grad[i] += nd.grad[i] * na.value[i];
  };
  return detail::make_result<S>(a.shape(), std::move(out), {a.node(), b.node()},
                                std::move(backprop));
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& x, double c) {
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  for (Index i = 0; i < x.size(); ++i)
    out[i] = static_cast<S>(static_cast<double>(x.data()[i]) * c);
  auto backprop = [c](detail::Node<S>& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < nd.grad.size(); ++i)
      p.grad[i] += static_cast<S>(static_cast<double>(nd.grad[i]) * c);
  };
  return detail::make_result<S>(x.shape(), std::move(out), {x.node()},
                                std::move(backprop));
}

/// max(0, x); the subgradient at exactly 0 is 0.
template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  for (Index i = 0; i < x.size(); ++i)
    out[i] = x.data()[i] > S(0) ? x.data()[i] : S(0);
  auto backprop = [](detail::Node<S>& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < nd.grad.size(); ++i)
      if (p.value[i] > S(0)) p.grad[i] += nd.grad[i];
  };
  return detail::make_result<S>(x.shape(), std::move(out), {x.node()},
                                std::move(backprop));
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  for (Index i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x.data()[i]);
    const double y = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                              : std::exp(v) / (1.0 + std::exp(v));
    out[i] = static_cast<S>(y);
  }
  auto backprop = [](detail::Node<S>& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < nd.grad.size(); ++i) {
      const double y = static_cast<double>(nd.value[i]);
      p.grad[i] += static_cast<S>(static_cast<double>(nd.grad[i]) * y * (1.0 - y));
    }
  };
  return detail::make_result<S>(x.shape(), std::move(out), {x.node()},
                                std::move(backprop));
}

// ---------------------------------------------------------------------------
// normalization / reductions
// ---------------------------------------------------------------------------

/// Softmax over the last extent, stabilized by max subtraction.
template <typename S>
Tensor<S> softmax_lastdim(const Tensor<S>& x) {
  const Shape& s = x.shape();
  check(!s.empty() && s.back() >= 1,
        "softmax_lastdim: last extent must be >= 1, got " + shape_str(s));
  const Index n = s.back();
  const Index rows = x.size() / n;
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  for (Index r = 0; r < rows; ++r) {
    const S* in = x.data() + r * n;
    double mx = static_cast<double>(in[0]);
    for (Index j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(in[j]));
    double sum = 0.0;
    for (Index j = 0; j < n; ++j) sum += std::exp(static_cast<double>(in[j]) - mx);
    for (Index j = 0; j < n; ++j)
      out[r * n + j] =
          static_cast<S>(std::exp(static_cast<double>(in[j]) - mx) / sum);
  }
  auto backprop = [n, rows](detail::Node<S>& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    for (Index r = 0; r < rows; ++r) {
      const S* y = nd.value.data() + r * n;
      const S* g = nd.grad.data() + r * n;
      double dot = 0.0;
      for (Index j = 0; j < n; ++j)
        dot += static_cast<double>(g[j]) * static_cast<double>(y[j]);
      for (Index j = 0; j < n; ++j)
        p.grad[r * n + j] += static_cast<S>(
            static_cast<double>(y[j]) * (static_cast<double>(g[j]) - dot));
    }
  };
  return detail::make_result<S>(s, std::move(out), {x.node()},
                                std::move(backprop));
}

/// Layer norm over the last extent with affine gamma/beta (shape [n]).
template <typename S>
Tensor<S> layer_norm_lastdim(const Tensor<S>& x, const Tensor<S>& gamma,
                             const Tensor<S>& beta, double eps = 1e-5) {
  const Shape& s = x.shape();
  check(!s.empty(), "layer_norm_lastdim: rank must be >= 1");
  const Index n = s.back();
  check(n >= 2, "layer_norm_lastdim: degenerate last extent " +
                    std::to_string(n) + " (must be >= 2)");
  check(gamma.shape() == Shape{n} && beta.shape() == Shape{n},
        "layer_norm_lastdim: gamma/beta must be shaped (" + std::to_string(n) +
            "), got " + shape_str(gamma.shape()) + " and " +
            shape_str(beta.shape()));
  const Index rows = x.size() / n;

  auto stats = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(rows) * 2);  // mean, inv_std per row
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  for (Index r = 0; r < rows; ++r) {
    const S* in = x.data() + r * n;
    double mean = 0.0;
    for (Index j = 0; j < n; ++j) mean += static_cast<double>(in[j]);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (Index j = 0; j < n; ++j) {
      const double d = static_cast<double>(in[j]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * r] = mean;
    (*stats)[2 * r + 1] = inv;
    for (Index j = 0; j < n; ++j) {
      const double xh = (static_cast<double>(in[j]) - mean) * inv;
      out[r * n + j] =
          static_cast<S>(static_cast<double>(gamma.data()[j]) * xh +
                         static_cast<double>(beta.data()[j]));
    }
  }
  auto backprop = [n, rows, stats](detail::Node<S>& nd) {
    auto& px = *nd.parents[0];
    auto& pg = *nd.parents[1];
    auto& pb = *nd.parents[2];
    for (Index r = 0; r < rows; ++r) {
      const double mean = (*stats)[2 * r];
      const double inv = (*stats)[2 * r + 1];
      const S* xv = px.value.data() + r * n;
      const S* g = nd.grad.data() + r * n;
      double mean_gy = 0.0, mean_gyx = 0.0;
      for (Index j = 0; j < n; ++j) {
        const double xh = (static_cast<double>(xv[j]) - mean) * inv;
        const double gy =
            static_cast<double>(g[j]) * static_cast<double>(pg.value[j]);
        mean_gy += gy;
        mean_gyx += gy * xh;
        if (pg.requires_grad)
          pg.grad[j] += static_cast<S>(static_cast<double>(g[j]) * xh);
        if (pb.requires_grad) pb.grad[j] += g[j];
      }
      mean_gy /= static_cast<double>(n);
      mean_gyx /= static_cast<double>(n);
      if (px.requires_grad) {
        for (Index j = 0; j < n; ++j) {
          const double xh = (static_cast<double>(xv[j]) - mean) * inv;
          const double gy =
              static_cast<double>(g[j]) * static_cast<double>(pg.value[j]);
          px.grad[r * n + j] +=
              static_cast<S>(inv * (gy - mean_gy - xh * mean_gyx));
        }
      }
    }
  };
  return detail::make_result<S>(s, std::move(out),
                                {x.node(), gamma.node(), beta.node()},
                                std::move(backprop));
}

/// Arithmetic mean along `dim`; the output rank drops by one.
template <typename S>
Tensor<S> reduce_mean(const Tensor<S>& x, Index dim) {
  const Shape& s = x.shape();
  check(dim >= 0 && dim < static_cast<Index>(s.size()),
        "reduce_mean: invalid dim " + std::to_string(dim) + " for shape " +
            shape_str(s));
  const Index nred = s[static_cast<std::size_t>(dim)];
  Index outer = 1, inner = 1;
  for (Index i = 0; i < dim; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (Index i = dim + 1; i < static_cast<Index>(s.size()); ++i)
    inner *= s[static_cast<std::size_t>(i)];
  Shape out_shape;
  for (Index i = 0; i < static_cast<Index>(s.size()); ++i)
    if (i != dim) out_shape.push_back(s[static_cast<std::size_t>(i)]);

  std::vector<S> out(static_cast<std::size_t>(outer * inner));
  for (Index o = 0; o < outer; ++o)
    for (Index i = 0; i < inner; ++i) {
      double acc = 0.0;
      for (Index j = 0; j < nred; ++j)
        acc += static_cast<double>(x.data()[(o * nred + j) * inner + i]);
      out[o * inner + i] = static_cast<S>(acc / static_cast<double>(nred));
    }
  auto backprop = [outer, inner, nred](detail::Node<S>& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    const double scale = 1.0 / static_cast<double>(nred);
    for (Index o = 0; o < outer; ++o)
      for (Index i = 0; i < inner; ++i) {
        const S g = static_cast<S>(
            static_cast<double>(nd.grad[o * inner + i]) * scale);
        for (Index j = 0; j < nred; ++j)
          p.grad[(o * nred + j) * inner + i] += g;
      }
  };
  return detail::make_result<S>(std::move(out_shape), std::move(out), {x.node()},
                                std::move(backprop));
}

/// Sum of all elements as a rank-0 scalar.
template <typename S>
Tensor<S> reduce_sum_all(const Tensor<S>& x) {
  double acc = 0.0;
  for (Index i = 0; i < x.size(); ++i) acc += static_cast<double>(x.data()[i]);
  auto backprop = [](detail::Node<S>& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    const S g = nd.grad[0];
    for (auto& d : p.grad) d += g;
  };
  return detail::make_result<S>(Shape{}, {static_cast<S>(acc)}, {x.node()},
                                std::move(backprop));
}

// ---------------------------------------------------------------------------
// concat / losses / masking
// ---------------------------------------------------------------------------

/// Concatenate along the last extent; all leading extents must match.
template <typename S>
Tensor<S> concat_lastdim(const std::vector<Tensor<S>>& xs) {
  check(!xs.empty(), "concat_lastdim: need at least one input");
  const Shape& s0 = xs[0].shape();
  check(!s0.empty(), "concat_lastdim: inputs must have rank >= 1");
  Index total_last = 0;
  std::vector<Index> lasts;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    const bool lead_ok =
        s.size() == s0.size() &&
        std::equal(s.begin(), s.end() - 1, s0.begin(), s0.end() - 1);
    if (!lead_ok)
      fail("concat_lastdim: leading extents differ between " + shape_str(s0) +
           " and " + shape_str(s));
    lasts.push_back(s.back());
    total_last += s.back();
  }
  Shape out_shape = s0;
  out_shape.back() = total_last;
  const Index rows = numel(out_shape) / total_last;

  std::vector<S> out(static_cast<std::size_t>(rows * total_last));
  for (Index r = 0; r < rows; ++r) {
    Index off = 0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
      const S* src = xs[t].data() + r * lasts[t];
      std::copy(src, src + lasts[t], out.data() + r * total_last + off);
      off += lasts[t];
    }
  }
  std::vector<typename Tensor<S>::NodePtr> parents;
  for (const auto& x : xs) parents.push_back(x.node());
  auto backprop = [rows, total_last, lasts](detail::Node<S>& nd) {
    for (Index r = 0; r < rows; ++r) {
      Index off = 0;
      for (std::size_t t = 0; t < nd.parents.size(); ++t) {
        auto& p = *nd.parents[t];
        if (p.requires_grad) {
          const S* g = nd.grad.data() + r * total_last + off;
          S* dst = p.grad.data() + r * lasts[t];
          for (Index j = 0; j < lasts[t]; ++j) dst[j] += g[j];
        }
        off += lasts[t];
      }
    }
  };
  return detail::make_result<S>(std::move(out_shape), std::move(out),
                                std::move(parents), std::move(backprop));
}

/// Mean over the batch of -log softmax(logits)[label].
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
  const Shape& s = logits.shape();
  check(s.size() == 2, "cross_entropy: logits must be rank 2, got " +
                           shape_str(s));
  const Index b = s[0], k = s[1];
  check(static_cast<Index>(labels.size()) == b,
        "cross_entropy: got " + std::to_string(labels.size()) +
            " labels for batch " + std::to_string(b));
  for (Index i = 0; i < b; ++i) {
    if (labels[static_cast<std::size_t>(i)] < 0 ||
        labels[static_cast<std::size_t>(i)] >= k)
      fail("cross_entropy: label " +
           std::to_string(labels[static_cast<std::size_t>(i)]) +
           " out of range [0, " + std::to_string(k) + ") at index " +
           std::to_string(i));
  }
  auto probs = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(b * k));
  double loss = 0.0;
  for (Index i = 0; i < b; ++i) {
    const S* row = logits.data() + i * k;
    double mx = static_cast<double>(row[0]);
    for (Index j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0.0;
    for (Index j = 0; j < k; ++j)
      sum += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(sum);
    for (Index j = 0; j < k; ++j)
      (*probs)[i * k + j] = std::exp(static_cast<double>(row[j]) - lse);
    loss -= static_cast<double>(row[labels[static_cast<std::size_t>(i)]]) - lse;
  }
  loss /= static_cast<double>(b);

  auto backprop = [b, k, labels, probs](detail::Node<S>& nd) {
    auto& p = *nd.parents[0];
    if (!p.requires_grad) return;
    const double g = static_cast<double>(nd.grad[0]) / static_cast<double>(b);
    for (Index i = 0; i < b; ++i)
      for (Index j = 0; j < k; ++j) {
        const double onehot =
            (j == labels[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
        p.grad[i * k + j] +=
            static_cast<S>(g * ((*probs)[i * k + j] - onehot));
      }
  };
  return detail::make_result<S>(Shape{}, {static_cast<S>(loss)},
                                {logits.node()}, std::move(backprop));
}

/// x[..., pos, c] * w[..., pos]: scale the channel vector at every position.
/// w must be shaped like x minus the last extent.
template <typename S>
Tensor<S> scale_positions(const Tensor<S>& x, const Tensor<S>& w) {
  const Shape& sx = x.shape();
  check(sx.size() >= 2, "scale_positions: x must have rank >= 2, got " +
                            shape_str(sx));
  Shape expect(sx.begin(), sx.end() - 1);
  check(w.shape() == expect, "scale_positions: weights " +
                                 shape_str(w.shape()) + " must be shaped " +
                                 shape_str(expect));
  const Index c = sx.back();
  const Index pos = x.size() / c;
  std::vector<S> out(static_cast<std::size_t>(x.size()));
  for (Index p = 0; p < pos; ++p) {
    const S wv = w.data()[p];
    const S* in = x.data() + p * c;
    S* o = out.data() + p * c;
    for (Index j = 0; j < c; ++j) o[j] = in[j] * wv;
  }
  auto backprop = [c, pos](detail::Node<S>& nd) {
    auto& px = *nd.parents[0];
    auto& pw = *nd.parents[1];
    for (Index p = 0; p < pos; ++p) {
      const S* g = nd.grad.data() + p * c;
      if (px.requires_grad) {
        const S wv = pw.value[p];
        for (Index j = 0; j < c; ++j) px.grad[p * c + j] += g[j] * wv;
      }
      if (pw.requires_grad) {
        double acc = 0.0;
        for (Index j = 0; j < c; ++j)
          acc += static_cast<double>(g[j]) *
                 static_cast<double>(px.value[p * c + j]);
        pw.grad[p] += static_cast<S>(acc);
      }
    }
  };
  return detail::make_result<S>(sx, std::move(out), {x.node(), w.node()},
                                std::move(backprop));
}

/// x @ w + bias (bias broadcast over leading extents).
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias) {
  return add(matmul(x, w), bias);
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

/// Reverse pass from a scalar loss. Grads of every reachable tensor that
/// requires them are accumulated (+=); leaves keep grads across calls until
/// explicitly cleared.
template <typename S>
void backward(const Tensor<S>& loss) {
  check(loss.size() == 1,
        "backward: loss must be scalar, got " + shape_str(loss.shape()));
  using Node = detail::Node<S>;
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative DFS post-order; reversed it is a topological order with every
  // node preceding its parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen{root};
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->ensure_grad();
  root->grad[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

}  // namespace cad
