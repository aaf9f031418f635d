// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-head attention and the residual cross-attention block: attention
// output, two relu FC layers on top of it, residual addition, layer norm.

#pragma once

#include <cmath>
#include <string>

#include "cad/ops.hpp"
#include "cad/params.hpp"
#include "cad/rng.hpp"
#include "cad/tensor.hpp"

namespace cad {

struct CabConfig {
  Index model_dim = 64;  // paper-scale value: 512
  Index num_heads = 4;   // paper-scale value: 8
  double ln_eps = 1e-5;

  Index head_dim() const {
    check(num_heads >= 1 && model_dim % num_heads == 0,
          "cab: model_dim " + std::to_string(model_dim) +
              " must divide by num_heads " + std::to_string(num_heads));
    return model_dim / num_heads;
  }
};

template <typename S>
struct CabWeights {
  Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;      // attention projections [D,D],[D]
  Tensor<S> fc1_w, fc1_b, fc2_w, fc2_b;          // square FC layers [D,D],[D]
  Tensor<S> ln_gamma, ln_beta;                   // layer norm affine [D]
};

template <typename S>
CabWeights<S> init_cab_weights(const CabConfig& cfg, Rng& rng) {
  const Index d = cfg.model_dim;
  CabWeights<S> w;
  w.wq = uniform_fan_in<S>({d, d}, d, rng);
  w.bq = Tensor<S>::zeros({d}, true);
  w.wk = uniform_fan_in<S>({d, d}, d, rng);
  w.bk = Tensor<S>::zeros({d}, true);
  w.wv = uniform_fan_in<S>({d, d}, d, rng);
  w.bv = Tensor<S>::zeros({d}, true);
  w.wo = uniform_fan_in<S>({d, d}, d, rng);
  w.bo = Tensor<S>::zeros({d}, true);
  w.fc1_w = uniform_fan_in<S>({d, d}, d, rng);
  w.fc1_b = Tensor<S>::zeros({d}, true);
  w.fc2_w = uniform_fan_in<S>({d, d}, d, rng);
  w.fc2_b = Tensor<S>::zeros({d}, true);
  w.ln_gamma = Tensor<S>::from({d}, std::vector<S>(d, S(1)), true);
  w.ln_beta = Tensor<S>::zeros({d}, true);
  return w;
}

template <typename S>
void register_cab_params(ParamSet<S>& params, const std::string& prefix,
                         CabWeights<S>& w) {
  params.add(prefix + ".attn.wq", w.wq);
  params.add(prefix + ".attn.bq", w.bq);
  params.add(prefix + ".attn.wk", w.wk);
  params.add(prefix + ".attn.bk", w.bk);
  params.add(prefix + ".attn.wv", w.wv);
  params.add(prefix + ".attn.bv", w.bv);
  params.add(prefix + ".attn.wo", w.wo);
  params.add(prefix + ".attn.bo", w.bo);
  params.add(prefix + ".fc1.w", w.fc1_w);
  params.add(prefix + ".fc1.b", w.fc1_b);
  params.add(prefix + ".fc2.w", w.fc2_w);
  params.add(prefix + ".fc2.b", w.fc2_b);
  params.add(prefix + ".ln.gamma", w.ln_gamma);
  params.add(prefix + ".ln.beta", w.ln_beta);
}

namespace detail {

/// [B, L, D] -> [B * H, L, D / H]
template <typename S>
Tensor<S> split_heads(const Tensor<S>& x, Index heads) {
  const Index b = x.dim(0), l = x.dim(1), d = x.dim(2);
  const Index hd = d / heads;
  auto r = reshape(x, {b, l, heads, hd});
  auto t = transpose_12(r);  // [B, H, L, hd]
  return reshape(t, {b * heads, l, hd});
}

/// [B * H, L, D / H] -> [B, L, D]
template <typename S>
Tensor<S> merge_heads(const Tensor<S>& x, Index batch, Index heads) {
  const Index l = x.dim(1), hd = x.dim(2);
  auto r = reshape(x, {batch, heads, l, hd});
  auto t = transpose_12(r);  // [B, L, H, hd]
  return reshape(t, {batch, l, heads * hd});
}

}  // namespace detail

/// Scaled dot-product attention per head, heads concatenated and
/// output-projected: softmax(Q K^T / sqrt(d_head)) V.
template <typename S>
Tensor<S> multi_head_attention(const Tensor<S>& q, const Tensor<S>& k,
                               const Tensor<S>& v, const CabWeights<S>& w,
                               const CabConfig& cfg) {
  const Index d = cfg.model_dim;
  check(q.rank() == 3 && k.rank() == 3 && v.rank() == 3,
        "attention: q/k/v must be [B, L, D]");
  check(q.dim(2) == d && k.dim(2) == d && v.dim(2) == d,
        "attention: feature dim must equal model_dim " + std::to_string(d) +
            ", got " + shape_str(q.shape()) + ", " + shape_str(k.shape()) +
            ", " + shape_str(v.shape()));
  check(q.dim(0) == k.dim(0) && k.dim(0) == v.dim(0),
        "attention: batch extents differ: " + shape_str(q.shape()) + ", " +
            shape_str(k.shape()) + ", " + shape_str(v.shape()));
  check(k.dim(1) == v.dim(1), "attention: key/value lengths differ: " +
                                  shape_str(k.shape()) + ", " +
                                  shape_str(v.shape()));
  check(k.dim(1) >= 1, "attention: need at least one key");
  const Index b = q.dim(0), heads = cfg.num_heads, hd = cfg.head_dim();

  auto qh = detail::split_heads(linear(q, w.wq, w.bq), heads);
  auto kh = detail::split_heads(linear(k, w.wk, w.bk), heads);
  auto vh = detail::split_heads(linear(v, w.wv, w.bv), heads);

  auto scores =
      mul_scalar(matmul(qh, transpose_last2(kh)), 1.0 / std::sqrt(double(hd)));
  auto attn = softmax_lastdim(scores);
  auto ctx = detail::merge_heads(matmul(attn, vh), b, heads);
  return linear(ctx, w.wo, w.bo);
}

/// f_a = MHA(q, k, v); r2 = relu(fc2(relu(fc1(f_a)))); out = norm(f_a + r2).
/// The output follows the query shape for any key/value length.
template <typename S>
Tensor<S> cab_forward(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                      const CabWeights<S>& w, const CabConfig& cfg) {
  auto f_a = multi_head_attention(q, k, v, w, cfg);
  auto r1 = relu(linear(f_a, w.fc1_w, w.fc1_b));
  auto r2 = relu(linear(r1, w.fc2_w, w.fc2_b));
  auto f_f = add(f_a, r2);
  return layer_norm_lastdim(f_f, w.ln_gamma, w.ln_beta, cfg.ln_eps);
}

/// Fixed sinusoidal positional table [len, dim]; added to token sequences
/// when positional encoding is enabled.
template <typename S>
Tensor<S> sinusoidal_positions(Index len, Index dim) {
  std::vector<S> data(static_cast<std::size_t>(len * dim));
  for (Index p = 0; p < len; ++p)
    for (Index i = 0; i < dim; ++i) {
      const double rate =
          std::pow(10000.0, -2.0 * static_cast<double>(i / 2) /
                                static_cast<double>(dim));
      const double angle = static_cast<double>(p) * rate;
      data[p * dim + i] =
          static_cast<S>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  return Tensor<S>::from({len, dim}, std::move(data));
}

}  // namespace cad
