// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameter-free stochastic spatial masking of visual feature maps. The
// selector maps are computed from the input values and applied as constants,
// so gradients flow only through surviving positions and the module never
// contributes learnable parameters.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cad/ops.hpp"
#include "cad/rng.hpp"
#include "cad/tensor.hpp"

namespace cad {

enum class SelectorMode {
  coin_then_mask,    // one coin picks M or C_f; then mask_frac positions zeroed
  elementwise_pick,  // per element pick C_f with map_select_prob, else M;
                     // the mask_frac zeroing still applies afterwards
};

struct ContextualConfig {
  double sample_frac = 0.8;     // fraction of items routed through the block
  double mask_frac = 0.9;       // fraction of spatial positions zeroed
  double th_ratio = 0.9;        // threshold ratio over the per-slice max
  double map_select_prob = 0.5; // probability of choosing C_f over M
  SelectorMode selector_mode = SelectorMode::coin_then_mask;
  bool route_per_frame = false;
  bool apply_at_inference = false;
};

/// ceil(frac * n) with a guard against float round-up on exact products.
inline Index masked_count(double frac, Index n) {
  const Index k = static_cast<Index>(
      std::ceil(frac * static_cast<double>(n) - 1e-9));
  return std::min(std::max<Index>(k, 0), n);
}

/// The four maps of one forward pass, plus the routing decisions
/// (per item, or per frame when route_per_frame is set).
template <typename S>
struct ContextualMaps {
  Tensor<S> f_m;   // [B, t, s] channel mean
  Tensor<S> M;     // [B, t, s] binary threshold mask
  Tensor<S> C_f;   // [B, t, s] sigmoid context map
  Tensor<S> R;     // [B, t, s] final selector
  std::vector<std::uint8_t> routed;
};

/// Mean over the channel dim: [B, t, s, c] -> [B, t, s]. Detached from the
/// autodiff graph (the selector is treated as a constant).
template <typename S>
Tensor<S> channel_mean(const Tensor<S>& v) {
  const Shape& s = v.shape();
  check(s.size() == 4, "channel_mean: visual map must be [B, t, s, c], got " +
                           shape_str(s));
  const Index c = s[3];
  const Index pos = v.size() / c;
  std::vector<S> out(static_cast<std::size_t>(pos));
  for (Index p = 0; p < pos; ++p) {
    double acc = 0.0;
    for (Index j = 0; j < c; ++j) acc += static_cast<double>(v.data()[p * c + j]);
    out[p] = static_cast<S>(acc / static_cast<double>(c));
  }
  return Tensor<S>::from({s[0], s[1], s[2]}, std::move(out));
}

/// Per (batch, frame) slice: th = th_ratio * max over s; 0 where f_m > th,
/// 1 otherwise. With a negative max the threshold exceeds the max and the
/// mask is all ones; an all-equal positive slice masks out entirely.
template <typename S>
Tensor<S> threshold_mask(const Tensor<S>& f_m, double th_ratio) {
  const Shape& shape = f_m.shape();
  check(shape.size() == 3, "threshold_mask: expected [B, t, s], got " +
                               shape_str(shape));
  const Index s = shape[2];
  const Index slices = f_m.size() / s;
  std::vector<S> out(static_cast<std::size_t>(f_m.size()));
  for (Index sl = 0; sl < slices; ++sl) {
    const S* in = f_m.data() + sl * s;
    double mx = static_cast<double>(in[0]);
    for (Index j = 1; j < s; ++j) mx = std::max(mx, static_cast<double>(in[j]));
    const double th = th_ratio * mx;
    for (Index j = 0; j < s; ++j)
      out[sl * s + j] = static_cast<double>(in[j]) > th ? S(0) : S(1);
  }
  return Tensor<S>::from(shape, std::move(out));
}

/// Elementwise sigmoid of the channel-mean map.
template <typename S>
Tensor<S> contextual_map(const Tensor<S>& f_m) {
  std::vector<S> out(static_cast<std::size_t>(f_m.size()));
  for (Index i = 0; i < f_m.size(); ++i) {
    const double v = static_cast<double>(f_m.data()[i]);
    out[i] = static_cast<S>(v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                     : std::exp(v) / (1.0 + std::exp(v)));
  }
  return Tensor<S>::from(f_m.shape(), std::move(out));
}

/// Base map choice plus random zeroing: in coin_then_mask mode one coin per
/// forward pass picks C_f (with map_select_prob) or M; in elementwise_pick
/// mode the choice is made per element. Either way, ceil(mask_frac * s)
/// uniformly chosen positions per (batch, frame) slice are set to zero on
/// top of any zeros the base map already has.
template <typename S>
Tensor<S> build_selector(const Tensor<S>& M, const Tensor<S>& C_f,
                         const ContextualConfig& cfg, Rng& rng) {
  check(M.shape() == C_f.shape(), "build_selector: map shapes differ: " +
                                      shape_str(M.shape()) + " vs " +
                                      shape_str(C_f.shape()));
  const Shape& shape = M.shape();
  check(shape.size() == 3, "build_selector: expected [B, t, s], got " +
                               shape_str(shape));
  const Index s = shape[2];
  const Index slices = M.size() / s;

  std::vector<S> out(static_cast<std::size_t>(M.size()));
  if (cfg.selector_mode == SelectorMode::coin_then_mask) {
    const bool use_cf = rng.bernoulli(cfg.map_select_prob);
    const S* base = use_cf ? C_f.data() : M.data();
    std::copy(base, base + M.size(), out.begin());
  } else {
    for (Index i = 0; i < M.size(); ++i)
      out[i] = rng.bernoulli(cfg.map_select_prob) ? C_f.data()[i] : M.data()[i];
  }
  const Index k = masked_count(cfg.mask_frac, s);
  for (Index sl = 0; sl < slices; ++sl) {
    for (Index j : rng.sample_indices(s, k)) out[sl * s + j] = S(0);
  }
  return Tensor<S>::from(shape, std::move(out));
}

/// Algorithm: route each batch item (or frame) through the block with
/// probability sample_frac during training; routed slices are multiplied by
/// the selector broadcast over channels, unrouted ones pass through
/// unchanged. Outside training this is the identity unless
/// apply_at_inference is set.
template <typename S>
Tensor<S> apply_contextual_block(const Tensor<S>& v, const ContextualConfig& cfg,
                                 Rng& rng, bool training,
                                 ContextualMaps<S>* maps_out = nullptr) {
  const Shape& shape = v.shape();
  check(shape.size() == 4, "contextual block: visual map must be [B, t, s, c], got " +
                               shape_str(shape));
  if (!training && !cfg.apply_at_inference) {
    if (maps_out) *maps_out = {};
    return v;
  }
  const Index b = shape[0], t = shape[1], s = shape[2];

  ContextualMaps<S> maps;
  maps.f_m = channel_mean(v);
  maps.M = threshold_mask(maps.f_m, cfg.th_ratio);
  maps.C_f = contextual_map(maps.f_m);
  maps.R = build_selector(maps.M, maps.C_f, cfg, rng);

  const Index route_units = cfg.route_per_frame ? b * t : b;
  maps.routed.resize(static_cast<std::size_t>(route_units));
  for (auto& r : maps.routed) r = rng.bernoulli(cfg.sample_frac) ? 1 : 0;

  std::vector<S> weights(static_cast<std::size_t>(b * t * s), S(1));
  const Index unit_span = cfg.route_per_frame ? s : t * s;
  for (Index u = 0; u < route_units; ++u) {
    if (!maps.routed[static_cast<std::size_t>(u)]) continue;
    const Index off = u * unit_span;
    std::copy(maps.R.data() + off, maps.R.data() + off + unit_span,
              weights.begin() + off);
  }
  auto w = Tensor<S>::from({b, t, s}, std::move(weights));
  if (maps_out) *maps_out = maps;
  return scale_positions(v, w);
}

/// Fraction of (batch, frame, position) token slots with any nonzero channel.
template <typename S>
double nonzero_token_fraction(const Tensor<S>& v) {
  const Shape& s = v.shape();
  check(s.size() == 4, "nonzero_token_fraction: expected [B, t, s, c]");
  const Index c = s[3];
  const Index pos = v.size() / c;
  Index nonzero = 0;
  for (Index p = 0; p < pos; ++p) {
    for (Index j = 0; j < c; ++j) {
      if (v.data()[p * c + j] != S(0)) {
        ++nonzero;
        break;
      }
    }
  }
  return static_cast<double>(nonzero) / static_cast<double>(pos);
}

}  // namespace cad
