// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0
//
// Full network assembly: contextual block -> modality projections -> chain
// of cross-attention blocks -> fusion classifier (answer mode) or three
// time-label heads (pre-training mode). Trunk tensor names are identical in
// both modes so pre-trained weights transfer structurally.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cad/attention.hpp"
#include "cad/contextual.hpp"
#include "cad/ops.hpp"
#include "cad/params.hpp"
#include "cad/rng.hpp"
#include "cad/tensor.hpp"

namespace cad {

enum class Variant { ca3, ca2, ca4 };
enum class ModelInputs { q, aq, vq, avq };
enum class GraphMode { answer, pretrain };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::ca3: return "3CA";
    case Variant::ca2: return "2CA";
    case Variant::ca4: return "4CA";
  }
  fail("unreachable variant");
}

inline Variant parse_variant(const std::string& s) {
  if (s == "3CA" || s == "3ca") return Variant::ca3;
  if (s == "2CA" || s == "2ca") return Variant::ca2;
  if (s == "4CA" || s == "4ca") return Variant::ca4;
  fail("unknown variant '" + s + "' (expected 3CA, 2CA or 4CA)");
}

inline std::string inputs_name(ModelInputs in) {
  switch (in) {
    case ModelInputs::q: return "Q";
    case ModelInputs::aq: return "AQ";
    case ModelInputs::vq: return "VQ";
    case ModelInputs::avq: return "AVQ";
  }
  fail("unreachable inputs");
}

inline ModelInputs parse_inputs(const std::string& s) {
  if (s == "Q") return ModelInputs::q;
  if (s == "AQ" || s == "A+Q") return ModelInputs::aq;
  if (s == "VQ" || s == "V+Q") return ModelInputs::vq;
  if (s == "AVQ" || s == "A+V+Q") return ModelInputs::avq;
  fail("unknown inputs '" + s + "' (expected Q, AQ, VQ or AVQ)");
}

struct CadConfig {
  CabConfig cab;
  Index n_answers = 42;
  Index n_time_labels = 60;
  Variant variant = Variant::ca3;
  ModelInputs inputs = ModelInputs::avq;
  bool use_contextual = true;
  bool positional_encoding = false;
  ContextualConfig contextual;
  // Raw feature dims ahead of the modality projections.
  Index d_audio = 16;
  Index d_text = 16;
  Index d_visual_channels = 12;

  bool has_cab3() const { return variant != Variant::ca2; }
  bool has_cab4() const { return variant == Variant::ca4; }
  Index fused_dim() const {
    switch (variant) {
      case Variant::ca2: return 2 * cab.model_dim;
      case Variant::ca3: return 3 * cab.model_dim;
      case Variant::ca4: return 4 * cab.model_dim;
    }
    fail("unreachable variant");
  }
};

/// One batch of raw features: audio [B, T_a, d_a], text [B, L_q, d_t],
/// visual [B, T_v, s, c].
template <typename S>
struct FeatureTriple {
  Tensor<S> audio;
  Tensor<S> text;
  Tensor<S> visual;
};

template <typename S>
struct CadWeights {
  CadConfig cfg;
  GraphMode mode = GraphMode::answer;
  ParamSet<S> params;

  Tensor<S> proj_a_w, proj_a_b, proj_t_w, proj_t_b, proj_v_w, proj_v_b;
  CabWeights<S> cab1, cab2, cab3, cab4;
  Tensor<S> answer_w, answer_b;                                // answer mode
  Tensor<S> head_a_w, head_a_b;                                // pretrain mode
  Tensor<S> head_vt_w, head_vt_b, head_vat_w, head_vat_b;
};

/// Initialization order is fixed (projections, CABs, then heads) so the
/// trunk draws are identical across graph modes for one seed.
template <typename S>
CadWeights<S> init_cad_weights(const CadConfig& cfg, GraphMode mode,
                               std::uint64_t seed) {
  Rng rng(derive_seed(seed, "model_init"));
  const Index d = cfg.cab.model_dim;
  CadWeights<S> w;
  w.cfg = cfg;
  w.mode = mode;

  w.proj_a_w = uniform_fan_in<S>({cfg.d_audio, d}, cfg.d_audio, rng);
  w.proj_a_b = Tensor<S>::zeros({d}, true);
  w.proj_t_w = uniform_fan_in<S>({cfg.d_text, d}, cfg.d_text, rng);
  w.proj_t_b = Tensor<S>::zeros({d}, true);
  w.proj_v_w = uniform_fan_in<S>({cfg.d_visual_channels, d},
                                 cfg.d_visual_channels, rng);
  w.proj_v_b = Tensor<S>::zeros({d}, true);
  w.cab1 = init_cab_weights<S>(cfg.cab, rng);
  w.cab2 = init_cab_weights<S>(cfg.cab, rng);
  if (cfg.has_cab3()) w.cab3 = init_cab_weights<S>(cfg.cab, rng);
  if (cfg.has_cab4()) w.cab4 = init_cab_weights<S>(cfg.cab, rng);

  if (mode == GraphMode::answer) {
    const Index fused = cfg.fused_dim();
    w.answer_w = uniform_fan_in<S>({fused, cfg.n_answers}, fused, rng);
    w.answer_b = Tensor<S>::zeros({cfg.n_answers}, true);
  } else {
    w.head_a_w = uniform_fan_in<S>({d, cfg.n_time_labels}, d, rng);
    w.head_a_b = Tensor<S>::zeros({cfg.n_time_labels}, true);
    w.head_vt_w = uniform_fan_in<S>({d, cfg.n_time_labels}, d, rng);
    w.head_vt_b = Tensor<S>::zeros({cfg.n_time_labels}, true);
    if (cfg.has_cab3()) {
      w.head_vat_w = uniform_fan_in<S>({d, cfg.n_time_labels}, d, rng);
      w.head_vat_b = Tensor<S>::zeros({cfg.n_time_labels}, true);
    }
  }

  w.params.add("proj.audio.w", w.proj_a_w);
  w.params.add("proj.audio.b", w.proj_a_b);
  w.params.add("proj.text.w", w.proj_t_w);
  w.params.add("proj.text.b", w.proj_t_b);
  w.params.add("proj.visual.w", w.proj_v_w);
  w.params.add("proj.visual.b", w.proj_v_b);
  register_cab_params(w.params, "cab1", w.cab1);
  register_cab_params(w.params, "cab2", w.cab2);
  if (cfg.has_cab3()) register_cab_params(w.params, "cab3", w.cab3);
  if (cfg.has_cab4()) register_cab_params(w.params, "cab4", w.cab4);
  if (mode == GraphMode::answer) {
    w.params.add("head.answer.w", w.answer_w);
    w.params.add("head.answer.b", w.answer_b);
  } else {
    w.params.add("head.time_audio.w", w.head_a_w);
    w.params.add("head.time_audio.b", w.head_a_b);
    w.params.add("head.time_visual_t.w", w.head_vt_w);
    w.params.add("head.time_visual_t.b", w.head_vt_b);
    if (cfg.has_cab3()) {
      w.params.add("head.time_visual_at.w", w.head_vat_w);
      w.params.add("head.time_visual_at.b", w.head_vat_b);
    }
  }
  return w;
}

inline bool is_trunk_param(const std::string& name) {
  return name.rfind("head.", 0) != 0;
}

/// Sequence outputs of the cross-attention chain.
template <typename S>
struct ChainOutputs {
  Tensor<S> a_t;   // audio attended by text queries
  Tensor<S> v_t;   // visual attended by text queries
  Tensor<S> v_at;  // visual attended by a_t (absent under 2CA)
  Tensor<S> a_v;   // audio attended by v_t (4CA only)
};

namespace detail {

template <typename S>
ChainOutputs<S> run_chain(const FeatureTriple<S>& x, const CadWeights<S>& w,
                          Rng& rng, bool training) {
  const CadConfig& cfg = w.cfg;
  check(x.audio.rank() == 3, "audio features must be [B, T_a, d_a], got " +
                                 shape_str(x.audio.shape()));
  check(x.text.rank() == 3, "text features must be [B, L_q, d_t], got " +
                                shape_str(x.text.shape()));
  check(x.visual.rank() == 4, "visual features must be [B, T_v, s, c], got " +
                                  shape_str(x.visual.shape()));
  const Index b = x.audio.dim(0);
  check(x.text.dim(0) == b && x.visual.dim(0) == b,
        "batch-size mismatch across modalities: audio " +
            shape_str(x.audio.shape()) + ", text " + shape_str(x.text.shape()) +
            ", visual " + shape_str(x.visual.shape()));

  const bool with_audio =
      cfg.inputs == ModelInputs::aq || cfg.inputs == ModelInputs::avq;
  const bool with_visual =
      cfg.inputs == ModelInputs::vq || cfg.inputs == ModelInputs::avq;
  Tensor<S> audio = with_audio ? x.audio : Tensor<S>::zeros(x.audio.shape());
  Tensor<S> visual = with_visual ? x.visual : Tensor<S>::zeros(x.visual.shape());

  if (cfg.use_contextual)
    visual = apply_contextual_block(visual, cfg.contextual, rng, training);
  const Index tv = visual.dim(1), sp = visual.dim(2), ch = visual.dim(3);
  auto visual_tokens = reshape(visual, {b, tv * sp, ch});

  auto a_tok = linear(audio, w.proj_a_w, w.proj_a_b);
  auto t_tok = linear(x.text, w.proj_t_w, w.proj_t_b);
  auto v_tok = linear(visual_tokens, w.proj_v_w, w.proj_v_b);
  if (cfg.positional_encoding) {
    a_tok = add(a_tok, sinusoidal_positions<S>(a_tok.dim(1), cfg.cab.model_dim));
    v_tok = add(v_tok, sinusoidal_positions<S>(v_tok.dim(1), cfg.cab.model_dim));
  }

  ChainOutputs<S> out;
  out.a_t = cab_forward(t_tok, a_tok, a_tok, w.cab1, cfg.cab);
  out.v_t = cab_forward(t_tok, v_tok, v_tok, w.cab2, cfg.cab);
  if (cfg.has_cab3())
    out.v_at = cab_forward(out.a_t, v_tok, v_tok, w.cab3, cfg.cab);
  if (cfg.has_cab4())
    out.a_v = cab_forward(out.v_t, a_tok, a_tok, w.cab4, cfg.cab);
  return out;
}

template <typename S>
Tensor<S> pool_sequence(const Tensor<S>& x) {
  return reduce_mean(x, 1);
}

}  // namespace detail

/// Answer-mode forward: pooled chain outputs concatenated into the fusion
/// classifier. Returns logits [B, n_answers].
template <typename S>
Tensor<S> forward_answer(const FeatureTriple<S>& x, const CadWeights<S>& w,
                         Rng& rng, bool training) {
  check(w.mode == GraphMode::answer,
        "forward_answer: weights were built for the pre-training graph");
  auto chain = detail::run_chain(x, w, rng, training);
  std::vector<Tensor<S>> pooled{detail::pool_sequence(chain.a_t),
                                detail::pool_sequence(chain.v_t)};
  if (w.cfg.has_cab3()) pooled.push_back(detail::pool_sequence(chain.v_at));
  if (w.cfg.has_cab4()) pooled.push_back(detail::pool_sequence(chain.a_v));
  return linear(concat_lastdim(pooled), w.answer_w, w.answer_b);
}

/// Time-label logits of the three pre-training classifiers. Under 2CA there
/// is no attended-audio stream and visual_at is left undefined.
template <typename S>
struct PretrainLogits {
  Tensor<S> audio;
  Tensor<S> visual_t;
  Tensor<S> visual_at;
};

template <typename S>
PretrainLogits<S> forward_pretrain(const FeatureTriple<S>& x,
                                   const CadWeights<S>& w, Rng& rng,
                                   bool training = true) {
  check(w.mode == GraphMode::pretrain,
        "forward_pretrain: weights were built for the answer graph");
  auto chain = detail::run_chain(x, w, rng, training);
  PretrainLogits<S> out;
  out.audio = linear(detail::pool_sequence(chain.a_t), w.head_a_w, w.head_a_b);
  out.visual_t =
      linear(detail::pool_sequence(chain.v_t), w.head_vt_w, w.head_vt_b);
  if (w.cfg.has_cab3())
    out.visual_at =
        linear(detail::pool_sequence(chain.v_at), w.head_vat_w, w.head_vat_b);
  return out;
}

template <typename S>
Tensor<S> avqa_loss(const Tensor<S>& logits, const std::vector<int>& labels) {
  return cross_entropy(logits, labels);
}

/// Sum of the per-head cross-entropies; the two visual heads share the
/// visual time label.
template <typename S>
Tensor<S> alignment_loss(const PretrainLogits<S>& heads,
                         const std::vector<int>& audio_labels,
                         const std::vector<int>& visual_labels) {
  auto loss = add(cross_entropy(heads.audio, audio_labels),
                  cross_entropy(heads.visual_t, visual_labels));
  if (heads.visual_at.defined())
    loss = add(loss, cross_entropy(heads.visual_at, visual_labels));
  return loss;
}

/// Copy every trunk tensor bitwise from a checkpoint; heads keep their fresh
/// initialization and any pre-training heads in the checkpoint are ignored.
template <typename S>
void init_from_pretrained(CadWeights<S>& w,
                          const std::map<std::string, Tensor<S>>& ckpt) {
  for (auto& [name, param] : w.params) {
    if (!is_trunk_param(name)) continue;
    auto it = ckpt.find(name);
    if (it == ckpt.end())
      fail("init_from_pretrained: checkpoint is missing trunk tensor '" + name +
           "'");
    check(it->second.shape() == param.shape(),
          "init_from_pretrained: shape mismatch for '" + name + "': " +
              shape_str(it->second.shape()) + " vs " + shape_str(param.shape()));
    param.values_mut() = it->second.values();
  }
}

}  // namespace cad
