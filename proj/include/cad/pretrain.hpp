// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0
//
// Audio-visual fine temporal alignment pre-training: streams are segmented
// into one-second cues, positive/negative cue pairs are sampled 60/40, and
// three softmax classifiers predict the time labels.

#pragma once

#include <cstdint>
#include <vector>

#include "cad/checkpoint.hpp"
#include "cad/model.hpp"
#include "cad/rng.hpp"
#include "cad/synthetic.hpp"
#include "cad/tensor.hpp"

namespace cad {

enum class CueModality { audio, visual };

struct Cue {
  CueModality modality = CueModality::audio;
  int time_label = 0;
  int clip_index = 0;
  TensorF features;  // audio: [f_a, d_a]; visual: [f_v, s, c]
};

struct PairSample {
  Cue audio_cue;
  Cue visual_cue;
  TensorF query;
  bool positive = true;
};

struct SamplerConfig {
  double pos_prob = 0.6;
  Index n_time_labels = 60;
  Index cues_per_clip = 10;
};

/// Split a feature stream along dim 0 into n_cues contiguous,
/// non-overlapping cues labeled 0..n_cues-1. The length must divide evenly;
/// silent truncation is an error.
std::vector<Cue> segment_cues(const TensorF& stream, Index n_cues,
                              CueModality modality, Index cues_per_clip);

/// Positive pair (same label, uniform) with probability pos_prob, else a
/// negative pair with two labels drawn uniformly without replacement.
PairSample sample_pair(const std::vector<Cue>& cues_a,
                       const std::vector<Cue>& cues_v, const SamplerConfig& cfg,
                       Rng& rng);

/// Positive pairs and within-clip negatives use the containing clip's query;
/// cross-clip negatives alternate strictly between the audio cue's clip and
/// the visual cue's clip, starting with audio.
const TensorF& select_query(const PairSample& pair,
                            const std::vector<TensorF>& clip_queries,
                            bool& toggle_use_audio);

/// Sequential stateful pair generator over a pool of episodes; owns the rng
/// and the negative-query toggle.
class PairSampler {
 public:
  PairSampler(const SyntheticDataset& ds, std::vector<Index> episode_pool,
              SamplerConfig cfg, std::uint64_t seed);

  PairSample next();
  const SamplerConfig& config() const { return cfg_; }

 private:
  const SyntheticDataset* ds_;
  std::vector<Index> pool_;
  std::vector<std::vector<Cue>> cues_audio_, cues_visual_;  // by episode id
  SamplerConfig cfg_;
  Rng rng_;
  bool toggle_use_audio_ = true;
};

struct PretrainOptions {
  Index epochs = 10;
  Index batch = 64;
  double lr = 1e-4;
  Index pairs_per_epoch = 3000;
  double pos_prob = 0.6;
  std::uint64_t seed = 0;
};

struct PretrainEpochRow {
  double loss = 0.0;
  double acc_audio = 0.0;
  double acc_visual_t = 0.0;
  double acc_visual_at = 0.0;  // -1 when the variant has no third head
};

struct PretrainResult {
  TensorMap checkpoint;  // full pre-training graph (trunk + time heads)
  std::vector<PretrainEpochRow> log;
};

/// Adam over the alignment loss on sampled pairs; logs per-epoch loss and
/// held-out positive-pair accuracy per head; non-finite loss aborts.
PretrainResult run_pretraining(const SyntheticDataset& dataset,
                               CadWeights<float>& model,
                               const PretrainOptions& opt);

/// Held-out accuracy of the three heads over one positive pair per
/// (episode, time label).
PretrainEpochRow eval_pretrain_heads(const SyntheticDataset& dataset,
                                     const std::vector<Index>& episode_pool,
                                     CadWeights<float>& model, Index batch);

}  // namespace cad
