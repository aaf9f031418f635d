// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic audio/text/visual feature streams with controllable cross-modal
// alignment. Each active class emits a fixed prototype into both modalities
// during its active cues; an optional per-cue time signature shared across
// modalities carries the temporal label; alignment_noise perturbs each
// (cue, modality) with an offset that degrades cross-modal agreement.
// Answers are computed from the episode spec, never from the features.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cad/rng.hpp"
#include "cad/tensor.hpp"

namespace cad {

struct ClassActivity {
  int class_id = 0;
  Index audio_on = 0, audio_off = 0;    // [on, off) cue interval, on == off: silent
  Index visual_on = 0, visual_off = 0;  // [on, off) cue interval, on == off: unseen
};

struct EpisodeSpec {
  Index n_cues = 12;
  Index cues_per_clip = 4;
  Index n_classes = 3;
  Index frames_per_cue_audio = 2;
  Index frames_per_cue_visual = 1;
  Index d_audio = 16;
  Index d_text = 16;
  Index spatial = 10;
  Index channels = 12;
  Index query_len = 4;
  double obs_noise = 0.05;
  double alignment_noise = 0.0;
  double time_signature_scale = 0.0;
  std::uint64_t feature_seed = 0;  // prototype universe, shared across a dataset
  std::vector<ClassActivity> active;

  Index n_clips() const { return n_cues / cues_per_clip; }
};

/// Prototype universe derived deterministically from feature_seed.
struct FeatureSpace {
  std::vector<std::vector<float>> audio_protos;    // [n_classes][d_audio]
  std::vector<std::vector<float>> visual_protos;   // [n_classes][channels]
  std::vector<std::vector<float>> spatial_gains;   // [n_classes][spatial]
  std::vector<std::vector<float>> time_sig_audio;  // [n_cues][d_audio]
  std::vector<std::vector<float>> time_sig_visual; // [n_cues][channels]
  std::vector<std::vector<float>> category_emb;    // [3][d_text]
  std::vector<std::vector<float>> scope_emb;       // [3][d_text]
  std::vector<std::vector<float>> class_emb;       // [n_classes][d_text]
  std::vector<std::vector<float>> clip_emb;        // [n_clips][d_text]
};

FeatureSpace build_feature_space(const EpisodeSpec& spec);

struct Episode {
  EpisodeSpec spec;
  TensorF audio;                      // [n_cues * f_a, d_audio]
  TensorF visual;                     // [n_cues * f_v, spatial, channels]
  std::vector<TensorF> clip_queries;  // n_clips x [query_len, d_text]
};

enum class QuestionCategory { existential, counting, temporal };
enum class QuestionScope { audio, visual, audio_visual };

std::string category_name(QuestionCategory c);
std::string scope_name(QuestionScope s);

// Answer vocabulary layout: 0 = no, 1 = yes, 2..8 = counts 0..6,
// 9.. = class ids.
constexpr int kAnswerNo = 0;
constexpr int kAnswerYes = 1;
constexpr int kAnswerCountBase = 2;
constexpr int kAnswerClassBase = 9;

inline Index min_answer_vocab(Index n_classes) { return kAnswerClassBase + n_classes; }

struct QASample {
  TensorF question;  // [query_len, d_text]
  QuestionCategory category = QuestionCategory::existential;
  QuestionScope scope = QuestionScope::audio;
  int target_class = -1;  // the asked class for existential questions
  int answer = 0;
  Index episode_index = -1;
};

bool class_active_in_scope(const EpisodeSpec& spec, int class_id,
                           QuestionScope scope);
int ground_truth_answer(const EpisodeSpec& spec, QuestionCategory category,
                        QuestionScope scope, int target_class);

Episode generate_episode(const EpisodeSpec& spec, Rng& rng);
QASample generate_qa(const Episode& episode, Rng& rng);
QASample generate_qa_for(const Episode& episode, QuestionCategory category,
                         QuestionScope scope, Rng& rng);

struct DatasetConfig {
  EpisodeSpec base;
  double class_present_prob = 0.75;
  double both_modal_prob = 0.6;
  double audio_only_prob = 0.2;  // remainder is visual-only
  double train_frac = 0.8;
  double val_frac = 0.1;
};

struct SyntheticDataset {
  DatasetConfig cfg;
  std::vector<Episode> episodes;
  std::vector<QASample> qa;
  std::vector<Index> train_qa, val_qa, test_qa;      // indices into qa
  std::vector<Index> train_episodes, val_episodes, test_episodes;
  std::map<std::string, Index> category_counts;      // "scope/type" -> n
};

/// Reproducible dataset with an episode-level 80/10/10 split (questions about
/// one episode never cross splits).
SyntheticDataset make_dataset(Index n_episodes, const DatasetConfig& cfg,
                              Rng& rng);

std::uint64_t dataset_hash(const SyntheticDataset& ds);

void save_dataset(const SyntheticDataset& ds, const std::string& dir);
SyntheticDataset load_dataset(const std::string& dir);

/// Oracle nearest-prototype classifier over audio cues with exactly one
/// active class; used to verify that alignment noise monotonically destroys
/// the alignment signal.
double nearest_prototype_cue_accuracy(const std::vector<Episode>& episodes);

}  // namespace cad
