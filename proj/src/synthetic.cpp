// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0

#include "cad/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cad/checkpoint.hpp"
#include "cad/metrics.hpp"

namespace cad {

namespace {

constexpr double kQuestionNoise = 0.02;
constexpr double kClipClassMix = 0.5;

void validate_spec(const EpisodeSpec& spec) {
  check(spec.n_cues >= 1, "episode: n_cues must be >= 1");
  check(spec.cues_per_clip >= 1 && spec.n_cues % spec.cues_per_clip == 0,
        "episode: n_cues " + std::to_string(spec.n_cues) +
            " must divide by cues_per_clip " +
            std::to_string(spec.cues_per_clip));
  check(spec.n_classes >= 1, "episode: n_classes must be >= 1");
  check(spec.frames_per_cue_audio >= 1 && spec.frames_per_cue_visual >= 1,
        "episode: frames per cue must be >= 1");
  check(spec.d_audio >= 1 && spec.d_text >= 1 && spec.spatial >= 1 &&
            spec.channels >= 1 && spec.query_len >= 1,
        "episode: feature dims must be >= 1");
  check(spec.obs_noise >= 0 && spec.alignment_noise >= 0,
        "episode: noise levels must be >= 0");
  for (const auto& a : spec.active) {
    check(a.class_id >= 0 && a.class_id < spec.n_classes,
          "episode: class id " + std::to_string(a.class_id) + " out of range");
    check(a.audio_on <= a.audio_off && a.audio_off <= spec.n_cues,
          "episode: bad audio interval for class " + std::to_string(a.class_id));
    check(a.visual_on <= a.visual_off && a.visual_off <= spec.n_cues,
          "episode: bad visual interval for class " +
              std::to_string(a.class_id));
  }
}

std::vector<float> draw_normal_vec(Rng& rng, Index n) {
  std::vector<float> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = static_cast<float>(rng.normal());
  return out;
}

bool audio_active_at(const EpisodeSpec& spec, int class_id, Index cue) {
  for (const auto& a : spec.active)
    if (a.class_id == class_id)
      return a.audio_on <= cue && cue < a.audio_off;
  return false;
}

bool visual_active_at(const EpisodeSpec& spec, int class_id, Index cue) {
  for (const auto& a : spec.active)
    if (a.class_id == class_id)
      return a.visual_on <= cue && cue < a.visual_off;
  return false;
}

const ClassActivity* find_activity(const EpisodeSpec& spec, int class_id) {
  for (const auto& a : spec.active)
    if (a.class_id == class_id) return &a;
  return nullptr;
}

}  // namespace

std::string category_name(QuestionCategory c) {
  switch (c) {
    case QuestionCategory::existential: return "existential";
    case QuestionCategory::counting: return "counting";
    case QuestionCategory::temporal: return "temporal";
  }
  fail("unreachable category");
}

std::string scope_name(QuestionScope s) {
  switch (s) {
    case QuestionScope::audio: return "A";
    case QuestionScope::visual: return "V";
    case QuestionScope::audio_visual: return "AV";
  }
  fail("unreachable scope");
}

FeatureSpace build_feature_space(const EpisodeSpec& spec) {
  FeatureSpace fs;
  const Index maxd = std::max(spec.d_audio, spec.channels);

  Rng proto_rng(derive_seed(spec.feature_seed, "class_protos"));
  for (Index k = 0; k < spec.n_classes; ++k) {
    auto master = draw_normal_vec(proto_rng, maxd);
    fs.audio_protos.emplace_back(master.begin(), master.begin() + spec.d_audio);
    fs.visual_protos.emplace_back(master.begin(), master.begin() + spec.channels);
  }

  Rng gain_rng(derive_seed(spec.feature_seed, "spatial_gains"));
  for (Index k = 0; k < spec.n_classes; ++k) {
    std::vector<float> g(static_cast<std::size_t>(spec.spatial));
    for (auto& v : g) v = static_cast<float>(gain_rng.uniform(0.5, 1.5));
    fs.spatial_gains.push_back(std::move(g));
  }

  Rng time_rng(derive_seed(spec.feature_seed, "time_sigs"));
  for (Index l = 0; l < spec.n_cues; ++l) {
    auto master = draw_normal_vec(time_rng, maxd);
    fs.time_sig_audio.emplace_back(master.begin(), master.begin() + spec.d_audio);
    fs.time_sig_visual.emplace_back(master.begin(),
                                    master.begin() + spec.channels);
  }

  Rng q_rng(derive_seed(spec.feature_seed, "question_space"));
  for (int i = 0; i < 3; ++i)
    fs.category_emb.push_back(draw_normal_vec(q_rng, spec.d_text));
  for (int i = 0; i < 3; ++i)
    fs.scope_emb.push_back(draw_normal_vec(q_rng, spec.d_text));
  for (Index k = 0; k < spec.n_classes; ++k)
    fs.class_emb.push_back(draw_normal_vec(q_rng, spec.d_text));

  Rng clip_rng(derive_seed(spec.feature_seed, "clip_emb"));
  for (Index j = 0; j < spec.n_clips(); ++j)
    fs.clip_emb.push_back(draw_normal_vec(clip_rng, spec.d_text));
  return fs;
}

Episode generate_episode(const EpisodeSpec& spec, Rng& rng) {
  validate_spec(spec);
  const FeatureSpace fs = build_feature_space(spec);

  // Per-cue, per-modality alignment offsets; drawn unconditionally and
  // scaled, so sweeping alignment_noise rescales identical perturbations.
  std::vector<std::vector<float>> delta_a, delta_v;
  for (Index l = 0; l < spec.n_cues; ++l) {
    auto da = draw_normal_vec(rng, spec.d_audio);
    auto dv = draw_normal_vec(rng, spec.channels);
    for (auto& v : da) v *= static_cast<float>(spec.alignment_noise);
    for (auto& v : dv) v *= static_cast<float>(spec.alignment_noise);
    delta_a.push_back(std::move(da));
    delta_v.push_back(std::move(dv));
  }

  Episode ep;
  ep.spec = spec;
  const float ts = static_cast<float>(spec.time_signature_scale);
  const float obs = static_cast<float>(spec.obs_noise);

  const Index ta = spec.n_cues * spec.frames_per_cue_audio;
  std::vector<float> audio(static_cast<std::size_t>(ta * spec.d_audio));
  for (Index f = 0; f < ta; ++f) {
    const Index cue = f / spec.frames_per_cue_audio;
    for (Index j = 0; j < spec.d_audio; ++j) {
      float v = ts * fs.time_sig_audio[cue][j] + delta_a[cue][j] +
                obs * static_cast<float>(rng.normal());
      for (Index k = 0; k < spec.n_classes; ++k)
        if (audio_active_at(spec, static_cast<int>(k), cue))
          v += fs.audio_protos[k][j];
      audio[f * spec.d_audio + j] = v;
    }
  }
  ep.audio = TensorF::from({ta, spec.d_audio}, std::move(audio));

  const Index tv = spec.n_cues * spec.frames_per_cue_visual;
  std::vector<float> visual(
      static_cast<std::size_t>(tv * spec.spatial * spec.channels));
  for (Index f = 0; f < tv; ++f) {
    const Index cue = f / spec.frames_per_cue_visual;
    for (Index p = 0; p < spec.spatial; ++p)
      for (Index j = 0; j < spec.channels; ++j) {
        float v = ts * fs.time_sig_visual[cue][j] + delta_v[cue][j] +
                  obs * static_cast<float>(rng.normal());
        for (Index k = 0; k < spec.n_classes; ++k)
          if (visual_active_at(spec, static_cast<int>(k), cue))
            v += fs.spatial_gains[k][p] * fs.visual_protos[k][j];
        visual[(f * spec.spatial + p) * spec.channels + j] = v;
      }
  }
  ep.visual = TensorF::from({tv, spec.spatial, spec.channels}, std::move(visual));

  for (Index j = 0; j < spec.n_clips(); ++j) {
    std::vector<float> q(static_cast<std::size_t>(spec.query_len * spec.d_text));
    const Index lo = j * spec.cues_per_clip, hi = lo + spec.cues_per_clip;
    for (Index t = 0; t < spec.query_len; ++t)
      for (Index i = 0; i < spec.d_text; ++i) {
        float v = static_cast<float>(kQuestionNoise * rng.normal());
        if (t == 0) {
          v += fs.clip_emb[j][i];
          for (const auto& a : spec.active) {
            const bool in_clip = (a.audio_on < hi && a.audio_off > lo) ||
                                 (a.visual_on < hi && a.visual_off > lo);
            if (in_clip)
              v += static_cast<float>(kClipClassMix) *
                   fs.class_emb[a.class_id][i];
          }
        }
        q[t * spec.d_text + i] = v;
      }
    ep.clip_queries.push_back(
        TensorF::from({spec.query_len, spec.d_text}, std::move(q)));
  }
  return ep;
}

bool class_active_in_scope(const EpisodeSpec& spec, int class_id,
                           QuestionScope scope) {
  const ClassActivity* a = find_activity(spec, class_id);
  if (!a) return false;
  const bool in_audio = a->audio_on < a->audio_off;
  const bool in_visual = a->visual_on < a->visual_off;
  switch (scope) {
    case QuestionScope::audio: return in_audio;
    case QuestionScope::visual: return in_visual;
    case QuestionScope::audio_visual: return in_audio && in_visual;
  }
  fail("unreachable scope");
}

namespace {

/// Onset key for temporal questions: first audible cue (A), first visible
/// cue (V), or the first cue by which the class is present in both (AV).
Index temporal_key(const ClassActivity& a, QuestionScope scope) {
  switch (scope) {
    case QuestionScope::audio: return a.audio_on;
    case QuestionScope::visual: return a.visual_on;
    case QuestionScope::audio_visual: return std::max(a.audio_on, a.visual_on);
  }
  fail("unreachable scope");
}

}  // namespace

int ground_truth_answer(const EpisodeSpec& spec, QuestionCategory category,
                        QuestionScope scope, int target_class) {
  switch (category) {
    case QuestionCategory::existential:
      check(target_class >= 0 && target_class < spec.n_classes,
            "existential question needs a valid target class");
      return class_active_in_scope(spec, target_class, scope) ? kAnswerYes
                                                              : kAnswerNo;
    case QuestionCategory::counting: {
      int count = 0;
      for (Index k = 0; k < spec.n_classes; ++k)
        if (class_active_in_scope(spec, static_cast<int>(k), scope)) ++count;
      check(count <= 6, "counting answer exceeds the answer vocabulary");
      return kAnswerCountBase + count;
    }
    case QuestionCategory::temporal: {
      int best = -1;
      Index best_key = 0;
      for (Index k = 0; k < spec.n_classes; ++k) {
        if (!class_active_in_scope(spec, static_cast<int>(k), scope)) continue;
        const ClassActivity* a = find_activity(spec, static_cast<int>(k));
        const Index key = temporal_key(*a, scope);
        if (best < 0 || key < best_key) {
          best = static_cast<int>(k);
          best_key = key;
        }
      }
      check(best >= 0, "temporal question needs at least one active class in " +
                           scope_name(scope));
      return kAnswerClassBase + best;
    }
  }
  fail("unreachable category");
}

QASample generate_qa_for(const Episode& episode, QuestionCategory category,
                         QuestionScope scope, Rng& rng) {
  const EpisodeSpec& spec = episode.spec;
  const FeatureSpace fs = build_feature_space(spec);

  QASample qa;
  qa.category = category;
  qa.scope = scope;
  if (category == QuestionCategory::existential)
    qa.target_class = static_cast<int>(rng.uniform_index(spec.n_classes));
  qa.answer = ground_truth_answer(spec, category, scope, qa.target_class);

  std::vector<float> q(static_cast<std::size_t>(spec.query_len * spec.d_text));
  for (Index t = 0; t < spec.query_len; ++t)
    for (Index i = 0; i < spec.d_text; ++i) {
      float v = static_cast<float>(kQuestionNoise * rng.normal());
      if (t == 0)
        v += fs.category_emb[static_cast<int>(category)][i] +
             fs.scope_emb[static_cast<int>(scope)][i];
      if (t == 1 && qa.target_class >= 0) v += fs.class_emb[qa.target_class][i];
      q[t * spec.d_text + i] = v;
    }
  qa.question = TensorF::from({spec.query_len, spec.d_text}, std::move(q));
  return qa;
}

QASample generate_qa(const Episode& episode, Rng& rng) {
  const auto category = static_cast<QuestionCategory>(rng.uniform_index(3));
  const auto scope = static_cast<QuestionScope>(rng.uniform_index(3));
  return generate_qa_for(episode, category, scope, rng);
}

namespace {

std::vector<ClassActivity> sample_activity(const EpisodeSpec& spec,
                                           const DatasetConfig& cfg, Rng& rng) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    std::vector<ClassActivity> active;
    bool any_both = false;
    for (Index k = 0; k < spec.n_classes; ++k) {
      if (!rng.bernoulli(cfg.class_present_prob)) continue;
      ClassActivity a;
      a.class_id = static_cast<int>(k);
      const double u = rng.uniform01();
      const bool in_audio = u < cfg.both_modal_prob + cfg.audio_only_prob;
      const bool in_visual =
          u < cfg.both_modal_prob || u >= cfg.both_modal_prob + cfg.audio_only_prob;
      if (in_audio) {
        a.audio_on = rng.uniform_index(spec.n_cues);
        a.audio_off = a.audio_on + 1 + rng.uniform_index(spec.n_cues - a.audio_on);
      }
      if (in_visual) {
        a.visual_on = rng.uniform_index(spec.n_cues);
        a.visual_off =
            a.visual_on + 1 + rng.uniform_index(spec.n_cues - a.visual_on);
      }
      any_both = any_both || (in_audio && in_visual);
      active.push_back(a);
    }
    if (any_both) return active;
  }
  fail("could not sample an episode with a class active in both modalities");
}

}  // namespace

SyntheticDataset make_dataset(Index n_episodes, const DatasetConfig& cfg,
                              Rng& rng) {
  check(n_episodes >= 1, "make_dataset: need at least one episode");
  check(cfg.base.n_classes <= 6,
        "make_dataset: counting answers support at most 6 classes");
  check(cfg.train_frac >= 0 && cfg.val_frac >= 0 &&
            cfg.train_frac + cfg.val_frac <= 1.0,
        "make_dataset: bad split fractions");
  validate_spec(cfg.base);

  SyntheticDataset ds;
  ds.cfg = cfg;
  const QuestionCategory cats[] = {QuestionCategory::existential,
                                   QuestionCategory::counting,
                                   QuestionCategory::temporal};
  const QuestionScope scopes[] = {QuestionScope::audio, QuestionScope::visual,
                                  QuestionScope::audio_visual};
  for (Index e = 0; e < n_episodes; ++e) {
    EpisodeSpec spec = cfg.base;
    spec.active = sample_activity(spec, cfg, rng);
    ds.episodes.push_back(generate_episode(spec, rng));
    for (auto cat : cats)
      for (auto scope : scopes) {
        QASample qa = generate_qa_for(ds.episodes.back(), cat, scope, rng);
        qa.episode_index = e;
        ds.category_counts[scope_name(scope) + "/" + category_name(cat)] += 1;
        ds.qa.push_back(std::move(qa));
      }
  }

  std::vector<Index> order(static_cast<std::size_t>(n_episodes));
  for (Index i = 0; i < n_episodes; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  const Index n_train = static_cast<Index>(
      std::floor(cfg.train_frac * static_cast<double>(n_episodes)));
  const Index n_val = static_cast<Index>(
      std::floor(cfg.val_frac * static_cast<double>(n_episodes)));
  ds.train_episodes.assign(order.begin(), order.begin() + n_train);
  ds.val_episodes.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  ds.test_episodes.assign(order.begin() + n_train + n_val, order.end());
  std::sort(ds.train_episodes.begin(), ds.train_episodes.end());
  std::sort(ds.val_episodes.begin(), ds.val_episodes.end());
  std::sort(ds.test_episodes.begin(), ds.test_episodes.end());

  std::vector<int> split_of(static_cast<std::size_t>(n_episodes), 2);
  for (Index e : ds.train_episodes) split_of[static_cast<std::size_t>(e)] = 0;
  for (Index e : ds.val_episodes) split_of[static_cast<std::size_t>(e)] = 1;
  for (std::size_t i = 0; i < ds.qa.size(); ++i) {
    switch (split_of[static_cast<std::size_t>(ds.qa[i].episode_index)]) {
      case 0: ds.train_qa.push_back(static_cast<Index>(i)); break;
      case 1: ds.val_qa.push_back(static_cast<Index>(i)); break;
      default: ds.test_qa.push_back(static_cast<Index>(i)); break;
    }
  }
  return ds;
}

namespace {

TensorMap encode_episode_record(const Episode& ep, Index n_qa_from,
                                const SyntheticDataset& ds, Index episode) {
  TensorMap rec;
  rec.emplace("audio", ep.audio.clone());
  rec.emplace("visual", ep.visual.clone());

  const Index n_clips = ep.spec.n_clips();
  std::vector<float> queries;
  for (const auto& q : ep.clip_queries)
    queries.insert(queries.end(), q.values().begin(), q.values().end());
  rec.emplace("queries",
              TensorF::from({n_clips, ep.spec.query_len, ep.spec.d_text},
                            std::move(queries)));

  std::vector<float> act;
  for (const auto& a : ep.spec.active) {
    act.push_back(static_cast<float>(a.class_id));
    act.push_back(static_cast<float>(a.audio_on));
    act.push_back(static_cast<float>(a.audio_off));
    act.push_back(static_cast<float>(a.visual_on));
    act.push_back(static_cast<float>(a.visual_off));
  }
  rec.emplace("activity",
              TensorF::from({static_cast<Index>(ep.spec.active.size()), 5},
                            std::move(act)));

  std::vector<float> questions, meta;
  Index n_q = 0;
  for (std::size_t i = n_qa_from; i < ds.qa.size(); ++i) {
    const auto& qa = ds.qa[i];
    if (qa.episode_index != episode) break;
    questions.insert(questions.end(), qa.question.values().begin(),
                     qa.question.values().end());
    meta.push_back(static_cast<float>(static_cast<int>(qa.category)));
    meta.push_back(static_cast<float>(static_cast<int>(qa.scope)));
    meta.push_back(static_cast<float>(qa.target_class));
    meta.push_back(static_cast<float>(qa.answer));
    ++n_q;
  }
  rec.emplace("qa_questions",
              TensorF::from({n_q, ep.spec.query_len, ep.spec.d_text},
                            std::move(questions)));
  rec.emplace("qa_meta", TensorF::from({n_q, 4}, std::move(meta)));
  return rec;
}

std::string join_indices(const std::vector<Index>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<Index> split_indices(const std::string& s) {
  std::vector<Index> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoll(tok));
  }
  return out;
}

std::string header_text(const SyntheticDataset& ds) {
  const EpisodeSpec& b = ds.cfg.base;
  std::string h;
  h += "n_episodes=" + std::to_string(ds.episodes.size()) + "\n";
  h += "n_cues=" + std::to_string(b.n_cues) + "\n";
  h += "cues_per_clip=" + std::to_string(b.cues_per_clip) + "\n";
  h += "n_classes=" + std::to_string(b.n_classes) + "\n";
  h += "frames_per_cue_audio=" + std::to_string(b.frames_per_cue_audio) + "\n";
  h += "frames_per_cue_visual=" + std::to_string(b.frames_per_cue_visual) + "\n";
  h += "d_audio=" + std::to_string(b.d_audio) + "\n";
  h += "d_text=" + std::to_string(b.d_text) + "\n";
  h += "spatial=" + std::to_string(b.spatial) + "\n";
  h += "channels=" + std::to_string(b.channels) + "\n";
  h += "query_len=" + std::to_string(b.query_len) + "\n";
  h += "obs_noise=" + format_fixed(b.obs_noise, 9) + "\n";
  h += "alignment_noise=" + format_fixed(b.alignment_noise, 9) + "\n";
  h += "time_signature_scale=" + format_fixed(b.time_signature_scale, 9) + "\n";
  h += "feature_seed=" + std::to_string(b.feature_seed) + "\n";
  h += "train_episodes=" + join_indices(ds.train_episodes) + "\n";
  h += "val_episodes=" + join_indices(ds.val_episodes) + "\n";
  h += "test_episodes=" + join_indices(ds.test_episodes) + "\n";
  return h;
}

}  // namespace

std::uint64_t dataset_hash(const SyntheticDataset& ds) {
  const std::string header = header_text(ds);
  std::uint64_t h = hash_bytes(
      reinterpret_cast<const std::uint8_t*>(header.data()), header.size());
  Index qa_cursor = 0;
  for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
    const auto rec = encode_episode_record(ds.episodes[e], qa_cursor, ds,
                                           static_cast<Index>(e));
    qa_cursor += rec.at("qa_meta").dim(0);
    const auto bytes = encode_checkpoint(rec);
    h = hash_bytes(bytes.data(), bytes.size(), h);
  }
  return h;
}

void save_dataset(const SyntheticDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_text_file(dir + "/header.txt", header_text(ds));
  Index qa_cursor = 0;
  for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
    const auto rec = encode_episode_record(ds.episodes[e], qa_cursor, ds,
                                           static_cast<Index>(e));
    qa_cursor += rec.at("qa_meta").dim(0);
    char name[32];
    std::snprintf(name, sizeof(name), "/ep_%05zu.bin", e);
    write_file_bytes(dir + name, encode_checkpoint(rec));
  }
}

SyntheticDataset load_dataset(const std::string& dir) {
  std::ifstream in(dir + "/header.txt");
  check(in.good(), "cannot open dataset header '" + dir + "/header.txt'");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto geti = [&](const std::string& key) {
    check(kv.count(key), "dataset header missing '" + key + "'");
    return static_cast<Index>(std::stoll(kv[key]));
  };
  auto getd = [&](const std::string& key) {
    check(kv.count(key), "dataset header missing '" + key + "'");
    return std::stod(kv[key]);
  };

  SyntheticDataset ds;
  EpisodeSpec& b = ds.cfg.base;
  const Index n_episodes = geti("n_episodes");
  b.n_cues = geti("n_cues");
  b.cues_per_clip = geti("cues_per_clip");
  b.n_classes = geti("n_classes");
  b.frames_per_cue_audio = geti("frames_per_cue_audio");
  b.frames_per_cue_visual = geti("frames_per_cue_visual");
  b.d_audio = geti("d_audio");
  b.d_text = geti("d_text");
  b.spatial = geti("spatial");
  b.channels = geti("channels");
  b.query_len = geti("query_len");
  b.obs_noise = getd("obs_noise");
  b.alignment_noise = getd("alignment_noise");
  b.time_signature_scale = getd("time_signature_scale");
  b.feature_seed = static_cast<std::uint64_t>(std::stoull(kv["feature_seed"]));
  ds.train_episodes = split_indices(kv["train_episodes"]);
  ds.val_episodes = split_indices(kv["val_episodes"]);
  ds.test_episodes = split_indices(kv["test_episodes"]);

  std::vector<int> split_of(static_cast<std::size_t>(n_episodes), 2);
  for (Index e : ds.train_episodes) split_of[static_cast<std::size_t>(e)] = 0;
  for (Index e : ds.val_episodes) split_of[static_cast<std::size_t>(e)] = 1;

  for (Index e = 0; e < n_episodes; ++e) {
    char name[32];
    std::snprintf(name, sizeof(name), "/ep_%05lld.bin",
                  static_cast<long long>(e));
    const auto rec = decode_checkpoint(read_file_bytes(dir + name));

    Episode ep;
    ep.spec = b;
    const auto& act = rec.at("activity");
    for (Index i = 0; i < act.dim(0); ++i) {
      ClassActivity a;
      a.class_id = static_cast<int>(act.values()[i * 5 + 0]);
      a.audio_on = static_cast<Index>(act.values()[i * 5 + 1]);
      a.audio_off = static_cast<Index>(act.values()[i * 5 + 2]);
      a.visual_on = static_cast<Index>(act.values()[i * 5 + 3]);
      a.visual_off = static_cast<Index>(act.values()[i * 5 + 4]);
      ep.spec.active.push_back(a);
    }
    ep.audio = rec.at("audio").clone();
    ep.visual = rec.at("visual").clone();
    const auto& queries = rec.at("queries");
    for (Index j = 0; j < queries.dim(0); ++j) {
      const Index span = b.query_len * b.d_text;
      std::vector<float> q(queries.values().begin() + j * span,
                           queries.values().begin() + (j + 1) * span);
      ep.clip_queries.push_back(
          TensorF::from({b.query_len, b.d_text}, std::move(q)));
    }
    ds.episodes.push_back(std::move(ep));

    const auto& meta = rec.at("qa_meta");
    const auto& questions = rec.at("qa_questions");
    for (Index i = 0; i < meta.dim(0); ++i) {
      QASample qa;
      qa.category = static_cast<QuestionCategory>(
          static_cast<int>(meta.values()[i * 4 + 0]));
      qa.scope =
          static_cast<QuestionScope>(static_cast<int>(meta.values()[i * 4 + 1]));
      qa.target_class = static_cast<int>(meta.values()[i * 4 + 2]);
      qa.answer = static_cast<int>(meta.values()[i * 4 + 3]);
      qa.episode_index = e;
      const Index span = b.query_len * b.d_text;
      std::vector<float> q(questions.values().begin() + i * span,
                           questions.values().begin() + (i + 1) * span);
      qa.question = TensorF::from({b.query_len, b.d_text}, std::move(q));
      ds.category_counts[scope_name(qa.scope) + "/" +
                         category_name(qa.category)] += 1;
      const Index qi = static_cast<Index>(ds.qa.size());
      switch (split_of[static_cast<std::size_t>(e)]) {
        case 0: ds.train_qa.push_back(qi); break;
        case 1: ds.val_qa.push_back(qi); break;
        default: ds.test_qa.push_back(qi); break;
      }
      ds.qa.push_back(std::move(qa));
    }
  }
  return ds;
}

double nearest_prototype_cue_accuracy(const std::vector<Episode>& episodes) {
  Index correct = 0, total = 0;
  for (const auto& ep : episodes) {
    const EpisodeSpec& spec = ep.spec;
    const FeatureSpace fs = build_feature_space(spec);
    for (Index cue = 0; cue < spec.n_cues; ++cue) {
      int active_class = -1;
      int n_active = 0;
      for (Index k = 0; k < spec.n_classes; ++k)
        if (audio_active_at(spec, static_cast<int>(k), cue)) {
          active_class = static_cast<int>(k);
          ++n_active;
        }
      if (n_active != 1) continue;

      std::vector<double> mean(static_cast<std::size_t>(spec.d_audio), 0.0);
      for (Index f = cue * spec.frames_per_cue_audio;
           f < (cue + 1) * spec.frames_per_cue_audio; ++f)
        for (Index j = 0; j < spec.d_audio; ++j)
          mean[j] += ep.audio.values()[f * spec.d_audio + j];
      for (auto& v : mean) v /= static_cast<double>(spec.frames_per_cue_audio);

      int best = -1;
      double best_dot = 0.0;
      for (Index k = 0; k < spec.n_classes; ++k) {
        double dot = 0.0;
        for (Index j = 0; j < spec.d_audio; ++j)
          dot += mean[j] * fs.audio_protos[k][j];
        if (best < 0 || dot > best_dot) {
          best = static_cast<int>(k);
          best_dot = dot;
        }
      }
      correct += best == active_class;
      ++total;
    }
  }
  check(total > 0, "nearest-prototype oracle: no single-class cues available");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace cad
