// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0

#include "cad/pretrain.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cad {

std::vector<Cue> segment_cues(const TensorF& stream, Index n_cues,
                              CueModality modality, Index cues_per_clip) {
  check(stream.rank() >= 1, "segment_cues: stream must have rank >= 1");
  check(n_cues >= 1, "segment_cues: n_cues must be >= 1");
  check(cues_per_clip >= 1, "segment_cues: cues_per_clip must be >= 1");
  const Index t = stream.dim(0);
  if (t % n_cues != 0)
    fail("segment_cues: stream length " + std::to_string(t) +
         " does not divide into " + std::to_string(n_cues) +
         " cues (refusing to truncate)");
  const Index span = t / n_cues;
  const Index row = stream.size() / t;

  std::vector<Cue> cues;
  for (Index l = 0; l < n_cues; ++l) {
    Cue cue;
    cue.modality = modality;
    cue.time_label = static_cast<int>(l);
    cue.clip_index = static_cast<int>(l / cues_per_clip);
    Shape shape = stream.shape();
    shape[0] = span;
    std::vector<float> data(stream.values().begin() + l * span * row,
                            stream.values().begin() + (l + 1) * span * row);
    cue.features = TensorF::from(std::move(shape), std::move(data));
    cues.push_back(std::move(cue));
  }
  return cues;
}

PairSample sample_pair(const std::vector<Cue>& cues_a,
                       const std::vector<Cue>& cues_v, const SamplerConfig& cfg,
                       Rng& rng) {
  check(!cues_a.empty() && cues_a.size() == cues_v.size(),
        "sample_pair: cue lists must be equal-length and non-empty");
  const Index n = static_cast<Index>(cues_a.size());
  check(n == cfg.n_time_labels,
        "sample_pair: " + std::to_string(n) + " cues but config expects " +
            std::to_string(cfg.n_time_labels) + " time labels");

  PairSample pair;
  pair.positive = rng.bernoulli(cfg.pos_prob);
  if (pair.positive) {
    const Index l = rng.uniform_index(n);
    pair.audio_cue = cues_a[static_cast<std::size_t>(l)];
    pair.visual_cue = cues_v[static_cast<std::size_t>(l)];
  } else {
    check(n >= 2, "sample_pair: a negative draw needs at least 2 distinct "
                  "time labels");
    const Index la = rng.uniform_index(n);
    Index lv = rng.uniform_index(n - 1);
    if (lv >= la) ++lv;
    pair.audio_cue = cues_a[static_cast<std::size_t>(la)];
    pair.visual_cue = cues_v[static_cast<std::size_t>(lv)];
  }
  return pair;
}

const TensorF& select_query(const PairSample& pair,
                            const std::vector<TensorF>& clip_queries,
                            bool& toggle_use_audio) {
  const int clip_a = pair.audio_cue.clip_index;
  const int clip_v = pair.visual_cue.clip_index;
  int clip = clip_a;
  if (!pair.positive && clip_a != clip_v) {
    clip = toggle_use_audio ? clip_a : clip_v;
    toggle_use_audio = !toggle_use_audio;
  }
  check(clip >= 0 && clip < static_cast<int>(clip_queries.size()),
        "select_query: missing query for clip " + std::to_string(clip));
  return clip_queries[static_cast<std::size_t>(clip)];
}

PairSampler::PairSampler(const SyntheticDataset& ds,
                         std::vector<Index> episode_pool, SamplerConfig cfg,
                         std::uint64_t seed)
    : ds_(&ds),
      pool_(std::move(episode_pool)),
      cfg_(cfg),
      rng_(derive_seed(seed, "sampler")) {
  check(!pool_.empty(), "pair sampler: empty episode pool");
  cues_audio_.resize(ds.episodes.size());
  cues_visual_.resize(ds.episodes.size());
  for (Index e : pool_) {
    const auto& ep = ds.episodes[static_cast<std::size_t>(e)];
    cues_audio_[static_cast<std::size_t>(e)] = segment_cues(
        ep.audio, ep.spec.n_cues, CueModality::audio, cfg.cues_per_clip);
    cues_visual_[static_cast<std::size_t>(e)] = segment_cues(
        ep.visual, ep.spec.n_cues, CueModality::visual, cfg.cues_per_clip);
  }
}

PairSample PairSampler::next() {
  const Index e = pool_[static_cast<std::size_t>(
      rng_.uniform_index(static_cast<Index>(pool_.size())))];
  auto pair = sample_pair(cues_audio_[static_cast<std::size_t>(e)],
                          cues_visual_[static_cast<std::size_t>(e)], cfg_, rng_);
  pair.query = select_query(
      pair, ds_->episodes[static_cast<std::size_t>(e)].clip_queries,
      toggle_use_audio_);
  return pair;
}

namespace {

FeatureTriple<float> stack_pairs(const std::vector<PairSample>& pairs,
                                 std::vector<int>* audio_labels,
                                 std::vector<int>* visual_labels) {
  const Index b = static_cast<Index>(pairs.size());
  const auto& a0 = pairs[0].audio_cue.features;
  const auto& v0 = pairs[0].visual_cue.features;
  const auto& q0 = pairs[0].query;

  std::vector<float> audio, visual, text;
  audio.reserve(static_cast<std::size_t>(b * a0.size()));
  visual.reserve(static_cast<std::size_t>(b * v0.size()));
  text.reserve(static_cast<std::size_t>(b * q0.size()));
  for (const auto& p : pairs) {
    audio.insert(audio.end(), p.audio_cue.features.values().begin(),
                 p.audio_cue.features.values().end());
    visual.insert(visual.end(), p.visual_cue.features.values().begin(),
                  p.visual_cue.features.values().end());
    text.insert(text.end(), p.query.values().begin(), p.query.values().end());
    audio_labels->push_back(p.audio_cue.time_label);
    visual_labels->push_back(p.visual_cue.time_label);
  }
  FeatureTriple<float> x;
  x.audio = TensorF::from({b, a0.dim(0), a0.dim(1)}, std::move(audio));
  x.visual = TensorF::from({b, v0.dim(0), v0.dim(1), v0.dim(2)},
                           std::move(visual));
  x.text = TensorF::from({b, q0.dim(0), q0.dim(1)}, std::move(text));
  return x;
}

}  // namespace

PretrainEpochRow eval_pretrain_heads(const SyntheticDataset& dataset,
                                     const std::vector<Index>& episode_pool,
                                     CadWeights<float>& model, Index batch) {
  check(!episode_pool.empty(), "pretrain eval: empty episode pool");
  const Index n_cues = dataset.cfg.base.n_cues;
  const Index cpc = dataset.cfg.base.cues_per_clip;

  std::vector<PairSample> pairs;
  for (Index e : episode_pool) {
    const auto& ep = dataset.episodes[static_cast<std::size_t>(e)];
    auto ca = segment_cues(ep.audio, n_cues, CueModality::audio, cpc);
    auto cv = segment_cues(ep.visual, n_cues, CueModality::visual, cpc);
    for (Index l = 0; l < n_cues; ++l) {
      PairSample p;
      p.positive = true;
      p.audio_cue = ca[static_cast<std::size_t>(l)];
      p.visual_cue = cv[static_cast<std::size_t>(l)];
      p.query = ep.clip_queries[static_cast<std::size_t>(p.audio_cue.clip_index)];
      pairs.push_back(std::move(p));
    }
  }

  Index hits_a = 0, hits_vt = 0, hits_vat = 0, total = 0;
  Rng unused_rng(0);
  for (std::size_t at = 0; at < pairs.size(); at += static_cast<std::size_t>(batch)) {
    const std::size_t hi = std::min(pairs.size(), at + static_cast<std::size_t>(batch));
    std::vector<PairSample> chunk(pairs.begin() + at, pairs.begin() + hi);
    std::vector<int> la, lv;
    auto x = stack_pairs(chunk, &la, &lv);
    auto heads = forward_pretrain(x, model, unused_rng, /*training=*/false);
    const Index k = model.cfg.n_time_labels;
    auto count_hits = [&](const TensorF& logits, const std::vector<int>& labels,
                          Index& hits) {
      for (Index i = 0; i < logits.dim(0); ++i) {
        Index best = 0;
        for (Index j = 1; j < k; ++j)
          if (logits.values()[i * k + j] > logits.values()[i * k + best]) best = j;
        hits += best == labels[static_cast<std::size_t>(i)];
      }
    };
    count_hits(heads.audio, la, hits_a);
    count_hits(heads.visual_t, lv, hits_vt);
    if (heads.visual_at.defined()) count_hits(heads.visual_at, lv, hits_vat);
    total += static_cast<Index>(chunk.size());
  }

  PretrainEpochRow row;
  row.acc_audio = static_cast<double>(hits_a) / total;
  row.acc_visual_t = static_cast<double>(hits_vt) / total;
  row.acc_visual_at = model.cfg.has_cab3()
                          ? static_cast<double>(hits_vat) / total
                          : -1.0;
  return row;
}

PretrainResult run_pretraining(const SyntheticDataset& dataset,
                               CadWeights<float>& model,
                               const PretrainOptions& opt) {
  check(model.mode == GraphMode::pretrain,
        "run_pretraining: model must be built in pre-training mode");
  check(model.cfg.n_time_labels == dataset.cfg.base.n_cues,
        "run_pretraining: model expects " +
            std::to_string(model.cfg.n_time_labels) +
            " time labels but episodes have " +
            std::to_string(dataset.cfg.base.n_cues) + " cues");
  check(opt.epochs >= 1 && opt.batch >= 1 && opt.pairs_per_epoch >= 1,
        "run_pretraining: bad options");

  SamplerConfig scfg;
  scfg.pos_prob = opt.pos_prob;
  scfg.n_time_labels = dataset.cfg.base.n_cues;
  scfg.cues_per_clip = dataset.cfg.base.cues_per_clip;
  PairSampler sampler(dataset, dataset.train_episodes, scfg, opt.seed);

  std::vector<Index> heldout = dataset.val_episodes;
  heldout.insert(heldout.end(), dataset.test_episodes.begin(),
                 dataset.test_episodes.end());
  if (heldout.empty()) heldout = dataset.train_episodes;

  Rng ctx_rng(derive_seed(opt.seed, "contextual"));
  Adam<float> optimizer({opt.lr});

  PretrainResult result;
  const Index steps =
      (opt.pairs_per_epoch + opt.batch - 1) / opt.batch;
  for (Index epoch = 0; epoch < opt.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (Index step = 0; step < steps; ++step) {
      std::vector<PairSample> batch;
      for (Index i = 0; i < opt.batch; ++i) batch.push_back(sampler.next());
      std::vector<int> la, lv;
      auto x = stack_pairs(batch, &la, &lv);
      auto heads = forward_pretrain(x, model, ctx_rng);
      auto loss = alignment_loss(heads, la, lv);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw std::runtime_error(
            "pretraining aborted: non-finite loss at epoch " +
            std::to_string(epoch) + " step " + std::to_string(step));
      loss_sum += value;
      backward(loss);
      optimizer.step(model.params);
    }
    PretrainEpochRow row =
        eval_pretrain_heads(dataset, heldout, model, opt.batch);
    row.loss = loss_sum / static_cast<double>(steps);
    result.log.push_back(row);
  }
  result.checkpoint = snapshot_params(model.params);
  return result;
}

}  // namespace cad
