// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0

#include "cad/train.hpp"

#include <cmath>
#include <stdexcept>

namespace cad {

FeatureTriple<float> assemble_qa_batch(const SyntheticDataset& ds,
                                       const std::vector<Index>& qa_indices,
                                       std::vector<int>* labels) {
  check(!qa_indices.empty(), "assemble_qa_batch: empty batch");
  const Index b = static_cast<Index>(qa_indices.size());
  const auto& first =
      ds.episodes[static_cast<std::size_t>(ds.qa[qa_indices[0]].episode_index)];
  const auto& a0 = first.audio;
  const auto& v0 = first.visual;
  const auto& q0 = ds.qa[static_cast<std::size_t>(qa_indices[0])].question;

  std::vector<float> audio, visual, text;
  audio.reserve(static_cast<std::size_t>(b * a0.size()));
  visual.reserve(static_cast<std::size_t>(b * v0.size()));
  text.reserve(static_cast<std::size_t>(b * q0.size()));
  for (Index qi : qa_indices) {
    const auto& qa = ds.qa[static_cast<std::size_t>(qi)];
    const auto& ep = ds.episodes[static_cast<std::size_t>(qa.episode_index)];
    audio.insert(audio.end(), ep.audio.values().begin(), ep.audio.values().end());
    visual.insert(visual.end(), ep.visual.values().begin(),
                  ep.visual.values().end());
    text.insert(text.end(), qa.question.values().begin(),
                qa.question.values().end());
    if (labels) labels->push_back(qa.answer);
  }
  FeatureTriple<float> x;
  x.audio = TensorF::from({b, a0.dim(0), a0.dim(1)}, std::move(audio));
  x.visual = TensorF::from({b, v0.dim(0), v0.dim(1), v0.dim(2)},
                           std::move(visual));
  x.text = TensorF::from({b, q0.dim(0), q0.dim(1)}, std::move(text));
  return x;
}

namespace {

/// Argmax predictions for a set of QA samples, batched inference.
std::vector<int> predict(const SyntheticDataset& ds,
                         const std::vector<Index>& qa_indices,
                         const CadWeights<float>& model, Index batch) {
  std::vector<int> out;
  Rng unused_rng(0);
  for (std::size_t at = 0; at < qa_indices.size();
       at += static_cast<std::size_t>(batch)) {
    const std::size_t hi =
        std::min(qa_indices.size(), at + static_cast<std::size_t>(batch));
    std::vector<Index> chunk(qa_indices.begin() + at, qa_indices.begin() + hi);
    auto x = assemble_qa_batch(ds, chunk, nullptr);
    auto logits = forward_answer(x, model, unused_rng, /*training=*/false);
    const Index k = logits.dim(1);
    for (Index i = 0; i < logits.dim(0); ++i) {
      Index best = 0;
      for (Index j = 1; j < k; ++j)
        if (logits.values()[i * k + j] > logits.values()[i * k + best]) best = j;
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

}  // namespace

MetricsTable evaluate_model(const SyntheticDataset& ds,
                            const std::vector<Index>& qa_indices,
                            const CadWeights<float>& model, Index batch) {
  const auto preds = predict(ds, qa_indices, model, batch);
  MetricsTable table;
  for (std::size_t i = 0; i < qa_indices.size(); ++i) {
    const auto& qa = ds.qa[static_cast<std::size_t>(qa_indices[i])];
    table.add_result(scope_name(qa.scope), category_name(qa.category),
                     preds[i] == qa.answer);
  }
  return table;
}

double overall_accuracy(const SyntheticDataset& ds,
                        const std::vector<Index>& qa_indices,
                        const CadWeights<float>& model, Index batch) {
  const auto preds = predict(ds, qa_indices, model, batch);
  Index hits = 0;
  for (std::size_t i = 0; i < qa_indices.size(); ++i)
    hits += preds[i] == ds.qa[static_cast<std::size_t>(qa_indices[i])].answer;
  return qa_indices.empty() ? 0.0
                            : static_cast<double>(hits) / qa_indices.size();
}

TrainResult run_training(const SyntheticDataset& ds, const CadConfig& model_cfg,
                         const TrainOptions& opt,
                         const TensorMap* init_checkpoint) {
  check(opt.epochs >= 1 && opt.batch >= 1, "run_training: bad options");
  check(model_cfg.n_answers >= min_answer_vocab(ds.cfg.base.n_classes),
        "run_training: answer vocabulary " +
            std::to_string(model_cfg.n_answers) + " is too small for " +
            std::to_string(ds.cfg.base.n_classes) + " classes");
  check(!ds.train_qa.empty(), "run_training: empty training split");

  auto model = init_cad_weights<float>(model_cfg, GraphMode::answer, opt.seed);
  if (init_checkpoint) init_from_pretrained(model, *init_checkpoint);

  Rng shuffle_rng(derive_seed(opt.seed, "shuffle"));
  Rng ctx_rng(derive_seed(opt.seed, "contextual"));
  Adam<float> optimizer({opt.lr});

  TrainResult result;
  std::vector<Index> order = ds.train_qa;
  for (Index epoch = 0; epoch < opt.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    Index steps = 0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(opt.batch)) {
      const std::size_t hi =
          std::min(order.size(), at + static_cast<std::size_t>(opt.batch));
      std::vector<Index> chunk(order.begin() + at, order.begin() + hi);
      std::vector<int> labels;
      auto x = assemble_qa_batch(ds, chunk, &labels);
      auto logits = forward_answer(x, model, ctx_rng, /*training=*/true);
      auto loss = avqa_loss(logits, labels);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw std::runtime_error("training aborted: non-finite loss at epoch " +
                                 std::to_string(epoch));
      loss_sum += value;
      ++steps;
      backward(loss);
      optimizer.step(model.params);
    }
    TrainEpochRow row;
    row.loss = loss_sum / static_cast<double>(steps);
    row.val_accuracy = ds.val_qa.empty()
                           ? 0.0
                           : overall_accuracy(ds, ds.val_qa, model, opt.batch);
    result.log.push_back(row);
  }
  result.test_metrics = evaluate_model(ds, ds.test_qa, model, opt.batch);
  result.checkpoint = snapshot_params(model.params);
  return result;
}

}  // namespace cad
