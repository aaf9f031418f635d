// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end supervised training on synthetic AVQA episodes and the
// per-category evaluation that fills the metrics table.

#pragma once

#include <cstdint>
#include <vector>

#include "cad/checkpoint.hpp"
#include "cad/metrics.hpp"
#include "cad/model.hpp"
#include "cad/synthetic.hpp"

namespace cad {

struct TrainOptions {
  Index epochs = 25;
  Index batch = 64;
  double lr = 1e-4;
  std::uint64_t seed = 0;
};

struct TrainEpochRow {
  double loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  TensorMap checkpoint;
  std::vector<TrainEpochRow> log;
  MetricsTable test_metrics;
};

/// Stack whole-episode features and question tokens for a set of QA samples.
FeatureTriple<float> assemble_qa_batch(const SyntheticDataset& ds,
                                       const std::vector<Index>& qa_indices,
                                       std::vector<int>* labels);

/// Argmax accuracy per (scope, question type) over the given QA samples;
/// pure inference.
MetricsTable evaluate_model(const SyntheticDataset& ds,
                            const std::vector<Index>& qa_indices,
                            const CadWeights<float>& model, Index batch);

double overall_accuracy(const SyntheticDataset& ds,
                        const std::vector<Index>& qa_indices,
                        const CadWeights<float>& model, Index batch);

/// Adam on the AVQA loss; optional trunk initialization from a pre-training
/// checkpoint; returns the final weights and test-split metrics.
TrainResult run_training(const SyntheticDataset& ds, const CadConfig& model_cfg,
                         const TrainOptions& opt,
                         const TensorMap* init_checkpoint = nullptr);

}  // namespace cad
