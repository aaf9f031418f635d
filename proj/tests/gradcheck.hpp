// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checker. The oracle only calls the
// forward path: each input element is perturbed by +-eps, the loss closure
// is re-evaluated, and (f+ - f-) / (2 eps) is compared against the grads the
// backward pass produced. Runs on Tensor<double>.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cad/ops.hpp"
#include "cad/tensor.hpp"

namespace cad::testing {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Relative error with an absolute floor of 1, so near-zero gradients are
/// compared absolutely at the same tolerance.
inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

/// `loss_fn` must rebuild the graph from the current values of `inputs`
/// (leaf tensors with requires_grad) and return a scalar.
inline GradCheckReport grad_check(std::vector<TensorD> inputs,
                                  const std::function<TensorD()>& loss_fn,
                                  double eps = 1e-3) {
  for (auto& t : inputs) t.zero_grad();
  TensorD loss = loss_fn();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.push_back(t.grad());

  GradCheckReport report;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& vals = inputs[ti].values_mut();
    for (std::size_t ei = 0; ei < vals.size(); ++ei) {
      const double orig = vals[ei];
      vals[ei] = orig + eps;
      const double fplus = loss_fn().item();
      vals[ei] = orig - eps;
      const double fminus = loss_fn().item();
      vals[ei] = orig;
      const double numeric = (fplus - fminus) / (2.0 * eps);
      const double err = rel_error(analytic[ti][ei], numeric);
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = ti;
        report.worst_element = ei;
        report.analytic = analytic[ti][ei];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace cad::testing
