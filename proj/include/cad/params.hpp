// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cad/rng.hpp"
#include "cad/tensor.hpp"

namespace cad {

/// Ordered map of named learnable tensors. Iteration is lexicographic by
/// name, which pins parameter order for the optimizer and checkpoints.
template <typename S>
class ParamSet {
 public:
  Tensor<S>& add(const std::string& name, Tensor<S> t) {
    check(!params_.count(name), "param '" + name + "' already registered");
    check(t.requires_grad(), "param '" + name + "' must require gradients");
    auto [it, ok] = params_.emplace(name, std::move(t));
    (void)ok;
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  Tensor<S>& at(const std::string& name) {
    auto it = params_.find(name);
    check(it != params_.end(), "unknown param '" + name + "'");
    return it->second;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = params_.find(name);
    check(it != params_.end(), "unknown param '" + name + "'");
    return it->second;
  }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  Index total_elements() const {
    Index n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
  }

 private:
  std::map<std::string, Tensor<S>> params_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. step() consumes and clears the grads.
template <typename S>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  long steps_taken() const { return step_; }

  void step(ParamSet<S>& params) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : params) {
      check(p.has_grad(), "adam: missing grad for param '" + name + "'");
      auto& slot = slots_[name];
      if (slot.m.size() != p.values().size()) {
        slot.m.assign(p.values().size(), 0.0);
        slot.u.assign(p.values().size(), 0.0);
      }
      auto& value = p.values_mut();
      const auto& grad = p.grad();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g;
        slot.u[i] = cfg_.beta2 * slot.u[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = slot.m[i] / bc1;
        const double uhat = slot.u[i] / bc2;
        value[i] = static_cast<S>(static_cast<double>(value[i]) -
                                  cfg_.lr * mhat / (std::sqrt(uhat) + cfg_.eps));
      }
      p.zero_grad();
    }
  }

 private:
  struct Slot {
    std::vector<double> m, u;
  };
  AdamConfig cfg_;
  std::map<std::string, Slot> slots_;
  long step_ = 0;
};

/// Weight init: uniform in +-1/sqrt(fan_in).
template <typename S>
Tensor<S> uniform_fan_in(Shape shape, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<S> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) v = static_cast<S>(rng.uniform(-bound, bound));
  return Tensor<S>::from(std::move(shape), std::move(data), true);
}

template <typename S>
Tensor<S> randn(Shape shape, Rng& rng, double stddev = 1.0) {
  std::vector<S> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) v = static_cast<S>(rng.normal(0.0, stddev));
  return Tensor<S>::from(std::move(shape), std::move(data));
}

}  // namespace cad
