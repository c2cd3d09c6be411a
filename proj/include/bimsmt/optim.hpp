// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "bimsmt/autograd.hpp"

namespace bimsmt {

/// Step-decay learning-rate schedule. Epochs are 1-based; the rate decays by
/// `decay_factor` once per epoch completed after `decay_start_epoch`:
///   lr(e) = initial_lr * decay_factor^max(0, e - decay_start_epoch)
struct SgdSchedule {
  double initial_lr = 0.1;
  double decay_factor = 0.5;
  int decay_start_epoch = 5;
  int total_epochs = 15;

  double lr(int epoch) const;
  void validate() const;

  /// lr 0.1, halved after the fifth epoch, 15 epochs.
  static SgdSchedule base() { return {0.1, 0.5, 5, 15}; }
  /// lr 0.08, x0.9 after the first epoch, 30 epochs.
  static SgdSchedule contextual() { return {0.08, 0.9, 1, 30}; }
};

/// p <- p - lr * g. Throws DimensionError on shape mismatch.
void sgd_update(Tensor& param, const Tensor& grad, double lr);

/// One SGD step over every parameter using lr(epoch), then zeroes gradients.
/// When `clip_norm` > 0 the global gradient L2 norm is rescaled to at most
/// `clip_norm` first. Returns the pre-clipping gradient norm.
double sgd_step(ParameterSet& params, const SgdSchedule& schedule, int epoch,
                double clip_norm = 0.0);
/// Same, restricted to `params`; other parameters are left untouched.
double sgd_step(const std::vector<Parameter*>& params, const SgdSchedule& schedule, int epoch,
                double clip_norm = 0.0);

}  // namespace bimsmt
