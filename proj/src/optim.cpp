// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#include "bimsmt/optim.hpp"

#include <algorithm>
#include <cmath>

namespace bimsmt {

double SgdSchedule::lr(int epoch) const {
  if (epoch < 1) throw ContractError("epochs are 1-based");
  const int decays = std::max(0, epoch - decay_start_epoch);
  return initial_lr * std::pow(decay_factor, decays);
}

void SgdSchedule::validate() const {
  if (!(initial_lr > 0.0)) throw ConfigError("initial learning rate must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw ConfigError("decay factor must lie in (0, 1]");
  }
  if (total_epochs < 1) throw ConfigError("total epochs must be at least 1");
  if (decay_start_epoch < 0) throw ConfigError("decay start epoch must be non-negative");
}

void sgd_update(Tensor& param, const Tensor& grad, double lr) {
  if (param.shape() != grad.shape()) {
    throw DimensionError("sgd: parameter " + shape_string(param.shape()) + " vs gradient " +
                         shape_string(grad.shape()));
  }
  auto p = param.data();
  auto g = grad.data();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
}

double sgd_step(const std::vector<Parameter*>& params, const SgdSchedule& schedule, int epoch,
                double clip_norm) {
  double sq = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad.data()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  double lr = schedule.lr(epoch);
  if (clip_norm > 0.0 && norm > clip_norm) lr *= clip_norm / norm;
  for (Parameter* p : params) {
    sgd_update(p->value, p->grad, lr);
    p->grad.fill(0.0);
  }
  return norm;
}

double sgd_step(ParameterSet& params, const SgdSchedule& schedule, int epoch, double clip_norm) {
  std::vector<Parameter*> all;
  for (auto& [_, p] : params) all.push_back(&p);
  return sgd_step(all, schedule, epoch, clip_norm);
}

}  // namespace bimsmt
