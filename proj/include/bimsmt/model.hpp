// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <vector>

#include "bimsmt/checkpoint.hpp"
#include "bimsmt/context.hpp"
#include "bimsmt/nmt.hpp"

namespace bimsmt {

/// Base model, frozen RNNLMs and context parameters for both directions.
/// Heap-held members keep parameter addresses stable when the model moves.
class ConversationalModel {
 public:
  ConversationalModel(BaseNmt base, RnnLm lm_en, RnnLm lm_fr, ContextConfig config,
                      std::uint64_t seed);

  const BaseNmt& base() const { return *base_; }
  BaseNmt& base() { return *base_; }
  const RnnLm& lm(Language l) const { return l == Language::kEnglish ? *lm_en_ : *lm_fr_; }
  const ContextModel& context() const { return context_; }
  const ContextConfig& config() const { return context_.config(); }
  ParameterSet& context_params() { return *ctx_params_; }
  const ParameterSet& context_params() const { return *ctx_params_; }
  std::uint64_t seed() const { return seed_; }

  /// Base and context parameters; the RNNLMs stay frozen.
  std::vector<Parameter*> trainable();
  std::size_t hidden() const { return base_->dims().hidden; }

  /// Same parameters with a different ablation mask / locality setting.
  void set_ablation(const AblationMask& mask, bool local_prev_sentence_only);

  Checkpoint to_checkpoint() const;
  static ConversationalModel from_checkpoint(const Checkpoint& ckpt);

 private:
  std::unique_ptr<BaseNmt> base_;
  std::unique_ptr<RnnLm> lm_en_, lm_fr_;
  std::unique_ptr<ParameterSet> ctx_params_;
  ContextModel context_;
  std::uint64_t seed_;
};

}  // namespace bimsmt
