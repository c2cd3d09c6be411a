// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#include "bimsmt/model.hpp"

namespace bimsmt {

ConversationalModel::ConversationalModel(BaseNmt base, RnnLm lm_en, RnnLm lm_fr,
                                         ContextConfig config, std::uint64_t seed)
    : base_(std::make_unique<BaseNmt>(std::move(base))),
      lm_en_(std::make_unique<RnnLm>(std::move(lm_en))),
      lm_fr_(std::make_unique<RnnLm>(std::move(lm_fr))),
      ctx_params_(std::make_unique<ParameterSet>()),
      seed_(seed) {
  const std::size_t H = base_->dims().hidden;
  if (lm_en_->language() != Language::kEnglish || lm_fr_->language() != Language::kForeign) {
    throw ConfigError("RNNLMs must be given as (English, Foreign)");
  }
  for (const RnnLm* lm : {lm_en_.get(), lm_fr_.get()}) {
    if (lm->dims().hidden != H) {
      throw ConfigError("RNNLM hidden size " + std::to_string(lm->dims().hidden) +
                        " does not match model hidden size " + std::to_string(H));
    }
    if (!(lm->vocab() == base_->vocab())) throw ConfigError("RNNLM vocabulary differs from the model's");
  }
  Rng rng(derive_seed(seed, "init.context"));
  context_ = ContextModel(*ctx_params_, config, H, rng);
}

std::vector<Parameter*> ConversationalModel::trainable() {
  std::vector<Parameter*> out;
  for (auto& [_, p] : base_->params()) out.push_back(&p);
  for (auto& [_, p] : *ctx_params_) out.push_back(&p);
  return out;
}

void ConversationalModel::set_ablation(const AblationMask& mask, bool local_prev_sentence_only) {
  ContextConfig c = context_.config();
  c.ablation_mask = mask;
  c.local_prev_sentence_only = local_prev_sentence_only;
  // Only the mask changes; the parameter layout depends on the other fields.
  auto fresh = std::make_unique<ParameterSet>();
  Rng rng(derive_seed(seed_, "init.context"));
  ContextModel m(*fresh, c, hidden(), rng);
  fresh->restore(ctx_params_->snapshot(), true);
  ctx_params_ = std::move(fresh);
  context_ = std::move(m);
}

Checkpoint ConversationalModel::to_checkpoint() const {
  Checkpoint c;
  Checkpoint b = base_->to_checkpoint();
  Checkpoint le = lm_en_->to_checkpoint();
  Checkpoint lf = lm_fr_->to_checkpoint();
  c.metadata = {{"kind", "contextual"},
                {"seed", seed_},
                {"context", context_.config().to_json()},
                {"init", "uniform(-0.08,0.08) weights, zero biases"},
                {"base", b.metadata},
                {"rnnlm_en", le.metadata},
                {"rnnlm_fr", lf.metadata}};
  c.tensors = b.tensors;
  c.tensors.merge(le.tensors);
  c.tensors.merge(lf.tensors);
  for (const auto& [name, p] : *ctx_params_) c.tensors.emplace(name, p.value);
  return c;
}

ConversationalModel ConversationalModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.metadata.value("kind", "") != "contextual") {
    throw ConfigError("checkpoint is not a contextual model");
  }
  auto part = [&](const char* key) {
    Checkpoint c;
    c.metadata = ckpt.metadata.at(key);
    c.tensors = ckpt.tensors;
    return c;
  };
  Checkpoint b = part("base"), le = part("rnnlm_en"), lf = part("rnnlm_fr");
  // restore(require_all) ignores tensors that belong to other components.
  ConversationalModel m(BaseNmt::from_checkpoint(b), RnnLm::from_checkpoint(le),
                        RnnLm::from_checkpoint(lf),
                        ContextConfig::from_json(ckpt.metadata.at("context")),
                        ckpt.metadata.at("seed").get<std::uint64_t>());
  m.ctx_params_->restore(ckpt.tensors, true);
  return m;
}

}  // namespace bimsmt
