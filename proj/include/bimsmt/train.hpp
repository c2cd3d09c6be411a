// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bimsmt/context.hpp"
#include "bimsmt/corpus.hpp"
#include "bimsmt/metrics.hpp"
#include "bimsmt/model.hpp"
#include "bimsmt/nmt.hpp"

namespace bimsmt {

/// Everything about a conversation that stays fixed during contextual
/// training: token ids, RNNLM source representations and the frozen base
/// model's target representations. Indexed [turn][sentence].
struct PreparedConversation {
  std::string id;
  std::vector<Language> languages;
  std::vector<std::vector<std::vector<int>>> src, tgt;
  std::vector<std::vector<Tensor>> source_reps;
  std::vector<std::vector<Tensor>> target_reps;  // empty when no frozen base was given
};

/// Throws DataError when a sentence lacks its reference.
PreparedConversation prepare_conversation(const Conversation& c, const Vocabulary& vocab,
                                          const RnnLm& lm_en, const RnnLm& lm_fr,
                                          const BaseNmt* frozen_base);
std::vector<PreparedConversation> prepare_corpus(const std::vector<Conversation>& convs,
                                                 const ConversationalModel& model);

/// Observed history before sentence `sentence` of turn `turn` (teacher forced).
ContextState history_before(const PreparedConversation& c, std::size_t turn, std::size_t sentence);

struct TurnLoss {
  Var loss;
  std::size_t tokens = 0;
};

/// Summed NLL of one turn's sentences, each conditioned on its context.
TurnLoss turn_nll(Tape& tape, const ConversationalModel& model, const PreparedConversation& c,
                  std::size_t turn, const DropoutSpec& drop = {}, TurnCache* cache = nullptr);

/// −Σ_turns Σ_sentences log P(target | source, context) without dropout;
/// returns (NLL, target tokens).
std::pair<double, std::size_t> conversation_nll(const ConversationalModel& model,
                                                const PreparedConversation& c);
double contextual_perplexity(const ConversationalModel& model,
                             const std::vector<PreparedConversation>& convs);

struct ContextTrainOptions : TrainOptions {
  ContextTrainOptions() { schedule = SgdSchedule::contextual(); }
};

/// Stage-two training of every base and context parameter, one SGD step per
/// turn, keeping the epoch with the lowest overall dev perplexity.
TrainLog train_contextual(ConversationalModel& model, const std::vector<Conversation>& train,
                          const std::vector<Conversation>& dev, const ContextTrainOptions& options);

struct ConversationTranslation {
  std::string id;
  std::vector<std::vector<Tokens>> hypotheses;  // [turn][sentence]
  nlohmann::json attention = nlohmann::json::array();
  std::size_t base_fallbacks = 0;
};

/// Greedy decoding in conversation order; each decoded sentence's final
/// decoder state becomes a target representation for later sentences.
ConversationTranslation translate_conversation(const ConversationalModel& model,
                                               const Conversation& c, bool dump_attention = false);
ConversationTranslation translate_conversation(const BaseNmt& model, const Conversation& c);

/// Runs `translate` over every conversation on up to `jobs` threads.
std::vector<ConversationTranslation> translate_corpus(
    const std::vector<Conversation>& convs,
    const std::function<ConversationTranslation(const Conversation&)>& translate,
    std::size_t jobs = 1);

/// Copy of `c` whose reference side holds the hypotheses.
Conversation with_hypotheses(const Conversation& c, const ConversationTranslation& t);

/// Aligned hypothesis/reference lists per direction and overall.
struct AlignedOutputs {
  std::vector<Tokens> hyps[2], refs[2];  // indexed by Direction
  std::vector<Tokens> all_hyps, all_refs;
};
/// Aligns hypothesis conversations to reference conversations by id and
/// position. Throws DataError on any mismatch.
AlignedOutputs align_outputs(const std::vector<Conversation>& refs,
                             const std::vector<Conversation>& hyps);

struct EvalScores {
  double overall = 0.0, en2fr = 0.0, fr2en = 0.0;
  nlohmann::ordered_json to_json() const;
};
EvalScores score_outputs(const AlignedOutputs& out, bool smooth = false);

struct EvalReport {
  EvalScores bleu;
  std::optional<double> perplexity;
  std::optional<SignificanceResult> significance;  // hypothesis vs baseline, overall
  std::vector<TokenDiff> token_diff;
  nlohmann::ordered_json to_json() const;
};

struct AblationRow {
  std::string label;
  std::optional<AblationMask> mask;  // nullopt: base model row
  EvalScores scores;
  std::vector<Conversation> hypotheses;
};

/// Evaluates the contextual model under each mask (plus the base model when
/// given); the model's own mask is restored afterwards.
std::vector<AblationRow> run_ablation(ConversationalModel& model, const BaseNmt* base,
                                      const std::vector<Conversation>& convs,
                                      const std::vector<AblationMask>& masks,
                                      std::size_t jobs = 1, bool smooth = false);
/// Complete context followed by each single category.
std::vector<AblationMask> default_ablation_masks();
nlohmann::ordered_json ablation_json(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace bimsmt
