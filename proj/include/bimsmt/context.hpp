// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "bimsmt/autograd.hpp"
#include "bimsmt/corpus.hpp"
#include "bimsmt/nmt.hpp"

namespace bimsmt {

enum class SourceStrategy { kNone, kDirect, kHierGate, kLangAttn, kCombinedAttn, kLangSentAttn };
enum class HistorySide { kSource, kTarget, kDualSrcTgt, kDualSrcTgtMix };
enum class Injection { kInitDec, kAddDec, kInitAdd };

std::string_view to_string(SourceStrategy s);
std::string_view to_string(HistorySide s);
std::string_view to_string(Injection s);
SourceStrategy parse_source_strategy(std::string_view s);
HistorySide parse_history_side(std::string_view s);
Injection parse_injection(std::string_view s);

/// Which parts of the history survive, relative to the sentence being
/// translated.
struct AblationMask {
  bool current_turn = true;
  bool prev_turns_same_lang = true;
  bool prev_turns_other_lang = true;

  static AblationMask all() { return {}; }
  static AblationMask none() { return {false, false, false}; }
  bool is_all() const { return current_turn && prev_turns_same_lang && prev_turns_other_lang; }
  bool empty() const { return !current_turn && !prev_turns_same_lang && !prev_turns_other_lang; }
  /// Comma-separated category names; "all" and "none" are accepted.
  static AblationMask parse(std::string_view text);
  std::string to_string() const;
  friend bool operator==(const AblationMask&, const AblationMask&) = default;
};

struct ContextConfig {
  SourceStrategy source_strategy = SourceStrategy::kLangSentAttn;
  HistorySide history_side = HistorySide::kSource;
  Injection injection = Injection::kInitAdd;
  AblationMask ablation_mask;
  bool local_prev_sentence_only = false;

  bool uses_source() const {
    return (history_side == HistorySide::kSource || history_side == HistorySide::kDualSrcTgt) &&
           source_strategy != SourceStrategy::kNone;
  }
  bool uses_target() const { return history_side != HistorySide::kSource; }
  bool is_mix() const { return history_side == HistorySide::kDualSrcTgtMix; }
  bool is_dual() const {
    return history_side == HistorySide::kDualSrcTgt || history_side == HistorySide::kDualSrcTgtMix;
  }
  bool uses_turn_rnn() const { return uses_source() || is_mix(); }
  bool init_dec() const { return injection != Injection::kAddDec; }
  bool add_dec() const { return injection != Injection::kInitDec; }

  nlohmann::json to_json() const;
  static ContextConfig from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------------------
// Conversation history

struct HistorySentence {
  Tensor source_rep;                 // 2H, from the RNNLM of the turn's language
  std::optional<Tensor> target_rep;  // H, decoder state of its translation
  std::size_t index = 0;             // position within its turn
};

struct HistoryTurn {
  Language language = Language::kEnglish;
  std::size_t index = 0;  // position within the conversation
  std::vector<HistorySentence> sentences;
};

/// Observed history of one conversation. When `ongoing` is set the last turn
/// is the turn being translated and holds only the sentences before the
/// current one.
struct ContextState {
  std::vector<HistoryTurn> turns;
  bool ongoing = false;

  /// Opens a new (empty) ongoing turn.
  void begin_turn(Language language);
  /// Appends a sentence to the ongoing turn.
  void observe(Tensor source_rep, std::optional<Tensor> target_rep = std::nullopt);
  std::size_t sentence_count() const;
  std::size_t target_count() const;
  std::optional<Language> current_language() const;
};

/// Removes turns outside `mask`; with `local_prev_sentence_only` only the
/// latest surviving sentence is kept.
ContextState apply_ablation_mask(const ContextState& state, const AblationMask& mask,
                                 bool local_prev_sentence_only = false);

// ---------------------------------------------------------------------------
// Context computation

/// A turn after the Turn-RNN: per-sentence r_i^j and the summary r_j.
struct EncodedTurn {
  Language language = Language::kEnglish;
  bool current = false;
  std::size_t index = 0;
  std::vector<Var> sentences;
  Var summary;
};

struct EncodedTarget {
  Language source_language = Language::kEnglish;
  std::size_t turn = 0;
  Var rep;
};

/// History lifted onto a tape.
struct EncodedHistory {
  std::vector<EncodedTurn> turns;     // only turns with at least one sentence
  std::vector<EncodedTarget> targets;
};

/// Attention weights kept for inspection.
struct AttentionDump {
  std::map<std::string, std::vector<double>> weights;
  nlohmann::json to_json() const;
};

/// Context vectors for one sentence; nullopt marks an absent context.
struct ContextVector {
  std::optional<Var> o_src;
  std::optional<Var> o_tgt;
  std::optional<Var> o_cur_m;  // mix variant, current (source) language
  std::optional<Var> o_oth_m;  // mix variant, other language
  AttentionDump attention;

  bool any() const { return o_src || o_tgt || o_cur_m || o_oth_m; }
};

/// Decoder inputs derived from a ContextVector.
struct Injected {
  DecoderInit init;
  bool base_fallback = false;  // AddDec-only with every context absent
};

/// Caches Turn-RNN encodings of completed turns on one tape.
class TurnCache {
 public:
  explicit TurnCache(const Tape& tape) : tape_(&tape) {}
  const Tape* tape() const { return tape_; }
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, EncodedTurn> entries;

 private:
  const Tape* tape_;
};

/// Parameters of the context machinery: one Turn-RNN per language (shared by
/// both directions) and per-direction strategy, gate, reduction and injection
/// parameters. Only parameters needed by the configuration are created.
class ContextModel {
 public:
  ContextModel() = default;
  ContextModel(ParameterSet& params, const ContextConfig& config, std::size_t hidden, Rng& rng);

  const ContextConfig& config() const { return config_; }
  std::size_t hidden() const { return hidden_; }

  std::pair<std::vector<Var>, Var> turn_rnn(Tape& tape, Language language,
                                            const std::vector<Var>& reps) const;
  EncodedHistory encode_history(Tape& tape, const ContextState& state,
                                TurnCache* cache = nullptr) const;

  /// α = σ(U_cur·a + U_oth·b + b_g); α⊙a + (1−α)⊙b. `target` selects the
  /// H-dim target-side gate instead of the 2H source-side one.
  Var fuse_gate(Tape& tape, Direction d, Var a, Var b, bool target = false) const;
  /// tanh(W_T·x + b_T), 2H -> H.
  Var reduce(Tape& tape, Direction d, Var x) const;

  std::optional<Var> source_context(Tape& tape, Direction d, const EncodedHistory& h, Var query,
                                    AttentionDump* dump = nullptr) const;
  std::optional<Var> target_context(Tape& tape, Direction d, const EncodedHistory& h, Var query,
                                    AttentionDump* dump = nullptr) const;
  std::pair<std::optional<Var>, std::optional<Var>> mix_context(Tape& tape, Direction d,
                                                                const EncodedHistory& h, Var query,
                                                                AttentionDump* dump = nullptr) const;
  ContextVector compute(Tape& tape, Direction d, const EncodedHistory& h, Var query) const;
  Injected inject(Tape& tape, Direction d, const ContextVector& ctx) const;

  // Strategy building blocks; `cur`/`oth` are per-language lists of 2H vectors.
  std::pair<std::optional<Var>, std::optional<Var>> src_direct(
      Tape& tape, Direction d, const std::vector<Var>& cur, const std::vector<Var>& oth) const;
  std::pair<std::optional<Var>, std::optional<Var>> src_hier_gate(
      Tape& tape, Direction d, const std::vector<Var>& cur, const std::vector<Var>& oth) const;
  /// Language-specific attention; throws ContractError when `cur` is empty.
  std::pair<Var, std::optional<Var>> src_lang_attn(Tape& tape, Direction d,
                                                   const std::vector<Var>& cur,
                                                   const std::vector<Var>& oth, Var query,
                                                   AttentionDump* dump = nullptr) const;
  /// Merged single-softmax attention; returns the 2H vector fed to reduce().
  Var src_combined_attn(Tape& tape, Direction d, const std::vector<Var>& cur,
                        const std::vector<Var>& oth, Var query,
                        AttentionDump* dump = nullptr) const;
  /// Sentence-level variant of the language-specific attention; both sides
  /// may be empty.
  std::pair<std::optional<Var>, std::optional<Var>> src_lang_sent_attn(
      Tape& tape, Direction d, const std::vector<Var>& cur, const std::vector<Var>& oth, Var query,
      AttentionDump* dump = nullptr) const;
  std::optional<Var> tgt_attn(Tape& tape, Direction d, const std::vector<Var>& cur,
                              const std::vector<Var>& oth, Var query,
                              AttentionDump* dump = nullptr) const;
  std::pair<std::optional<Var>, std::optional<Var>> dual_mix(Tape& tape, Direction d,
                                                             const std::vector<Var>& cur,
                                                             const std::vector<Var>& oth,
                                                             Var query,
                                                             AttentionDump* dump = nullptr) const;

 private:
  Var p(Tape& tape, const std::string& name) const;
  Var affine_p(Tape& tape, const std::string& w, const std::string& b, Var x) const;
  std::string key(Direction d, const std::string& name) const;
  std::pair<std::optional<Var>, std::optional<Var>> lang_attention(
      Tape& tape, Direction d, const std::string& kind, const std::vector<Var>& cur,
      const std::vector<Var>& oth, Var query, AttentionDump* dump) const;

  std::map<std::string, Parameter*> named_;
  ContextConfig config_;
  std::size_t hidden_ = 0;
  std::array<Gru, 2> turn_rnn_fwd_, turn_rnn_bwd_;
};

/// Attention pooling: p = softmax(Rᵀ q), returns (R p, p). R must be non-empty.
std::pair<Var, Var> attention_pool(const std::vector<Var>& reps, Var query);

}  // namespace bimsmt
