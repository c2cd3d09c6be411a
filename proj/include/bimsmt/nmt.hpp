// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bimsmt/autograd.hpp"
#include "bimsmt/checkpoint.hpp"
#include "bimsmt/corpus.hpp"
#include "bimsmt/optim.hpp"

namespace bimsmt {

struct ModelDims {
  std::size_t vocab = 0;
  std::size_t embed = 256;
  std::size_t hidden = 256;
  std::size_t align = 128;

  nlohmann::json to_json() const;
  static ModelDims from_json(const nlohmann::json& j);
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

enum class Direction { kEnToForeign = 0, kForeignToEn = 1 };

inline Language source_language(Direction d) {
  return d == Direction::kEnToForeign ? Language::kEnglish : Language::kForeign;
}
inline Direction direction_from(Language source) {
  return source == Language::kEnglish ? Direction::kEnToForeign : Direction::kForeignToEn;
}
std::string_view to_string(Direction d);  // "en2fr" / "fr2en"
Direction parse_direction(std::string_view s);

/// Dropout settings threaded through a forward pass.
struct DropoutSpec {
  double rate = 0.0;
  bool train = false;
  Rng* rng = nullptr;

  Var apply(Var v) const;
};

/// Extra additive gate pre-activations for a GRU step (z, r, candidate).
struct GateInputs {
  Var z, r, h;
};

/// Cho et al. gated recurrent unit:
///   z = σ(W_z x + U_z h + b_z)      r = σ(W_r x + U_r h + b_r)
///   h~ = tanh(W_h x + U_h (r ⊙ h) + b_h)
///   h' = (1 - z) ⊙ h + z ⊙ h~
class Gru {
 public:
  Gru() = default;
  Gru(ParameterSet& params, const std::string& prefix, std::size_t input, std::size_t hidden,
      Rng& rng);

  Var step(Tape& tape, Var x, Var h, const GateInputs* extra = nullptr) const;
  std::size_t input_size() const { return input_; }
  std::size_t hidden_size() const { return hidden_; }
  std::vector<Parameter*> parameters() const;

 private:
  std::size_t input_ = 0, hidden_ = 0;
  Parameter *wz_ = nullptr, *uz_ = nullptr, *bz_ = nullptr;
  Parameter *wr_ = nullptr, *ur_ = nullptr, *br_ = nullptr;
  Parameter *wh_ = nullptr, *uh_ = nullptr, *bh_ = nullptr;
};

/// Runs a GRU over a sequence from a zero state and returns every state.
std::vector<Var> run_gru(Tape& tape, const Gru& gru, const std::vector<Var>& inputs);

struct EncoderStates {
  std::vector<Var> states;  // h_m = [fwd_m ; bwd_m], 2H each
  Var matrix;               // 2H x M, columns h_m
  Var summary;              // [fwd_last ; bwd_first], 2H
  Var keys;                 // U_a · matrix, A x M

  std::size_t size() const { return states.size(); }
};

struct DecoderState {
  std::array<Var, 2> layers;  // two stacked GRU layers; layers[1] is s_n
  Var top() const { return layers[1]; }
};

struct AttentionResult {
  Var weights;  // alpha over source positions
  Var context;  // c_n = Σ alpha_m h_m
};

struct StepResult {
  Var logits;
  DecoderState state;
  AttentionResult attention;
};

/// How the conversation context enters the decoder for one sentence.
struct DecoderInit {
  std::optional<Var> initial_state;   // InitDec; zeros when absent
  std::optional<GateInputs> add_dec;  // AddDec terms for the first decoder layer
};

struct SentenceLoss {
  Var loss;             // summed token NLL, including </s>
  std::size_t tokens = 0;
  Var final_state;      // top-layer decoder state after the last step
};

struct GreedyOutput {
  std::vector<int> ids;  // without </s>
  Tensor final_state;
  std::vector<std::vector<double>> attention;
  bool terminated = false;
};

/// One translation direction: bidirectional GRU encoder and a two-layer GRU
/// decoder with MLP (Bahdanau) attention.
class DirectionModel {
 public:
  DirectionModel() = default;
  DirectionModel(ParameterSet& params, const std::string& prefix, const ModelDims& dims, Rng& rng);

  const ModelDims& dims() const { return dims_; }
  std::vector<Parameter*> parameters() const;

  EncoderStates encode(Tape& tape, std::span<const int> src, const DropoutSpec& drop = {}) const;
  AttentionResult attend(Tape& tape, const EncoderStates& enc, Var s_prev) const;
  DecoderState initial_state(Tape& tape, const DecoderInit& init = {}) const;
  StepResult decode_step(Tape& tape, const DecoderState& prev, int y_prev, const EncoderStates& enc,
                         const DecoderInit& init = {}, const DropoutSpec& drop = {}) const;

  SentenceLoss teacher_forced(Tape& tape, std::span<const int> src, std::span<const int> tgt,
                              const DecoderInit& init = {}, const DropoutSpec& drop = {}) const;
  SentenceLoss teacher_forced(Tape& tape, const EncoderStates& enc, std::span<const int> tgt,
                              const DecoderInit& init = {}, const DropoutSpec& drop = {}) const;
  /// Argmax decoding (ties to the lowest id); stops at </s> or `max_len`
  /// tokens (default 2*|src| + 5).
  GreedyOutput greedy(Tape& tape, std::span<const int> src, const DecoderInit& init = {},
                      std::optional<std::size_t> max_len = std::nullopt) const;
  GreedyOutput greedy(Tape& tape, const EncoderStates& enc, const DecoderInit& init = {},
                      std::optional<std::size_t> max_len = std::nullopt) const;

 private:
  void check_ids(std::span<const int> ids) const;

  ModelDims dims_;
  Parameter* embed_src_ = nullptr;
  Parameter* embed_tgt_ = nullptr;
  Gru enc_fwd_, enc_bwd_, dec1_, dec2_;
  Parameter *att_w_ = nullptr, *att_u_ = nullptr, *att_b_ = nullptr, *att_v_ = nullptr;
  Parameter *w_uc_ = nullptr, *w_un_ = nullptr, *w_y_ = nullptr, *b_y_ = nullptr;
};

/// Parameter-name prefix of a direction ("en2fr." / "fr2en.").
std::string direction_prefix(Direction d);

/// The context-free model: one DirectionModel per translation direction,
/// sharing a vocabulary but not parameters.
class BaseNmt {
 public:
  BaseNmt(Vocabulary vocab, ModelDims dims, std::uint64_t seed);

  const Vocabulary& vocab() const { return vocab_; }
  const ModelDims& dims() const { return dims_; }
  std::uint64_t seed() const { return seed_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const DirectionModel& direction(Direction d) const { return dirs_[static_cast<int>(d)]; }

  Checkpoint to_checkpoint() const;
  static BaseNmt from_checkpoint(const Checkpoint& ckpt);

 private:
  Vocabulary vocab_;
  ModelDims dims_;
  std::uint64_t seed_;
  ParameterSet params_;
  std::array<DirectionModel, 2> dirs_;
};

/// Bidirectional GRU language model for one language. The forward half
/// predicts the next token, the backward half the previous one; the sentence
/// representation is [fwd_last ; bwd_last] (2H).
class RnnLm {
 public:
  RnnLm(Vocabulary vocab, Language language, ModelDims dims, std::uint64_t seed);

  Language language() const { return language_; }
  const Vocabulary& vocab() const { return vocab_; }
  const ModelDims& dims() const { return dims_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// Summed forward + backward token NLL and the number of predicted tokens.
  std::pair<Var, std::size_t> nll(Tape& tape, std::span<const int> ids,
                                  const DropoutSpec& drop = {}) const;
  Tensor sentence_rep(std::span<const int> ids) const;
  /// Throws ContractError when `language` differs from the model's.
  Tensor sentence_rep(const Tokens& tokens, Language language) const;
  double perplexity(const std::vector<Tokens>& sentences) const;

  Checkpoint to_checkpoint() const;
  static RnnLm from_checkpoint(const Checkpoint& ckpt);

 private:
  std::pair<Var, Var> final_states(Tape& tape, std::span<const int> ids) const;

  Vocabulary vocab_;
  Language language_;
  ModelDims dims_;
  std::uint64_t seed_;
  ParameterSet params_;
  Parameter* embed_ = nullptr;
  Gru fwd_, bwd_;
  Parameter *out_fwd_w_ = nullptr, *out_fwd_b_ = nullptr;
  Parameter *out_bwd_w_ = nullptr, *out_bwd_b_ = nullptr;
};

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  SgdSchedule schedule = SgdSchedule::base();
  double dropout = 0.2;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  std::function<void(const std::string&)> log;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_perplexity = 0.0;
  double dev_perplexity = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_dev_perplexity = 0.0;

  nlohmann::json to_json() const;
};

struct SentencePair {
  std::vector<int> src;
  std::vector<int> tgt;
};

/// Every sentence pair of the conversations oriented for `direction`: turns in
/// the direction's source language contribute (source, reference); the other
/// language's turns contribute (reference, source).
std::vector<SentencePair> sentence_pairs(const std::vector<Conversation>& conversations,
                                         Direction direction, const Vocabulary& vocab);

/// exp(total NLL / total target tokens) of teacher-forced decoding.
double perplexity(const DirectionModel& model, const std::vector<SentencePair>& pairs);

/// Trains one direction with per-sentence SGD; the parameters of the other
/// direction are never touched. Keeps the epoch with the lowest dev
/// perplexity (train perplexity when `dev` is empty).
TrainLog train_base(BaseNmt& model, Direction direction, const std::vector<SentencePair>& train,
                    const std::vector<SentencePair>& dev, const TrainOptions& options);

/// Epoch loop shared by every trainer. `step(example, dropout_rng, epoch)`
/// runs one example including its parameter update and returns (summed NLL,
/// predicted tokens); `dev_perplexity` is evaluated after every epoch
/// (nullopt: use the epoch's running train perplexity). The values of
/// `params` from the best epoch are restored at the end.
TrainLog run_training(
    const std::vector<Parameter*>& params, std::size_t examples, const TrainOptions& options,
    const std::string& label,
    const std::function<std::pair<double, std::size_t>(std::size_t, Rng&, int)>& step,
    const std::function<std::optional<double>()>& dev_perplexity);

TrainLog train_rnnlm(RnnLm& lm, const std::vector<Tokens>& train, const std::vector<Tokens>& dev,
                     const TrainOptions& options);

std::vector<int> greedy_decode(const BaseNmt& model, Direction direction, const Tokens& source,
                               std::optional<std::size_t> max_len = std::nullopt);

}  // namespace bimsmt
