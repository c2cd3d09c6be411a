// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#include "bimsmt/nmt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bimsmt {

nlohmann::json ModelDims::to_json() const {
  return {{"vocab", vocab}, {"embed", embed}, {"hidden", hidden}, {"align", align}};
}

ModelDims ModelDims::from_json(const nlohmann::json& j) {
  ModelDims d;
  d.vocab = j.at("vocab").get<std::size_t>();
  d.embed = j.at("embed").get<std::size_t>();
  d.hidden = j.at("hidden").get<std::size_t>();
  d.align = j.at("align").get<std::size_t>();
  return d;
}

std::string_view to_string(Direction d) {
  return d == Direction::kEnToForeign ? "en2fr" : "fr2en";
}

Direction parse_direction(std::string_view s) {
  if (s == "en2fr") return Direction::kEnToForeign;
  if (s == "fr2en") return Direction::kForeignToEn;
  throw ConfigError("unknown direction '" + std::string(s) + "' (expected en2fr or fr2en)");
}

std::string direction_prefix(Direction d) { return std::string(to_string(d)) + "."; }

Var DropoutSpec::apply(Var v) const {
  if (!train || rate == 0.0) return v;
  if (!rng) throw ContractError("training-mode dropout needs a random source");
  return dropout(v, rate, train, *rng);
}

// ---------------------------------------------------------------------------
// GRU

Gru::Gru(ParameterSet& params, const std::string& prefix, std::size_t input, std::size_t hidden,
         Rng& rng)
    : input_(input), hidden_(hidden) {
  auto gate = [&](const std::string& g, Parameter*& w, Parameter*& u, Parameter*& b) {
    w = &params.add(prefix + "W_" + g, {hidden, input}, Init::kUniform, rng);
    u = &params.add(prefix + "U_" + g, {hidden, hidden}, Init::kUniform, rng);
    b = &params.add(prefix + "b_" + g, {hidden}, Init::kZeros, rng);
  };
  gate("z", wz_, uz_, bz_);
  gate("r", wr_, ur_, br_);
  gate("h", wh_, uh_, bh_);
}

std::vector<Parameter*> Gru::parameters() const {
  return {wz_, uz_, bz_, wr_, ur_, br_, wh_, uh_, bh_};
}

Var Gru::step(Tape& tape, Var x, Var h, const GateInputs* extra) const {
  if (x.value().size() != input_ || h.value().size() != hidden_) {
    throw DimensionError("gru step: input " + shape_string(x.value().shape()) + ", state " +
                         shape_string(h.value().shape()) + ", expected (" +
                         std::to_string(input_) + ", " + std::to_string(hidden_) + ")");
  }
  auto p = [&](Parameter* q) { return tape.parameter(*q); };
  auto with = [&](Var pre, Var add_term) { return add_term.valid() ? add(pre, add_term) : pre; };
  const GateInputs none{};
  const GateInputs& ex = extra ? *extra : none;

  Var z = sigmoid(with(add(add(matmul(p(wz_), x), matmul(p(uz_), h)), p(bz_)), ex.z));
  Var r = sigmoid(with(add(add(matmul(p(wr_), x), matmul(p(ur_), h)), p(br_)), ex.r));
  Var hc = tanh(with(add(add(matmul(p(wh_), x), matmul(p(uh_), mul(r, h))), p(bh_)), ex.h));
  return add(mul(one_minus(z), h), mul(z, hc));
}

std::vector<Var> run_gru(Tape& tape, const Gru& gru, const std::vector<Var>& inputs) {
  std::vector<Var> states;
  states.reserve(inputs.size());
  Var h = tape.constant(Tensor({gru.hidden_size()}));
  for (const Var& x : inputs) {
    h = gru.step(tape, x, h);
    states.push_back(h);
  }
  return states;
}

// ---------------------------------------------------------------------------
// DirectionModel

DirectionModel::DirectionModel(ParameterSet& params, const std::string& prefix,
                               const ModelDims& dims, Rng& rng)
    : dims_(dims) {
  if (dims.vocab <= static_cast<std::size_t>(Vocabulary::kPad)) {
    throw ConfigError("vocabulary must hold more than the reserved tokens");
  }
  if (dims.embed == 0 || dims.hidden == 0 || dims.align == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  const std::size_t V = dims.vocab, D = dims.embed, H = dims.hidden, A = dims.align;
  embed_src_ = &params.add(prefix + "E_S", {V, D}, Init::kUniform, rng);
  embed_tgt_ = &params.add(prefix + "E_T", {V, D}, Init::kUniform, rng);
  enc_fwd_ = Gru(params, prefix + "enc.fwd.", D, H, rng);
  enc_bwd_ = Gru(params, prefix + "enc.bwd.", D, H, rng);
  dec1_ = Gru(params, prefix + "dec.l1.", D + 2 * H, H, rng);
  dec2_ = Gru(params, prefix + "dec.l2.", H, H, rng);
  att_w_ = &params.add(prefix + "att.W_a", {A, H}, Init::kUniform, rng);
  att_u_ = &params.add(prefix + "att.U_a", {A, 2 * H}, Init::kUniform, rng);
  att_b_ = &params.add(prefix + "att.b_a", {A}, Init::kZeros, rng);
  att_v_ = &params.add(prefix + "att.v_a", {1, A}, Init::kUniform, rng);
  w_uc_ = &params.add(prefix + "out.W_uc", {H, 2 * H}, Init::kUniform, rng);
  w_un_ = &params.add(prefix + "out.W_un", {H, D}, Init::kUniform, rng);
  w_y_ = &params.add(prefix + "out.W_y", {V, H}, Init::kUniform, rng);
  b_y_ = &params.add(prefix + "out.b_y", {V}, Init::kZeros, rng);
}

std::vector<Parameter*> DirectionModel::parameters() const {
  std::vector<Parameter*> out{embed_src_, embed_tgt_, att_w_, att_u_, att_b_, att_v_,
                              w_uc_,      w_un_,      w_y_,   b_y_};
  for (const Gru* g : {&enc_fwd_, &enc_bwd_, &dec1_, &dec2_}) {
    auto ps = g->parameters();
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

void DirectionModel::check_ids(std::span<const int> ids) const {
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= dims_.vocab) {
      throw ContractError("token id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(dims_.vocab));
    }
  }
}

EncoderStates DirectionModel::encode(Tape& tape, std::span<const int> src,
                                     const DropoutSpec& drop) const {
  if (src.empty()) throw ContractError("cannot encode an empty source sentence");
  check_ids(src);
  Var es = tape.parameter(*embed_src_);
  std::vector<Var> emb;
  emb.reserve(src.size());
  for (int id : src) emb.push_back(drop.apply(row(es, static_cast<std::size_t>(id))));
  std::vector<Var> fwd = run_gru(tape, enc_fwd_, emb);
  std::vector<Var> rev(emb.rbegin(), emb.rend());
  std::vector<Var> bwd = run_gru(tape, enc_bwd_, rev);
  std::reverse(bwd.begin(), bwd.end());  // bwd[m] has read tokens m..M-1

  EncoderStates enc;
  for (std::size_t m = 0; m < src.size(); ++m) enc.states.push_back(concat({fwd[m], bwd[m]}));
  enc.matrix = columns(enc.states);
  enc.summary = concat({fwd.back(), bwd.front()});
  enc.keys = matmul(tape.parameter(*att_u_), enc.matrix);
  return enc;
}

AttentionResult DirectionModel::attend(Tape& tape, const EncoderStates& enc, Var s_prev) const {
  if (enc.size() == 0) throw ContractError("attention over an empty source");
  if (s_prev.value().size() != dims_.hidden) {
    throw DimensionError("attention query has " + std::to_string(s_prev.value().size()) +
                         " entries, expected " + std::to_string(dims_.hidden));
  }
  Var q = affine(tape.parameter(*att_w_), s_prev, tape.parameter(*att_b_));
  Var hidden = tanh(add(enc.keys, q));                       // A x M
  Var scores = matmul(tape.parameter(*att_v_), hidden);      // 1 x M
  Var alpha = softmax(reshape(scores, {enc.size()}));
  return {alpha, matmul(enc.matrix, alpha)};
}

DecoderState DirectionModel::initial_state(Tape& tape, const DecoderInit& init) const {
  if (init.initial_state) {
    Var s0 = *init.initial_state;
    if (s0.value().shape() != Shape{dims_.hidden}) {
      throw ContractError("injected initial state has shape " + shape_string(s0.value().shape()) +
                          ", expected [" + std::to_string(dims_.hidden) + "]");
    }
    return {{s0, s0}};
  }
  Var z = tape.constant(Tensor({dims_.hidden}));
  return {{z, z}};
}

StepResult DirectionModel::decode_step(Tape& tape, const DecoderState& prev, int y_prev,
                                       const EncoderStates& enc, const DecoderInit& init,
                                       const DropoutSpec& drop) const {
  check_ids(std::span<const int>(&y_prev, 1));
  if (init.add_dec) {
    for (const Var& v : {init.add_dec->z, init.add_dec->r, init.add_dec->h}) {
      if (v.valid() && v.value().shape() != Shape{dims_.hidden}) {
        throw ContractError("AddDec term has shape " + shape_string(v.value().shape()) +
                            ", expected [" + std::to_string(dims_.hidden) + "]");
      }
    }
  }
  AttentionResult att = attend(tape, enc, prev.top());
  Var emb = drop.apply(row(tape.parameter(*embed_tgt_), static_cast<std::size_t>(y_prev)));
  Var l1 = dec1_.step(tape, concat({emb, att.context}), prev.layers[0],
                      init.add_dec ? &*init.add_dec : nullptr);
  Var l2 = dec2_.step(tape, l1, prev.layers[1]);
  Var u = tanh(add(add(l2, matmul(tape.parameter(*w_uc_), att.context)),
                   matmul(tape.parameter(*w_un_), emb)));
  u = drop.apply(u);
  Var logits = affine(tape.parameter(*w_y_), u, tape.parameter(*b_y_));
  return {logits, DecoderState{{l1, l2}}, att};
}

SentenceLoss DirectionModel::teacher_forced(Tape& tape, std::span<const int> src,
                                            std::span<const int> tgt, const DecoderInit& init,
                                            const DropoutSpec& drop) const {
  return teacher_forced(tape, encode(tape, src, drop), tgt, init, drop);
}

SentenceLoss DirectionModel::teacher_forced(Tape& tape, const EncoderStates& enc,
                                            std::span<const int> tgt, const DecoderInit& init,
                                            const DropoutSpec& drop) const {
  check_ids(tgt);
  DecoderState state = initial_state(tape, init);
  SentenceLoss out;
  int prev = Vocabulary::kBos;
  for (std::size_t n = 0; n <= tgt.size(); ++n) {
    const int y = n < tgt.size() ? tgt[n] : Vocabulary::kEos;
    StepResult st = decode_step(tape, state, prev, enc, init, drop);
    Var l = nll(st.logits, static_cast<std::size_t>(y));
    out.loss = out.loss.valid() ? add(out.loss, l) : l;
    state = st.state;
    prev = y;
  }
  out.tokens = tgt.size() + 1;
  out.final_state = state.top();
  return out;
}

GreedyOutput DirectionModel::greedy(Tape& tape, std::span<const int> src, const DecoderInit& init,
                                    std::optional<std::size_t> max_len) const {
  return greedy(tape, encode(tape, src), init, max_len);
}

GreedyOutput DirectionModel::greedy(Tape& tape, const EncoderStates& enc, const DecoderInit& init,
                                    std::optional<std::size_t> max_len) const {
  DecoderState state = initial_state(tape, init);
  const std::size_t cap = max_len.value_or(2 * enc.size() + 5);
  GreedyOutput out;
  int prev = Vocabulary::kBos;
  for (std::size_t n = 0; n < cap; ++n) {
    StepResult st = decode_step(tape, state, prev, enc, init);
    state = st.state;
    const auto& w = st.attention.weights.value().values();
    out.attention.emplace_back(w.begin(), w.end());
    const auto logits = st.logits.value().data();
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.size(); ++k)
      if (logits[k] > logits[best]) best = k;
    if (static_cast<int>(best) == Vocabulary::kEos) {
      out.terminated = true;
      break;
    }
    out.ids.push_back(static_cast<int>(best));
    prev = static_cast<int>(best);
  }
  out.final_state = state.top().value();
  return out;
}

// ---------------------------------------------------------------------------
// BaseNmt

BaseNmt::BaseNmt(Vocabulary vocab, ModelDims dims, std::uint64_t seed)
    : vocab_(std::move(vocab)), dims_(dims), seed_(seed) {
  if (dims_.vocab == 0) dims_.vocab = vocab_.size();
  if (dims_.vocab != vocab_.size()) {
    throw ConfigError("model vocabulary size " + std::to_string(dims_.vocab) +
                      " does not match vocabulary of " + std::to_string(vocab_.size()));
  }
  for (Direction d : {Direction::kEnToForeign, Direction::kForeignToEn}) {
    Rng rng(derive_seed(seed_, "init." + direction_prefix(d)));
    dirs_[static_cast<int>(d)] = DirectionModel(params_, direction_prefix(d), dims_, rng);
  }
}

Checkpoint BaseNmt::to_checkpoint() const {
  Checkpoint c;
  c.metadata = {{"kind", "base-nmt"},
                {"dims", dims_.to_json()},
                {"seed", seed_},
                {"init", "uniform(-0.08,0.08) weights, zero biases"},
                {"vocab", vocab_.to_json()}};
  c.tensors = params_.snapshot();
  return c;
}

BaseNmt BaseNmt::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.metadata.value("kind", "") != "base-nmt") {
    throw ConfigError("checkpoint is not a base model (kind '" +
                      ckpt.metadata.value("kind", std::string()) + "')");
  }
  BaseNmt m(Vocabulary::from_json(ckpt.metadata.at("vocab")),
            ModelDims::from_json(ckpt.metadata.at("dims")),
            ckpt.metadata.at("seed").get<std::uint64_t>());
  m.params_.restore(ckpt.tensors, true);
  return m;
}

// ---------------------------------------------------------------------------
// RnnLm

namespace {
std::string lm_prefix(Language l) {
  return l == Language::kEnglish ? "rnnlm.en." : "rnnlm.fr.";
}

double exp_mean(double total, std::size_t count) {
  return count == 0 ? 1.0 : std::exp(total / static_cast<double>(count));
}
}  // namespace

RnnLm::RnnLm(Vocabulary vocab, Language language, ModelDims dims, std::uint64_t seed)
    : vocab_(std::move(vocab)), language_(language), dims_(dims), seed_(seed) {
  if (dims_.vocab == 0) dims_.vocab = vocab_.size();
  if (dims_.vocab != vocab_.size()) throw ConfigError("RNNLM vocabulary size mismatch");
  if (dims_.embed == 0 || dims_.hidden == 0) throw ConfigError("model dimensions must be positive");
  const std::string p = lm_prefix(language);
  const std::size_t V = dims_.vocab, D = dims_.embed, H = dims_.hidden;
  Rng rng(derive_seed(seed_, "init." + p));
  embed_ = &params_.add(p + "E", {V, D}, Init::kUniform, rng);
  fwd_ = Gru(params_, p + "fwd.", D, H, rng);
  bwd_ = Gru(params_, p + "bwd.", D, H, rng);
  out_fwd_w_ = &params_.add(p + "out_fwd.W", {V, H}, Init::kUniform, rng);
  out_fwd_b_ = &params_.add(p + "out_fwd.b", {V}, Init::kZeros, rng);
  out_bwd_w_ = &params_.add(p + "out_bwd.W", {V, H}, Init::kUniform, rng);
  out_bwd_b_ = &params_.add(p + "out_bwd.b", {V}, Init::kZeros, rng);
}

std::pair<Var, std::size_t> RnnLm::nll(Tape& tape, std::span<const int> ids,
                                       const DropoutSpec& drop) const {
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= dims_.vocab)
      throw ContractError("token id out of vocabulary range");
  Var e = tape.parameter(*embed_);
  auto emb = [&](int id) { return drop.apply(row(e, static_cast<std::size_t>(id))); };
  const std::size_t n = ids.size();
  std::vector<Var> fin{emb(Vocabulary::kBos)}, bin{emb(Vocabulary::kEos)};
  for (std::size_t t = 0; t < n; ++t) {
    fin.push_back(emb(ids[t]));
    bin.push_back(emb(ids[n - 1 - t]));
  }
  std::vector<Var> fs = run_gru(tape, fwd_, fin);
  std::vector<Var> bs = run_gru(tape, bwd_, bin);
  Var loss;
  auto acc = [&](Var l) { loss = loss.valid() ? add(loss, l) : l; };
  for (std::size_t t = 0; t <= n; ++t) {
    const int fy = t < n ? ids[t] : Vocabulary::kEos;
    const int by = t < n ? ids[n - 1 - t] : Vocabulary::kBos;
    acc(bimsmt::nll(affine(tape.parameter(*out_fwd_w_), drop.apply(fs[t]),
                           tape.parameter(*out_fwd_b_)),
                    static_cast<std::size_t>(fy)));
    acc(bimsmt::nll(affine(tape.parameter(*out_bwd_w_), drop.apply(bs[t]),
                           tape.parameter(*out_bwd_b_)),
                    static_cast<std::size_t>(by)));
  }
  return {loss, 2 * (n + 1)};
}

std::pair<Var, Var> RnnLm::final_states(Tape& tape, std::span<const int> ids) const {
  Var e = tape.parameter(*embed_);
  std::vector<Var> fin{row(e, Vocabulary::kBos)}, bin{row(e, Vocabulary::kEos)};
  for (std::size_t t = 0; t < ids.size(); ++t) {
    fin.push_back(row(e, static_cast<std::size_t>(ids[t])));
    bin.push_back(row(e, static_cast<std::size_t>(ids[ids.size() - 1 - t])));
  }
  return {run_gru(tape, fwd_, fin).back(), run_gru(tape, bwd_, bin).back()};
}

Tensor RnnLm::sentence_rep(std::span<const int> ids) const {
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= dims_.vocab)
      throw ContractError("token id out of vocabulary range");
  Tape tape(false);
  auto [f, b] = final_states(tape, ids);
  return concat({f, b}).value();
}

Tensor RnnLm::sentence_rep(const Tokens& tokens, Language language) const {
  if (language != language_) {
    throw ContractError("RNNLM for " + std::string(to_string(language_)) +
                        " asked to represent a " + std::string(to_string(language)) +
                        " sentence");
  }
  return sentence_rep(vocab_.encode(tokens));
}

double RnnLm::perplexity(const std::vector<Tokens>& sentences) const {
  double total = 0.0;
  std::size_t count = 0;
  for (const Tokens& s : sentences) {
    Tape tape(false);
    auto [loss, n] = nll(tape, vocab_.encode(s));
    total += loss.value().item();
    count += n;
  }
  return exp_mean(total, count);
}

Checkpoint RnnLm::to_checkpoint() const {
  Checkpoint c;
  c.metadata = {{"kind", "rnnlm"},
                {"language", std::string(to_string(language_))},
                {"dims", dims_.to_json()},
                {"seed", seed_},
                {"init", "uniform(-0.08,0.08) weights, zero biases"},
                {"vocab", vocab_.to_json()}};
  c.tensors = params_.snapshot();
  return c;
}

RnnLm RnnLm::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.metadata.value("kind", "") != "rnnlm") {
    throw ConfigError("checkpoint is not an RNN language model");
  }
  RnnLm lm(Vocabulary::from_json(ckpt.metadata.at("vocab")),
           parse_language(ckpt.metadata.at("language").get<std::string>()),
           ModelDims::from_json(ckpt.metadata.at("dims")),
           ckpt.metadata.at("seed").get<std::uint64_t>());
  lm.params_.restore(ckpt.tensors, true);
  return lm;
}

// ---------------------------------------------------------------------------
// Training

nlohmann::json TrainLog::to_json() const {
  nlohmann::json ep = nlohmann::json::array();
  for (const auto& e : epochs) {
    ep.push_back({{"epoch", e.epoch},
                  {"lr", e.lr},
                  {"train_perplexity", e.train_perplexity},
                  {"dev_perplexity", e.dev_perplexity}});
  }
  return {{"epochs", ep}, {"best_epoch", best_epoch}, {"best_dev_perplexity", best_dev_perplexity}};
}

std::vector<SentencePair> sentence_pairs(const std::vector<Conversation>& conversations,
                                         Direction direction, const Vocabulary& vocab) {
  std::vector<SentencePair> out;
  const Language src = source_language(direction);
  for (const auto& c : conversations)
    for (const auto& t : c.turns)
      for (const auto& s : t.sentences) {
        if (t.language == src) {
          out.push_back({vocab.encode(s.tokens), vocab.encode(s.reference)});
        } else {
          out.push_back({vocab.encode(s.reference), vocab.encode(s.tokens)});
        }
      }
  return out;
}

double perplexity(const DirectionModel& model, const std::vector<SentencePair>& pairs) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& p : pairs) {
    Tape tape(false);
    SentenceLoss l = model.teacher_forced(tape, p.src, p.tgt);
    total += l.loss.value().item();
    count += l.tokens;
  }
  return exp_mean(total, count);
}

namespace {

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
}

}  // namespace

TrainLog run_training(
    const std::vector<Parameter*>& params, std::size_t examples, const TrainOptions& options,
    const std::string& label,
    const std::function<std::pair<double, std::size_t>(std::size_t, Rng&, int)>& step,
    const std::function<std::optional<double>()>& dev_ppl) {
  options.schedule.validate();
  if (examples == 0) throw ConfigError(label + ": training data is empty");
  Rng order_rng(derive_seed(options.seed, "shuffle." + label));
  Rng drop_rng(derive_seed(options.seed, "dropout." + label));
  std::vector<std::size_t> order(examples);
  std::iota(order.begin(), order.end(), 0);

  TrainLog log;
  std::map<std::string, Tensor> best;
  for (int epoch = 1; epoch <= options.schedule.total_epochs; ++epoch) {
    shuffle(order, order_rng);
    double total = 0.0;
    std::size_t tokens = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      try {
        auto [loss, n] = step(order[k], drop_rng, epoch);
        total += loss;
        tokens += n;
      } catch (const NumericError& e) {
        throw NumericError(label + ": training diverged at epoch " + std::to_string(epoch) +
                           ", example " + std::to_string(k) + " (" + e.what() + ")");
      }
    }
    EpochRecord rec{epoch, options.schedule.lr(epoch), exp_mean(total, tokens), 0.0};
    const std::optional<double> dev = dev_ppl();
    rec.dev_perplexity = dev.value_or(rec.train_perplexity);
    log.epochs.push_back(rec);
    if (log.best_epoch == 0 || rec.dev_perplexity < log.best_dev_perplexity) {
      log.best_epoch = epoch;
      log.best_dev_perplexity = rec.dev_perplexity;
      best.clear();
      for (const Parameter* p : params) best.emplace(p->name, p->value);
    }
    if (options.log) {
      options.log(label + " epoch " + std::to_string(epoch) + " lr " + std::to_string(rec.lr) +
                  " train_ppl " + std::to_string(rec.train_perplexity) + " dev_ppl " +
                  std::to_string(rec.dev_perplexity));
    }
  }
  for (Parameter* p : params) p->value = best.at(p->name);
  return log;
}

TrainLog train_base(BaseNmt& model, Direction direction, const std::vector<SentencePair>& train,
                    const std::vector<SentencePair>& dev, const TrainOptions& options) {
  const DirectionModel& dm = model.direction(direction);
  const std::vector<Parameter*> params = dm.parameters();
  auto step = [&](std::size_t i, Rng& rng, int epoch) {
    Tape tape;
    SentenceLoss l = dm.teacher_forced(tape, std::span<const int>(train[i].src), train[i].tgt,
                                       {}, DropoutSpec{options.dropout, true, &rng});
    tape.backward(l.loss);
    sgd_step(params, options.schedule, epoch, options.clip_norm);
    return std::pair{l.loss.value().item(), l.tokens};
  };
  auto dev_ppl = [&]() -> std::optional<double> {
    if (dev.empty()) return std::nullopt;
    return perplexity(dm, dev);
  };
  return run_training(params, train.size(), options,
                    "base." + std::string(to_string(direction)), step, dev_ppl);
}

TrainLog train_rnnlm(RnnLm& lm, const std::vector<Tokens>& train, const std::vector<Tokens>& dev,
                     const TrainOptions& options) {
  std::vector<std::vector<int>> ids;
  for (const auto& s : train) ids.push_back(lm.vocab().encode(s));
  std::vector<Parameter*> params;
  for (auto& [_, p] : lm.params()) params.push_back(&p);
  auto step = [&](std::size_t i, Rng& rng, int epoch) {
    Tape tape;
    auto [loss, n] = lm.nll(tape, ids[i], DropoutSpec{options.dropout, true, &rng});
    tape.backward(loss);
    sgd_step(params, options.schedule, epoch, options.clip_norm);
    return std::pair{loss.value().item(), n};
  };
  auto dev_ppl = [&]() -> std::optional<double> {
    if (dev.empty()) return std::nullopt;
    return lm.perplexity(dev);
  };
  const std::string label = lm.language() == Language::kEnglish ? "rnnlm.en" : "rnnlm.fr";
  return run_training(params, ids.size(), options, label, step, dev_ppl);
}

std::vector<int> greedy_decode(const BaseNmt& model, Direction direction, const Tokens& source,
                               std::optional<std::size_t> max_len) {
  Tape tape(false);
  return model.direction(direction).greedy(tape, model.vocab().encode(source), {}, max_len).ids;
}

}  // namespace bimsmt
