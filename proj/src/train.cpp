// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#include "bimsmt/train.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace bimsmt {

PreparedConversation prepare_conversation(const Conversation& c, const Vocabulary& vocab,
                                          const RnnLm& lm_en, const RnnLm& lm_fr,
                                          const BaseNmt* frozen_base) {
  PreparedConversation p;
  p.id = c.id;
  for (std::size_t j = 0; j < c.turns.size(); ++j) {
    const Turn& t = c.turns[j];
    const RnnLm& lm = t.language == Language::kEnglish ? lm_en : lm_fr;
    p.languages.push_back(t.language);
    p.src.emplace_back();
    p.tgt.emplace_back();
    p.source_reps.emplace_back();
    if (frozen_base) p.target_reps.emplace_back();
    for (std::size_t i = 0; i < t.sentences.size(); ++i) {
      const Sentence& s = t.sentences[i];
      if (s.reference.empty()) {
        throw DataError("conversation " + c.id + " turn " + std::to_string(j) + " sentence " +
                        std::to_string(i) + " has no reference");
      }
      if (s.tokens.empty()) {
        throw DataError("conversation " + c.id + " turn " + std::to_string(j) + " sentence " +
                        std::to_string(i) + " is empty");
      }
      p.src.back().push_back(vocab.encode(s.tokens));
      p.tgt.back().push_back(vocab.encode(s.reference));
      p.source_reps.back().push_back(lm.sentence_rep(p.src.back().back()));
      if (frozen_base) {
        Tape tape(false);
        const DirectionModel& dm = frozen_base->direction(direction_from(t.language));
        p.target_reps.back().push_back(
            dm.teacher_forced(tape, std::span<const int>(p.src.back().back()), p.tgt.back().back())
                .final_state.value());
      }
    }
  }
  return p;
}

std::vector<PreparedConversation> prepare_corpus(const std::vector<Conversation>& convs,
                                                 const ConversationalModel& model) {
  std::vector<PreparedConversation> out;
  out.reserve(convs.size());
  for (const auto& c : convs) {
    out.push_back(prepare_conversation(c, model.base().vocab(), model.lm(Language::kEnglish),
                                       model.lm(Language::kForeign), &model.base()));
  }
  return out;
}

ContextState history_before(const PreparedConversation& c, std::size_t turn,
                            std::size_t sentence) {
  if (turn >= c.languages.size() || sentence > c.src[turn].size()) {
    throw ContractError("history position out of range");
  }
  ContextState s;
  const bool targets = !c.target_reps.empty();
  for (std::size_t j = 0; j <= turn; ++j) {
    s.begin_turn(c.languages[j]);
    const std::size_t n = j < turn ? c.src[j].size() : sentence;
    for (std::size_t i = 0; i < n; ++i) {
      s.observe(c.source_reps[j][i],
                targets ? std::optional<Tensor>(c.target_reps[j][i]) : std::nullopt);
    }
  }
  return s;
}

TurnLoss turn_nll(Tape& tape, const ConversationalModel& model, const PreparedConversation& c,
                  std::size_t turn, const DropoutSpec& drop, TurnCache* cache) {
  const Direction d = direction_from(c.languages.at(turn));
  const DirectionModel& dm = model.base().direction(d);
  const ContextConfig& cfg = model.config();
  TurnLoss out;
  for (std::size_t i = 0; i < c.src[turn].size(); ++i) {
    ContextState state = apply_ablation_mask(history_before(c, turn, i), cfg.ablation_mask,
                                             cfg.local_prev_sentence_only);
    EncoderStates enc = dm.encode(tape, c.src[turn][i], drop);
    EncodedHistory h = model.context().encode_history(tape, state, cache);
    ContextVector ctx = model.context().compute(tape, d, h, enc.summary);
    Injected inj = model.context().inject(tape, d, ctx);
    SentenceLoss l = dm.teacher_forced(tape, enc, c.tgt[turn][i], inj.init, drop);
    out.loss = out.loss.valid() ? add(out.loss, l.loss) : l.loss;
    out.tokens += l.tokens;
  }
  return out;
}

std::pair<double, std::size_t> conversation_nll(const ConversationalModel& model,
                                                const PreparedConversation& c) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t j = 0; j < c.languages.size(); ++j) {
    if (c.src[j].empty()) continue;
    Tape tape(false);
    TurnCache cache(tape);
    TurnLoss l = turn_nll(tape, model, c, j, {}, &cache);
    total += l.loss.value().item();
    tokens += l.tokens;
  }
  return {total, tokens};
}

double contextual_perplexity(const ConversationalModel& model,
                             const std::vector<PreparedConversation>& convs) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& c : convs) {
    auto [nll, n] = conversation_nll(model, c);
    total += nll;
    tokens += n;
  }
  return tokens == 0 ? 1.0 : std::exp(total / static_cast<double>(tokens));
}

TrainLog train_contextual(ConversationalModel& model, const std::vector<Conversation>& train,
                          const std::vector<Conversation>& dev, const ContextTrainOptions& options) {
  // Target representations come from the base parameters as they are now and
  // stay fixed for the whole run.
  const std::vector<PreparedConversation> train_p = prepare_corpus(train, model);
  const std::vector<PreparedConversation> dev_p = prepare_corpus(dev, model);
  const std::vector<Parameter*> params = model.trainable();
  auto step = [&](std::size_t k, Rng& rng, int epoch) {
    const PreparedConversation& c = train_p[k];
    double total = 0.0;
    std::size_t tokens = 0;
    for (std::size_t j = 0; j < c.languages.size(); ++j) {
      if (c.src[j].empty()) continue;
      Tape tape;
      TurnCache cache(tape);
      TurnLoss l = turn_nll(tape, model, c, j, DropoutSpec{options.dropout, true, &rng}, &cache);
      tape.backward(l.loss);
      sgd_step(params, options.schedule, epoch, options.clip_norm);
      total += l.loss.value().item();
      tokens += l.tokens;
    }
    return std::pair{total, tokens};
  };
  auto dev_ppl = [&]() -> std::optional<double> {
    if (dev_p.empty()) return std::nullopt;
    return contextual_perplexity(model, dev_p);
  };
  return run_training(params, train_p.size(), options, "context", step, dev_ppl);
}

ConversationTranslation translate_conversation(const ConversationalModel& model,
                                               const Conversation& c, bool dump_attention) {
  const ContextConfig& cfg = model.config();
  const Vocabulary& vocab = model.base().vocab();
  ConversationTranslation out;
  out.id = c.id;
  ContextState state;
  for (std::size_t j = 0; j < c.turns.size(); ++j) {
    const Turn& t = c.turns[j];
    const Direction d = direction_from(t.language);
    const DirectionModel& dm = model.base().direction(d);
    state.begin_turn(t.language);
    out.hypotheses.emplace_back();
    for (std::size_t i = 0; i < t.sentences.size(); ++i) {
      const std::vector<int> src = vocab.encode(t.sentences[i].tokens);
      Tape tape(false);
      ContextState filtered =
          apply_ablation_mask(state, cfg.ablation_mask, cfg.local_prev_sentence_only);
      EncoderStates enc = dm.encode(tape, src);
      EncodedHistory h = model.context().encode_history(tape, filtered);
      ContextVector ctx = model.context().compute(tape, d, h, enc.summary);
      Injected inj = model.context().inject(tape, d, ctx);
      out.base_fallbacks += inj.base_fallback;
      GreedyOutput g = dm.greedy(tape, enc, inj.init);
      out.hypotheses.back().push_back(vocab.decode(g.ids));
      if (dump_attention) {
        out.attention.push_back({{"turn", j},
                                 {"sentence", i},
                                 {"context", ctx.attention.to_json()},
                                 {"source_words", g.attention}});
      }
      state.observe(model.lm(t.language).sentence_rep(src), g.final_state);
    }
  }
  return out;
}

ConversationTranslation translate_conversation(const BaseNmt& model, const Conversation& c) {
  ConversationTranslation out;
  out.id = c.id;
  for (const Turn& t : c.turns) {
    out.hypotheses.emplace_back();
    for (const Sentence& s : t.sentences) {
      out.hypotheses.back().push_back(
          model.vocab().decode(greedy_decode(model, direction_from(t.language), s.tokens)));
    }
  }
  return out;
}

std::vector<ConversationTranslation> translate_corpus(
    const std::vector<Conversation>& convs,
    const std::function<ConversationTranslation(const Conversation&)>& translate,
    std::size_t jobs) {
  std::vector<ConversationTranslation> out(convs.size());
  jobs = std::max<std::size_t>(1, std::min(jobs, convs.size()));
  if (jobs == 1) {
    for (std::size_t k = 0; k < convs.size(); ++k) out[k] = translate(convs[k]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t k = next++; k < convs.size(); k = next++) {
        try {
          out[k] = translate(convs[k]);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
  return out;
}

Conversation with_hypotheses(const Conversation& c, const ConversationTranslation& t) {
  Conversation out = c;
  if (t.hypotheses.size() != c.turns.size()) throw ContractError("translation/turn count mismatch");
  for (std::size_t j = 0; j < c.turns.size(); ++j) {
    if (t.hypotheses[j].size() != c.turns[j].sentences.size()) {
      throw ContractError("translation/sentence count mismatch");
    }
    for (std::size_t i = 0; i < c.turns[j].sentences.size(); ++i) {
      out.turns[j].sentences[i].reference = t.hypotheses[j][i];
    }
  }
  return out;
}

AlignedOutputs align_outputs(const std::vector<Conversation>& refs,
                             const std::vector<Conversation>& hyps) {
  std::map<std::string, const Conversation*> by_id;
  for (const auto& h : hyps) by_id[h.id] = &h;
  if (by_id.size() != hyps.size()) throw DataError("duplicate conversation ids in hypotheses");
  AlignedOutputs out;
  for (const auto& r : refs) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) throw DataError("no hypothesis for conversation " + r.id);
    const Conversation& h = *it->second;
    if (h.turns.size() != r.turns.size()) throw DataError("turn count differs in " + r.id);
    for (std::size_t j = 0; j < r.turns.size(); ++j) {
      const Turn& rt = r.turns[j];
      const Turn& ht = h.turns[j];
      if (rt.language != ht.language || rt.sentences.size() != ht.sentences.size()) {
        throw DataError("turn " + std::to_string(j) + " of " + r.id + " does not match");
      }
      const int d = static_cast<int>(direction_from(rt.language));
      for (std::size_t i = 0; i < rt.sentences.size(); ++i) {
        out.hyps[d].push_back(ht.sentences[i].reference);
        out.refs[d].push_back(rt.sentences[i].reference);
        out.all_hyps.push_back(ht.sentences[i].reference);
        out.all_refs.push_back(rt.sentences[i].reference);
      }
    }
  }
  if (by_id.size() != refs.size()) throw DataError("hypotheses contain unknown conversations");
  return out;
}

nlohmann::ordered_json EvalScores::to_json() const {
  nlohmann::ordered_json j;
  j["overall"] = overall;
  j["en2fr"] = en2fr;
  j["fr2en"] = fr2en;
  return j;
}

EvalScores score_outputs(const AlignedOutputs& out, bool smooth) {
  auto score = [&](const std::vector<Tokens>& h, const std::vector<Tokens>& r) {
    return h.empty() ? 0.0 : bleu(h, r, smooth).score;
  };
  EvalScores s;
  s.overall = score(out.all_hyps, out.all_refs);
  s.en2fr = score(out.hyps[0], out.refs[0]);
  s.fr2en = score(out.hyps[1], out.refs[1]);
  return s;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["bleu"] = bleu.to_json();
  if (perplexity) j["perplexity"] = *perplexity;
  if (significance) j["significance"] = significance->to_json();
  if (!token_diff.empty()) j["token_diff"] = bimsmt::to_json(token_diff);
  return j;
}

std::vector<AblationMask> default_ablation_masks() {
  return {AblationMask::all(),
          {true, false, false},
          {false, true, false},
          {false, false, true}};
}

namespace {
std::string mask_label(const AblationMask& m) {
  if (m.is_all()) return "Complete Context";
  if (m == AblationMask{true, false, false}) return "Current Turn";
  if (m == AblationMask{false, true, false}) return "Current Language from Previous Turns";
  if (m == AblationMask{false, false, true}) return "Other Language from Previous Turns";
  return m.to_string();
}
}  // namespace

std::vector<AblationRow> run_ablation(ConversationalModel& model, const BaseNmt* base,
                                      const std::vector<Conversation>& convs,
                                      const std::vector<AblationMask>& masks, std::size_t jobs,
                                      bool smooth) {
  std::vector<AblationRow> rows;
  auto finish = [&](AblationRow row, const std::vector<ConversationTranslation>& tr) {
    for (std::size_t k = 0; k < convs.size(); ++k) row.hypotheses.push_back(with_hypotheses(convs[k], tr[k]));
    row.scores = score_outputs(align_outputs(convs, row.hypotheses), smooth);
    rows.push_back(std::move(row));
  };
  if (base) {
    finish(AblationRow{"Base Model", std::nullopt, {}, {}},
           translate_corpus(convs, [&](const Conversation& c) { return translate_conversation(*base, c); },
                            jobs));
  }
  const AblationMask saved = model.config().ablation_mask;
  const bool saved_local = model.config().local_prev_sentence_only;
  try {
    for (const AblationMask& m : masks) {
      model.set_ablation(m, saved_local);
      finish(AblationRow{mask_label(m), m, {}, {}},
             translate_corpus(convs, [&](const Conversation& c) { return translate_conversation(model, c); },
                              jobs));
    }
  } catch (...) {
    model.set_ablation(saved, saved_local);
    throw;
  }
  model.set_ablation(saved, saved_local);
  return rows;
}

nlohmann::ordered_json ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json e;
    e["label"] = r.label;
    e["mask"] = r.mask ? r.mask->to_string() : "base";
    e["bleu"] = r.scores.to_json();
    j.push_back(e);
  }
  return j;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::size_t width = 7;
  for (const auto& r : rows) width = std::max(width, r.label.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "Context" << "  Overall    En->F    F->En\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.label << std::right << "  "
       << std::setw(7) << r.scores.overall << "  " << std::setw(7) << r.scores.en2fr << "  "
       << std::setw(7) << r.scores.fr2en << "\n";
  }
  return os.str();
}

}  // namespace bimsmt
