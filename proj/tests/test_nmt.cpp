// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "bimsmt/nmt.hpp"
#include "support/gradcheck.hpp"
#include "support/oracle.hpp"

namespace bimsmt {
namespace {

using oracle::Vec;

Vocabulary toy_vocab(std::size_t n) {
  std::vector<std::string> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back("w" + std::to_string(i));
  return Vocabulary(t);
}

ModelDims small(std::size_t vocab, std::size_t h = 5) { return {vocab, 4, h, 3}; }

// Scales every parameter so activations leave the near-linear regime.
void spread(ParameterSet& ps, double factor) {
  for (auto& [_, p] : ps)
    for (auto& v : p.value.data()) v *= factor;
  Rng rng(123);
  for (auto& [_, p] : ps)
    if (p.value.rank() == 1)
      for (auto& v : p.value.data()) v = rng.uniform(-0.3, 0.3);
}

void expect_near(const Tensor& t, const Vec& v, double tol) {
  ASSERT_EQ(t.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(t[i], v[i], tol) << "entry " << i;
}

const std::string kP = "en2fr.";

TEST(Gru, StepMatchesPlainLoopOracle) {
  BaseNmt m(toy_vocab(6), small(10), 3);
  spread(m.params(), 5.0);
  Tape tape;
  const Vec x{0.3, -0.2, 0.5, 0.1}, h{0.2, -0.4, 0.0, 0.9, -0.1};
  // A private GRU loaded with the encoder's forward weights.
  ParameterSet own;
  Rng rng(1);
  const Gru gru(own, "g.", 4, 5, rng);
  for (auto& [name, p] : own) p.value = m.params().at(kP + "enc.fwd." + name.substr(2)).value;
  Var out = gru.step(tape, tape.constant(Tensor::vector(x)), tape.constant(Tensor::vector(h)));
  expect_near(out.value(), oracle::gru_step(m.params(), kP + "enc.fwd.", x, h), 1e-12);
}

TEST(Gru, ZeroParametersGiveBiasOnlyStates) {
  ParameterSet ps;
  Rng rng(2);
  Gru gru(ps, "g.", 3, 2, rng);
  for (auto& [name, p] : ps) p.value.fill(name.find(".b_") != std::string::npos ? 0.4 : 0.0);
  Tape tape;
  const std::vector<Var> xs{tape.constant(Tensor::vector({1, 2, 3})),
                            tape.constant(Tensor::vector({-5, 0, 9}))};
  const auto states = run_gru(tape, gru, xs);
  // With zero weights the first step ignores the input entirely.
  const double z = 1.0 / (1.0 + std::exp(-0.4));
  EXPECT_NEAR(states[0].value()[0], z * std::tanh(0.4), 1e-15);
  EXPECT_EQ(states[0].value()[0], states[0].value()[1]);
}

TEST(Encoder, MatchesTwoPassOracle) {
  BaseNmt m(toy_vocab(6), small(10), 4);
  spread(m.params(), 6.0);
  const std::vector<int> src{4, 7, 5, 9};
  Tape tape(false);
  const EncoderStates enc = m.direction(Direction::kEnToForeign).encode(tape, src);
  std::vector<Vec> xs;
  for (int id : src) xs.push_back(oracle::row_of(m.params().at(kP + "E_S").value, id));
  const auto expect = oracle::bigru(m.params(), kP + "enc.fwd.", kP + "enc.bwd.", xs, 5);
  ASSERT_EQ(enc.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) expect_near(enc.states[i].value(), expect[i], 1e-12);
}

TEST(Encoder, SingleTokenSentence) {
  BaseNmt m(toy_vocab(6), small(10), 4);
  Tape tape(false);
  const EncoderStates enc = m.direction(Direction::kEnToForeign).encode(tape, std::vector<int>{6});
  ASSERT_EQ(enc.size(), 1u);
  EXPECT_EQ(enc.summary.value(), enc.states[0].value());
}

TEST(Encoder, RejectsEmptyAndOutOfRange) {
  BaseNmt m(toy_vocab(6), small(10), 4);
  Tape tape(false);
  const DirectionModel& dm = m.direction(Direction::kEnToForeign);
  EXPECT_THROW(dm.encode(tape, std::vector<int>{}), ContractError);
  EXPECT_THROW(dm.encode(tape, std::vector<int>{10}), ContractError);
}

EncoderStates manual_states(Tape& tape, const BaseNmt& m, const std::vector<Vec>& hs) {
  EncoderStates enc;
  for (const auto& h : hs) enc.states.push_back(tape.constant(Tensor::vector(h)));
  enc.matrix = columns(enc.states);
  enc.summary = enc.states.back();
  enc.keys = matmul(tape.parameter(const_cast<Parameter&>(m.params().at(kP + "att.U_a"))), enc.matrix);
  return enc;
}

TEST(Attention, SingleSourceTokenGetsAllWeight) {
  BaseNmt m(toy_vocab(6), small(10), 5);
  Tape tape(false);
  const Vec h{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  const EncoderStates enc = manual_states(tape, m, {h});
  const AttentionResult a = m.direction(Direction::kEnToForeign)
                                .attend(tape, enc, tape.constant(Tensor::vector({1, 0, 0, 0, 0})));
  EXPECT_EQ(a.weights.value()[0], 1.0);
  expect_near(a.context.value(), h, 0.0);
}

TEST(Attention, IdenticalStatesSplitEvenly) {
  BaseNmt m(toy_vocab(6), small(10), 5);
  Tape tape(false);
  const Vec h(10, 0.25);
  const EncoderStates enc = manual_states(tape, m, {h, h});
  const AttentionResult a = m.direction(Direction::kEnToForeign)
                                .attend(tape, enc, tape.constant(Tensor::vector({1, 2, 3, 4, 5})));
  EXPECT_EQ(a.weights.value()[0], 0.5);
  EXPECT_EQ(a.weights.value()[1], 0.5);
}

TEST(Attention, RandomCaseMatchesWeightedSumOracle) {
  BaseNmt m(toy_vocab(6), small(10), 6);
  spread(m.params(), 8.0);
  Rng rng(77);
  std::vector<Vec> hs(4, Vec(10));
  for (auto& h : hs)
    for (auto& v : h) v = rng.uniform(-1, 1);
  const Vec s{0.5, -0.5, 0.25, 0.1, -0.9};
  Tape tape(false);
  const EncoderStates enc = manual_states(tape, m, hs);
  const AttentionResult a =
      m.direction(Direction::kEnToForeign).attend(tape, enc, tape.constant(Tensor::vector(s)));
  const ParameterSet& ps = m.params();
  const Vec q = oracle::plus(oracle::mv(ps.at(kP + "att.W_a").value, s), oracle::vec(ps.at(kP + "att.b_a").value));
  Vec scores;
  for (const auto& h : hs) {
    const Vec e = oracle::th(oracle::plus(oracle::mv(ps.at(kP + "att.U_a").value, h), q));
    scores.push_back(oracle::mv(ps.at(kP + "att.v_a").value, e)[0]);
  }
  const Vec alpha = oracle::softmax(scores);
  Vec c(10, 0.0);
  for (std::size_t mth = 0; mth < 4; ++mth)
    for (std::size_t k = 0; k < 10; ++k) c[k] += alpha[mth] * hs[mth][k];
  expect_near(a.weights.value(), alpha, 1e-12);
  expect_near(a.context.value(), c, 1e-12);
}

TEST(Decoder, StepLogitsMatchOracle) {
  BaseNmt m(toy_vocab(6), small(10), 7);
  spread(m.params(), 6.0);
  const ParameterSet& ps = m.params();
  const std::vector<int> src{4, 8, 6};
  Tape tape(false);
  const DirectionModel& dm = m.direction(Direction::kEnToForeign);
  const EncoderStates enc = dm.encode(tape, src);
  const StepResult st = dm.decode_step(tape, dm.initial_state(tape), Vocabulary::kBos, enc);
  EXPECT_EQ(st.logits.value().size(), 10u);

  std::vector<Vec> xs;
  for (int id : src) xs.push_back(oracle::row_of(ps.at(kP + "E_S").value, id));
  const auto hs = oracle::bigru(ps, kP + "enc.fwd.", kP + "enc.bwd.", xs, 5);
  const Vec s0(5, 0.0);
  const Vec q = oracle::plus(oracle::mv(ps.at(kP + "att.W_a").value, s0), oracle::vec(ps.at(kP + "att.b_a").value));
  Vec scores;
  for (const auto& h : hs) {
    scores.push_back(oracle::mv(ps.at(kP + "att.v_a").value,
                                oracle::th(oracle::plus(oracle::mv(ps.at(kP + "att.U_a").value, h), q)))[0]);
  }
  const Vec alpha = oracle::softmax(scores);
  Vec c(10, 0.0);
  for (std::size_t i = 0; i < hs.size(); ++i)
    for (std::size_t k = 0; k < 10; ++k) c[k] += alpha[i] * hs[i][k];
  const Vec emb = oracle::row_of(ps.at(kP + "E_T").value, Vocabulary::kBos);
  const Vec l1 = oracle::gru_step(ps, kP + "dec.l1.", oracle::cat(emb, c), s0);
  const Vec l2 = oracle::gru_step(ps, kP + "dec.l2.", l1, s0);
  const Vec u = oracle::th(oracle::plus(oracle::plus(l2, oracle::mv(ps.at(kP + "out.W_uc").value, c)),
                                        oracle::mv(ps.at(kP + "out.W_un").value, emb)));
  const Vec logits = oracle::plus(oracle::mv(ps.at(kP + "out.W_y").value, u), oracle::vec(ps.at(kP + "out.b_y").value));
  expect_near(st.logits.value(), logits, 1e-12);
  expect_near(st.state.top().value(), l2, 1e-12);
}

TEST(Decoder, AddDecStepMatchesOracle) {
  BaseNmt m(toy_vocab(6), small(10), 8);
  spread(m.params(), 4.0);
  const ParameterSet& ps = m.params();
  Tape tape(false);
  const DirectionModel& dm = m.direction(Direction::kEnToForeign);
  const EncoderStates enc = dm.encode(tape, std::vector<int>{5});
  const Vec ez{0.3, -0.1, 0.2, 0.0, 0.5}, er{-0.4, 0.1, 0.1, 0.2, 0.0}, eh{0.9, -0.9, 0.3, 0.3, -0.2};
  const Vec s0{0.1, 0.2, -0.3, 0.0, 0.4};
  DecoderInit init;
  init.initial_state = tape.constant(Tensor::vector(s0));
  init.add_dec = GateInputs{tape.constant(Tensor::vector(ez)), tape.constant(Tensor::vector(er)),
                            tape.constant(Tensor::vector(eh))};
  const StepResult st = dm.decode_step(tape, dm.initial_state(tape, init), Vocabulary::kBos, enc, init);
  // Single source position: attention context equals h_1.
  const Vec c = oracle::vec(enc.states[0].value());
  const Vec emb = oracle::row_of(ps.at(kP + "E_T").value, Vocabulary::kBos);
  const Vec l1 = oracle::gru_step(ps, kP + "dec.l1.", oracle::cat(emb, c), s0, &ez, &er, &eh);
  expect_near(st.state.layers[0].value(), l1, 1e-12);
  expect_near(st.state.layers[1].value(), oracle::gru_step(ps, kP + "dec.l2.", l1, s0), 1e-12);
}

TEST(Decoder, FullSentenceLossGradientsMatchFiniteDifferences) {
  BaseNmt m(toy_vocab(4), {8, 3, 3, 2}, 9);
  spread(m.params(), 5.0);
  const DirectionModel& dm = m.direction(Direction::kEnToForeign);
  const std::vector<int> src{4, 6, 5}, tgt{7, 4};
  auto res = testing::check_gradients(dm.parameters(), [&](Tape& t) {
    return dm.teacher_forced(t, src, tgt).loss;
  });
  EXPECT_TRUE(res.ok()) << res.failures << "/" << res.checked << " worst " << res.worst;
}

TEST(Decoder, OutputWeightGradientMatchesFiniteDifferences) {
  BaseNmt m(toy_vocab(6), small(10), 10);
  const DirectionModel& dm = m.direction(Direction::kEnToForeign);
  Parameter* wy = &m.params().at(kP + "out.W_y");
  auto res = testing::check_gradients({wy}, [&](Tape& t) {
    return dm.teacher_forced(t, std::vector<int>{4, 5}, std::vector<int>{6, 7, 8}).loss;
  });
  EXPECT_TRUE(res.ok()) << res.worst;
}

TEST(Decoder, TeacherForcedCountsEos) {
  BaseNmt m(toy_vocab(6), small(10), 10);
  Tape tape(false);
  const SentenceLoss l =
      m.direction(Direction::kEnToForeign).teacher_forced(tape, std::vector<int>{4}, std::vector<int>{5, 6});
  EXPECT_EQ(l.tokens, 3u);
  EXPECT_GT(l.loss.value().item(), 0.0);
}

TEST(Decoder, DirectionsShareNoParameters) {
  BaseNmt m(toy_vocab(6), small(10), 10);
  for (Parameter* p : m.direction(Direction::kEnToForeign).parameters())
    EXPECT_EQ(p->name.rfind("en2fr.", 0), 0u) << p->name;
  for (Parameter* p : m.direction(Direction::kForeignToEn).parameters())
    EXPECT_EQ(p->name.rfind("fr2en.", 0), 0u) << p->name;
}

TEST(Greedy, RespectsCapAndIsDeterministic) {
  BaseNmt m(toy_vocab(6), small(10), 11);
  // Forbid </s> so decoding never terminates on its own.
  m.params().at(kP + "out.b_y").value[Vocabulary::kEos] = -100.0;
  Tape tape(false);
  const DirectionModel& dm = m.direction(Direction::kEnToForeign);
  const GreedyOutput a = dm.greedy(tape, std::vector<int>{4, 5}, {}, 7);
  EXPECT_EQ(a.ids.size(), 7u);
  EXPECT_FALSE(a.terminated);
  EXPECT_EQ(dm.greedy(tape, std::vector<int>{4, 5}).ids.size(), 2u * 2 + 5);
  const GreedyOutput b = dm.greedy(tape, std::vector<int>{4, 5}, {}, 7);
  EXPECT_EQ(a.ids, b.ids);
  EXPECT_EQ(a.final_state, b.final_state);
}

TEST(Training, OverfitsOnePairAndDecodesIt) {
  const Vocabulary v = toy_vocab(6);
  BaseNmt m(v, {v.size(), 16, 16, 8}, 12);
  const std::vector<SentencePair> pairs{{{4, 5, 6}, {7, 8, 9}}};
  TrainOptions o;
  o.schedule = {0.5, 1.0, 1, 150};
  o.dropout = 0.0;
  train_base(m, Direction::kEnToForeign, pairs, {}, o);
  const DirectionModel& dm = m.direction(Direction::kEnToForeign);
  Tape tape(false);
  const SentenceLoss l = dm.teacher_forced(tape, pairs[0].src, pairs[0].tgt);
  EXPECT_LT(l.loss.value().item() / l.tokens, 0.01);
  EXPECT_EQ(dm.greedy(tape, pairs[0].src).ids, pairs[0].tgt);
}

TEST(Training, BestEpochIsMinimumDevAndOtherDirectionUntouched) {
  const Vocabulary v = toy_vocab(6);
  BaseNmt m(v, {v.size(), 8, 8, 4}, 13);
  const auto before = m.params().snapshot();
  const std::vector<SentencePair> train{{{4, 5}, {6, 7}}, {{5, 6}, {7, 8}}, {{8, 9}, {4, 4}}};
  const std::vector<SentencePair> dev{{{4, 6}, {6, 8}}};
  TrainOptions o;
  o.schedule = {0.5, 0.5, 3, 8};
  const TrainLog log = train_base(m, Direction::kEnToForeign, train, dev, o);
  ASSERT_EQ(log.epochs.size(), 8u);
  double best = 1e300;
  int arg = 0;
  for (const auto& e : log.epochs) {
    EXPECT_DOUBLE_EQ(e.lr, o.schedule.lr(e.epoch));
    if (e.dev_perplexity < best) best = e.dev_perplexity, arg = e.epoch;
  }
  EXPECT_EQ(log.best_epoch, arg);
  EXPECT_EQ(log.best_dev_perplexity, best);
  EXPECT_DOUBLE_EQ(perplexity(m.direction(Direction::kEnToForeign), dev), best);
  for (auto& [name, t] : m.params())
    if (name.rfind("fr2en.", 0) == 0) EXPECT_EQ(t.value, before.at(name)) << name;
}

TEST(Training, SameSeedSameParameters) {
  const Vocabulary v = toy_vocab(6);
  const std::vector<SentencePair> train{{{4, 5}, {6, 7}}, {{5, 6}, {7, 8}}};
  TrainOptions o;
  o.schedule = {0.5, 0.5, 1, 3};
  BaseNmt a(v, {v.size(), 6, 6, 3}, 14), b(v, {v.size(), 6, 6, 3}, 14);
  train_base(a, Direction::kForeignToEn, train, {}, o);
  train_base(b, Direction::kForeignToEn, train, {}, o);
  EXPECT_EQ(a.params().snapshot(), b.params().snapshot());
}

TEST(Training, LearningRateAtEpochSix) {
  EXPECT_DOUBLE_EQ(SgdSchedule::base().lr(6), 0.05);
}

TEST(BaseCheckpoint, RoundTripPreservesDecoding) {
  const Vocabulary v = toy_vocab(6);
  BaseNmt m(v, {v.size(), 6, 6, 3}, 15);
  spread(m.params(), 4.0);
  const Checkpoint c = m.to_checkpoint();
  const BaseNmt back = BaseNmt::from_checkpoint(decode_checkpoint(encode_checkpoint(c)));
  EXPECT_EQ(encode_checkpoint(back.to_checkpoint()), encode_checkpoint(c));
  EXPECT_EQ(greedy_decode(m, Direction::kEnToForeign, {"w0", "w3"}),
            greedy_decode(back, Direction::kEnToForeign, {"w0", "w3"}));
  Checkpoint wrong = c;
  wrong.metadata["kind"] = "rnnlm";
  EXPECT_THROW(BaseNmt::from_checkpoint(wrong), ConfigError);
}

TEST(RnnLm, RepresentationIsTwiceHidden) {
  const Vocabulary v = toy_vocab(6);
  RnnLm lm(v, Language::kEnglish, {v.size(), 256, 256, 128}, 16);
  EXPECT_EQ(lm.sentence_rep({"w1", "w2"}, Language::kEnglish).size(), 512u);
}

TEST(RnnLm, IdenticalSentencesIdenticalReps) {
  const Vocabulary v = toy_vocab(6);
  RnnLm lm(v, Language::kForeign, {v.size(), 5, 4, 2}, 17);
  EXPECT_EQ(lm.sentence_rep({"w1", "w2"}, Language::kForeign),
            lm.sentence_rep({"w1", "w2"}, Language::kForeign));
  EXPECT_NE(lm.sentence_rep({"w1", "w2"}, Language::kForeign),
            lm.sentence_rep({"w2", "w1"}, Language::kForeign));
  EXPECT_THROW(lm.sentence_rep({"w1"}, Language::kEnglish), ContractError);
}

TEST(RnnLm, RepresentationMatchesOracle) {
  const Vocabulary v = toy_vocab(6);
  RnnLm lm(v, Language::kEnglish, {v.size(), 3, 4, 2}, 18);
  spread(lm.params(), 6.0);
  const std::vector<int> ids{4, 7, 9};
  const Tensor& e = lm.params().at("rnnlm.en.E").value;
  Vec f(4, 0.0), b(4, 0.0);
  f = oracle::gru_step(lm.params(), "rnnlm.en.fwd.", oracle::row_of(e, Vocabulary::kBos), f);
  for (int id : ids) f = oracle::gru_step(lm.params(), "rnnlm.en.fwd.", oracle::row_of(e, id), f);
  b = oracle::gru_step(lm.params(), "rnnlm.en.bwd.", oracle::row_of(e, Vocabulary::kEos), b);
  for (auto it = ids.rbegin(); it != ids.rend(); ++it)
    b = oracle::gru_step(lm.params(), "rnnlm.en.bwd.", oracle::row_of(e, *it), b);
  expect_near(lm.sentence_rep(ids), oracle::cat(f, b), 1e-12);
}

TEST(RnnLm, NllGradientsMatchFiniteDifferences) {
  const Vocabulary v = toy_vocab(3);
  RnnLm lm(v, Language::kEnglish, {v.size(), 3, 3, 2}, 19);
  spread(lm.params(), 5.0);
  std::vector<Parameter*> ps;
  for (auto& [_, p] : lm.params()) ps.push_back(&p);
  auto res = testing::check_gradients(ps, [&](Tape& t) { return lm.nll(t, std::vector<int>{4, 6, 5}).first; });
  EXPECT_TRUE(res.ok()) << res.worst;
}

TEST(RnnLm, MemorisesSingleSentence) {
  const Vocabulary v = toy_vocab(8);
  RnnLm lm(v, Language::kEnglish, {v.size(), 16, 16, 8}, 20);
  const std::vector<Tokens> corpus{{"w0", "w1", "w2", "w3", "w4"}};
  TrainOptions o;
  o.schedule = {0.5, 1.0, 1, 200};
  o.dropout = 0.0;
  train_rnnlm(lm, corpus, {}, o);
  EXPECT_LT(lm.perplexity(corpus), 1.2);
}

TEST(RnnLm, ApproachesEntropyFloorOnAmbiguousCorpus) {
  // Three sentences with distinct first and last tokens: the first forward
  // and first backward prediction of each carry ln 3 nats that no model can
  // remove, over 2 * (3 + 2 + 4 + 3) = 24 predictions. Floor: 3^(1/4).
  const Vocabulary v = toy_vocab(8);
  RnnLm lm(v, Language::kEnglish, {v.size(), 16, 16, 8}, 20);
  const std::vector<Tokens> corpus{{"w0", "w1", "w2"}, {"w3", "w4"}, {"w5", "w6", "w7", "w1"}};
  TrainOptions o;
  o.schedule = {0.5, 1.0, 1, 200};
  o.dropout = 0.0;
  train_rnnlm(lm, corpus, {}, o);
  const double floor = std::pow(3.0, 0.25);
  EXPECT_GE(lm.perplexity(corpus), floor - 1e-9);
  EXPECT_LT(lm.perplexity(corpus), floor * 1.03);
}

}  // namespace
}  // namespace bimsmt
