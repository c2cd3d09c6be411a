// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "bimsmt/checkpoint.hpp"
#include "bimsmt/corpus.hpp"

namespace bimsmt {
namespace {

namespace fs = std::filesystem;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fixture(const std::string& name) { return fs::path(BIMSMT_FIXTURES) / name; }

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("bimsmt_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Sentence sent(const std::string& src, const std::string& ref) {
  return {split_tokens(src), split_tokens(ref), true};
}

// Speaker blocks in order, every block one turn of `n` two-token sentences.
std::vector<TaggedBlock> speakers(const std::vector<int>& ids, std::size_t n = 1) {
  std::vector<TaggedBlock> out;
  for (int id : ids) {
    TaggedBlock b;
    b.chapter = 1;
    b.speaker_id = id;
    for (std::size_t i = 0; i < n; ++i) b.sentences.push_back(sent("a b", "c d"));
    out.push_back(b);
  }
  return out;
}

Conversation synthetic(int k) {
  Conversation c;
  c.id = "syn-" + std::to_string(k);
  c.turns.push_back({1, Language::kEnglish, {sent("hello there", "bonjour toi")}, false});
  c.turns.push_back({2, Language::kForeign, {sent("oui merci", "yes thanks")}, false});
  return c;
}

TEST(Parse, ThreeSpeakerFixtureMatchesHandParse) {
  const auto blocks = parse_tagged_file(read_file(fixture("three_speakers.txt")));
  // (speaker, language, heading, source, reference) per sentence, by hand.
  using Row = std::tuple<int, Language, bool, std::string, std::string>;
  const std::vector<Row> expected = {
      {-1, Language::kEnglish, true, "Opening", "Ouverture"},
      {1, Language::kEnglish, false, "Good morning everyone .", "Bonjour à tous ."},
      {1, Language::kEnglish, false, "We begin now .", "Nous commençons maintenant ."},
      {2, Language::kForeign, false, "Merci , Monsieur le Président .", "Thank you , Chair ."},
      {2, Language::kForeign, false, "Oui", "Yes"},
      {2, Language::kForeign, false, "J' ai une question .", "I have a question ."},
      {3, Language::kEnglish, false, "Please go ahead .", "Allez-y , je vous prie ."},
      {2, Language::kForeign, false, "Quand a lieu le vote ?", "When is the vote ?"},
  };
  std::vector<Row> got;
  std::set<int> ids;
  for (const auto& b : blocks) {
    if (!b.heading) ids.insert(b.speaker_id);
    for (const auto& s : b.sentences) {
      got.emplace_back(b.speaker_id, b.language, b.heading, join_tokens(s.tokens),
                       join_tokens(s.reference));
    }
  }
  EXPECT_EQ(got, expected);
  EXPECT_EQ(ids.size(), 3u);
  EXPECT_EQ(blocks.size(), 5u);
}

TEST(Parse, ForeignTagSwapsSides) {
  const auto blocks = parse_tagged_file(
      "<SPEAKER ID=\"1\">\nthe house ||| la maison\n"
      "<SPEAKER ID=\"2\" LANGUAGE=\"FR\">\nthe car ||| la voiture\n");
  ASSERT_EQ(blocks.size(), 2u);
  EXPECT_EQ(blocks[0].language, Language::kEnglish);
  EXPECT_EQ(blocks[1].language, Language::kForeign);
  EXPECT_EQ(join_tokens(blocks[1].sentences[0].tokens), "la voiture");
  EXPECT_EQ(join_tokens(blocks[1].sentences[0].reference), "the car");
}

TEST(Parse, UntaggedFileIsOneEnglishBlock) {
  const auto blocks = parse_tagged_file("one two ||| un deux\nthree four ||| trois quatre\n");
  ASSERT_EQ(blocks.size(), 1u);
  EXPECT_EQ(blocks[0].language, Language::kEnglish);
  EXPECT_EQ(blocks[0].sentences.size(), 2u);
}

TEST(Parse, ErrorsCarryLineNumbers) {
  try {
    parse_tagged_file("<SPEAKER ID=\"1\">\nno separator here\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse_tagged_file("<SPEAKER NAME=\"x\">\n"), ParseError);
  EXPECT_THROW(parse_tagged_file("<SPEAKER ID=\"x1\">\n"), ParseError);
  EXPECT_THROW(parse_tagged_file("<BOGUS>\n"), ParseError);
}

TEST(Segment, FourSpeakersStayTogether) {
  EXPECT_EQ(segment_conversations(speakers({1, 2, 3, 4}), 5).size(), 1u);
}

TEST(Segment, SevenSpeakersCutGreedily) {
  const auto convs = segment_conversations(speakers({1, 2, 3, 4, 5, 6, 7}), 5);
  ASSERT_EQ(convs.size(), 2u);
  EXPECT_EQ(convs[0].speaker_count(), 5u);
  EXPECT_EQ(convs[1].speaker_count(), 2u);
  EXPECT_EQ(convs[0].id, "conv-1-0");
  EXPECT_EQ(convs[1].id, "conv-1-1");
}

TEST(Segment, AlternatingPairCountsSpeakersNotTurns) {
  const auto convs = segment_conversations(speakers({1, 2, 1, 2, 1, 2, 1, 2, 1, 2}), 5);
  ASSERT_EQ(convs.size(), 1u);
  EXPECT_EQ(convs[0].turns.size(), 10u);
}

TEST(Segment, ConsecutiveBlocksOfOneSpeakerMerge) {
  const auto convs = segment_conversations(speakers({1, 1, 2}, 2), 5);
  ASSERT_EQ(convs.size(), 1u);
  ASSERT_EQ(convs[0].turns.size(), 2u);
  EXPECT_EQ(convs[0].turns[0].sentences.size(), 4u);
}

TEST(Segment, ZeroMaxSpeakersRejected) {
  EXPECT_THROW(segment_conversations(speakers({1}), 0), ConfigError);
}

TEST(Clean, SingleTokenSentenceRemoved) {
  Conversation c;
  c.turns.push_back({1, Language::kEnglish, {sent("yes", "oui"), sent("a b", "c d")}, false});
  const auto out = clean(c, 100);
  ASSERT_TRUE(out);
  EXPECT_EQ(out->sentence_count(), 1u);
}

TEST(Clean, OverlongSentenceRejectsConversation) {
  Tokens longer(101, "w");
  Conversation c;
  c.turns.push_back({1, Language::kEnglish, {sent("a b", "c d")}, false});
  c.turns.push_back({2, Language::kEnglish, {{longer, {"x", "y"}, true}}, false});
  EXPECT_FALSE(clean(c, 100));
  Tokens exact(100, "w");
  c.turns[1].sentences[0].tokens = exact;
  EXPECT_TRUE(clean(c, 100));
}

TEST(Clean, ShortAndMediumSentencesUnchanged) {
  Conversation c;
  c.id = "x";
  for (std::size_t n = 2; n < 100; n += 13) {
    c.turns.push_back({static_cast<int>(n), Language::kEnglish,
                       {{Tokens(n, "t"), Tokens(n, "u"), true}}, false});
  }
  const auto out = clean(c, 100);
  ASSERT_TRUE(out);
  EXPECT_EQ(*out, c);
}

TEST(Clean, HeadingTurnsDropped) {
  Conversation c;
  c.turns.push_back({-1, Language::kEnglish, {sent("The title", "Le titre")}, true});
  c.turns.push_back({1, Language::kEnglish, {sent("a b", "c d")}, false});
  const auto out = clean(c, 100);
  ASSERT_TRUE(out);
  EXPECT_EQ(out->turns.size(), 1u);
}

TEST(Split, HundredFiveGivesHundredTwoThree) {
  std::vector<Conversation> convs;
  for (int k = 0; k < 105; ++k) convs.push_back(synthetic(k));
  const auto s = split_corpus(convs, parse_ratio("100:2:3"), 42);
  EXPECT_EQ(s.train.size(), 100u);
  EXPECT_EQ(s.dev.size(), 2u);
  EXPECT_EQ(s.test.size(), 3u);
}

TEST(Split, TwoHundredTenScales) {
  std::vector<Conversation> convs;
  for (int k = 0; k < 210; ++k) convs.push_back(synthetic(k));
  const auto s = split_corpus(convs, {}, 42);
  EXPECT_EQ(s.train.size(), 200u);
  EXPECT_EQ(s.dev.size(), 4u);
  EXPECT_EQ(s.test.size(), 6u);
}

TEST(Split, SameSeedSameMembershipAndNoLoss) {
  std::vector<Conversation> convs;
  for (int k = 0; k < 105; ++k) convs.push_back(synthetic(k));
  const auto a = split_corpus(convs, {}, 9);
  const auto b = split_corpus(convs, {}, 9);
  EXPECT_EQ(a.dev, b.dev);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.train, b.train);
  std::set<std::string> ids;
  for (const auto* part : {&a.train, &a.dev, &a.test})
    for (const auto& c : *part) ids.insert(c.id);
  EXPECT_EQ(ids.size(), 105u);
  EXPECT_NE(split_corpus(convs, {}, 10).dev, a.dev);
}

TEST(Split, BadRatiosRejected) {
  EXPECT_THROW(parse_ratio("100:2"), ConfigError);
  EXPECT_THROW(parse_ratio("100:0:3"), ConfigError);
  EXPECT_THROW(parse_ratio("a:b:c"), ConfigError);
}

TEST(Vocab, MinCountMapsRareTokensToUnk) {
  const Vocabulary v = build_vocab({{"a", "a", "b", "a"}}, "en", {2, 0});
  EXPECT_EQ(v.regular_tokens(), std::vector<std::string>{"a"});
  EXPECT_EQ(v.id("b"), Vocabulary::kUnk);
  EXPECT_EQ(v.size(), 5u);
}

TEST(Vocab, MaxSizeKeepsMostFrequent) {
  const Vocabulary v = build_vocab({{"a", "a", "a", "b"}}, "en", {1, 1});
  EXPECT_EQ(v.regular_tokens(), std::vector<std::string>{"a"});
}

TEST(Vocab, FixtureCorpusMatchesHandCount) {
  // Tokens seen at least 3 times on either side of the golden training split,
  // counted outside this code base; ties break by byte order.
  const auto convs = read_jsonl(fixture("europarl_golden/train.jsonl"));
  const Vocabulary v = build_vocab(all_sentences(convs), "joint", {3, 0});
  EXPECT_EQ(v.regular_tokens(),
            (std::vector<std::string>{".", ",", "I", "Je", "The", "est", "you", "Le", "Merci",
                                      "Thank", "accord", "d'", "is", "suis", "the"}));
}

TEST(Vocab, EncodeDecodeAndJson) {
  const Vocabulary v({"x", "y"});
  EXPECT_EQ(v.encode({"y", "zz"}), (std::vector<int>{5, Vocabulary::kUnk}));
  EXPECT_EQ(v.decode({Vocabulary::kBos, 4, 5, Vocabulary::kEos, 4}), (Tokens{"x", "y"}));
  EXPECT_EQ(Vocabulary::from_json(v.to_json()), v);
  EXPECT_THROW(Vocabulary({"<unk>"}), ContractError);
}

TEST(Stats, DirectCounts) {
  Conversation c;
  c.turns.push_back({1, Language::kEnglish, {sent("a b", "c d"), sent("a b", "c d"), sent("a b", "c d")}, false});
  c.turns.push_back({2, Language::kForeign, {sent("a b", "c d"), sent("a b", "c d"), sent("a b", "c d")}, false});
  const CorpusStats s = corpus_stats({c});
  EXPECT_EQ(s.mean_sentences, 6.0);
  EXPECT_EQ(s.mean_turns, 2.0);
  EXPECT_EQ(s.mean_turn_length, 3.0);
}

TEST(Stats, EmptySplitIsAllZero) {
  const CorpusStats s = corpus_stats({});
  EXPECT_EQ(s.conversations, 0u);
  EXPECT_EQ(s.mean_sentences, 0.0);
  EXPECT_EQ(s.mean_turn_length, 0.0);
}

TEST(Jsonl, RoundTripIsByteIdentical) {
  const std::string golden = read_file(fixture("europarl_golden/train.jsonl"));
  EXPECT_EQ(to_jsonl(parse_jsonl(golden)), golden);
}

TEST(Jsonl, MalformedRecordReportsLine) {
  try {
    parse_jsonl("{\"id\":\"a\",\"turns\":[]}\n{not json}\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse_jsonl("{\"id\":3}\n"), ParseError);
}

TEST(Extract, EuroparlFixtureMatchesGoldenAndHandStats) {
  const auto files = list_corpus_files(fixture("europarl"));
  ASSERT_EQ(files.size(), 3u);
  const ExtractResult r = extract_files(files, {5, 100}, 1);
  EXPECT_EQ(r.rejected, 1u);
  std::set<int> speakers;
  for (const auto& c : r.conversations)
    for (const auto& t : c.turns) speakers.insert(t.speaker_id);
  // Speaker 9 appears only in the rejected chapter.
  EXPECT_EQ(speakers.size(), 11u);
  // By hand: 4 kept conversations with (turns, sentences) (6,8) (2,3) (3,5) (4,6).
  const CorpusStats s = corpus_stats(r.conversations);
  EXPECT_EQ(s.conversations, 4u);
  EXPECT_EQ(s.sentences, 22u);
  EXPECT_EQ(s.turns, 15u);
  EXPECT_DOUBLE_EQ(s.mean_sentences, 5.5);
  EXPECT_DOUBLE_EQ(s.mean_turns, 3.75);
  EXPECT_DOUBLE_EQ(s.mean_turn_length, 1.5);
  const auto split = split_corpus(r.conversations, {}, derive_seed(1, "split"));
  EXPECT_EQ(to_jsonl(split.train), read_file(fixture("europarl_golden/train.jsonl")));
}

TEST(Extract, ParallelJobsGiveIdenticalOutput) {
  const auto files = list_corpus_files(fixture("europarl"));
  EXPECT_EQ(to_jsonl(extract_files(files, {}, 1).conversations),
            to_jsonl(extract_files(files, {}, 3).conversations));
}

TEST(Extract, MissingInputIsDataError) {
  EXPECT_THROW(list_corpus_files(fixture("does-not-exist")), DataError);
}

TEST(Checkpoint, SaveLoadSaveIsBitIdentical) {
  Checkpoint c;
  c.metadata = {{"kind", "test"}, {"n", 3}};
  c.tensors["a"] = Tensor::matrix(2, 2, {1.0, -0.0, 1e-300, 3.14159});
  c.tensors["b"] = Tensor::vector({0.1});
  const fs::path dir = scratch("ckpt");
  save_checkpoint(dir / "one.ckpt", c);
  const Checkpoint back = load_checkpoint(dir / "one.ckpt");
  save_checkpoint(dir / "two.ckpt", back);
  EXPECT_EQ(read_file(dir / "one.ckpt"), read_file(dir / "two.ckpt"));
  EXPECT_EQ(back.tensors, c.tensors);
  EXPECT_EQ(file_hash(dir / "one.ckpt"), file_hash(dir / "two.ckpt"));
}

TEST(Checkpoint, CorruptionDetected) {
  Checkpoint c;
  c.tensors["a"] = Tensor::vector({1.0, 2.0});
  std::string bytes = encode_checkpoint(c);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), DataError);
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), DataError);
}

TEST(Checkpoint, MissingFileMessage) {
  try {
    load_checkpoint("/nonexistent/model.ckpt");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("checkpoint not found"), std::string::npos);
  }
}

}  // namespace
}  // namespace bimsmt
