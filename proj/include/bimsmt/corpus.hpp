// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bimsmt/tensor.hpp"

namespace bimsmt {

enum class Language { kEnglish, kForeign };

inline Language other(Language l) {
  return l == Language::kEnglish ? Language::kForeign : Language::kEnglish;
}
std::string_view to_string(Language l);
Language parse_language(std::string_view s);

using Tokens = std::vector<std::string>;

/// One sentence in the language it was spoken in, paired with its reference
/// translation into the other language.
struct Sentence {
  Tokens tokens;
  Tokens reference;
  bool original_side = true;

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

/// Consecutive sentences by one speaker in one language.
struct Turn {
  int speaker_id = 0;
  Language language = Language::kEnglish;
  std::vector<Sentence> sentences;
  bool heading = false;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct Conversation {
  std::string id;
  std::vector<Turn> turns;

  std::size_t sentence_count() const;
  std::size_t speaker_count() const;
  friend bool operator==(const Conversation&, const Conversation&) = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// A speaker block of a tagged file. Heading blocks collect title lines that
/// follow a CHAPTER tag and precede the chapter's first SPEAKER tag.
struct TaggedBlock {
  int chapter = 0;
  int speaker_id = 0;
  Language language = Language::kEnglish;
  std::string language_tag;  // raw attribute value, empty when absent
  bool heading = false;
  std::size_t line = 0;
  std::vector<Sentence> sentences;
};

/// Parses the tagged format:
///   <CHAPTER ...>                       starts a chapter (conversation boundary)
///   <SPEAKER id="N" language="XX" ...>  opens a speaker block
///   <P>                                 paragraph marker, ignored
///   english tokens ||| foreign tokens   one aligned, pre-tokenised sentence
/// A block without a language attribute (or language="EN") is English and
/// keeps the English side as source; any other tag makes the block Foreign
/// and swaps the sides. Text before any tag forms an implicit English block.
std::vector<TaggedBlock> parse_tagged_file(std::string_view text);

/// Regex describing heading markup lines.
inline constexpr std::string_view kHeadingPattern = R"(^\s*<CHAPTER\b[^>]*>\s*$)";

/// Groups blocks into conversations (one per chapter) and greedily cuts a
/// conversation whenever a new speaker would exceed `max_speakers`.
/// Consecutive blocks by the same speaker in the same language merge into
/// one turn. Ids are "<prefix>-<chapter>-<part>".
std::vector<Conversation> segment_conversations(const std::vector<TaggedBlock>& blocks,
                                                std::size_t max_speakers = 5,
                                                const std::string& id_prefix = "conv");

/// Drops heading turns and single-token sentences; rejects the conversation
/// when any sentence (either side) is longer than `max_len` tokens or when
/// nothing survives.
std::optional<Conversation> clean(const Conversation& conversation, std::size_t max_len = 100);

/// Reassigns turn languages so they alternate starting from `first`,
/// swapping source and reference where a turn changes language.
Conversation alternate_languages(const Conversation& conversation, Language first);

struct SplitRatio {
  std::uint32_t train = 100, dev = 2, test = 3;
};
SplitRatio parse_ratio(std::string_view text);  // "100:2:3"

struct CorpusSplit {
  std::vector<Conversation> train, dev, test;
};

/// 64-bit linear congruential generator (Knuth MMIX constants).
class Lcg64 {
 public:
  explicit Lcg64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    state_ = state_ * 6364136223846793005ULL + 1442695040888963407ULL;
    return state_;
  }
  /// Uniform integer in [0, n) from the high bits.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
  }

 private:
  std::uint64_t state_;
};

/// Seeded Fisher-Yates shuffle at conversation granularity, then consecutive
/// slices sized round(N*ratio/sum) for dev and test; train takes the rest.
CorpusSplit split_corpus(std::vector<Conversation> conversations, SplitRatio ratio,
                         std::uint64_t seed);

/// Token <-> id map with four reserved ids.
class Vocabulary {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kPad = 3;
  static constexpr std::array<std::string_view, 4> kReserved = {"<unk>", "<s>", "</s>", "<pad>"};

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& regular_tokens, std::string label = "joint");

  int id(const std::string& token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::string& label() const { return label_; }
  /// Non-reserved tokens in id order.
  std::vector<std::string> regular_tokens() const;

  std::vector<int> encode(const Tokens& tokens) const;
  /// Stops at </s>; skips <s> and <pad>.
  Tokens decode(const std::vector<int>& ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.label_ == b.label_;
  }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> ids_;
  std::string label_;
};

struct VocabOptions {
  std::size_t min_count = 1;
  std::size_t max_size = 0;  // 0: unlimited (regular tokens, reserved not counted)
};

/// Builds a vocabulary from token lists; tokens are ranked by (count desc,
/// token asc). Throws ConfigError on an empty corpus.
Vocabulary build_vocab(const std::vector<Tokens>& sentences, const std::string& label,
                       VocabOptions options = {});

/// All token lists in the given language (sources of that language's turns
/// and references of the other language's turns).
std::vector<Tokens> sentences_in(const std::vector<Conversation>& conversations, Language lang);
/// Both languages.
std::vector<Tokens> all_sentences(const std::vector<Conversation>& conversations);

struct CorpusStats {
  std::size_t conversations = 0;
  std::size_t sentences = 0;
  std::size_t turns = 0;
  double mean_sentences = 0.0;   // per conversation
  double mean_turns = 0.0;       // per conversation
  double mean_turn_length = 0.0; // mean over conversations of sentences per turn

  nlohmann::ordered_json to_json() const;
};

CorpusStats corpus_stats(const std::vector<Conversation>& conversations);

// JSONL: {"id", "turns": [{"speaker", "language", "sentences":
//         [{"src_tokens", "ref_tokens", "original_side"}]}]}
nlohmann::ordered_json to_json(const Conversation& c);
Conversation conversation_from_json(const nlohmann::json& j);
std::string to_jsonl(const std::vector<Conversation>& conversations);
std::vector<Conversation> parse_jsonl(std::string_view text);
std::vector<Conversation> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<Conversation>& conversations);

struct ExtractOptions {
  std::size_t max_speakers = 5;
  std::size_t max_len = 100;
};

struct ExtractResult {
  std::vector<Conversation> conversations;
  std::size_t rejected = 0;
  std::size_t files = 0;
};

/// Regular files of a directory in name order, or the file itself.
std::vector<std::filesystem::path> list_corpus_files(const std::filesystem::path& input);
/// Parses, segments and cleans each file (ids prefixed by the file stem);
/// output order follows `files` regardless of `jobs`.
ExtractResult extract_files(const std::vector<std::filesystem::path>& files,
                            const ExtractOptions& options = {}, std::size_t jobs = 1);

Tokens split_tokens(std::string_view text);
std::string join_tokens(const Tokens& tokens);

}  // namespace bimsmt
