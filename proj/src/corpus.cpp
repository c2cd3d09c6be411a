// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#include "bimsmt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>
#include <atomic>
#include <exception>
#include <mutex>
#include <sstream>
#include <unordered_map>

namespace bimsmt {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

struct Tag {
  std::string name;  // lower-cased
  std::map<std::string, std::string> attrs;  // lower-cased keys
};

Tag parse_tag(std::string_view line, std::size_t lineno) {
  std::string_view body = line.substr(1, line.size() - 2);
  Tag tag;
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < body.size() && std::isspace(static_cast<unsigned char>(body[i]))) ++i;
  };
  skip_ws();
  const std::size_t name_start = i;
  while (i < body.size() && std::isalpha(static_cast<unsigned char>(body[i]))) ++i;
  if (i == name_start) throw ParseError(lineno, "tag without a name");
  tag.name = lower(body.substr(name_start, i - name_start));
  while (true) {
    skip_ws();
    if (i >= body.size()) break;
    const std::size_t key_start = i;
    while (i < body.size() && body[i] != '=' && !std::isspace(static_cast<unsigned char>(body[i]))) ++i;
    std::string key = lower(body.substr(key_start, i - key_start));
    skip_ws();
    if (i >= body.size() || body[i] != '=') {
      throw ParseError(lineno, "attribute '" + key + "' has no value");
    }
    ++i;
    skip_ws();
    std::string value;
    if (i < body.size() && (body[i] == '"' || body[i] == '\'')) {
      const char quote = body[i++];
      const std::size_t end = body.find(quote, i);
      if (end == std::string_view::npos) throw ParseError(lineno, "unterminated attribute value");
      value = std::string(body.substr(i, end - i));
      i = end + 1;
    } else {
      const std::size_t vstart = i;
      while (i < body.size() && !std::isspace(static_cast<unsigned char>(body[i]))) ++i;
      value = std::string(body.substr(vstart, i - vstart));
    }
    tag.attrs[key] = value;
  }
  return tag;
}

bool is_english_tag(const std::string& tag) { return tag.empty() || lower(tag) == "en"; }

}  // namespace

std::string_view to_string(Language l) {
  return l == Language::kEnglish ? "English" : "Foreign";
}

Language parse_language(std::string_view s) {
  const std::string l = lower(trim(s));
  if (l.empty()) throw DataError("empty language label");
  return (l == "english" || l == "en") ? Language::kEnglish : Language::kForeign;
}

Tokens split_tokens(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::size_t Conversation::sentence_count() const {
  std::size_t n = 0;
  for (const auto& t : turns) n += t.sentences.size();
  return n;
}

std::size_t Conversation::speaker_count() const {
  std::set<int> s;
  for (const auto& t : turns)
    if (!t.heading) s.insert(t.speaker_id);
  return s.size();
}

// ---------------------------------------------------------------------------
// Tagged format

std::vector<TaggedBlock> parse_tagged_file(std::string_view text) {
  std::vector<TaggedBlock> blocks;
  int chapter = 0;
  bool in_block = false;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++lineno;
    if (line.empty()) continue;
    if (line.front() == '<') {
      if (line.back() != '>') throw ParseError(lineno, "unterminated tag");
      Tag tag = parse_tag(line, lineno);
      if (tag.name == "chapter") {
        ++chapter;
        TaggedBlock b;
        b.chapter = chapter;
        b.speaker_id = -1;
        b.heading = true;
        b.line = lineno;
        blocks.push_back(std::move(b));
        in_block = true;
      } else if (tag.name == "speaker") {
        auto it = tag.attrs.find("id");
        if (it == tag.attrs.end()) throw ParseError(lineno, "SPEAKER tag without id");
        TaggedBlock b;
        try {
          std::size_t used = 0;
          b.speaker_id = std::stoi(it->second, &used);
          if (used != it->second.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw ParseError(lineno, "SPEAKER id '" + it->second + "' is not an integer");
        }
        b.chapter = chapter;
        if (auto lang = tag.attrs.find("language"); lang != tag.attrs.end()) {
          b.language_tag = lang->second;
        }
        b.language = is_english_tag(b.language_tag) ? Language::kEnglish : Language::kForeign;
        b.line = lineno;
        blocks.push_back(std::move(b));
        in_block = true;
      } else if (tag.name != "p") {
        throw ParseError(lineno, "unknown tag <" + tag.name + ">");
      }
      continue;
    }
    const std::size_t sep = line.find("|||");
    if (sep == std::string_view::npos) {
      throw ParseError(lineno, "expected 'english tokens ||| foreign tokens'");
    }
    if (!in_block) {
      TaggedBlock b;
      b.chapter = chapter;
      b.line = lineno;
      blocks.push_back(std::move(b));
      in_block = true;
    }
    TaggedBlock& b = blocks.back();
    Tokens english = split_tokens(line.substr(0, sep));
    Tokens foreign = split_tokens(line.substr(sep + 3));
    Sentence s;
    if (b.language == Language::kEnglish) {
      s.tokens = std::move(english);
      s.reference = std::move(foreign);
    } else {
      s.tokens = std::move(foreign);
      s.reference = std::move(english);
    }
    b.sentences.push_back(std::move(s));
  }
  return blocks;
}

std::vector<Conversation> segment_conversations(const std::vector<TaggedBlock>& blocks,
                                                std::size_t max_speakers,
                                                const std::string& id_prefix) {
  if (max_speakers == 0) throw ConfigError("max_speakers must be positive");
  std::vector<Conversation> out;
  Conversation current;
  std::set<int> speakers;
  int chapter = -1;
  int part = 0;
  bool last_was_heading = false;

  auto flush = [&] {
    if (!current.turns.empty()) out.push_back(std::move(current));
    current = Conversation{};
    speakers.clear();
    last_was_heading = false;
  };
  auto start = [&](int ch) {
    current.id = id_prefix + "-" + std::to_string(ch) + "-" + std::to_string(part++);
  };

  for (const auto& b : blocks) {
    if (b.chapter != chapter) {
      flush();
      chapter = b.chapter;
      part = 0;
      start(chapter);
    }
    if (b.heading) {
      current.turns.push_back(Turn{-1, Language::kEnglish, b.sentences, true});
      last_was_heading = true;
      continue;
    }
    if (b.sentences.empty()) continue;
    if (!speakers.count(b.speaker_id) && speakers.size() >= max_speakers) {
      flush();
      start(chapter);
    }
    speakers.insert(b.speaker_id);
    if (!current.turns.empty() && !last_was_heading) {
      Turn& last = current.turns.back();
      if (last.speaker_id == b.speaker_id && last.language == b.language) {
        last.sentences.insert(last.sentences.end(), b.sentences.begin(), b.sentences.end());
        continue;
      }
    }
    current.turns.push_back(Turn{b.speaker_id, b.language, b.sentences, false});
    last_was_heading = false;
  }
  flush();
  return out;
}

std::optional<Conversation> clean(const Conversation& conversation, std::size_t max_len) {
  Conversation out;
  out.id = conversation.id;
  for (const auto& turn : conversation.turns) {
    if (turn.heading) continue;
    Turn kept{turn.speaker_id, turn.language, {}, false};
    for (const auto& s : turn.sentences) {
      if (s.tokens.size() < 2 || s.reference.size() < 2) continue;
      if (s.tokens.size() > max_len || s.reference.size() > max_len) return std::nullopt;
      kept.sentences.push_back(s);
    }
    if (kept.sentences.empty()) continue;
    if (!out.turns.empty() && out.turns.back().speaker_id == kept.speaker_id &&
        out.turns.back().language == kept.language) {
      auto& dst = out.turns.back().sentences;
      dst.insert(dst.end(), kept.sentences.begin(), kept.sentences.end());
    } else {
      out.turns.push_back(std::move(kept));
    }
  }
  if (out.turns.empty()) return std::nullopt;
  return out;
}

Conversation alternate_languages(const Conversation& conversation, Language first) {
  Conversation out = conversation;
  Language lang = first;
  for (auto& turn : out.turns) {
    if (turn.language != lang) {
      for (auto& s : turn.sentences) std::swap(s.tokens, s.reference);
      turn.language = lang;
    }
    lang = other(lang);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

SplitRatio parse_ratio(std::string_view text) {
  SplitRatio r;
  std::vector<std::uint32_t> parts;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find(':', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string piece(trim(text.substr(pos, end - pos)));
    try {
      std::size_t used = 0;
      const long v = std::stol(piece, &used);
      if (used != piece.size() || v <= 0) throw std::invalid_argument("bad");
      parts.push_back(static_cast<std::uint32_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("split ratio must be three positive integers like 100:2:3");
    }
    pos = end + 1;
    if (end == text.size()) break;
  }
  if (parts.size() != 3) throw ConfigError("split ratio must have exactly three parts");
  r.train = parts[0];
  r.dev = parts[1];
  r.test = parts[2];
  return r;
}

CorpusSplit split_corpus(std::vector<Conversation> conversations, SplitRatio ratio,
                         std::uint64_t seed) {
  if (ratio.train == 0 || ratio.dev == 0 || ratio.test == 0) {
    throw ConfigError("split ratio parts must be positive");
  }
  const std::size_t n = conversations.size();
  if (n < 3) throw ConfigError("need at least 3 conversations to split, got " + std::to_string(n));
  Lcg64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = rng.below(i + 1);
    std::swap(conversations[i], conversations[j]);
  }
  const double total = static_cast<double>(ratio.train) + ratio.dev + ratio.test;
  const auto n_dev = static_cast<std::size_t>(std::llround(n * (ratio.dev / total)));
  const auto n_test = static_cast<std::size_t>(std::llround(n * (ratio.test / total)));
  CorpusSplit split;
  auto it = conversations.begin();
  split.dev.assign(std::make_move_iterator(it), std::make_move_iterator(it + n_dev));
  it += n_dev;
  split.test.assign(std::make_move_iterator(it), std::make_move_iterator(it + n_test));
  it += n_test;
  split.train.assign(std::make_move_iterator(it), std::make_move_iterator(conversations.end()));
  return split;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& regular_tokens, std::string label)
    : label_(std::move(label)) {
  for (auto r : kReserved) tokens_.emplace_back(r);
  for (const auto& t : regular_tokens) {
    if (std::find(kReserved.begin(), kReserved.end(), t) != kReserved.end()) {
      throw ContractError("reserved token '" + t + "' in regular vocabulary");
    }
    tokens_.push_back(t);
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw ContractError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocabulary::regular_tokens() const {
  return {tokens_.begin() + kReserved.size(), tokens_.end()};
}

std::vector<int> Vocabulary::encode(const Tokens& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Tokens Vocabulary::decode(const std::vector<int>& ids) const {
  Tokens out;
  for (int i : ids) {
    if (i == kEos) break;
    if (i == kBos || i == kPad) continue;
    out.push_back(token(i));
  }
  return out;
}

nlohmann::json Vocabulary::to_json() const {
  return nlohmann::json{{"label", label_}, {"tokens", regular_tokens()}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  return Vocabulary(j.at("tokens").get<std::vector<std::string>>(),
                    j.value("label", std::string("joint")));
}

Vocabulary build_vocab(const std::vector<Tokens>& sentences, const std::string& label,
                       VocabOptions options) {
  std::unordered_map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& s : sentences)
    for (const auto& t : s) {
      ++counts[t];
      ++total;
    }
  if (total == 0) throw ConfigError("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, c] : counts) {
    if (c < options.min_count) continue;
    if (std::find(Vocabulary::kReserved.begin(), Vocabulary::kReserved.end(), tok) !=
        Vocabulary::kReserved.end()) {
      continue;
    }
    ranked.emplace_back(tok, c);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (options.max_size > 0 && ranked.size() > options.max_size) ranked.resize(options.max_size);
  std::vector<std::string> toks;
  toks.reserve(ranked.size());
  for (auto& [t, _] : ranked) toks.push_back(t);
  return Vocabulary(toks, label);
}

std::vector<Tokens> sentences_in(const std::vector<Conversation>& conversations, Language lang) {
  std::vector<Tokens> out;
  for (const auto& c : conversations)
    for (const auto& t : c.turns)
      for (const auto& s : t.sentences) out.push_back(t.language == lang ? s.tokens : s.reference);
  return out;
}

std::vector<Tokens> all_sentences(const std::vector<Conversation>& conversations) {
  std::vector<Tokens> out;
  for (const auto& c : conversations)
    for (const auto& t : c.turns)
      for (const auto& s : t.sentences) {
        out.push_back(s.tokens);
        out.push_back(s.reference);
      }
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

CorpusStats corpus_stats(const std::vector<Conversation>& conversations) {
  CorpusStats s;
  s.conversations = conversations.size();
  double turn_len_sum = 0.0;
  for (const auto& c : conversations) {
    const std::size_t n = c.sentence_count();
    s.sentences += n;
    s.turns += c.turns.size();
    if (!c.turns.empty()) turn_len_sum += static_cast<double>(n) / c.turns.size();
  }
  if (s.conversations > 0) {
    const double nc = static_cast<double>(s.conversations);
    s.mean_sentences = s.sentences / nc;
    s.mean_turns = s.turns / nc;
    s.mean_turn_length = turn_len_sum / nc;
  }
  return s;
}

nlohmann::ordered_json CorpusStats::to_json() const {
  nlohmann::ordered_json j;
  j["conversations"] = conversations;
  j["sentences"] = sentences;
  j["turns"] = turns;
  j["mean_sentences_per_conversation"] = mean_sentences;
  j["mean_turns_per_conversation"] = mean_turns;
  j["mean_turn_length"] = mean_turn_length;
  return j;
}

// ---------------------------------------------------------------------------
// JSONL

nlohmann::ordered_json to_json(const Conversation& c) {
  nlohmann::ordered_json j;
  j["id"] = c.id;
  j["turns"] = nlohmann::ordered_json::array();
  for (const auto& t : c.turns) {
    nlohmann::ordered_json jt;
    jt["speaker"] = t.speaker_id;
    jt["language"] = to_string(t.language);
    if (t.heading) jt["heading"] = true;
    jt["sentences"] = nlohmann::ordered_json::array();
    for (const auto& s : t.sentences) {
      nlohmann::ordered_json js;
      js["src_tokens"] = s.tokens;
      js["ref_tokens"] = s.reference;
      js["original_side"] = s.original_side;
      jt["sentences"].push_back(std::move(js));
    }
    j["turns"].push_back(std::move(jt));
  }
  return j;
}

Conversation conversation_from_json(const nlohmann::json& j) {
  try {
    Conversation c;
    c.id = j.at("id").get<std::string>();
    for (const auto& jt : j.at("turns")) {
      Turn t;
      t.speaker_id = jt.at("speaker").get<int>();
      t.language = parse_language(jt.at("language").get<std::string>());
      t.heading = jt.value("heading", false);
      for (const auto& js : jt.at("sentences")) {
        Sentence s;
        s.tokens = js.at("src_tokens").get<Tokens>();
        s.reference = js.value("ref_tokens", Tokens{});
        s.original_side = js.value("original_side", true);
        t.sentences.push_back(std::move(s));
      }
      c.turns.push_back(std::move(t));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed conversation record: ") + e.what());
  }
}

std::string to_jsonl(const std::vector<Conversation>& conversations) {
  std::string out;
  for (const auto& c : conversations) {
    out += to_json(c).dump();
    out += '\n';
  }
  return out;
}

std::vector<Conversation> parse_jsonl(std::string_view text) {
  std::vector<Conversation> out;
  std::size_t pos = 0, lineno = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(conversation_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, std::string("invalid conversation record: ") + e.what());
    } catch (const DataError& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

std::vector<Conversation> read_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_jsonl(ss.str());
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Conversation>& conversations) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << to_jsonl(conversations);
}

std::vector<std::filesystem::path> list_corpus_files(const std::filesystem::path& input) {
  namespace fs = std::filesystem;
  if (!fs::exists(input)) throw DataError("input not found: " + input.string());
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input))
      if (e.is_regular_file() && e.path().filename().string().front() != '.') files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(input);
  }
  if (files.empty()) throw DataError("no corpus files in " + input.string());
  return files;
}

ExtractResult extract_files(const std::vector<std::filesystem::path>& files,
                            const ExtractOptions& options, std::size_t jobs) {
  std::vector<std::vector<Conversation>> per_file(files.size());
  std::vector<std::size_t> rejected(files.size(), 0);
  auto work = [&](std::size_t k) {
    std::ifstream is(files[k], std::ios::binary);
    if (!is) throw DataError("cannot read " + files[k].string());
    std::ostringstream ss;
    ss << is.rdbuf();
    std::vector<TaggedBlock> blocks;
    try {
      blocks = parse_tagged_file(ss.str());
    } catch (const ParseError& e) {
      throw DataError(files[k].string() + ": " + e.what());
    }
    for (const auto& c :
         segment_conversations(blocks, options.max_speakers, files[k].stem().string())) {
      if (auto kept = clean(c, options.max_len)) {
        per_file[k].push_back(std::move(*kept));
      } else {
        ++rejected[k];
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, files.size()));
  if (jobs == 1) {
    for (std::size_t k = 0; k < files.size(); ++k) work(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < files.size(); k = next++) {
          try {
            work(k);
          } catch (...) {
            std::lock_guard<std::mutex> lock(mu);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }
  ExtractResult out;
  out.files = files.size();
  for (std::size_t k = 0; k < files.size(); ++k) {
    for (auto& c : per_file[k]) out.conversations.push_back(std::move(c));
    out.rejected += rejected[k];
  }
  return out;
}

}  // namespace bimsmt
