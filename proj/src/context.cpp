// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#include "bimsmt/context.hpp"

#include <algorithm>

namespace bimsmt {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::pair<E, std::string_view>, N>& table,
             const char* what) {
  for (const auto& [e, name] : table)
    if (name == s) return e;
  std::string options;
  for (const auto& [_, name] : table) options += (options.empty() ? "" : ", ") + std::string(name);
  throw ConfigError("unknown " + std::string(what) + " '" + std::string(s) + "' (expected one of " +
                    options + ")");
}

template <typename E, std::size_t N>
std::string_view enum_name(E e, const std::array<std::pair<E, std::string_view>, N>& table) {
  for (const auto& [v, name] : table)
    if (v == e) return name;
  return "?";
}

constexpr std::array<std::pair<SourceStrategy, std::string_view>, 6> kStrategies{{
    {SourceStrategy::kNone, "none"},
    {SourceStrategy::kDirect, "direct"},
    {SourceStrategy::kHierGate, "hier_gate"},
    {SourceStrategy::kLangAttn, "lang_attn"},
    {SourceStrategy::kCombinedAttn, "combined_attn"},
    {SourceStrategy::kLangSentAttn, "lang_sent_attn"},
}};
constexpr std::array<std::pair<HistorySide, std::string_view>, 4> kSides{{
    {HistorySide::kSource, "source"},
    {HistorySide::kTarget, "target"},
    {HistorySide::kDualSrcTgt, "dual_src_tgt"},
    {HistorySide::kDualSrcTgtMix, "dual_src_tgt_mix"},
}};
constexpr std::array<std::pair<Injection, std::string_view>, 3> kInjections{{
    {Injection::kInitDec, "init_dec"},
    {Injection::kAddDec, "add_dec"},
    {Injection::kInitAdd, "init_add"},
}};

std::string lang_key(Language l) { return l == Language::kEnglish ? "en" : "fr"; }

}  // namespace

std::string_view to_string(SourceStrategy s) { return enum_name(s, kStrategies); }
std::string_view to_string(HistorySide s) { return enum_name(s, kSides); }
std::string_view to_string(Injection s) { return enum_name(s, kInjections); }
SourceStrategy parse_source_strategy(std::string_view s) {
  return parse_enum(s, kStrategies, "source_strategy");
}
HistorySide parse_history_side(std::string_view s) { return parse_enum(s, kSides, "history_side"); }
Injection parse_injection(std::string_view s) { return parse_enum(s, kInjections, "injection"); }

AblationMask AblationMask::parse(std::string_view text) {
  AblationMask m = none();
  std::size_t pos = 0;
  bool any = false;
  while (pos <= text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view item = text.substr(pos, end - pos);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (item == "all") {
      m = all();
    } else if (item == "none") {
      // leaves the mask unchanged
    } else if (item == "current_turn") {
      m.current_turn = true;
    } else if (item == "prev_turns_same_lang") {
      m.prev_turns_same_lang = true;
    } else if (item == "prev_turns_other_lang") {
      m.prev_turns_other_lang = true;
    } else {
      throw ConfigError("unknown ablation mask entry '" + std::string(item) + "'");
    }
    any = true;
    pos = end + 1;
  }
  if (!any) throw ConfigError("empty ablation mask");
  return m;
}

std::string AblationMask::to_string() const {
  if (is_all()) return "all";
  if (empty()) return "none";
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ",";
    out += name;
  };
  add(current_turn, "current_turn");
  add(prev_turns_same_lang, "prev_turns_same_lang");
  add(prev_turns_other_lang, "prev_turns_other_lang");
  return out;
}

nlohmann::json ContextConfig::to_json() const {
  return {{"source_strategy", std::string(bimsmt::to_string(source_strategy))},
          {"history_side", std::string(bimsmt::to_string(history_side))},
          {"injection", std::string(bimsmt::to_string(injection))},
          {"ablation_mask", ablation_mask.to_string()},
          {"local_prev_sentence_only", local_prev_sentence_only}};
}

ContextConfig ContextConfig::from_json(const nlohmann::json& j) {
  ContextConfig c;
  c.source_strategy = parse_source_strategy(j.at("source_strategy").get<std::string>());
  c.history_side = parse_history_side(j.at("history_side").get<std::string>());
  c.injection = parse_injection(j.at("injection").get<std::string>());
  c.ablation_mask = AblationMask::parse(j.at("ablation_mask").get<std::string>());
  c.local_prev_sentence_only = j.at("local_prev_sentence_only").get<bool>();
  return c;
}

// ---------------------------------------------------------------------------
// ContextState

void ContextState::begin_turn(Language language) {
  HistoryTurn t;
  t.language = language;
  t.index = turns.empty() ? 0 : turns.back().index + 1;
  turns.push_back(std::move(t));
  ongoing = true;
}

void ContextState::observe(Tensor source_rep, std::optional<Tensor> target_rep) {
  if (turns.empty() || !ongoing) throw ContractError("observe() outside an ongoing turn");
  auto& t = turns.back();
  t.sentences.push_back({std::move(source_rep), std::move(target_rep), t.sentences.size()});
}

std::size_t ContextState::sentence_count() const {
  std::size_t n = 0;
  for (const auto& t : turns) n += t.sentences.size();
  return n;
}

std::size_t ContextState::target_count() const {
  std::size_t n = 0;
  for (const auto& t : turns)
    for (const auto& s : t.sentences) n += s.target_rep.has_value();
  return n;
}

std::optional<Language> ContextState::current_language() const {
  if (!ongoing || turns.empty()) return std::nullopt;
  return turns.back().language;
}

ContextState apply_ablation_mask(const ContextState& state, const AblationMask& mask,
                                 bool local_prev_sentence_only) {
  ContextState out;
  out.ongoing = state.ongoing;
  const auto lang = state.current_language();
  if (!lang && !mask.is_all()) throw ContractError("ablation mask needs an ongoing turn");
  for (std::size_t k = 0; k < state.turns.size(); ++k) {
    const HistoryTurn& t = state.turns[k];
    const bool current = state.ongoing && k + 1 == state.turns.size();
    bool keep = true;
    if (lang) {
      keep = current                ? mask.current_turn
             : t.language == *lang ? mask.prev_turns_same_lang
                                    : mask.prev_turns_other_lang;
    }
    if (keep) {
      out.turns.push_back(t);
    } else if (current) {
      out.turns.push_back(HistoryTurn{t.language, t.index, {}});
    }
  }
  if (local_prev_sentence_only) {
    ContextState local;
    local.ongoing = out.ongoing;
    std::optional<std::size_t> last;
    for (std::size_t k = 0; k < out.turns.size(); ++k)
      if (!out.turns[k].sentences.empty()) last = k;
    for (std::size_t k = 0; k < out.turns.size(); ++k) {
      const bool current = out.ongoing && k + 1 == out.turns.size();
      if (last && k == *last) {
        HistoryTurn t = out.turns[k];
        t.sentences.erase(t.sentences.begin(), t.sentences.end() - 1);
        local.turns.push_back(std::move(t));
      } else if (current) {
        local.turns.push_back(HistoryTurn{out.turns[k].language, out.turns[k].index, {}});
      }
    }
    return local;
  }
  return out;
}

nlohmann::json AttentionDump::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : weights) j[k] = v;
  return j;
}

// ---------------------------------------------------------------------------
// ContextModel

std::pair<Var, Var> attention_pool(const std::vector<Var>& reps, Var query) {
  if (reps.empty()) throw ContractError("attention over an empty set");
  Var r = columns(reps);
  Var p = softmax(matmul(transpose(r), query));
  return {matmul(r, p), p};
}

ContextModel::ContextModel(ParameterSet& params, const ContextConfig& config, std::size_t hidden,
                           Rng& rng)
    : config_(config), hidden_(hidden) {
  if (hidden == 0) throw ConfigError("context hidden size must be positive");
  const std::size_t H = hidden, H2 = 2 * hidden;
  auto add = [&](const std::string& name, Shape shape, Init init) {
    named_[name] = &params.add(name, std::move(shape), init, rng);
  };
  if (config.uses_turn_rnn()) {
    for (Language l : {Language::kEnglish, Language::kForeign}) {
      const int i = l == Language::kEnglish ? 0 : 1;
      const std::string pre = "turnrnn." + lang_key(l) + ".";
      turn_rnn_fwd_[i] = Gru(params, pre + "fwd.", H2, H, rng);
      turn_rnn_bwd_[i] = Gru(params, pre + "bwd.", H2, H, rng);
    }
  }
  for (Direction d : {Direction::kEnToForeign, Direction::kForeignToEn}) {
    auto affine_pair = [&](const std::string& name, std::size_t out, std::size_t in) {
      add(key(d, name + ".W"), {out, in}, Init::kUniform);
      add(key(d, name + ".b"), {out}, Init::kZeros);
    };
    if (config.uses_source()) {
      switch (config.source_strategy) {
        case SourceStrategy::kDirect:
          affine_pair("direct.cur", H2, H2);
          affine_pair("direct.oth", H2, H2);
          break;
        case SourceStrategy::kHierGate:
          for (const char* side : {"hg.cur", "hg.oth"}) {
            add(key(d, std::string(side) + ".U1"), {H2, H2}, Init::kUniform);
            add(key(d, std::string(side) + ".U2"), {H2, H2}, Init::kUniform);
            add(key(d, std::string(side) + ".b"), {H2}, Init::kZeros);
          }
          break;
        case SourceStrategy::kLangAttn:
        case SourceStrategy::kLangSentAttn: {
          const std::string kind =
              config.source_strategy == SourceStrategy::kLangAttn ? "la" : "ls";
          affine_pair(kind + ".q", H2, H2);
          affine_pair(kind + ".o", H2, H2);
          break;
        }
        case SourceStrategy::kCombinedAttn:
          affine_pair("ca.e", H2, H2);
          affine_pair("ca.q", H2, H2);
          break;
        case SourceStrategy::kNone:
          break;
      }
      if (config.source_strategy != SourceStrategy::kCombinedAttn) {
        add(key(d, "gate.src.U_cur"), {H2, H2}, Init::kUniform);
        add(key(d, "gate.src.U_oth"), {H2, H2}, Init::kUniform);
        add(key(d, "gate.src.b"), {H2}, Init::kZeros);
      }
      affine_pair("red", H, H2);
    }
    if (config.uses_target() && !config.is_mix()) {
      affine_pair("tgt.q", H, H2);
      affine_pair("tgt.d", H, H2);
      affine_pair("tgt.o", H, H);
      add(key(d, "gate.tgt.U_cur"), {H, H}, Init::kUniform);
      add(key(d, "gate.tgt.U_oth"), {H, H}, Init::kUniform);
      add(key(d, "gate.tgt.b"), {H}, Init::kZeros);
    }
    if (config.is_mix()) {
      affine_pair("mix.red.cur", H, H2);
      affine_pair("mix.red.oth", H, H2);
      affine_pair("mix.d", H, H2);
      affine_pair("mix.t", H, H2);
      affine_pair("mix.r", H, H);
    }
    if (config.init_dec()) {
      add(key(d, "init.V"), {H, H}, Init::kUniform);
      add(key(d, "init.b_s"), {H}, Init::kZeros);
      if (config.is_dual()) affine_pair("init.cat", H, H2);
    }
    if (config.add_dec()) {
      const bool slot0 = config.uses_source() || config.is_mix();
      const bool slot1 = config.uses_target();
      for (const char* g : {"z", "r", "h"}) {
        if (slot0) add(key(d, std::string("add.W_ss.") + g), {H, H}, Init::kUniform);
        if (slot1) add(key(d, std::string("add.W_st.") + g), {H, H}, Init::kUniform);
      }
    }
  }
}

std::string ContextModel::key(Direction d, const std::string& name) const {
  return "ctx." + std::string(to_string(d)) + "." + name;
}

Var ContextModel::p(Tape& tape, const std::string& name) const {
  auto it = named_.find(name);
  if (it == named_.end()) throw ContractError("context parameter " + name + " is not configured");
  return tape.parameter(*it->second);
}

Var ContextModel::affine_p(Tape& tape, const std::string& w, const std::string& b, Var x) const {
  return affine(p(tape, w), x, p(tape, b));
}

std::pair<std::vector<Var>, Var> ContextModel::turn_rnn(Tape& tape, Language language,
                                                        const std::vector<Var>& reps) const {
  if (reps.empty()) throw ContractError("Turn-RNN over an empty turn");
  const int i = language == Language::kEnglish ? 0 : 1;
  if (turn_rnn_fwd_[i].hidden_size() == 0) throw ContractError("Turn-RNNs are not configured");
  for (const Var& r : reps) {
    if (r.value().shape() != Shape{2 * hidden_}) {
      throw DimensionError("Turn-RNN input has shape " + shape_string(r.value().shape()) +
                           ", expected [" + std::to_string(2 * hidden_) + "]");
    }
  }
  std::vector<Var> fwd = run_gru(tape, turn_rnn_fwd_[i], reps);
  std::vector<Var> bwd = run_gru(tape, turn_rnn_bwd_[i], std::vector<Var>(reps.rbegin(), reps.rend()));
  std::reverse(bwd.begin(), bwd.end());
  std::vector<Var> per;
  for (std::size_t m = 0; m < reps.size(); ++m) per.push_back(concat({fwd[m], bwd[m]}));
  Var summary = reps.size() == 1 ? per.front() : concat({fwd.back(), bwd.front()});
  return {per, summary};
}

EncodedHistory ContextModel::encode_history(Tape& tape, const ContextState& state,
                                            TurnCache* cache) const {
  if (cache && cache->tape() != &tape) throw ContractError("Turn-RNN cache belongs to another tape");
  EncodedHistory h;
  for (std::size_t k = 0; k < state.turns.size(); ++k) {
    const HistoryTurn& t = state.turns[k];
    if (t.sentences.empty()) continue;
    const bool current = state.ongoing && k + 1 == state.turns.size();
    if (config_.uses_turn_rnn()) {
      const auto id = std::make_tuple(t.index, t.sentences.front().index, t.sentences.size());
      const EncodedTurn* hit = nullptr;
      if (cache) {
        auto it = cache->entries.find(id);
        if (it != cache->entries.end()) hit = &it->second;
      }
      EncodedTurn et;
      if (hit) {
        et = *hit;
      } else {
        std::vector<Var> reps;
        for (const auto& s : t.sentences) reps.push_back(tape.constant(s.source_rep));
        auto [per, summary] = turn_rnn(tape, t.language, reps);
        et.language = t.language;
        et.index = t.index;
        et.sentences = std::move(per);
        et.summary = summary;
        if (cache) cache->entries.emplace(id, et);
      }
      et.current = current;
      h.turns.push_back(std::move(et));
    }
    if (config_.uses_target()) {
      for (const auto& s : t.sentences) {
        if (!s.target_rep) continue;
        if (s.target_rep->shape() != Shape{hidden_}) {
          throw DimensionError("target representation has shape " +
                               shape_string(s.target_rep->shape()));
        }
        h.targets.push_back({t.language, t.index, tape.constant(*s.target_rep)});
      }
    }
  }
  return h;
}

Var ContextModel::fuse_gate(Tape& tape, Direction d, Var a, Var b, bool target) const {
  if (a.value().shape() != b.value().shape()) {
    throw ContractError("fuse gate inputs differ: " + shape_string(a.value().shape()) + " vs " +
                        shape_string(b.value().shape()));
  }
  const std::string g = target ? "gate.tgt." : "gate.src.";
  Var alpha = sigmoid(add(add(matmul(p(tape, key(d, g + "U_cur")), a),
                              matmul(p(tape, key(d, g + "U_oth")), b)),
                          p(tape, key(d, g + "b"))));
  return convex_combine(alpha, a, b);
}

Var ContextModel::reduce(Tape& tape, Direction d, Var x) const {
  if (x.value().shape() != Shape{2 * hidden_}) {
    throw ContractError("reduce expects a " + std::to_string(2 * hidden_) + "-vector, got " +
                        shape_string(x.value().shape()));
  }
  return tanh(affine_p(tape, key(d, "red.W"), key(d, "red.b"), x));
}

std::pair<std::optional<Var>, std::optional<Var>> ContextModel::src_direct(
    Tape& tape, Direction d, const std::vector<Var>& cur, const std::vector<Var>& oth) const {
  auto side = [&](const std::vector<Var>& rs, const std::string& s) -> std::optional<Var> {
    if (rs.empty()) return std::nullopt;
    Var total = rs.front();
    for (std::size_t k = 1; k < rs.size(); ++k) total = add(total, rs[k]);
    return tanh(affine_p(tape, key(d, s + ".W"), key(d, s + ".b"), total));
  };
  return {side(cur, "direct.cur"), side(oth, "direct.oth")};
}

std::pair<std::optional<Var>, std::optional<Var>> ContextModel::src_hier_gate(
    Tape& tape, Direction d, const std::vector<Var>& cur, const std::vector<Var>& oth) const {
  auto side = [&](const std::vector<Var>& rs, const std::string& s) -> std::optional<Var> {
    if (rs.empty()) return std::nullopt;
    Var acc = rs.front();
    for (std::size_t k = 1; k < rs.size(); ++k) {
      Var alpha = sigmoid(add(add(matmul(p(tape, key(d, s + ".U1")), acc),
                                  matmul(p(tape, key(d, s + ".U2")), rs[k])),
                              p(tape, key(d, s + ".b"))));
      acc = convex_combine(alpha, acc, rs[k]);
    }
    return acc;
  };
  return {side(cur, "hg.cur"), side(oth, "hg.oth")};
}

std::pair<std::optional<Var>, std::optional<Var>> ContextModel::lang_attention(
    Tape& tape, Direction d, const std::string& kind, const std::vector<Var>& cur,
    const std::vector<Var>& oth, Var query, AttentionDump* dump) const {
  std::optional<Var> o_cur, o_oth;
  const std::string label = kind == "la" ? "src.turn." : "src.sent.";
  if (!cur.empty()) {
    auto [c, w] = attention_pool(cur, query);
    o_cur = tanh(affine_p(tape, key(d, kind + ".o.W"), key(d, kind + ".o.b"), c));
    if (dump) dump->weights[label + "cur"] = w.value().values();
  }
  if (!oth.empty()) {
    Var q = tanh(affine_p(tape, key(d, kind + ".q.W"), key(d, kind + ".q.b"), query));
    auto [c, w] = attention_pool(oth, q);
    o_oth = c;
    if (dump) dump->weights[label + "oth"] = w.value().values();
  }
  return {o_cur, o_oth};
}

std::pair<Var, std::optional<Var>> ContextModel::src_lang_attn(Tape& tape, Direction d,
                                                               const std::vector<Var>& cur,
                                                               const std::vector<Var>& oth,
                                                               Var query,
                                                               AttentionDump* dump) const {
  if (cur.empty()) throw ContractError("language-specific attention needs a current-language turn");
  auto [a, b] = lang_attention(tape, d, "la", cur, oth, query, dump);
  return {*a, b};
}

std::pair<std::optional<Var>, std::optional<Var>> ContextModel::src_lang_sent_attn(
    Tape& tape, Direction d, const std::vector<Var>& cur, const std::vector<Var>& oth, Var query,
    AttentionDump* dump) const {
  return lang_attention(tape, d, "ls", cur, oth, query, dump);
}

Var ContextModel::src_combined_attn(Tape& tape, Direction d, const std::vector<Var>& cur,
                                    const std::vector<Var>& oth, Var query,
                                    AttentionDump* dump) const {
  std::vector<Var> merged;
  for (const Var& r : cur) merged.push_back(tanh(affine_p(tape, key(d, "ca.e.W"), key(d, "ca.e.b"), r)));
  merged.insert(merged.end(), oth.begin(), oth.end());
  if (merged.empty()) throw ContractError("combined attention over an empty history");
  Var q = tanh(affine_p(tape, key(d, "ca.q.W"), key(d, "ca.q.b"), query));
  auto [c, w] = attention_pool(merged, q);
  if (dump) dump->weights["src.merged"] = w.value().values();
  return c;
}

std::optional<Var> ContextModel::tgt_attn(Tape& tape, Direction d, const std::vector<Var>& cur,
                                          const std::vector<Var>& oth, Var query,
                                          AttentionDump* dump) const {
  if (cur.empty() && oth.empty()) return std::nullopt;
  Var zero = tape.constant(Tensor({hidden_}));
  Var o_cur = zero, o_oth = zero;
  if (!cur.empty()) {
    Var q = tanh(affine_p(tape, key(d, "tgt.q.W"), key(d, "tgt.q.b"), query));
    auto [c, w] = attention_pool(cur, q);
    o_cur = c;
    if (dump) dump->weights["tgt.cur"] = w.value().values();
  }
  if (!oth.empty()) {
    Var q = affine_p(tape, key(d, "tgt.d.W"), key(d, "tgt.d.b"), query);
    auto [c, w] = attention_pool(oth, q);
    o_oth = tanh(affine_p(tape, key(d, "tgt.o.W"), key(d, "tgt.o.b"), c));
    if (dump) dump->weights["tgt.oth"] = w.value().values();
  }
  return fuse_gate(tape, d, o_cur, o_oth, true);
}

std::pair<std::optional<Var>, std::optional<Var>> ContextModel::dual_mix(
    Tape& tape, Direction d, const std::vector<Var>& cur, const std::vector<Var>& oth, Var query,
    AttentionDump* dump) const {
  std::optional<Var> o_cur, o_oth;
  if (!cur.empty()) {
    Var q = affine_p(tape, key(d, "mix.d.W"), key(d, "mix.d.b"), query);
    auto [c, w] = attention_pool(cur, q);
    o_cur = tanh(affine_p(tape, key(d, "mix.r.W"), key(d, "mix.r.b"), c));
    if (dump) dump->weights["mix.cur"] = w.value().values();
  }
  if (!oth.empty()) {
    Var q = tanh(affine_p(tape, key(d, "mix.t.W"), key(d, "mix.t.b"), query));
    auto [c, w] = attention_pool(oth, q);
    o_oth = c;
    if (dump) dump->weights["mix.oth"] = w.value().values();
  }
  return {o_cur, o_oth};
}

std::optional<Var> ContextModel::source_context(Tape& tape, Direction d, const EncodedHistory& h,
                                                Var query, AttentionDump* dump) const {
  const Language lang = source_language(d);
  const bool sentence_level = config_.source_strategy == SourceStrategy::kLangSentAttn;
  std::vector<Var> cur, oth;
  for (const auto& t : h.turns) {
    auto& dst = t.language == lang ? cur : oth;
    if (sentence_level) {
      dst.insert(dst.end(), t.sentences.begin(), t.sentences.end());
    } else {
      dst.push_back(t.summary);
    }
  }
  if (cur.empty() && oth.empty()) return std::nullopt;

  std::optional<Var> a, b;
  switch (config_.source_strategy) {
    case SourceStrategy::kNone:
      return std::nullopt;
    case SourceStrategy::kDirect:
      std::tie(a, b) = src_direct(tape, d, cur, oth);
      break;
    case SourceStrategy::kHierGate:
      std::tie(a, b) = src_hier_gate(tape, d, cur, oth);
      break;
    case SourceStrategy::kLangAttn:
      std::tie(a, b) = lang_attention(tape, d, "la", cur, oth, query, dump);
      break;
    case SourceStrategy::kLangSentAttn:
      std::tie(a, b) = lang_attention(tape, d, "ls", cur, oth, query, dump);
      break;
    case SourceStrategy::kCombinedAttn:
      return reduce(tape, d, src_combined_attn(tape, d, cur, oth, query, dump));
  }
  Var zero = tape.constant(Tensor({2 * hidden_}));
  return reduce(tape, d, fuse_gate(tape, d, a.value_or(zero), b.value_or(zero)));
}

std::optional<Var> ContextModel::target_context(Tape& tape, Direction d, const EncodedHistory& h,
                                                Var query, AttentionDump* dump) const {
  const Language lang = source_language(d);
  std::vector<Var> cur, oth;
  for (const auto& t : h.targets) (t.source_language == lang ? cur : oth).push_back(t.rep);
  return tgt_attn(tape, d, cur, oth, query, dump);
}

std::pair<std::optional<Var>, std::optional<Var>> ContextModel::mix_context(
    Tape& tape, Direction d, const EncodedHistory& h, Var query, AttentionDump* dump) const {
  const Language lang = source_language(d);
  std::vector<Var> cur, oth;
  for (const auto& t : h.turns) {
    const bool same = t.language == lang;
    const std::string red = same ? "mix.red.cur" : "mix.red.oth";
    for (const Var& r : t.sentences) {
      (same ? cur : oth).push_back(tanh(affine_p(tape, key(d, red + ".W"), key(d, red + ".b"), r)));
    }
  }
  // A translation is written in the other language than its source.
  for (const auto& t : h.targets) (t.source_language == lang ? oth : cur).push_back(t.rep);
  return dual_mix(tape, d, cur, oth, query, dump);
}

ContextVector ContextModel::compute(Tape& tape, Direction d, const EncodedHistory& h,
                                    Var query) const {
  if (query.value().shape() != Shape{2 * hidden_}) {
    throw DimensionError("context query has shape " + shape_string(query.value().shape()) +
                         ", expected [" + std::to_string(2 * hidden_) + "]");
  }
  ContextVector v;
  if (config_.uses_source()) v.o_src = source_context(tape, d, h, query, &v.attention);
  if (config_.is_mix()) {
    std::tie(v.o_cur_m, v.o_oth_m) = mix_context(tape, d, h, query, &v.attention);
  } else if (config_.uses_target()) {
    v.o_tgt = target_context(tape, d, h, query, &v.attention);
  }
  return v;
}

Injected ContextModel::inject(Tape& tape, Direction d, const ContextVector& ctx) const {
  const std::optional<Var> first = config_.is_mix() ? ctx.o_cur_m : ctx.o_src;
  const std::optional<Var> second = config_.is_mix() ? ctx.o_oth_m : ctx.o_tgt;
  for (const auto& v : {first, second}) {
    if (v && v->value().shape() != Shape{hidden_}) {
      throw ContractError("context vector has shape " + shape_string(v->value().shape()) +
                          ", expected [" + std::to_string(hidden_) + "]");
    }
  }
  Injected out;
  if (config_.init_dec()) {
    Var zero = tape.constant(Tensor({hidden_}));
    Var o = zero;
    if (config_.is_dual()) {
      if (first || second) {
        o = tanh(affine_p(tape, key(d, "init.cat.W"), key(d, "init.cat.b"),
                          concat({first.value_or(zero), second.value_or(zero)})));
      }
    } else if (first || second) {
      o = first ? *first : *second;
    }
    out.init.initial_state = tanh(affine_p(tape, key(d, "init.V"), key(d, "init.b_s"), o));
  }
  if (config_.add_dec()) {
    if (!first && !second) {
      out.base_fallback = !config_.init_dec();
    } else {
      GateInputs g;
      Var* slots[3] = {&g.z, &g.r, &g.h};
      const char* names[3] = {"z", "r", "h"};
      for (int k = 0; k < 3; ++k) {
        std::optional<Var> acc;
        if (first) acc = matmul(p(tape, key(d, std::string("add.W_ss.") + names[k])), *first);
        if (second) {
          Var t = matmul(p(tape, key(d, std::string("add.W_st.") + names[k])), *second);
          acc = acc ? add(*acc, t) : t;
        }
        *slots[k] = *acc;
      }
      out.init.add_dec = g;
    }
  }
  return out;
}

}  // namespace bimsmt
