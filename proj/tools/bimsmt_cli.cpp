// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

// Single entry point: extract, train-base, train-rnnlm, train-context,
// translate, evaluate, ablate, stats. Exit codes: 0 success, 1 data or
// configuration error, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bimsmt/checkpoint.hpp"
#include "bimsmt/config.hpp"
#include "bimsmt/corpus.hpp"
#include "bimsmt/metrics.hpp"
#include "bimsmt/model.hpp"
#include "bimsmt/nmt.hpp"
#include "bimsmt/train.hpp"

namespace fs = std::filesystem;
using namespace bimsmt;

namespace {

struct Globals {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::size_t> jobs;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

// default < config file < --set < dedicated flags (applied by each command).
RunConfig resolve_config(const Globals& g) {
  RunConfig cfg;
  if (!g.config_file.empty()) cfg = load_config(g.config_file, cfg);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.jobs) cfg.jobs = *g.jobs;
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

std::string require_path(const RunConfig& cfg, const std::string& flag_value,
                         const std::string& key, const std::string& what) {
  if (!flag_value.empty()) return flag_value;
  auto it = cfg.paths.find(key);
  if (it != cfg.paths.end() && !it->second.empty()) return it->second;
  throw ConfigError("no " + what + " given (flag or config key '" + key + "')");
}

std::string require_checkpoint(const RunConfig& cfg, const std::string& flag_value) {
  try {
    return require_path(cfg, flag_value, "context_checkpoint", "checkpoint");
  } catch (const ConfigError&) {
    throw DataError("checkpoint not found: pass --checkpoint or set context_checkpoint");
  }
}

std::function<void(const std::string&)> logger(const Globals& g) {
  if (g.quiet) return {};
  return [](const std::string& line) { std::cerr << line << "\n"; };
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

fs::path manifest_path_for(const fs::path& artifact) {
  return artifact.string() + ".manifest.json";
}

void save_with_manifest(const fs::path& out, const Checkpoint& ckpt, RunManifest& m) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out, ckpt);
  m.add_output(out);
  m.write(manifest_path_for(out));
}

Vocabulary vocab_from(const std::vector<Conversation>& train, const RunConfig& cfg) {
  return build_vocab(all_sentences(train), "joint", {cfg.min_count, cfg.vocab_size});
}

TrainOptions train_options(const RunConfig& cfg, const SgdSchedule& schedule, const Globals& g) {
  TrainOptions o;
  o.schedule = schedule;
  o.dropout = cfg.dropout;
  o.clip_norm = cfg.clip_norm;
  o.seed = cfg.seed;
  o.log = logger(g);
  return o;
}

// One base model whose en2fr parameters come from `a` and fr2en from `b`.
BaseNmt load_base(const std::string& en2fr_path, const std::string& fr2en_path, RunManifest& m) {
  Checkpoint a = load_checkpoint(en2fr_path);
  m.add_input(en2fr_path);
  if (fs::equivalent(en2fr_path, fr2en_path)) return BaseNmt::from_checkpoint(a);
  Checkpoint b = load_checkpoint(fr2en_path);
  m.add_input(fr2en_path);
  if (a.metadata.value("vocab", nlohmann::json()) != b.metadata.value("vocab", nlohmann::json()) ||
      a.metadata.value("dims", nlohmann::json()) != b.metadata.value("dims", nlohmann::json())) {
    throw ConfigError("base checkpoints for en2fr and fr2en disagree on vocabulary or dimensions");
  }
  const std::string fr2en = direction_prefix(Direction::kForeignToEn);
  for (auto& [name, t] : b.tensors) {
    if (name.rfind(fr2en, 0) == 0) a.tensors[name] = t;
  }
  return BaseNmt::from_checkpoint(a);
}

RnnLm load_lm(const std::string& path, Language expect, RunManifest& m) {
  RnnLm lm = RnnLm::from_checkpoint(load_checkpoint(path));
  m.add_input(path);
  if (lm.language() != expect) {
    throw ConfigError(path + " holds the " + std::string(to_string(lm.language())) +
                      " language model, expected " + std::string(to_string(expect)));
  }
  return lm;
}

std::vector<Conversation> load_corpus(const std::string& path, RunManifest* m) {
  auto convs = read_jsonl(path);
  if (m) m->add_input(path);
  return convs;
}

// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string in, out;
  std::optional<std::size_t> max_speakers, max_len;
  std::string ratio;
};

int run_extract(const Globals& g, const ExtractArgs& a) {
  RunConfig cfg = resolve_config(g);
  if (a.max_speakers) cfg.max_speakers = *a.max_speakers;
  if (a.max_len) cfg.max_len = *a.max_len;
  if (!a.ratio.empty()) cfg.set("split_ratio", a.ratio);
  cfg.validate();
  const fs::path out = a.out;
  fs::create_directories(out);
  RunManifest m = make_manifest("extract", cfg);
  const auto files = list_corpus_files(a.in);
  for (const auto& f : files) m.add_input(f);
  ExtractResult r = extract_files(files, {cfg.max_speakers, cfg.max_len}, cfg.jobs);
  CorpusSplit split =
      split_corpus(r.conversations, parse_ratio(cfg.split_ratio), derive_seed(cfg.seed, "split"));
  nlohmann::ordered_json stats;
  stats["files"] = r.files;
  stats["rejected_conversations"] = r.rejected;
  stats["all"] = corpus_stats(r.conversations).to_json();
  const std::pair<const char*, const std::vector<Conversation>*> parts[] = {
      {"train", &split.train}, {"dev", &split.dev}, {"test", &split.test}};
  for (const auto& [name, convs] : parts) {
    const fs::path p = out / (std::string(name) + ".jsonl");
    write_jsonl(p, *convs);
    m.add_output(p);
    stats[name] = corpus_stats(*convs).to_json();
  }
  write_text(out / "stats.json", stats.dump(2) + "\n");
  m.add_output(out / "stats.json");
  m.write(out / "manifest.json");
  if (!g.quiet) std::cout << stats.dump(2) << "\n";
  return 0;
}

struct TrainBaseArgs {
  std::string dir = "en2fr", train, dev, out, init;
};

int run_train_base(const Globals& g, const TrainBaseArgs& a) {
  RunConfig cfg = resolve_config(g);
  cfg.validate();
  const Direction d = parse_direction(a.dir);
  RunManifest m = make_manifest("train-base --dir " + a.dir, cfg);
  const auto train = load_corpus(require_path(cfg, a.train, "train", "training corpus"), &m);
  std::vector<Conversation> dev;
  if (!a.dev.empty() || cfg.paths.count("dev")) dev = load_corpus(require_path(cfg, a.dev, "dev", ""), &m);
  const std::string out = require_path(cfg, a.out, "base_" + a.dir, "output checkpoint");

  std::optional<BaseNmt> model;
  if (!a.init.empty()) {
    model.emplace(BaseNmt::from_checkpoint(load_checkpoint(a.init)));
    m.add_input(a.init);
  } else {
    Vocabulary vocab = vocab_from(train, cfg);
    const ModelDims dims = cfg.dims(vocab.size());
    model.emplace(std::move(vocab), dims, cfg.seed);
  }
  const auto tr = sentence_pairs(train, d, model->vocab());
  const auto dv = sentence_pairs(dev, d, model->vocab());
  TrainLog log = train_base(*model, d, tr, dv, train_options(cfg, cfg.base_schedule, g));
  Checkpoint ckpt = model->to_checkpoint();
  ckpt.metadata["trained_direction"] = a.dir;
  ckpt.metadata["train_log"] = log.to_json();
  save_with_manifest(out, ckpt, m);
  return 0;
}

struct TrainLmArgs {
  std::string lang = "en", train, dev, out;
};

int run_train_rnnlm(const Globals& g, const TrainLmArgs& a) {
  RunConfig cfg = resolve_config(g);
  cfg.validate();
  const Language lang = parse_language(a.lang);
  RunManifest m = make_manifest("train-rnnlm --lang " + a.lang, cfg);
  const auto train = load_corpus(require_path(cfg, a.train, "train", "training corpus"), &m);
  std::vector<Conversation> dev;
  if (!a.dev.empty() || cfg.paths.count("dev")) dev = load_corpus(require_path(cfg, a.dev, "dev", ""), &m);
  const std::string key = lang == Language::kEnglish ? "rnnlm_en" : "rnnlm_fr";
  const std::string out = require_path(cfg, a.out, key, "output checkpoint");
  Vocabulary vocab = vocab_from(train, cfg);
  const ModelDims dims = cfg.dims(vocab.size());
  RnnLm lm(std::move(vocab), lang, dims, cfg.seed);
  TrainLog log = train_rnnlm(lm, sentences_in(train, lang), sentences_in(dev, lang),
                             train_options(cfg, cfg.rnnlm_schedule, g));
  Checkpoint ckpt = lm.to_checkpoint();
  ckpt.metadata["train_log"] = log.to_json();
  save_with_manifest(out, ckpt, m);
  return 0;
}

struct TrainContextArgs {
  std::string train, dev, out, base_en2fr, base_fr2en, rnnlm_en, rnnlm_fr;
};

int run_train_context(const Globals& g, const TrainContextArgs& a) {
  RunConfig cfg = resolve_config(g);
  cfg.validate();
  RunManifest m = make_manifest("train-context", cfg);
  const std::string out = require_path(cfg, a.out, "context_checkpoint", "output checkpoint");
  BaseNmt base = load_base(require_path(cfg, a.base_en2fr, "base_en2fr", "en2fr base checkpoint"),
                           require_path(cfg, a.base_fr2en, "base_fr2en", "fr2en base checkpoint"), m);
  RnnLm en = load_lm(require_path(cfg, a.rnnlm_en, "rnnlm_en", "English RNNLM"), Language::kEnglish, m);
  RnnLm fr = load_lm(require_path(cfg, a.rnnlm_fr, "rnnlm_fr", "Foreign RNNLM"), Language::kForeign, m);
  const auto train = load_corpus(require_path(cfg, a.train, "train", "training corpus"), &m);
  std::vector<Conversation> dev;
  if (!a.dev.empty() || cfg.paths.count("dev")) dev = load_corpus(require_path(cfg, a.dev, "dev", ""), &m);
  ConversationalModel model(std::move(base), std::move(en), std::move(fr), cfg.context, cfg.seed);
  ContextTrainOptions o;
  o.schedule = cfg.context_schedule;
  o.dropout = cfg.dropout;
  o.clip_norm = cfg.clip_norm;
  o.seed = cfg.seed;
  o.log = logger(g);
  TrainLog log = train_contextual(model, train, dev, o);
  Checkpoint ckpt = model.to_checkpoint();
  ckpt.metadata["train_log"] = log.to_json();
  save_with_manifest(out, ckpt, m);
  return 0;
}

struct TranslateArgs {
  std::string in, out, checkpoint, fr2en, attention, mask;
  bool local = false;
};

int run_translate(const Globals& g, const TranslateArgs& a) {
  RunConfig cfg = resolve_config(g);
  cfg.validate();
  RunManifest m = make_manifest("translate", cfg);
  const std::string ckpt_path = require_checkpoint(cfg, a.checkpoint);
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  const auto convs = load_corpus(a.in, &m);
  const std::string kind = ckpt.metadata.value("kind", std::string());
  std::vector<ConversationTranslation> out;
  if (kind == "base-nmt") {
    const BaseNmt base = load_base(ckpt_path, a.fr2en.empty() ? ckpt_path : a.fr2en, m);
    out = translate_corpus(
        convs, [&](const Conversation& c) { return translate_conversation(base, c); }, cfg.jobs);
  } else {
    m.add_input(ckpt_path);
    ConversationalModel model = ConversationalModel::from_checkpoint(ckpt);
    if (!a.mask.empty() || a.local) {
      model.set_ablation(a.mask.empty() ? model.config().ablation_mask : AblationMask::parse(a.mask),
                         a.local);
    }
    const bool dump = !a.attention.empty();
    out = translate_corpus(
        convs, [&](const Conversation& c) { return translate_conversation(model, c, dump); },
        cfg.jobs);
  }
  std::vector<Conversation> hyps;
  nlohmann::json attention = nlohmann::json::array();
  std::size_t fallbacks = 0;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    hyps.push_back(with_hypotheses(convs[i], out[i]));
    attention.push_back({{"id", out[i].id}, {"sentences", out[i].attention}});
    fallbacks += out[i].base_fallbacks;
  }
  const fs::path out_path = a.out;
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_jsonl(out_path, hyps);
  m.add_output(out_path);
  if (!a.attention.empty()) {
    write_text(a.attention, attention.dump() + "\n");
    m.add_output(a.attention);
  }
  if (fallbacks > 0 && !g.quiet) {
    std::cerr << fallbacks << " sentence(s) fell back to the base initial state\n";
  }
  m.write(manifest_path_for(out_path));
  return 0;
}

struct EvaluateArgs {
  std::string hyp, ref, baseline, checkpoint, out;
};

std::string score_table(const std::vector<std::pair<std::string, EvalScores>>& rows) {
  std::size_t w = 6;
  for (const auto& r : rows) w = std::max(w, r.first.size());
  auto cell = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%10.2f", v);
    return std::string(buf);
  };
  std::string s = std::string("System") + std::string(w - 6, ' ') + "     En-Fr     Fr-En   Overall\n";
  for (const auto& [name, sc] : rows) {
    s += name + std::string(w - name.size(), ' ') + cell(sc.en2fr) + cell(sc.fr2en) +
         cell(sc.overall) + "\n";
  }
  return s;
}

int run_evaluate(const Globals& g, const EvaluateArgs& a) {
  RunConfig cfg = resolve_config(g);
  cfg.validate();
  RunManifest m = make_manifest("evaluate", cfg);
  const auto refs = load_corpus(a.ref, &m);
  const auto hyps = load_corpus(a.hyp, &m);
  const AlignedOutputs aligned = align_outputs(refs, hyps);
  EvalReport report;
  report.bleu = score_outputs(aligned, cfg.bleu_smooth);
  std::vector<std::pair<std::string, EvalScores>> rows{{"hypothesis", report.bleu}};
  if (!a.baseline.empty()) {
    const auto base = align_outputs(refs, load_corpus(a.baseline, &m));
    rows.emplace_back("baseline", score_outputs(base, cfg.bleu_smooth));
    report.significance =
        bootstrap_significance(aligned.all_hyps, base.all_hyps, aligned.all_refs,
                               cfg.bootstrap_samples, derive_seed(cfg.seed, "bootstrap"),
                               cfg.bleu_smooth);
    report.token_diff = token_diff_report(aligned.all_hyps, base.all_hyps, aligned.all_refs);
  }
  if (!a.checkpoint.empty()) {
    Checkpoint ckpt = load_checkpoint(a.checkpoint);
    m.add_input(a.checkpoint);
    ConversationalModel model = ConversationalModel::from_checkpoint(ckpt);
    report.perplexity = contextual_perplexity(model, prepare_corpus(refs, model));
  }
  const std::string json = report.to_json().dump(2) + "\n";
  if (!a.out.empty()) {
    write_text(a.out, json);
    write_text(a.out + ".txt", score_table(rows));
    m.add_output(a.out);
    m.add_output(a.out + ".txt");
    m.write(manifest_path_for(a.out));
  }
  std::cout << json << score_table(rows);
  return 0;
}

struct AblateArgs {
  std::string in, checkpoint, base, base_fr2en, out;
  std::vector<std::string> masks;
};

int run_ablate(const Globals& g, const AblateArgs& a) {
  RunConfig cfg = resolve_config(g);
  cfg.validate();
  RunManifest m = make_manifest("ablate", cfg);
  const std::string ckpt_path = require_checkpoint(cfg, a.checkpoint);
  ConversationalModel model = ConversationalModel::from_checkpoint(load_checkpoint(ckpt_path));
  m.add_input(ckpt_path);
  std::optional<BaseNmt> base;
  if (!a.base.empty()) {
    base.emplace(load_base(a.base, a.base_fr2en.empty() ? a.base : a.base_fr2en, m));
  }
  const auto convs = load_corpus(require_path(cfg, a.in, "test", "evaluation corpus"), &m);
  std::vector<AblationMask> masks;
  for (const auto& s : a.masks) masks.push_back(AblationMask::parse(s));
  if (masks.empty()) masks = default_ablation_masks();
  const auto rows = run_ablation(model, base ? &*base : nullptr, convs, masks, cfg.jobs,
                                 cfg.bleu_smooth);
  const std::string json = ablation_json(rows).dump(2) + "\n";
  const std::string table = ablation_table(rows);
  if (!a.out.empty()) {
    const fs::path dir = a.out;
    fs::create_directories(dir);
    write_text(dir / "ablation.json", json);
    write_text(dir / "ablation.txt", table);
    m.add_output(dir / "ablation.json");
    m.add_output(dir / "ablation.txt");
    m.write(dir / "manifest.json");
  }
  std::cout << table;
  return 0;
}

int run_stats(const Globals& g, const std::string& in) {
  resolve_config(g).validate();
  std::cout << corpus_stats(read_jsonl(in)).to_json().dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bilingual multi-speaker conversational translation toolkit", std::string(kToolName)};
  app.require_subcommand(1);
  Globals g;
  app.set_version_flag("--version",
                       std::string(kToolName) + " " + std::string(kToolVersion) +
                           "\ncheckpoint format " + std::to_string(kCheckpointVersion) +
                           "\njsonl format " + std::to_string(kJsonlFormatVersion));
  app.add_option("--config", g.config_file, "flat key=value configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "override one configuration key (key=value)");
  app.add_option("--jobs", g.jobs, "worker threads for extraction, translation and evaluation")
      ->check(CLI::PositiveNumber);
  app.add_option("--seed", g.seed, "root seed");
  app.add_flag("--quiet", g.quiet, "suppress progress output");

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "tagged corpus files to split JSONL");
  extract->add_option("--in", ex.in, "corpus file or directory")->required();
  extract->add_option("--out", ex.out, "output directory")->required();
  extract->add_option("--max-speakers", ex.max_speakers);
  extract->add_option("--max-len", ex.max_len);
  extract->add_option("--ratio", ex.ratio, "train:dev:test");

  TrainBaseArgs tb;
  auto* train_base_cmd = app.add_subcommand("train-base", "train one direction of the base model");
  train_base_cmd->add_option("--dir", tb.dir, "en2fr or fr2en")->check(CLI::IsMember({"en2fr", "fr2en"}));
  train_base_cmd->add_option("--train", tb.train);
  train_base_cmd->add_option("--dev", tb.dev);
  train_base_cmd->add_option("--out", tb.out);
  train_base_cmd->add_option("--init", tb.init, "continue from an existing base checkpoint");

  TrainLmArgs tl;
  auto* train_lm_cmd = app.add_subcommand("train-rnnlm", "train a bidirectional RNN language model");
  train_lm_cmd->add_option("--lang", tl.lang, "en or fr")->check(CLI::IsMember({"en", "fr"}));
  train_lm_cmd->add_option("--train", tl.train);
  train_lm_cmd->add_option("--dev", tl.dev);
  train_lm_cmd->add_option("--out", tl.out);

  TrainContextArgs tc;
  auto* train_ctx_cmd = app.add_subcommand("train-context", "train the contextual model");
  train_ctx_cmd->add_option("--train", tc.train);
  train_ctx_cmd->add_option("--dev", tc.dev);
  train_ctx_cmd->add_option("--out", tc.out);
  train_ctx_cmd->add_option("--base-en2fr", tc.base_en2fr);
  train_ctx_cmd->add_option("--base-fr2en", tc.base_fr2en);
  train_ctx_cmd->add_option("--rnnlm-en", tc.rnnlm_en);
  train_ctx_cmd->add_option("--rnnlm-fr", tc.rnnlm_fr);

  TranslateArgs tr;
  auto* translate = app.add_subcommand("translate", "greedy translation of conversations");
  translate->add_option("--in", tr.in)->required();
  translate->add_option("--out", tr.out)->required();
  translate->add_option("--checkpoint", tr.checkpoint, "contextual or base checkpoint");
  translate->add_option("--fr2en-checkpoint", tr.fr2en,
                        "base checkpoint supplying the fr2en direction");
  translate->add_option("--attention", tr.attention, "write attention weights as JSON");
  translate->add_option("--mask", tr.mask, "context categories to keep");
  translate->add_flag("--local", tr.local, "keep only the latest previous sentence");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "BLEU, significance and token diff");
  evaluate->add_option("--hyp", ev.hyp)->required();
  evaluate->add_option("--ref", ev.ref)->required();
  evaluate->add_option("--baseline", ev.baseline, "baseline hypotheses for significance");
  evaluate->add_option("--checkpoint", ev.checkpoint, "contextual checkpoint for perplexity");
  evaluate->add_option("--out", ev.out, "JSON report path");

  AblateArgs ab;
  auto* ablate = app.add_subcommand("ablate", "BLEU under context-category masks");
  ablate->add_option("--in", ab.in);
  ablate->add_option("--checkpoint", ab.checkpoint);
  ablate->add_option("--base", ab.base, "base checkpoint for the reference row");
  ablate->add_option("--base-fr2en", ab.base_fr2en, "base checkpoint supplying fr2en");
  ablate->add_option("--masks", ab.masks, "one mask per value, e.g. current_turn,prev_turns_other_lang");
  ablate->add_option("--out", ab.out, "output directory");

  std::string stats_in;
  auto* stats = app.add_subcommand("stats", "corpus statistics of a JSONL file");
  stats->add_option("--in", stats_in)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*extract) return run_extract(g, ex);
    if (*train_base_cmd) return run_train_base(g, tb);
    if (*train_lm_cmd) return run_train_rnnlm(g, tl);
    if (*train_ctx_cmd) return run_train_context(g, tc);
    if (*translate) return run_translate(g, tr);
    if (*evaluate) return run_evaluate(g, ev);
    if (*ablate) return run_ablate(g, ab);
    if (*stats) return run_stats(g, stats_in);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
