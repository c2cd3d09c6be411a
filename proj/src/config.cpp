// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#include "bimsmt/config.hpp"

#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <sstream>

#include "bimsmt/checkpoint.hpp"
#include "bimsmt/corpus.hpp"

namespace bimsmt {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value '" + std::string(v) + "' for " + std::string(key));
  }
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  std::string s(v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) {
    throw ConfigError("invalid value '" + s + "' for " + std::string(key));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("invalid boolean '" + std::string(v) + "' for " + std::string(key));
}

using Setter = std::function<void(RunConfig&, std::string_view key, std::string_view value)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = [] {
    std::vector<std::pair<std::string, Setter>> t;
    auto size = [&](const char* name, std::size_t RunConfig::*f) {
      t.emplace_back(name, [f](RunConfig& c, std::string_view k, std::string_view v) {
        c.*f = parse_number<std::size_t>(k, v);
      });
    };
    auto real = [&](const char* name, double RunConfig::*f) {
      t.emplace_back(name, [f](RunConfig& c, std::string_view k, std::string_view v) {
        c.*f = parse_double(k, v);
      });
    };
    auto sched = [&](const std::string& prefix, SgdSchedule RunConfig::*s) {
      t.emplace_back(prefix + "_lr", [s](RunConfig& c, std::string_view k, std::string_view v) {
        (c.*s).initial_lr = parse_double(k, v);
      });
      t.emplace_back(prefix + "_decay", [s](RunConfig& c, std::string_view k, std::string_view v) {
        (c.*s).decay_factor = parse_double(k, v);
      });
      t.emplace_back(prefix + "_decay_start",
                     [s](RunConfig& c, std::string_view k, std::string_view v) {
                       (c.*s).decay_start_epoch = parse_number<int>(k, v);
                     });
      t.emplace_back(prefix + "_epochs", [s](RunConfig& c, std::string_view k, std::string_view v) {
        (c.*s).total_epochs = parse_number<int>(k, v);
      });
    };
    t.emplace_back("preset", [](RunConfig& c, std::string_view, std::string_view v) {
      c.apply_preset(v);
    });
    size("hidden", &RunConfig::hidden);
    size("embed", &RunConfig::embed);
    size("align", &RunConfig::align);
    size("vocab_size", &RunConfig::vocab_size);
    size("min_count", &RunConfig::min_count);
    sched("base", &RunConfig::base_schedule);
    sched("rnnlm", &RunConfig::rnnlm_schedule);
    sched("context", &RunConfig::context_schedule);
    real("dropout", &RunConfig::dropout);
    real("clip_norm", &RunConfig::clip_norm);
    t.emplace_back("seed", [](RunConfig& c, std::string_view k, std::string_view v) {
      c.seed = parse_number<std::uint64_t>(k, v);
    });
    t.emplace_back("source_strategy", [](RunConfig& c, std::string_view, std::string_view v) {
      c.context.source_strategy = parse_source_strategy(v);
    });
    t.emplace_back("history_side", [](RunConfig& c, std::string_view, std::string_view v) {
      c.context.history_side = parse_history_side(v);
    });
    t.emplace_back("injection", [](RunConfig& c, std::string_view, std::string_view v) {
      c.context.injection = parse_injection(v);
    });
    t.emplace_back("ablation_mask", [](RunConfig& c, std::string_view, std::string_view v) {
      c.context.ablation_mask = AblationMask::parse(v);
    });
    t.emplace_back("local_prev_sentence_only",
                   [](RunConfig& c, std::string_view k, std::string_view v) {
                     c.context.local_prev_sentence_only = parse_bool(k, v);
                   });
    size("max_speakers", &RunConfig::max_speakers);
    size("max_len", &RunConfig::max_len);
    t.emplace_back("split_ratio", [](RunConfig& c, std::string_view, std::string_view v) {
      parse_ratio(v);
      c.split_ratio = std::string(v);
    });
    size("bootstrap_samples", &RunConfig::bootstrap_samples);
    t.emplace_back("bleu_smooth", [](RunConfig& c, std::string_view k, std::string_view v) {
      c.bleu_smooth = parse_bool(k, v);
    });
    size("jobs", &RunConfig::jobs);
    for (const char* p : {"train", "dev", "test", "base_en2fr", "base_fr2en", "rnnlm_en",
                          "rnnlm_fr", "context_checkpoint", "out_dir"}) {
      t.emplace_back(p, [p](RunConfig& c, std::string_view, std::string_view v) {
        c.paths[p] = std::string(v);
      });
    }
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  for (const auto& [name, fn] : setters()) {
    if (name == key) {
      fn(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + std::string(key) + "'");
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [name, _] : setters()) out.push_back(name);
  return out;
}

void RunConfig::apply_preset(std::string_view name) {
  if (name == "default") {
    hidden = 256;
    embed = 256;
    align = 128;
  } else if (name == "larger") {
    hidden = 512;
    embed = 512;
    align = 256;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected default or larger)");
  }
}

void RunConfig::validate() const {
  if (hidden == 0 || embed == 0 || align == 0) throw ConfigError("model dimensions must be positive");
  base_schedule.validate();
  rnnlm_schedule.validate();
  context_schedule.validate();
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be non-negative");
  if (max_speakers == 0) throw ConfigError("max_speakers must be positive");
  if (jobs == 0) throw ConfigError("jobs must be positive");
}

nlohmann::ordered_json RunConfig::to_json() const {
  auto sched = [](const SgdSchedule& s) {
    nlohmann::ordered_json j;
    j["lr"] = s.initial_lr;
    j["decay"] = s.decay_factor;
    j["decay_start"] = s.decay_start_epoch;
    j["epochs"] = s.total_epochs;
    return j;
  };
  nlohmann::ordered_json j;
  j["hidden"] = hidden;
  j["embed"] = embed;
  j["align"] = align;
  j["vocab_size"] = vocab_size;
  j["min_count"] = min_count;
  j["base_schedule"] = sched(base_schedule);
  j["rnnlm_schedule"] = sched(rnnlm_schedule);
  j["context_schedule"] = sched(context_schedule);
  j["dropout"] = dropout;
  j["clip_norm"] = clip_norm;
  j["seed"] = seed;
  j["context"] = context.to_json();
  j["max_speakers"] = max_speakers;
  j["max_len"] = max_len;
  j["split_ratio"] = split_ratio;
  j["bootstrap_samples"] = bootstrap_samples;
  j["bleu_smooth"] = bleu_smooth;
  j["jobs"] = jobs;
  j["paths"] = paths;
  return j;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string_view key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::string(key), std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  for (const auto& [k, v] : parse_config_text(ss.str())) {
    try {
      base.set(k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
  return base;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::add_input(const std::filesystem::path& p) { inputs[p.string()] = file_hash(p); }
void RunManifest::add_output(const std::filesystem::path& p) { outputs[p.string()] = file_hash(p); }

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["tool"] = kToolName;
  j["tool_version"] = kToolVersion;
  j["checkpoint_format_version"] = kCheckpointVersion;
  j["jsonl_format_version"] = kJsonlFormatVersion;
  j["command"] = command;
  j["timestamp"] = timestamp;
  j["config"] = config;
  j["seeds"] = seeds;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  return j;
}

void RunManifest::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << to_json().dump(2) << "\n";
}

RunManifest make_manifest(std::string command, const RunConfig& config) {
  RunManifest m;
  m.command = std::move(command);
  m.config = config.to_json();
  m.timestamp = utc_timestamp();
  m.seeds["root"] = config.seed;
  for (const char* c : {"split", "init", "dropout", "shuffle"}) m.seeds[c] = derive_seed(config.seed, c);
  return m;
}

}  // namespace bimsmt
