// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bimsmt/context.hpp"
#include "bimsmt/nmt.hpp"
#include "bimsmt/optim.hpp"

namespace bimsmt {

inline constexpr std::string_view kToolName = "bimsmt";
inline constexpr std::string_view kToolVersion = "1.0.0";
inline constexpr int kJsonlFormatVersion = 1;

/// Every tunable of a run. Read from a flat `key = value` file; values set
/// later (command-line flags) override earlier ones.
struct RunConfig {
  std::size_t hidden = 256;
  std::size_t embed = 256;
  std::size_t align = 128;
  std::size_t vocab_size = 0;  // 0: keep every token
  std::size_t min_count = 1;

  SgdSchedule base_schedule = SgdSchedule::base();
  SgdSchedule rnnlm_schedule = SgdSchedule::base();
  SgdSchedule context_schedule = SgdSchedule::contextual();
  double dropout = 0.2;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;

  ContextConfig context;

  std::size_t max_speakers = 5;
  std::size_t max_len = 100;
  std::string split_ratio = "100:2:3";

  std::size_t bootstrap_samples = 1000;
  bool bleu_smooth = false;
  std::size_t jobs = 1;

  std::map<std::string, std::string> paths;  // keys ending in _path / named inputs

  /// Applies one key/value; throws ConfigError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  /// "default" or "larger" (H=512, embed=512, align=256).
  void apply_preset(std::string_view name);
  void validate() const;

  ModelDims dims(std::size_t vocab) const { return {vocab, embed, hidden, align}; }
  nlohmann::ordered_json to_json() const;
  static std::vector<std::string> keys();
};

/// Parses `key = value` lines; '#' starts a comment. Errors carry the line.
std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text);
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Provenance record written next to every artifact.
struct RunManifest {
  std::string command;
  nlohmann::ordered_json config;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> inputs;   // path -> content hash
  std::map<std::string, std::string> outputs;  // path -> content hash
  std::string timestamp;                       // UTC, ISO 8601

  void add_input(const std::filesystem::path& p);
  void add_output(const std::filesystem::path& p);
  nlohmann::ordered_json to_json() const;
  void write(const std::filesystem::path& path) const;
};

RunManifest make_manifest(std::string command, const RunConfig& config);
std::string utc_timestamp();

}  // namespace bimsmt
