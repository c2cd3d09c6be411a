// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bimsmt/corpus.hpp"

namespace bimsmt {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sufficient statistics of corpus BLEU-4; additive over sentences.
struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  BleuStats& operator+=(const BleuStats& o);
};

BleuStats sentence_bleu_stats(const Tokens& hyp, const Tokens& ref);

struct BleuResult {
  double score = 0.0;  // 0..100
  std::array<double, 4> precisions{};
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  nlohmann::ordered_json to_json() const;
};

/// Corpus-level BLEU-4 from accumulated statistics. Without smoothing any
/// zero n-gram precision makes the score 0; `smooth` adds one to the matches
/// and totals of orders 2..4.
BleuResult bleu_from_stats(const BleuStats& s, bool smooth = false);
/// Throws MetricError on an empty or misaligned corpus.
BleuResult bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs,
                bool smooth = false);

struct SignificanceResult {
  double p_value = 0.0;
  std::size_t samples = 0;
  std::size_t a_better = 0, b_better = 0, ties = 0;

  nlohmann::ordered_json to_json() const;
};

/// Paired bootstrap over sentence indices. p is the fraction of resamples in
/// which system a does not beat system b, counting ties as one half.
SignificanceResult bootstrap_significance(const std::vector<Tokens>& a,
                                          const std::vector<Tokens>& b,
                                          const std::vector<Tokens>& refs, std::size_t samples,
                                          std::uint64_t seed, bool smooth = false);

struct TokenDiff {
  std::string token;
  std::size_t a_correct = 0;
  std::size_t b_correct = 0;
  long diff = 0;
};

/// Tokens produced correctly (clipped by reference counts per sentence) by a
/// and by b; sorted by a − b descending, then token. Keeps the first `top_k`
/// (0 keeps all).
std::vector<TokenDiff> token_diff_report(const std::vector<Tokens>& a,
                                         const std::vector<Tokens>& b,
                                         const std::vector<Tokens>& refs, std::size_t top_k = 20);
nlohmann::ordered_json to_json(const std::vector<TokenDiff>& diffs);

}  // namespace bimsmt
