// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#include "bimsmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace bimsmt {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  if (t.size() < n) return out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + i, t.begin() + i + n)];
  return out;
}

void check_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ContractError(std::string(what) + ": " + std::to_string(a) + " hypotheses but " +
                        std::to_string(b) + " references");
  }
}

}  // namespace

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_length += o.hyp_length;
  ref_length += o.ref_length;
  return *this;
}

BleuStats sentence_bleu_stats(const Tokens& hyp, const Tokens& ref) {
  BleuStats s;
  s.hyp_length = hyp.size();
  s.ref_length = ref.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const NgramCounts h = ngrams(hyp, n);
    const NgramCounts r = ngrams(ref, n);
    for (const auto& [g, c] : h) {
      auto it = r.find(g);
      if (it != r.end()) s.matches[n - 1] += std::min(c, it->second);
    }
    s.totals[n - 1] = hyp.size() >= n ? hyp.size() - n + 1 : 0;
  }
  return s;
}

nlohmann::ordered_json BleuResult::to_json() const {
  nlohmann::ordered_json j;
  j["bleu"] = score;
  j["precisions"] = precisions;
  j["brevity_penalty"] = brevity_penalty;
  j["hyp_length"] = hyp_length;
  j["ref_length"] = ref_length;
  return j;
}

BleuResult bleu_from_stats(const BleuStats& s, bool smooth) {
  BleuResult r;
  r.hyp_length = s.hyp_length;
  r.ref_length = s.ref_length;
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    double m = static_cast<double>(s.matches[n]);
    double t = static_cast<double>(s.totals[n]);
    if (smooth && n > 0) {
      m += 1.0;
      t += 1.0;
    }
    r.precisions[n] = t > 0.0 ? m / t : 0.0;
    if (r.precisions[n] <= 0.0) {
      zero = true;
    } else {
      log_sum += std::log(r.precisions[n]);
    }
  }
  if (s.hyp_length == 0) {
    r.brevity_penalty = 0.0;
  } else if (s.hyp_length >= s.ref_length) {
    r.brevity_penalty = 1.0;
  } else {
    r.brevity_penalty =
        std::exp(1.0 - static_cast<double>(s.ref_length) / static_cast<double>(s.hyp_length));
  }
  r.score = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

BleuResult bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, bool smooth) {
  if (hyps.empty()) throw MetricError("BLEU of an empty hypothesis set");
  check_aligned(hyps.size(), refs.size(), "bleu");
  BleuStats total;
  for (std::size_t i = 0; i < hyps.size(); ++i) total += sentence_bleu_stats(hyps[i], refs[i]);
  return bleu_from_stats(total, smooth);
}

nlohmann::ordered_json SignificanceResult::to_json() const {
  nlohmann::ordered_json j;
  j["p_value"] = p_value;
  j["samples"] = samples;
  j["a_better"] = a_better;
  j["b_better"] = b_better;
  j["ties"] = ties;
  return j;
}

SignificanceResult bootstrap_significance(const std::vector<Tokens>& a,
                                          const std::vector<Tokens>& b,
                                          const std::vector<Tokens>& refs, std::size_t samples,
                                          std::uint64_t seed, bool smooth) {
  check_aligned(a.size(), refs.size(), "bootstrap (system a)");
  check_aligned(b.size(), refs.size(), "bootstrap (system b)");
  if (refs.empty()) throw MetricError("bootstrap over an empty corpus");
  if (samples == 0) throw ConfigError("bootstrap needs at least one resample");
  std::vector<BleuStats> sa, sb;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    sa.push_back(sentence_bleu_stats(a[i], refs[i]));
    sb.push_back(sentence_bleu_stats(b[i], refs[i]));
  }
  Rng rng(seed);
  SignificanceResult r;
  r.samples = samples;
  for (std::size_t k = 0; k < samples; ++k) {
    BleuStats ta, tb;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const std::size_t j = rng.below(refs.size());
      ta += sa[j];
      tb += sb[j];
    }
    const double x = bleu_from_stats(ta, smooth).score;
    const double y = bleu_from_stats(tb, smooth).score;
    if (x > y) {
      ++r.a_better;
    } else if (x < y) {
      ++r.b_better;
    } else {
      ++r.ties;
    }
  }
  r.p_value = (static_cast<double>(r.b_better) + 0.5 * static_cast<double>(r.ties)) /
              static_cast<double>(samples);
  return r;
}

std::vector<TokenDiff> token_diff_report(const std::vector<Tokens>& a,
                                         const std::vector<Tokens>& b,
                                         const std::vector<Tokens>& refs, std::size_t top_k) {
  check_aligned(a.size(), refs.size(), "token diff (system a)");
  check_aligned(b.size(), refs.size(), "token diff (system b)");
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
  auto tally = [&](const Tokens& hyp, const Tokens& ref, bool first) {
    std::map<std::string, std::size_t> h, r;
    for (const auto& t : hyp) ++h[t];
    for (const auto& t : ref) ++r[t];
    for (const auto& [tok, c] : h) {
      auto it = r.find(tok);
      if (it == r.end()) continue;
      auto& slot = counts[tok];
      (first ? slot.first : slot.second) += std::min(c, it->second);
    }
  };
  for (std::size_t i = 0; i < refs.size(); ++i) {
    tally(a[i], refs[i], true);
    tally(b[i], refs[i], false);
  }
  std::vector<TokenDiff> out;
  for (const auto& [tok, c] : counts) {
    out.push_back({tok, c.first, c.second,
                   static_cast<long>(c.first) - static_cast<long>(c.second)});
  }
  std::stable_sort(out.begin(), out.end(), [](const TokenDiff& x, const TokenDiff& y) {
    if (x.diff != y.diff) return x.diff > y.diff;
    return x.token < y.token;
  });
  if (top_k > 0 && out.size() > top_k) out.resize(top_k);
  return out;
}

nlohmann::ordered_json to_json(const std::vector<TokenDiff>& diffs) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& d : diffs) {
    nlohmann::ordered_json e;
    e["token"] = d.token;
    e["a_correct"] = d.a_correct;
    e["b_correct"] = d.b_correct;
    e["diff"] = d.diff;
    j.push_back(e);
  }
  return j;
}

}  // namespace bimsmt
