#pragma once

#include <span>
#include <string>
#include <vector>

namespace hiersum {

struct RougeEntry {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct RougeScore {
  RougeEntry rouge1;
  RougeEntry rouge2;
  RougeEntry rougeL;
};

/// Lowercases and splits on whitespace.
std::vector<std::string> rouge_tokenize(const std::string& text);

/// Clipped n-gram overlap. Empty hyp or ref scores zero rather than erroring.
RougeEntry rouge_n(std::span<const std::string> hyp, std::span<const std::string> ref, int n);

/// Longest-common-subsequence overlap over whole token sequences.
RougeEntry rouge_l(std::span<const std::string> hyp, std::span<const std::string> ref);

int lcs_length(std::span<const std::string> a, std::span<const std::string> b);

RougeScore rouge_score(const std::string& hyp, const std::string& ref);

/// Per-entry arithmetic mean of rouge_score over aligned pairs.
RougeScore rouge_corpus(std::span<const std::string> hyps, std::span<const std::string> refs);

}  // namespace hiersum
