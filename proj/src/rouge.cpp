#include "hiersum/rouge.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "hiersum/errors.hpp"

namespace hiersum {

namespace {

double f1_of(double p, double r) {
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

std::map<std::vector<std::string>, int> ngram_counts(std::span<const std::string> tokens, int n) {
  std::map<std::vector<std::string>, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    std::vector<std::string> gram(tokens.begin() + i, tokens.begin() + i + n);
    ++counts[gram];
  }
  return counts;
}

}  // namespace

std::vector<std::string> rouge_tokenize(const std::string& text) {
  std::string lowered = text;
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream in(lowered);
  std::vector<std::string> tokens;
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

RougeEntry rouge_n(std::span<const std::string> hyp, std::span<const std::string> ref, int n) {
  if (n < 1) throw ValidationError("rouge_n: n must be >= 1");
  RougeEntry entry;
  auto hyp_counts = ngram_counts(hyp, n);
  auto ref_counts = ngram_counts(ref, n);
  long long hyp_total = 0;
  long long ref_total = 0;
  for (const auto& [gram, c] : hyp_counts) hyp_total += c;
  for (const auto& [gram, c] : ref_counts) ref_total += c;
  if (hyp_total == 0 || ref_total == 0) return entry;
  long long overlap = 0;
  for (const auto& [gram, c] : hyp_counts) {
    auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) overlap += std::min(c, it->second);
  }
  entry.precision = static_cast<double>(overlap) / static_cast<double>(hyp_total);
  entry.recall = static_cast<double>(overlap) / static_cast<double>(ref_total);
  entry.f1 = f1_of(entry.precision, entry.recall);
  return entry;
}

int lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  const size_t m = a.size();
  const size_t n = b.size();
  std::vector<int> prev(n + 1, 0);
  std::vector<int> cur(n + 1, 0);
  for (size_t i = 1; i <= m; ++i) {
    for (size_t j = 1; j <= n; ++j) {
      if (a[i - 1] == b[j - 1]) {
        cur[j] = prev[j - 1] + 1;
      } else {
        cur[j] = std::max(prev[j], cur[j - 1]);
      }
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

RougeEntry rouge_l(std::span<const std::string> hyp, std::span<const std::string> ref) {
  RougeEntry entry;
  if (hyp.empty() || ref.empty()) return entry;
  const int lcs = lcs_length(hyp, ref);
  entry.precision = static_cast<double>(lcs) / static_cast<double>(hyp.size());
  entry.recall = static_cast<double>(lcs) / static_cast<double>(ref.size());
  entry.f1 = f1_of(entry.precision, entry.recall);
  return entry;
}

RougeScore rouge_score(const std::string& hyp, const std::string& ref) {
  const std::vector<std::string> h = rouge_tokenize(hyp);
  const std::vector<std::string> r = rouge_tokenize(ref);
  RougeScore score;
  score.rouge1 = rouge_n(h, r, 1);
  score.rouge2 = rouge_n(h, r, 2);
  score.rougeL = rouge_l(h, r);
  return score;
}

RougeScore rouge_corpus(std::span<const std::string> hyps, std::span<const std::string> refs) {
  if (hyps.size() != refs.size()) {
    throw ValidationError("rouge_corpus: hypothesis and reference counts differ (" +
                          std::to_string(hyps.size()) + " vs " + std::to_string(refs.size()) +
                          ")");
  }
  if (hyps.empty()) throw ValidationError("rouge_corpus: no pairs to score");
  RougeScore mean;
  auto accumulate = [](RougeEntry& acc, const RougeEntry& x) {
    acc.precision += x.precision;
    acc.recall += x.recall;
    acc.f1 += x.f1;
  };
  for (size_t i = 0; i < hyps.size(); ++i) {
    const RougeScore s = rouge_score(hyps[i], refs[i]);
    accumulate(mean.rouge1, s.rouge1);
    accumulate(mean.rouge2, s.rouge2);
    accumulate(mean.rougeL, s.rougeL);
  }
  const double inv = 1.0 / static_cast<double>(hyps.size());
  for (RougeEntry* e : {&mean.rouge1, &mean.rouge2, &mean.rougeL}) {
    e->precision *= inv;
    e->recall *= inv;
    e->f1 *= inv;
  }
  return mean;
}

}  // namespace hiersum
