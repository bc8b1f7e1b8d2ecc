#pragma once

#include <span>
#include <vector>

#include "hiersum/trace.hpp"

namespace hiersum {

/// Fraction of each source token's attention that lands on its own
/// document, averaged over layers and heads and then over non-SOD tokens.
struct SelfDocReport {
  std::vector<double> per_example;
  double corpus_mean = 0.0;
};

/// Per generated token: the population standard deviation of the softmax
/// over its per-document attention aggregates.
struct CdsReport {
  std::vector<std::vector<double>> per_token;
  std::vector<double> per_example;
  double corpus_mean = 0.0;
};

SelfDocReport self_doc_mass(std::span<const AttentionTrace> traces);

CdsReport cds(std::span<const AttentionTrace> traces);

/// Softmax over the aggregates, then population (divide-by-N) standard
/// deviation. Requires at least two aggregates.
double cds_from_aggregates(std::span<const double> aggregates);

}  // namespace hiersum
