#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "detangle/corpus.hpp"
#include "detangle/decode.hpp"

namespace detangle {

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positive = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
};

PRF make_prf(std::size_t tp, std::size_t predicted, std::size_t gold);

// P/R/F over individual reply-to pairs (i, j), self-pairs included.
PRF graph_prf(const LinkSet& pred, const LinkSet& gold);

// P/R/F over threads of size >= 2; a predicted cluster counts only when it is
// set-identical to a gold cluster.
PRF cluster_prf(const ThreadPartition& pred, const ThreadPartition& gold);

// Binary P/R/F of "this query starts a thread": a query is positive when a
// self-link is among its links.
PRF selflink_prf(const LinkSet& pred, const LinkSet& gold);

struct McNemarResult {
  std::size_t n_a_not_b = 0;  // queries correct under A only
  std::size_t n_b_not_a = 0;
  double p_value = 1.0;
  bool significant = false;  // at the 95% level
};

// Paired significance between two models over the gold query set. A query is
// correct when any predicted link is in its gold set. Exact two-sided
// binomial p-value with success probability 1/2 over the discordant queries.
McNemarResult mcnemar(const LinkSet& pred_a, const LinkSet& pred_b, const LinkSet& gold);

// 2 * min(P[X <= k], P[X >= k]) for X ~ Bin(n, 1/2), capped at 1.
double binomial_two_sided(std::size_t k, std::size_t n);

// aligned plain-text table plus `name_p=0.749`-style lines for scripting
std::string metrics_table(const std::vector<std::pair<std::string, PRF>>& rows);
std::string metrics_kv(const std::vector<std::pair<std::string, PRF>>& rows);

}  // namespace detangle
