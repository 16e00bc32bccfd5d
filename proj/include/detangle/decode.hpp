#pragma once

#include <cstddef>
#include <vector>

#include "detangle/corpus.hpp"

namespace detangle {

struct Thresholds {
  double theta = 0.0;  // min argmax probability for keeping a self-link
  double delta = 0.0;  // top-2 gap below which the runner-up is also emitted
};

// Disjoint clusters covering posts [0, n); derived from a LinkSet by
// undirected transitive closure.
struct ThreadPartition {
  std::vector<std::vector<std::size_t>> clusters;  // each sorted; ordered by minimum
};

// Candidate probabilities for one query, aligned with ascending candidate
// indices (the last candidate is the query itself).
struct QueryDistribution {
  std::size_t query = 0;
  std::vector<std::size_t> candidates;
  std::vector<double> probs;
};

// The self-link thresholding rule. With a non-self argmax the argmax alone is
// predicted; a self argmax is replaced by the runner-up when its probability
// is below theta, and accompanied by the runner-up when the top-2 gap is
// below delta. One candidate forces a self-link.
std::vector<std::size_t> decide_links(const QueryDistribution& dist, const Thresholds& t);

// Sequential grid search at 0.01 resolution: theta maximizes self-link F1
// with delta = 0, then delta maximizes cluster F1 with theta fixed. Ties go
// to the smaller threshold. Distributions are fixed inputs; clusters are
// recomputed per grid point over [0, n_posts).
Thresholds tune_thresholds(const std::vector<QueryDistribution>& dev,
                           const LinkSet& dev_gold, std::size_t n_posts);

// Connected components of the undirected reply graph over posts [0, n).
ThreadPartition cluster(const LinkSet& links, std::size_t n);

LinkSet decode_all(const std::vector<QueryDistribution>& dists, const Thresholds& t);

}  // namespace detangle
