#include "detangle/decode.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "detangle/eval.hpp"

namespace detangle {

namespace {

// index of the largest probability; ties go to the first (lowest candidate)
std::size_t argmax_at(const std::vector<double>& probs, std::size_t skip) {
  std::size_t best = probs.size();
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (k == skip) continue;
    if (best == probs.size() || probs[k] > probs[best]) best = k;
  }
  return best;
}

struct UnionFind {
  explicit UnionFind(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
  std::vector<std::size_t> parent;
};

}  // namespace

std::vector<std::size_t> decide_links(const QueryDistribution& dist, const Thresholds& t) {
  if (dist.candidates.empty()) throw std::runtime_error("decode: empty candidate set");
  if (dist.candidates.size() != dist.probs.size())
    throw std::runtime_error("decode: candidate/probability size mismatch");
  if (dist.candidates.size() == 1) return {dist.query};

  std::size_t top = argmax_at(dist.probs, dist.probs.size());
  std::size_t runner = argmax_at(dist.probs, top);
  if (dist.candidates[top] != dist.query) return {dist.candidates[top]};

  double p_hat = dist.probs[top];
  if (p_hat < t.theta) return {dist.candidates[runner]};
  std::vector<std::size_t> out = {dist.query};
  if (p_hat - dist.probs[runner] < t.delta) out.push_back(dist.candidates[runner]);
  return out;
}

LinkSet decode_all(const std::vector<QueryDistribution>& dists, const Thresholds& t) {
  LinkSet out;
  for (const QueryDistribution& d : dists)
    for (std::size_t j : decide_links(d, t)) out.add(d.query, j);
  return out;
}

Thresholds tune_thresholds(const std::vector<QueryDistribution>& dev, const LinkSet& dev_gold,
                           std::size_t n_posts) {
  if (dev.empty()) throw std::runtime_error("tune: empty dev distributions");
  Thresholds best;
  double best_f1 = -1.0;
  for (int step = 0; step <= 100; ++step) {
    Thresholds t{step / 100.0, 0.0};
    PRF prf = selflink_prf(decode_all(dev, t), dev_gold);
    if (prf.f1 > best_f1 + 1e-12) {
      best_f1 = prf.f1;
      best.theta = t.theta;
    }
  }
  ThreadPartition gold_part = cluster(dev_gold, n_posts);
  double best_cluster = -1.0;
  double best_delta = 0.0;
  for (int step = 0; step <= 100; ++step) {
    Thresholds t{best.theta, step / 100.0};
    PRF prf = cluster_prf(cluster(decode_all(dev, t), n_posts), gold_part);
    if (prf.f1 > best_cluster + 1e-12) {
      best_cluster = prf.f1;
      best_delta = t.delta;
    }
  }
  best.delta = best_delta;
  return best;
}

ThreadPartition cluster(const LinkSet& links, std::size_t n) {
  UnionFind uf(n);
  for (const auto& [q, ls] : links.links) {
    if (q >= n) throw std::runtime_error("cluster: query index out of range");
    for (std::size_t j : ls) {
      if (j >= n) throw std::runtime_error("cluster: link index out of range");
      uf.unite(q, j);
    }
  }
  std::vector<std::vector<std::size_t>> by_root(n);
  for (std::size_t i = 0; i < n; ++i) by_root[uf.find(i)].push_back(i);
  ThreadPartition part;
  for (std::size_t r = 0; r < n; ++r)
    if (!by_root[r].empty()) part.clusters.push_back(std::move(by_root[r]));
  return part;
}

}  // namespace detangle
