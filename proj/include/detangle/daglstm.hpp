#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "detangle/corpus.hpp"
#include "detangle/graph.hpp"
#include "detangle/model.hpp"

namespace detangle {

// Child labels of the forward direction. The backward direction mirrors them
// on the reversed order: next post, next post by the same user, next post by
// the mentioned user.
enum ChildLabel : std::size_t { kPrev = 0, kSameUser = 1, kMention = 2 };

struct ChildSet {
  std::array<std::optional<std::size_t>, kNumChildLabels> slot;

  bool any() const { return slot[0] || slot[1] || slot[2]; }
};

// Children per post (indices local to the span). Slots may repeat an index
// under different labels. PREV is always built; the other two follow flags.
std::vector<ChildSet> build_children(std::span<const Post> posts, bool same_user_edge,
                                     bool mention_edge);
std::vector<ChildSet> build_reverse_children(std::span<const Post> posts, bool same_user_edge,
                                             bool mention_edge);

struct DagState {
  Node* h = nullptr;
  Node* c = nullptr;
};

// One DAG-LSTM step. Absent children contribute nothing to the gate sums and
// are excluded from the memory-cell max; with no children c = i (.) u.
DagState daglstm_cell(Graph& g, const DagLstmP<Node*>& p, Node* x,
                      const std::vector<std::pair<std::size_t, DagState>>& children);

// Unrolls one direction over the span (reverse=true walks the posts from the
// end using the given mirrored children).
std::vector<DagState> unroll_direction(Graph& g, const DagLstmP<Node*>& p,
                                       const std::vector<Node*>& chi,
                                       const std::vector<ChildSet>& children, bool reverse);

// Contextualized post representations phi; concatenation of both directions
// when bidirectional.
std::vector<Node*> unroll(Graph& g, const BoundParams& bound, const HyperParams& hp,
                          std::span<const Post> posts, const std::vector<Node*>& chi);

Node* gru_step(Graph& g, const GruP<Node*>& p, Node* x, Node* h);

// GRU over the thread's chi sequence; the final state summarizes the thread.
Node* thread_encode(Graph& g, const GruP<Node*>& p, const std::vector<Node*>& thread_chi);

// Incremental thread bookkeeping: union-find over [lo, hi) with ordered
// member lists, fed by reply links as queries are processed.
class ThreadState {
 public:
  ThreadState(std::size_t lo, std::size_t hi);

  void link(std::size_t query, std::size_t j);  // self-links are no-ops
  // cluster members of j with index <= j, ascending, ending at j
  std::vector<std::size_t> thread_of(std::size_t j) const;
  // all cluster members of j, ascending
  const std::vector<std::size_t>& cluster_of(std::size_t j) const;
  // bumped whenever j's cluster changes; usable as a cache key
  std::uint64_t version_of(std::size_t j) const;

 private:
  std::size_t find(std::size_t x) const;
  std::size_t lo_;
  mutable std::vector<std::size_t> parent_;
  std::vector<std::vector<std::size_t>> members_;  // root-indexed, sorted
  std::vector<std::uint64_t> version_;
};

struct LinkDistribution {
  std::size_t query = 0;
  std::vector<std::size_t> candidates;  // ascending; last one is the query itself
  Node* scores = nullptr;
  Node* probs = nullptr;

  std::vector<double> probabilities() const;
};

struct ScorerInputs {
  Node* phi_query = nullptr;
  std::vector<Node*> psi;         // aligned with candidates
  std::vector<Tensor> features;   // f_ij per candidate
};

Node* score_pair(Graph& g, const ScorerP<Node*>& p, const HyperParams& hp, Node* phi_i,
                 Node* psi_j, const Tensor& f_ij, bool train, Rng* rng);

// Softmax over the candidate scores of one query (Eq. of the reply
// distribution). psi_j = phi_j, or concat(phi_j, tau_j) with thread encoding.
LinkDistribution link_distribution(Graph& g, const BoundParams& bound, const HyperParams& hp,
                                   std::span<const Post> posts, const Chunk& chunk,
                                   std::size_t query, const std::vector<Node*>& phi,
                                   const std::vector<Node*>& tau, bool train, Rng* rng);

struct ChunkLoss {
  Node* loss = nullptr;       // null when every query was skipped
  std::size_t queries = 0;    // queries contributing to the mean
  std::size_t skipped = 0;    // queries whose gold links all fell outside the window
  std::size_t dropped_links = 0;  // individual gold links outside the window
};

// Mean NLL over the chunk's target queries; per query the mean over its
// in-window gold links. Gold threads drive the thread encoding.
ChunkLoss chunk_loss(Graph& g, const BoundParams& bound, const HyperParams& hp,
                     const EmbeddingTable& table, std::span<const Post> posts,
                     const Chunk& chunk, bool train, Rng* rng);

// chi for every post of the span (word dropout and max-affine dropout applied
// when training).
std::vector<Node*> encode_span(Graph& g, const BoundParams& bound, const HyperParams& hp,
                               const EmbeddingTable& table, std::span<const Post> posts,
                               bool train, Rng* rng);

// tau for every post of the span from a thread partition (training uses the
// chunk's gold links).
std::vector<Node*> thread_encodings(Graph& g, const BoundParams& bound,
                                    const ThreadState& threads, std::span<const Post> posts,
                                    std::size_t span_begin, const std::vector<Node*>& chi);

}  // namespace detangle
