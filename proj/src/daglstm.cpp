#include "detangle/daglstm.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

#include "detangle/features.hpp"

namespace detangle {

namespace {

std::string fold(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::vector<ChildSet> build_children(std::span<const Post> posts, bool same_user_edge,
                                     bool mention_edge) {
  std::vector<ChildSet> out(posts.size());
  std::map<std::string, std::size_t> last_by_user;
  for (std::size_t i = 0; i < posts.size(); ++i) {
    const Post& post = posts[i];
    if (i > 0) out[i].slot[kPrev] = i - 1;
    if (same_user_edge && !post.is_system) {
      auto it = last_by_user.find(fold(post.user));
      if (it != last_by_user.end()) out[i].slot[kSameUser] = it->second;
    }
    if (mention_edge && post.mention) {
      auto it = last_by_user.find(fold(*post.mention));
      if (it != last_by_user.end()) out[i].slot[kMention] = it->second;
    }
    if (!post.is_system) last_by_user[fold(post.user)] = i;
  }
  return out;
}

std::vector<ChildSet> build_reverse_children(std::span<const Post> posts, bool same_user_edge,
                                             bool mention_edge) {
  std::vector<ChildSet> out(posts.size());
  std::map<std::string, std::size_t> next_by_user;
  for (std::size_t i = posts.size(); i-- > 0;) {
    const Post& post = posts[i];
    if (i + 1 < posts.size()) out[i].slot[kPrev] = i + 1;
    if (same_user_edge && !post.is_system) {
      auto it = next_by_user.find(fold(post.user));
      if (it != next_by_user.end()) out[i].slot[kSameUser] = it->second;
    }
    if (mention_edge && post.mention) {
      auto it = next_by_user.find(fold(*post.mention));
      if (it != next_by_user.end()) out[i].slot[kMention] = it->second;
    }
    if (!post.is_system) next_by_user[fold(post.user)] = i;
  }
  return out;
}

DagState daglstm_cell(Graph& g, const DagLstmP<Node*>& p, Node* x,
                      const std::vector<std::pair<std::size_t, DagState>>& children) {
  auto gate_pre = [&](Node* wx, const std::array<Node*, kNumChildLabels>& wh, Node* b) {
    Node* pre = g.matvec(wx, x);
    for (const auto& [label, state] : children) pre = g.add(pre, g.matvec(wh[label], state.h));
    return g.add(pre, b);
  };
  Node* i_gate = g.sigmoid(gate_pre(p.w_ix, p.w_ih, p.b_i));
  Node* o_gate = g.sigmoid(gate_pre(p.w_ox, p.w_oh, p.b_o));
  Node* u_gate = g.tanh(gate_pre(p.w_ux, p.w_uh, p.b_u));
  Node* c = g.mul(i_gate, u_gate);
  if (!children.empty()) {
    std::vector<Node*> gated;
    gated.reserve(children.size());
    for (const auto& [label, state] : children) {
      Node* pre = g.matvec(p.w_fx, x);
      for (const auto& [label2, state2] : children)
        pre = g.add(pre, g.matvec(p.w_fh[label][label2], state2.h));
      Node* f = g.sigmoid(g.add(pre, p.b_f));
      gated.push_back(g.mul(f, state.c));
    }
    c = g.add(c, g.max_list(std::move(gated)));
  }
  Node* h = g.mul(o_gate, g.tanh(c));
  return {h, c};
}

std::vector<DagState> unroll_direction(Graph& g, const DagLstmP<Node*>& p,
                                       const std::vector<Node*>& chi,
                                       const std::vector<ChildSet>& children, bool reverse) {
  std::size_t n = chi.size();
  if (children.size() != n) throw std::runtime_error("unroll: children/chi size mismatch");
  std::vector<DagState> states(n);
  auto step = [&](std::size_t i) {
    std::vector<std::pair<std::size_t, DagState>> kids;
    for (std::size_t label = 0; label < kNumChildLabels; ++label)
      if (children[i].slot[label]) kids.emplace_back(label, states[*children[i].slot[label]]);
    states[i] = daglstm_cell(g, p, chi[i], kids);
  };
  if (reverse)
    for (std::size_t i = n; i-- > 0;) step(i);
  else
    for (std::size_t i = 0; i < n; ++i) step(i);
  return states;
}

std::vector<Node*> unroll(Graph& g, const BoundParams& bound, const HyperParams& hp,
                          std::span<const Post> posts, const std::vector<Node*>& chi) {
  auto fwd_children = build_children(posts, hp.edge_same_user, hp.edge_mention);
  auto fwd = unroll_direction(g, bound.dag_fwd, chi, fwd_children, false);
  std::vector<Node*> phi(chi.size());
  if (!hp.bidirectional) {
    for (std::size_t i = 0; i < chi.size(); ++i) phi[i] = fwd[i].h;
    return phi;
  }
  auto bwd_children = build_reverse_children(posts, hp.edge_same_user, hp.edge_mention);
  auto bwd = unroll_direction(g, bound.dag_bwd, chi, bwd_children, true);
  for (std::size_t i = 0; i < chi.size(); ++i) phi[i] = g.concat({fwd[i].h, bwd[i].h});
  return phi;
}

Node* gru_step(Graph& g, const GruP<Node*>& p, Node* x, Node* h) {
  Node* z = g.sigmoid(g.add(g.add(g.matvec(p.w_zx, x), g.matvec(p.w_zh, h)), p.b_z));
  Node* r = g.sigmoid(g.add(g.add(g.matvec(p.w_rx, x), g.matvec(p.w_rh, h)), p.b_r));
  Node* cand = g.tanh(g.add(g.add(g.matvec(p.w_hx, x), g.matvec(p.w_hh, g.mul(r, h))), p.b_h));
  // (1 - z) (.) h + z (.) cand
  Tensor ones(h->value.shape, 1.0);
  Tensor neg(h->value.shape, -1.0);
  Node* one_minus_z = g.add(g.constant(ones), g.mul(g.constant(neg), z));
  return g.add(g.mul(one_minus_z, h), g.mul(z, cand));
}

Node* thread_encode(Graph& g, const GruP<Node*>& p, const std::vector<Node*>& thread_chi) {
  if (thread_chi.empty()) throw std::runtime_error("thread encode: empty thread");
  Node* h = g.constant(Tensor({thread_chi[0]->value.numel()}));
  for (Node* x : thread_chi) h = gru_step(g, p, x, h);
  return h;
}

ThreadState::ThreadState(std::size_t lo, std::size_t hi) : lo_(lo) {
  std::size_t n = hi - lo;
  parent_.resize(n);
  members_.resize(n);
  version_.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    parent_[i] = i;
    members_[i] = {lo + i};
  }
}

std::size_t ThreadState::find(std::size_t x) const {
  std::size_t r = x;
  while (parent_[r] != r) r = parent_[r];
  while (parent_[x] != r) {
    std::size_t next = parent_[x];
    parent_[x] = r;
    x = next;
  }
  return r;
}

void ThreadState::link(std::size_t query, std::size_t j) {
  if (query == j) return;
  std::size_t a = find(query - lo_);
  std::size_t b = find(j - lo_);
  if (a == b) return;
  if (members_[a].size() < members_[b].size()) std::swap(a, b);
  std::vector<std::size_t> merged;
  merged.reserve(members_[a].size() + members_[b].size());
  std::merge(members_[a].begin(), members_[a].end(), members_[b].begin(), members_[b].end(),
             std::back_inserter(merged));
  parent_[b] = a;
  members_[a] = std::move(merged);
  members_[b].clear();
  version_[a] = std::max(version_[a], version_[b]) + 1;
}

std::vector<std::size_t> ThreadState::thread_of(std::size_t j) const {
  const auto& all = members_[find(j - lo_)];
  auto end = std::upper_bound(all.begin(), all.end(), j);
  return std::vector<std::size_t>(all.begin(), end);
}

const std::vector<std::size_t>& ThreadState::cluster_of(std::size_t j) const {
  return members_[find(j - lo_)];
}

std::uint64_t ThreadState::version_of(std::size_t j) const { return version_[find(j - lo_)]; }

std::vector<double> LinkDistribution::probabilities() const {
  return probs->value.data;
}

Node* score_pair(Graph& g, const ScorerP<Node*>& p, const HyperParams& hp, Node* phi_i,
                 Node* psi_j, const Tensor& f_ij, bool train, Rng* rng) {
  Node* in = g.concat({phi_i, psi_j, g.constant(f_ij)});
  Node* h1 = g.relu(g.affine(p.w1, in, p.b1));
  if (train && hp.ff_dropout > 0.0) h1 = g.dropout(h1, hp.ff_dropout, *rng);
  Node* h2 = g.relu(g.affine(p.w2, h1, p.b2));
  if (train && hp.ff_dropout > 0.0) h2 = g.dropout(h2, hp.ff_dropout, *rng);
  return g.affine(p.w3, h2, p.b3);
}

LinkDistribution link_distribution(Graph& g, const BoundParams& bound, const HyperParams& hp,
                                   std::span<const Post> posts, const Chunk& chunk,
                                   std::size_t query, const std::vector<Node*>& phi,
                                   const std::vector<Node*>& tau, bool train, Rng* rng) {
  LinkDistribution dist;
  dist.query = query;
  dist.candidates = chunk.candidates(query);
  std::size_t qi = query - chunk.begin;
  std::vector<Node*> scores;
  scores.reserve(dist.candidates.size());
  for (std::size_t j : dist.candidates) {
    std::size_t ji = j - chunk.begin;
    Node* psi = phi[ji];
    if (hp.thread_encoding) psi = g.concat({phi[ji], tau[ji]});
    Tensor f = pair_features(posts[qi], posts[ji]);
    scores.push_back(score_pair(g, bound.scorer, hp, phi[qi], psi, f, train, rng));
  }
  dist.scores = g.concat(std::move(scores));
  dist.probs = g.softmax(dist.scores);
  return dist;
}

std::vector<Node*> encode_span(Graph& g, const BoundParams& bound, const HyperParams& hp,
                               const EmbeddingTable& table, std::span<const Post> posts,
                               bool train, Rng* rng) {
  std::vector<Node*> chi(posts.size());
  for (std::size_t i = 0; i < posts.size(); ++i) {
    std::vector<std::size_t> rows = table.rows_of(posts[i].tokens);
    if (train && hp.word_dropout > 0.0) rows = word_dropout(rows, hp.word_dropout, *rng);
    chi[i] = encode_utterance(g, bound.encoder, rows);
    if (train && hp.maxaffine_dropout > 0.0) chi[i] = g.dropout(chi[i], hp.maxaffine_dropout, *rng);
  }
  return chi;
}

std::vector<Node*> thread_encodings(Graph& g, const BoundParams& bound,
                                    const ThreadState& threads, std::span<const Post> posts,
                                    std::size_t span_begin, const std::vector<Node*>& chi) {
  // each cluster is walked once; member m gets the GRU state after consuming
  // its chi, i.e. the encoding of the thread prefix ending at m
  std::vector<Node*> tau(posts.size(), nullptr);
  for (std::size_t i = 0; i < posts.size(); ++i) {
    if (tau[i]) continue;
    const auto& all = threads.cluster_of(span_begin + i);
    Node* h = g.constant(Tensor({chi[0]->value.numel()}));
    for (std::size_t m : all) {
      h = gru_step(g, bound.thread_gru, chi[m - span_begin], h);
      tau[m - span_begin] = h;
    }
  }
  return tau;
}

ChunkLoss chunk_loss(Graph& g, const BoundParams& bound, const HyperParams& hp,
                     const EmbeddingTable& table, std::span<const Post> posts,
                     const Chunk& chunk, bool train, Rng* rng) {
  ChunkLoss result;
  std::vector<Node*> chi = encode_span(g, bound, hp, table, posts, train, rng);
  std::vector<Node*> phi = unroll(g, bound, hp, posts, chi);
  std::vector<Node*> tau;
  if (hp.thread_encoding) {
    ThreadState threads(chunk.begin, chunk.end);
    for (const auto& [q, links] : chunk.gold.links)
      for (std::size_t j : links)
        if (j >= chunk.begin) threads.link(q, j);
    tau = thread_encodings(g, bound, threads, posts, chunk.begin, chi);
  }
  std::vector<Node*> losses;
  for (const auto& [query, links] : chunk.gold.links) {
    if (query < chunk.target_begin || query >= chunk.target_end) continue;
    std::vector<std::size_t> candidates = chunk.candidates(query);
    std::size_t lo = candidates.front();
    std::vector<std::size_t> gold_positions;
    for (std::size_t j : links) {
      if (j >= lo)
        gold_positions.push_back(j - lo);
      else
        ++result.dropped_links;
    }
    if (gold_positions.empty()) {
      ++result.skipped;
      continue;
    }
    LinkDistribution dist =
        link_distribution(g, bound, hp, posts, chunk, query, phi, tau, train, rng);
    losses.push_back(g.softmax_nll(dist.scores, std::move(gold_positions)));
    ++result.queries;
  }
  if (losses.empty()) return result;
  Node* total = losses[0];
  for (std::size_t k = 1; k < losses.size(); ++k) total = g.add(total, losses[k]);
  Tensor inv({1}, 1.0 / static_cast<double>(losses.size()));
  result.loss = g.mul(total, g.constant(inv));
  return result;
}

}  // namespace detangle
