#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "detangle/daglstm.hpp"
#include "detangle/features.hpp"
#include "testutil.hpp"

using namespace detangle;
using testutil::random_tensor;

namespace {

Post make_post(std::size_t index, std::string user, std::vector<std::string> tokens,
               std::optional<std::string> mention = std::nullopt) {
  Post p;
  p.index = index;
  p.timestamp = static_cast<int>(index % 1440);
  p.user = std::move(user);
  p.is_system = p.user.empty();
  p.tokens = std::move(tokens);
  p.mention = std::move(mention);
  return p;
}

ModelParams tiny_model(std::size_t d_h, std::uint64_t seed, bool bidir = false,
                       bool threads = false) {
  ModelParams m;
  m.hp.d_i = 4;
  m.hp.d_h = d_h;
  m.hp.d_ff = 5;
  m.hp.bidirectional = bidir;
  m.hp.thread_encoding = threads;
  Rng rng(seed);
  m.embeddings = EmbeddingTable::random({"a", "b", "c", "d", "e"}, m.hp.d_i, rng);
  m.init(rng);
  return m;
}

// independent sequential LSTM on plain doubles; zero initial states
struct PlainChainLstm {
  std::size_t d;
  const Tensor &w_ix, &w_ih, &b_i, &w_fx, &w_fh, &b_f, &w_ox, &w_oh, &b_o, &w_ux, &w_uh, &b_u;

  std::vector<std::vector<double>> run(const std::vector<std::vector<double>>& xs) const {
    std::vector<double> h(d, 0.0), c(d, 0.0);
    std::vector<std::vector<double>> out;
    auto gate = [&](const Tensor& wx, const Tensor& wh, const Tensor& b,
                    const std::vector<double>& x, std::size_t r) {
      double acc = b[r];
      for (std::size_t k = 0; k < x.size(); ++k) acc += wx.at(r, k) * x[k];
      for (std::size_t k = 0; k < d; ++k) acc += wh.at(r, k) * h[k];
      return acc;
    };
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (const auto& x : xs) {
      std::vector<double> h2(d), c2(d);
      for (std::size_t r = 0; r < d; ++r) {
        double i = sig(gate(w_ix, w_ih, b_i, x, r));
        double f = sig(gate(w_fx, w_fh, b_f, x, r));
        double o = sig(gate(w_ox, w_oh, b_o, x, r));
        double u = std::tanh(gate(w_ux, w_uh, b_u, x, r));
        c2[r] = i * u + f * c[r];
        h2[r] = o * std::tanh(c2[r]);
      }
      h = h2;
      c = c2;
      out.push_back(h);
    }
    return out;
  }
};

}  // namespace

TEST_CASE("build_children") {
  std::vector<Post> posts;
  posts.push_back(make_post(0, "alice", {"hi"}));
  posts.push_back(make_post(1, "bob", {"yo"}));
  posts.push_back(make_post(2, "", {"joined"}));
  posts.push_back(make_post(3, "bob", {"alice:", "ok"}, "alice"));
  posts.push_back(make_post(4, "bob", {"more"}));

  auto kids = build_children(posts, true, true);
  CHECK(!kids[0].any());
  CHECK(kids[1].slot[kPrev] == 0);
  CHECK(!kids[1].slot[kSameUser].has_value());
  CHECK(kids[2].slot[kPrev] == 1);
  CHECK(!kids[2].slot[kSameUser].has_value());  // system post has no user
  CHECK(kids[3].slot[kPrev] == 2);
  CHECK(kids[3].slot[kSameUser] == 1);
  CHECK(kids[3].slot[kMention] == 0);
  // previous post by the same user: both PREV and SAME_USER point at it
  CHECK(kids[4].slot[kPrev] == 3);
  CHECK(kids[4].slot[kSameUser] == 3);

  auto rev = build_reverse_children(posts, true, true);
  CHECK(!rev[4].any());
  CHECK(rev[3].slot[kPrev] == 4);
  CHECK(rev[3].slot[kSameUser] == 4);
  CHECK(rev[0].slot[kPrev] == 1);
  CHECK(!rev[0].slot[kMention].has_value());

  // disabling edges leaves only PREV
  auto prev_only = build_children(posts, false, false);
  for (std::size_t i = 1; i < posts.size(); ++i) {
    CHECK(prev_only[i].slot[kPrev] == i - 1);
    CHECK(!prev_only[i].slot[kSameUser].has_value());
    CHECK(!prev_only[i].slot[kMention].has_value());
  }
}

TEST_CASE("build_children mention oracle on random conversations") {
  Rng rng(3);
  std::vector<std::string> users = {"ana", "bo", "cy", "dee"};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Post> posts;
    std::size_t n = 2 + static_cast<std::size_t>(rng.uniform_int(0, 18));
    for (std::size_t i = 0; i < n; ++i) {
      Post p = make_post(i, users[static_cast<std::size_t>(rng.uniform_int(0, 3))], {"w"});
      if (rng.bernoulli(0.5))
        p.mention = users[static_cast<std::size_t>(rng.uniform_int(0, 3))];
      posts.push_back(p);
    }
    auto kids = build_children(posts, true, true);
    for (std::size_t i = 0; i < n; ++i) {
      // linear-scan oracle for the mention slot
      std::optional<std::size_t> expect;
      if (posts[i].mention)
        for (std::size_t j = i; j-- > 0;)
          if (!posts[j].is_system && posts[j].user == *posts[i].mention) {
            expect = j;
            break;
          }
      CHECK(kids[i].slot[kMention] == expect);
    }
  }
}

TEST_CASE("daglstm_cell analytic cases") {
  SUBCASE("all-zero weights and no children give zero states") {
    ModelParams m = tiny_model(3, 1);
    for (auto& [name, t] : m.named_tensors())
      for (double& x : t->data) x = 0.0;
    Graph g;
    BoundParams bound = bind(g, m);
    DagState s = daglstm_cell(g, bound.dag_fwd, g.constant(Tensor({3})), {});
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(s.c->value[k] == 0.0);  // i = 0.5 but u = tanh(0) = 0
      CHECK(s.h->value[k] == 0.0);
    }
  }
  SUBCASE("saturated forget gates take the elementwise max of the children cells") {
    ModelParams m = tiny_model(2, 1);
    for (auto& [name, t] : m.named_tensors())
      for (double& x : t->data) x = 0.0;
    for (double& x : m.dag_fwd.b_f.data) x = 100.0;  // sigmoid(100) == 1.0 in double
    Graph g;
    BoundParams bound = bind(g, m);
    Node* zero_h = g.constant(Tensor({2}));
    Node* c1 = g.constant(Tensor::vector_of({1.0, 0.0}));
    Node* c2 = g.constant(Tensor::vector_of({0.0, 1.0}));
    DagState s = daglstm_cell(g, bound.dag_fwd, g.constant(Tensor({2})),
                              {{kPrev, {zero_h, c1}}, {kSameUser, {zero_h, c2}}});
    CHECK(s.c->value[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.c->value[1] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("PREV-only unroll equals an independent chain LSTM") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t d = 2 + static_cast<std::size_t>(trial % 3);
    std::size_t n = 1 + static_cast<std::size_t>(rng.uniform_int(0, 19));
    ModelParams m = tiny_model(d, 100 + static_cast<std::uint64_t>(trial));
    m.hp.edge_same_user = false;
    m.hp.edge_mention = false;

    std::vector<Post> posts;
    std::vector<std::vector<double>> xs;
    for (std::size_t i = 0; i < n; ++i) {
      posts.push_back(make_post(i, "u" + std::to_string(i % 3), {"w"}));
      Tensor x = random_tensor({d}, rng);
      xs.push_back(x.data);
    }

    Graph g;
    BoundParams bound = bind(g, m);
    std::vector<Node*> chi;
    for (const auto& x : xs) chi.push_back(g.constant(Tensor::vector_of(x)));
    std::vector<Node*> phi = unroll(g, bound, m.hp, posts, chi);

    PlainChainLstm oracle{d,
                          m.dag_fwd.w_ix,
                          m.dag_fwd.w_ih[kPrev],
                          m.dag_fwd.b_i,
                          m.dag_fwd.w_fx,
                          m.dag_fwd.w_fh[kPrev][kPrev],
                          m.dag_fwd.b_f,
                          m.dag_fwd.w_ox,
                          m.dag_fwd.w_oh[kPrev],
                          m.dag_fwd.b_o,
                          m.dag_fwd.w_ux,
                          m.dag_fwd.w_uh[kPrev],
                          m.dag_fwd.b_u};
    auto expect = oracle.run(xs);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k)
        CHECK(std::abs(phi[i]->value[k] - expect[i][k]) < 1e-10);
  }
}

TEST_CASE("bidirectional unroll doubles the representation width") {
  ModelParams m = tiny_model(3, 5, true);
  std::vector<Post> posts = {make_post(0, "a", {"w"}), make_post(1, "b", {"w"})};
  Graph g;
  BoundParams bound = bind(g, m);
  std::vector<Node*> chi = {g.constant(random_tensor({3}, *(new Rng(1)))),
                            g.constant(Tensor({3}, 0.5))};
  std::vector<Node*> phi = unroll(g, bound, m.hp, posts, chi);
  CHECK(phi[0]->value.numel() == 6);
  CHECK(phi[1]->value.numel() == 6);
}

TEST_CASE("thread encoding") {
  SUBCASE("zero weights give a zero thread state") {
    ModelParams m = tiny_model(3, 2);
    for (auto& [name, t] : m.named_tensors())
      for (double& x : t->data) x = 0.0;
    Graph g;
    BoundParams bound = bind(g, m);
    Node* tau = thread_encode(g, bound.thread_gru,
                              {g.constant(Tensor({3}, 0.7)), g.constant(Tensor({3}, -0.2))});
    for (std::size_t k = 0; k < 3; ++k) CHECK(tau->value[k] == 0.0);
  }
  SUBCASE("empty thread errors") {
    ModelParams m = tiny_model(3, 2);
    Graph g;
    BoundParams bound = bind(g, m);
    CHECK_THROWS_AS(thread_encode(g, bound.thread_gru, {}), std::runtime_error);
  }
  SUBCASE("gru gradient matches finite differences") {
    ModelParams m = tiny_model(3, 9);
    std::vector<Tensor> leaves;
    m.thread_gru.visit("", [&](const std::string&, Tensor& t) { leaves.push_back(t); });
    Rng rng(2);
    leaves.push_back(random_tensor({3}, rng));
    leaves.push_back(random_tensor({3}, rng));
    auto err = testutil::max_grad_rel_error(
        [](Graph& g, const std::vector<Node*>& in) {
          GruP<Node*> p;
          std::size_t k = 0;
          p.visit("", [&](const std::string&, Node*& n) { n = in[k++]; });
          Node* tau = thread_encode(g, p, {in[k], in[k + 1]});
          Tensor w({1, 3});
          w[0] = 0.5, w[1] = -0.3, w[2] = 0.8;
          return g.matvec(g.constant(w), tau);
        },
        leaves, 1e-5);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("ThreadState tracks ordered members through merges") {
  ThreadState ts(10, 20);
  CHECK(ts.thread_of(12) == std::vector<std::size_t>{12});
  ts.link(12, 10);
  ts.link(15, 12);
  CHECK(ts.thread_of(15) == std::vector<std::size_t>{10, 12, 15});
  CHECK(ts.thread_of(12) == std::vector<std::size_t>{10, 12});
  ts.link(16, 16);  // self-link is a no-op
  CHECK(ts.thread_of(16) == std::vector<std::size_t>{16});
  std::uint64_t v = ts.version_of(10);
  ts.link(17, 10);
  CHECK(ts.version_of(10) > v);
  CHECK(ts.thread_of(14) == std::vector<std::size_t>{14});
}

namespace {

struct Fixture {
  ModelParams model;
  std::vector<Post> posts;
  Chunk chunk;

  explicit Fixture(std::uint64_t seed, bool bidir = false, bool threads = false)
      : model(tiny_model(3, seed, bidir, threads)) {
    posts.push_back(make_post(0, "alice", {"a", "b"}));
    posts.push_back(make_post(1, "bob", {"c"}));
    posts.push_back(make_post(2, "alice", {"bob:", "d"}, "bob"));
    posts.push_back(make_post(3, "carol", {"e", "a"}));
    posts.push_back(make_post(4, "bob", {"alice:", "b"}, "alice"));
    posts.push_back(make_post(5, "carol", {"d"}));
    chunk.begin = 0;
    chunk.end = 6;
    chunk.target_begin = 0;
    chunk.target_end = 6;
    chunk.window = 50;
    chunk.gold.add(0, 0);
    chunk.gold.add(1, 1);
    chunk.gold.add(2, 1);
    chunk.gold.add(3, 3);
    chunk.gold.add(4, 0);
    chunk.gold.add(5, 3);
  }
};

}  // namespace

TEST_CASE("link_distribution") {
  SUBCASE("first post has a single forced candidate") {
    Fixture f(33);
    Graph g;
    BoundParams bound = bind(g, f.model);
    auto chi = encode_span(g, bound, f.model.hp, f.model.embeddings, f.posts, false, nullptr);
    auto phi = unroll(g, bound, f.model.hp, f.posts, chi);
    LinkDistribution d = link_distribution(g, bound, f.model.hp, f.posts, f.chunk, 0, phi, {},
                                           false, nullptr);
    CHECK(d.candidates == std::vector<std::size_t>{0});
    CHECK(d.probs->value[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("identical scores give the uniform distribution") {
    Fixture f(34);
    for (auto& [name, t] : f.model.named_tensors())
      if (name.rfind("scorer", 0) == 0)
        for (double& x : t->data) x = 0.0;
    Graph g;
    BoundParams bound = bind(g, f.model);
    auto chi = encode_span(g, bound, f.model.hp, f.model.embeddings, f.posts, false, nullptr);
    auto phi = unroll(g, bound, f.model.hp, f.posts, chi);
    LinkDistribution d = link_distribution(g, bound, f.model.hp, f.posts, f.chunk, 5, phi, {},
                                           false, nullptr);
    REQUIRE(d.candidates.size() == 6);
    for (double p : d.probs->value.data)
      CHECK(std::abs(p - 1.0 / 6) < 1e-12);
  }
  SUBCASE("probabilities sum to one for random parameters") {
    for (std::uint64_t seed = 40; seed < 45; ++seed) {
      Fixture f(seed, seed % 2 == 0, seed % 3 == 0);
      Graph g;
      BoundParams bound = bind(g, f.model);
      auto chi = encode_span(g, bound, f.model.hp, f.model.embeddings, f.posts, false, nullptr);
      auto phi = unroll(g, bound, f.model.hp, f.posts, chi);
      std::vector<Node*> tau;
      if (f.model.hp.thread_encoding) {
        ThreadState ts(0, 6);
        for (const auto& [q, ls] : f.chunk.gold.links)
          for (std::size_t j : ls) ts.link(q, j);
        tau = thread_encodings(g, bound, ts, f.posts, 0, chi);
      }
      LinkDistribution d = link_distribution(g, bound, f.model.hp, f.posts, f.chunk, 4, phi,
                                             tau, false, nullptr);
      double sum = 0.0;
      for (double p : d.probs->value.data) sum += p;
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("chunk_loss") {
  SUBCASE("counts queries and drops out-of-window gold links") {
    Fixture f(50);
    f.chunk.window = 2;  // post 4's gold link (0) falls outside the window
    Graph g;
    BoundParams bound = bind(g, f.model);
    ChunkLoss cl = chunk_loss(g, bound, f.model.hp, f.model.embeddings, f.posts, f.chunk,
                              false, nullptr);
    CHECK(cl.queries == 5);
    CHECK(cl.skipped == 1);
    CHECK(cl.dropped_links == 1);
    REQUIRE(cl.loss);
    CHECK(cl.loss->value[0] > 0.0);
  }
  SUBCASE("uniform scorer on uniform candidates gives log k") {
    Fixture f(51);
    for (auto& [name, t] : f.model.named_tensors())
      if (name.rfind("scorer", 0) == 0)
        for (double& x : t->data) x = 0.0;
    // single query with 6 candidates
    f.chunk.gold.links.clear();
    f.chunk.gold.add(5, 3);
    f.chunk.target_begin = 5;
    Graph g;
    BoundParams bound = bind(g, f.model);
    ChunkLoss cl = chunk_loss(g, bound, f.model.hp, f.model.embeddings, f.posts, f.chunk,
                              false, nullptr);
    CHECK(cl.loss->value[0] == doctest::Approx(std::log(6.0)).epsilon(1e-12));
  }
  SUBCASE("two gold links at p = 1/2 each cost log 2") {
    Graph g;
    Node* scores = g.constant(Tensor::vector_of({3.0, 3.0}));
    Node* loss = g.softmax_nll(scores, {0, 1});
    CHECK(loss->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("end-to-end gradient on a small chunk") {
  Fixture f(60, true, true);  // bidirectional with thread encoding
  auto named = f.model.named_tensors();
  std::vector<Tensor> leaves;
  for (auto& [name, t] : named) leaves.push_back(*t);
  auto build = [&](Graph& g, const std::vector<Node*>& in) {
    // rebind the model leaves to the provided nodes
    BoundParams bound{};
    std::size_t k = 0;
    bound.encoder.embeddings = in[k++];
    bound.encoder.tok_fwd.visit("", [&](const std::string&, Node*& n) { n = in[k++]; });
    bound.encoder.tok_bwd.visit("", [&](const std::string&, Node*& n) { n = in[k++]; });
    bound.encoder.pool_w = in[k++];
    bound.encoder.pool_b = in[k++];
    bound.dag_fwd.visit("", [&](const std::string&, Node*& n) { n = in[k++]; });
    bound.dag_bwd.visit("", [&](const std::string&, Node*& n) { n = in[k++]; });
    bound.thread_gru.visit("", [&](const std::string&, Node*& n) { n = in[k++]; });
    bound.scorer.visit("", [&](const std::string&, Node*& n) { n = in[k++]; });
    REQUIRE(k == in.size());
    ChunkLoss cl = chunk_loss(g, bound, f.model.hp, f.model.embeddings, f.posts, f.chunk,
                              false, nullptr);
    return cl.loss;
  };
  double err = testutil::max_grad_rel_error(build, leaves, 1e-5);
  CHECK(err < 1e-4);
}
