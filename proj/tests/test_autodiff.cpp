#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "detangle/graph.hpp"
#include "detangle/optim.hpp"
#include "testutil.hpp"

using namespace detangle;
using testutil::max_grad_rel_error;
using testutil::random_tensor;

namespace {

// scalar reduction with fixed weights, to gradient-check vector-valued ops
Node* reduce(Graph& g, Node* x, double scale = 1.0) {
  Tensor w({1, x->value.numel()});
  for (std::size_t i = 0; i < w.numel(); ++i)
    w[i] = scale * (0.3 + 0.1 * static_cast<double>(i % 7));
  return g.matvec(g.constant(w), x);
}

}  // namespace

TEST_CASE("forward values") {
  Graph g;
  Node* s = g.sigmoid(g.constant(Tensor({1}, 0.0)));
  CHECK(s->value[0] == doctest::Approx(0.5).epsilon(1e-12));

  Node* m = g.max_list({g.constant(Tensor::vector_of({1, 5})),
                        g.constant(Tensor::vector_of({3, 2}))});
  CHECK(m->value[0] == 3.0);
  CHECK(m->value[1] == 5.0);

  Node* p = g.softmax(g.constant(Tensor::vector_of({2.5, 2.5, 2.5})));
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(p->value[i] == doctest::Approx(1.0 / 3).epsilon(1e-13));
}

TEST_CASE("softmax sums to one and is shift invariant") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor scores = random_tensor({7}, rng, -8, 8);
    Tensor shifted = scores;
    double c = rng.uniform(-30, 30);
    for (double& x : shifted.data) x += c;
    Graph g;
    Node* p = g.softmax(g.constant(scores));
    Node* q = g.softmax(g.constant(shifted));
    double sum = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
      sum += p->value[i];
      CHECK(std::abs(p->value[i] - q->value[i]) < 1e-12);
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax_nll matches -log p and is non-negative") {
  Graph g;
  Tensor uniform({51}, 0.7);
  Node* loss = g.softmax_nll(g.constant(uniform), {3});
  CHECK(loss->value[0] == doctest::Approx(std::log(51.0)).epsilon(1e-12));

  // two equally likely gold candidates at p = 1/2 each
  Node* two = g.softmax_nll(g.constant(Tensor::vector_of({1.0, 1.0})), {0, 1});
  CHECK(two->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Node* sure = g.softmax_nll(g.constant(Tensor::vector_of({60.0, 0.0})), {0});
  CHECK(sure->value[0] >= 0.0);
  CHECK(sure->value[0] < 1e-9);
}

TEST_CASE("shape errors name the op") {
  Graph g;
  Node* a = g.constant(Tensor({3}));
  Node* b = g.constant(Tensor({4}));
  CHECK_THROWS_WITH_AS(g.add(a, b), doctest::Contains("add"), std::runtime_error);
  Node* w = g.constant(Tensor({2, 5}));
  CHECK_THROWS_WITH_AS(g.matvec(w, a), doctest::Contains("matvec"), std::runtime_error);
}

TEST_CASE("gradients match central finite differences per op") {
  Rng rng(42);

  SUBCASE("matvec") {
    auto err = max_grad_rel_error(
        [](Graph& g, const std::vector<Node*>& in) {
          return reduce(g, g.matvec(in[0], in[1]));
        },
        {random_tensor({3, 4}, rng), random_tensor({4}, rng)});
    CHECK(err < 1e-6);
  }
  SUBCASE("add and mul") {
    auto err = max_grad_rel_error(
        [](Graph& g, const std::vector<Node*>& in) {
          return reduce(g, g.mul(g.add(in[0], in[1]), in[2]));
        },
        {random_tensor({5}, rng), random_tensor({5}, rng), random_tensor({5}, rng)});
    CHECK(err < 1e-6);
  }
  SUBCASE("sigmoid tanh relu") {
    Tensor x = random_tensor({6}, rng);
    for (double& v : x.data)
      if (std::abs(v) < 0.1) v += 0.2;  // keep clear of the relu kink
    auto err = max_grad_rel_error(
        [](Graph& g, const std::vector<Node*>& in) {
          return reduce(g, g.relu(g.add(g.sigmoid(in[0]), g.tanh(in[0]))));
        },
        {x});
    CHECK(err < 1e-6);
  }
  SUBCASE("max_list") {
    Tensor a = random_tensor({4}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor c = random_tensor({4}, rng);
    for (std::size_t i = 0; i < 4; ++i) {  // keep the max unique and separated
      b[i] = a[i] + 0.5 + 0.1 * static_cast<double>(i);
      c[i] = a[i] - 0.5;
    }
    auto err = max_grad_rel_error(
        [](Graph& g, const std::vector<Node*>& in) {
          return reduce(g, g.max_list({in[0], in[1], in[2]}));
        },
        {a, b, c});
    CHECK(err < 1e-6);
  }
  SUBCASE("concat and row_select") {
    auto err = max_grad_rel_error(
        [](Graph& g, const std::vector<Node*>& in) {
          return reduce(g, g.concat({g.row_select(in[0], 2), in[1]}));
        },
        {random_tensor({4, 3}, rng), random_tensor({2}, rng)});
    CHECK(err < 1e-6);
  }
  SUBCASE("affine") {
    auto err = max_grad_rel_error(
        [](Graph& g, const std::vector<Node*>& in) {
          return reduce(g, g.affine(in[0], in[1], in[2]));
        },
        {random_tensor({3, 5}, rng), random_tensor({5}, rng), random_tensor({3}, rng)});
    CHECK(err < 1e-6);
  }
  SUBCASE("dropout routes through its mask") {
    auto err = max_grad_rel_error(
        [](Graph& g, const std::vector<Node*>& in) {
          Rng mask_rng(7);  // same mask on every rebuild
          return reduce(g, g.dropout(in[0], 0.4, mask_rng));
        },
        {random_tensor({12}, rng)});
    CHECK(err < 1e-6);
  }
  SUBCASE("softmax") {
    auto err = max_grad_rel_error(
        [](Graph& g, const std::vector<Node*>& in) {
          return reduce(g, g.softmax(in[0]), 2.0);
        },
        {random_tensor({6}, rng)});
    CHECK(err < 1e-6);
  }
  SUBCASE("softmax_nll") {
    auto err = max_grad_rel_error(
        [](Graph& g, const std::vector<Node*>& in) {
          return g.softmax_nll(in[0], {1, 3});
        },
        {random_tensor({6}, rng)});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("max_list ties send the whole subgradient to the first input") {
  Graph g;
  Node* a = g.param(Tensor::vector_of({2.0, 1.0}));
  Node* b = g.param(Tensor::vector_of({2.0, 3.0}));
  Node* loss = g.matvec(g.constant(Tensor({1, 2}, 1.0)), g.max_list({a, b}));
  g.backward(loss);
  CHECK(a->grad[0] == 1.0);  // tie at 2.0: first input wins
  CHECK(b->grad[0] == 0.0);
  CHECK(a->grad[1] == 0.0);
  CHECK(b->grad[1] == 1.0);
}

TEST_CASE("backward called twice without reset errors") {
  Graph g;
  Node* x = g.param(Tensor({1}, 3.0));
  Node* loss = g.mul(x, x);
  g.backward(loss);
  CHECK(x->grad[0] == doctest::Approx(6.0));
  CHECK_THROWS_AS(g.backward(loss), std::runtime_error);
  g.reset_gradients();
  g.backward(loss);
  CHECK(x->grad[0] == doctest::Approx(6.0));
}

TEST_CASE("backpropagation is deterministic") {
  auto run = [] {
    Rng rng(99);
    Graph g;
    Node* w = g.param(random_tensor({4, 4}, rng));
    Node* x = g.param(random_tensor({4}, rng));
    Node* loss = g.softmax_nll(g.matvec(w, g.tanh(g.matvec(w, x))), {2});
    g.backward(loss);
    return std::make_pair(w->grad.data, x->grad.data);
  };
  auto [w1, x1] = run();
  auto [w2, x2] = run();
  CHECK(w1 == w2);
  CHECK(x1 == x2);
}

TEST_CASE("graph truncation drops nodes created after the mark") {
  Graph g;
  Node* x = g.param(Tensor({2}, 1.0));
  std::size_t mark = g.mark();
  g.sigmoid(x);
  g.tanh(x);
  CHECK(g.size() == mark + 2);
  g.truncate(mark);
  CHECK(g.size() == mark);
}

TEST_CASE("clip_gradients clamps entrywise") {
  Tensor t = Tensor::vector_of({7.0, -9.0, 1.0});
  std::vector<Tensor*> grads = {&t};
  clip_gradients(grads, 5.0);
  CHECK(t[0] == 5.0);
  CHECK(t[1] == -5.0);
  CHECK(t[2] == 1.0);

  Tensor u = Tensor::vector_of({0.25, -0.5});
  std::vector<Tensor*> g2 = {&u};
  clip_gradients(g2, 5.0);
  CHECK(u[0] == 0.25);
  CHECK(u[1] == -0.5);

  clip_gradients(g2, 0.0);
  CHECK(u[0] == 0.0);
  CHECK(u[1] == 0.0);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::vector_of({1.5, -2.0});
    Tensor zero({2});
    AdamState state;
    std::vector<Tensor*> params = {&p};
    std::vector<Tensor*> grads = {&zero};
    adam_step(params, grads, state, 0.01);
    CHECK(p[0] == 1.5);
    CHECK(p[1] == -2.0);
    CHECK(state.step == 1);
  }
  SUBCASE("first step with unit gradient moves by about lr") {
    Tensor p({1}, 0.0);
    Tensor one({1}, 1.0);
    AdamState state;
    std::vector<Tensor*> params = {&p};
    std::vector<Tensor*> grads = {&one};
    double lr = 3e-3;
    adam_step(params, grads, state, lr);
    // bias-corrected mhat = vhat = 1, so the update is exactly lr / (1 + eps)
    CHECK(std::abs(-p[0] - lr / (1.0 + state.eps)) < 1e-15);
    CHECK(std::abs(-p[0] - lr) < 1e-6 * lr);
  }
  SUBCASE("lr = 0 is the identity") {
    Tensor p = Tensor::vector_of({0.25, 0.75});
    Tensor gvec = Tensor::vector_of({1.0, -2.0});
    AdamState state;
    std::vector<Tensor*> params = {&p};
    std::vector<Tensor*> grads = {&gvec};
    adam_step(params, grads, state, 0.0);
    CHECK(p[0] == 0.25);
    CHECK(p[1] == 0.75);
  }
  SUBCASE("non-finite gradients are rejected") {
    Tensor p({1}, 0.0);
    Tensor bad({1}, std::numeric_limits<double>::quiet_NaN());
    AdamState state;
    std::vector<Tensor*> params = {&p};
    std::vector<Tensor*> grads = {&bad};
    CHECK_THROWS_AS(adam_step(params, grads, state, 1e-3), std::runtime_error);
  }
}
