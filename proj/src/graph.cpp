#include "detangle/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace detangle {

namespace {

[[noreturn]] void shape_error(const std::string& op, const Tensor& a, const Tensor& b) {
  throw std::runtime_error("graph: " + op + ": incompatible shapes " + a.shape_str() +
                           " and " + b.shape_str());
}

void require_vector(const std::string& op, const Tensor& t) {
  if (t.rank() != 1)
    throw std::runtime_error("graph: " + op + ": expected vector, got " + t.shape_str());
}

Tensor& touch_grad(Node* n) {
  if (!n->has_grad) {
    n->grad = Tensor(n->value.shape);
    n->has_grad = true;
  }
  return n->grad;
}

}  // namespace

Node* Graph::emplace(Op op, Tensor value, std::vector<Node*> inputs) {
  auto node = std::make_unique<Node>();
  node->op = op;
  node->value = std::move(value);
  node->inputs = std::move(inputs);
  nodes_.push_back(std::move(node));
  return nodes_.back().get();
}

Node* Graph::constant(Tensor value) { return emplace(Op::kConstant, std::move(value), {}); }

Node* Graph::param(Tensor value) { return emplace(Op::kParam, std::move(value), {}); }

Node* Graph::matvec(Node* w, Node* x) {
  if (w->value.rank() != 2 || x->value.rank() != 1 || w->value.cols() != x->value.numel())
    shape_error("matvec", w->value, x->value);
  std::size_t m = w->value.rows(), n = w->value.cols();
  Tensor out({m});
  const double* wd = w->value.data.data();
  const double* xd = x->value.data.data();
  for (std::size_t r = 0; r < m; ++r) {
    double acc = 0.0;
    const double* row = wd + r * n;
    for (std::size_t c = 0; c < n; ++c) acc += row[c] * xd[c];
    out[r] = acc;
  }
  return emplace(Op::kMatVec, std::move(out), {w, x});
}

Node* Graph::add(Node* a, Node* b) {
  if (!a->value.same_shape(b->value)) shape_error("add", a->value, b->value);
  Tensor out(a->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
  return emplace(Op::kAdd, std::move(out), {a, b});
}

Node* Graph::mul(Node* a, Node* b) {
  if (!a->value.same_shape(b->value)) shape_error("mul", a->value, b->value);
  Tensor out(a->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
  return emplace(Op::kMul, std::move(out), {a, b});
}

Node* Graph::sigmoid(Node* x) {
  Tensor out(x->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x->value[i]));
  return emplace(Op::kSigmoid, std::move(out), {x});
}

Node* Graph::tanh(Node* x) {
  Tensor out(x->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(x->value[i]);
  return emplace(Op::kTanh, std::move(out), {x});
}

Node* Graph::relu(Node* x) {
  Tensor out(x->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] > 0.0 ? x->value[i] : 0.0;
  return emplace(Op::kRelu, std::move(out), {x});
}

Node* Graph::max_list(std::vector<Node*> xs) {
  if (xs.empty()) throw std::runtime_error("graph: max_list: empty input list");
  for (Node* x : xs)
    if (!x->value.same_shape(xs[0]->value)) shape_error("max_list", xs[0]->value, x->value);
  Tensor out = xs[0]->value;
  for (std::size_t k = 1; k < xs.size(); ++k)
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], xs[k]->value[i]);
  return emplace(Op::kMaxList, std::move(out), std::move(xs));
}

Node* Graph::concat(std::vector<Node*> xs) {
  if (xs.empty()) throw std::runtime_error("graph: concat: empty input list");
  std::size_t n = 0;
  for (Node* x : xs) {
    require_vector("concat", x->value);
    n += x->value.numel();
  }
  Tensor out({n});
  std::size_t off = 0;
  for (Node* x : xs) {
    std::copy(x->value.data.begin(), x->value.data.end(), out.data.begin() + off);
    off += x->value.numel();
  }
  return emplace(Op::kConcat, std::move(out), std::move(xs));
}

Node* Graph::row_select(Node* table, std::size_t row) {
  if (table->value.rank() != 2 || row >= table->value.rows())
    throw std::runtime_error("graph: row_select: row " + std::to_string(row) +
                             " out of range for " + table->value.shape_str());
  std::size_t d = table->value.cols();
  Tensor out({d});
  std::copy_n(table->value.data.begin() + row * d, d, out.data.begin());
  Node* n = emplace(Op::kRowSelect, std::move(out), {table});
  n->row = row;
  return n;
}

Node* Graph::affine(Node* w, Node* x, Node* b) { return add(matvec(w, x), b); }

Node* Graph::dropout(Node* x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::runtime_error("graph: dropout: p must be in [0,1)");
  if (p == 0.0) return x;
  Tensor mask(x->value.shape);
  double keep = 1.0 - p;
  for (std::size_t i = 0; i < mask.numel(); ++i)
    mask[i] = rng.bernoulli(p) ? 0.0 : 1.0 / keep;
  Tensor out(x->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] * mask[i];
  Node* n = emplace(Op::kDropout, std::move(out), {x});
  n->mask = std::move(mask);
  return n;
}

Node* Graph::softmax(Node* scores) {
  require_vector("softmax", scores->value);
  std::size_t n = scores->value.numel();
  double mx = scores->value[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, scores->value[i]);
  Tensor out({n});
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(scores->value[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= z;
  return emplace(Op::kSoftmax, std::move(out), {scores});
}

Node* Graph::softmax_nll(Node* scores, std::vector<std::size_t> gold) {
  require_vector("softmax_nll", scores->value);
  if (gold.empty()) throw std::runtime_error("graph: softmax_nll: no gold positions");
  std::sort(gold.begin(), gold.end());
  gold.erase(std::unique(gold.begin(), gold.end()), gold.end());
  std::size_t n = scores->value.numel();
  for (std::size_t g : gold)
    if (g >= n) throw std::runtime_error("graph: softmax_nll: gold position out of range");
  double mx = scores->value[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, scores->value[i]);
  double z = 0.0;
  Tensor probs({n});
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = std::exp(scores->value[i] - mx);
    z += probs[i];
  }
  for (std::size_t i = 0; i < n; ++i) probs[i] /= z;
  double lse = mx + std::log(z);
  double loss = 0.0;
  for (std::size_t g : gold) loss += lse - scores->value[g];
  loss /= static_cast<double>(gold.size());
  Node* node = emplace(Op::kSoftmaxNll, Tensor({1}, loss), {scores});
  node->gold = std::move(gold);
  node->probs = std::move(probs);
  return node;
}

void Graph::backward(Node* loss) {
  if (backward_done_)
    throw std::runtime_error("graph: backward already run; call reset_gradients() first");
  if (loss->value.numel() != 1)
    throw std::runtime_error("graph: backward requires a scalar loss, got " +
                             loss->value.shape_str());
  backward_done_ = true;
  touch_grad(loss)[0] = 1.0;

  for (std::size_t idx = nodes_.size(); idx-- > 0;) {
    Node* n = nodes_[idx].get();
    if (!n->has_grad) continue;
    const Tensor& g = n->grad;
    switch (n->op) {
      case Op::kConstant:
      case Op::kParam:
        break;
      case Op::kMatVec: {
        Node* w = n->inputs[0];
        Node* x = n->inputs[1];
        std::size_t m = w->value.rows(), c = w->value.cols();
        Tensor& gw = touch_grad(w);
        Tensor& gx = touch_grad(x);
        for (std::size_t r = 0; r < m; ++r) {
          double gr = g[r];
          if (gr == 0.0) continue;
          const double* wrow = w->value.data.data() + r * c;
          double* gwrow = gw.data.data() + r * c;
          for (std::size_t j = 0; j < c; ++j) {
            gwrow[j] += gr * x->value[j];
            gx[j] += gr * wrow[j];
          }
        }
        break;
      }
      case Op::kAdd: {
        Tensor& ga = touch_grad(n->inputs[0]);
        Tensor& gb = touch_grad(n->inputs[1]);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        break;
      }
      case Op::kMul: {
        Node* a = n->inputs[0];
        Node* b = n->inputs[1];
        Tensor& ga = touch_grad(a);
        Tensor& gb = touch_grad(b);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          ga[i] += g[i] * b->value[i];
          gb[i] += g[i] * a->value[i];
        }
        break;
      }
      case Op::kSigmoid: {
        Tensor& gx = touch_grad(n->inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i)
          gx[i] += g[i] * n->value[i] * (1.0 - n->value[i]);
        break;
      }
      case Op::kTanh: {
        Tensor& gx = touch_grad(n->inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i)
          gx[i] += g[i] * (1.0 - n->value[i] * n->value[i]);
        break;
      }
      case Op::kRelu: {
        Node* x = n->inputs[0];
        Tensor& gx = touch_grad(x);
        for (std::size_t i = 0; i < g.numel(); ++i)
          if (x->value[i] > 0.0) gx[i] += g[i];
        break;
      }
      case Op::kMaxList: {
        // first attaining input wins the subgradient
        for (std::size_t i = 0; i < g.numel(); ++i) {
          if (g[i] == 0.0) continue;
          for (Node* x : n->inputs) {
            if (x->value[i] == n->value[i]) {
              touch_grad(x)[i] += g[i];
              break;
            }
          }
        }
        break;
      }
      case Op::kConcat: {
        std::size_t off = 0;
        for (Node* x : n->inputs) {
          Tensor& gx = touch_grad(x);
          for (std::size_t i = 0; i < x->value.numel(); ++i) gx[i] += g[off + i];
          off += x->value.numel();
        }
        break;
      }
      case Op::kRowSelect: {
        Node* table = n->inputs[0];
        Tensor& gt = touch_grad(table);
        std::size_t d = table->value.cols();
        for (std::size_t i = 0; i < d; ++i) gt[n->row * d + i] += g[i];
        break;
      }
      case Op::kDropout: {
        Tensor& gx = touch_grad(n->inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * n->mask[i];
        break;
      }
      case Op::kSoftmax: {
        Tensor& gx = touch_grad(n->inputs[0]);
        double dot = 0.0;
        for (std::size_t i = 0; i < g.numel(); ++i) dot += g[i] * n->value[i];
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += n->value[i] * (g[i] - dot);
        break;
      }
      case Op::kSoftmaxNll: {
        Node* scores = n->inputs[0];
        Tensor& gs = touch_grad(scores);
        double gscalar = g[0];
        double w = 1.0 / static_cast<double>(n->gold.size());
        for (std::size_t i = 0; i < gs.numel(); ++i) gs[i] += gscalar * n->probs[i];
        for (std::size_t gpos : n->gold) gs[gpos] -= gscalar * w;
        break;
      }
    }
  }
}

void Graph::reset_gradients() {
  for (auto& n : nodes_) {
    n->has_grad = false;
    n->grad = Tensor();
  }
  backward_done_ = false;
}

void Graph::truncate(std::size_t mark) {
  if (mark > nodes_.size()) throw std::runtime_error("graph: truncate mark out of range");
  nodes_.resize(mark);
}

}  // namespace detangle
