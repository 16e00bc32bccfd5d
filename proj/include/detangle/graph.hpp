#pragma once

#include <memory>
#include <string>
#include <vector>

#include "detangle/rng.hpp"
#include "detangle/tensor.hpp"

namespace detangle {

enum class Op {
  kConstant,
  kParam,
  kMatVec,
  kAdd,
  kMul,
  kSigmoid,
  kTanh,
  kRelu,
  kMaxList,
  kConcat,
  kRowSelect,
  kDropout,
  kSoftmax,
  kSoftmaxNll,
};

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first backward touch, same shape as value
  Op op = Op::kConstant;
  std::vector<Node*> inputs;
  // op payloads
  std::size_t row = 0;            // kRowSelect
  Tensor mask;                    // kDropout (already includes 1/(1-p) scaling)
  std::vector<std::size_t> gold;  // kSoftmaxNll target positions (distinct)
  Tensor probs;                   // kSoftmaxNll cached softmax of the scores

  bool has_grad = false;
};

// Reverse-mode differentiation tape. Nodes are appended in forward order, so
// reverse creation order is a valid topological order for backpropagation.
class Graph {
 public:
  Node* constant(Tensor value);
  Node* param(Tensor value);

  // y = W x, W is [m,n], x is [n]
  Node* matvec(Node* w, Node* x);
  Node* add(Node* a, Node* b);
  Node* mul(Node* a, Node* b);
  Node* sigmoid(Node* x);
  Node* tanh(Node* x);
  Node* relu(Node* x);
  // elementwise max over one or more same-shaped inputs; on ties the gradient
  // goes wholly to the first input attaining the max
  Node* max_list(std::vector<Node*> xs);
  Node* concat(std::vector<Node*> xs);
  // row r of a [v,d] table as a [d] vector (embedding lookup)
  Node* row_select(Node* table, std::size_t row);
  // W x + b
  Node* affine(Node* w, Node* x, Node* b);
  // inverted dropout; mask entries are 0 or 1/(1-p); identity when p == 0
  Node* dropout(Node* x, double p, Rng& rng);
  Node* softmax(Node* scores);
  // mean over gold positions of -log softmax(scores)[g]; scalar output
  Node* softmax_nll(Node* scores, std::vector<std::size_t> gold);

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients over the reverse
  // topological order. Errors if loss is not scalar or if called again
  // without reset_gradients().
  void backward(Node* loss);
  void reset_gradients();

  std::size_t size() const { return nodes_.size(); }
  // Drop every node created at or after `mark`. Earlier nodes never point to
  // later ones, so truncation keeps the tape consistent.
  std::size_t mark() const { return nodes_.size(); }
  void truncate(std::size_t mark);

 private:
  Node* emplace(Op op, Tensor value, std::vector<Node*> inputs);

  std::vector<std::unique_ptr<Node>> nodes_;
  bool backward_done_ = false;
};

}  // namespace detangle
