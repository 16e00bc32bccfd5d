#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "detangle/graph.hpp"
#include "detangle/params.hpp"
#include "detangle/rng.hpp"
#include "detangle/tensor.hpp"

namespace detangle {

inline constexpr std::size_t kUnknownRow = 0;

// Token embeddings. Row 0 is the unknown-token row; real tokens start at 1.
struct EmbeddingTable {
  std::vector<std::string> tokens;  // tokens[i] lives in matrix row i+1
  std::map<std::string, std::size_t> index;
  Tensor matrix;
  bool trainable = true;

  std::size_t dim() const { return matrix.cols(); }
  std::size_t row_of(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? kUnknownRow : it->second;
  }
  std::vector<std::size_t> rows_of(const std::vector<std::string>& toks) const;

  // randomly initialized table over a fixed vocabulary (sorted for
  // reproducibility upstream)
  static EmbeddingTable random(std::vector<std::string> vocabulary, std::size_t dim, Rng& rng);
};

// One line per token: the token then `dim` reals, space separated. The last
// occurrence of a duplicate token wins; a warning is written to stderr.
EmbeddingTable load_embeddings(const std::string& text);

// Each row independently replaced by the unknown row with probability p.
std::vector<std::size_t> word_dropout(const std::vector<std::size_t>& rows, double p, Rng& rng);

struct EncoderNodes {
  Node* embeddings = nullptr;
  LstmCellP<Node*> tok_fwd, tok_bwd;
  Node* pool_w = nullptr;
  Node* pool_b = nullptr;
};

// one step of a standard LSTM built from graph ops; returns (h, c)
std::pair<Node*, Node*> lstm_step(Graph& g, const LstmCellP<Node*>& cell, Node* x, Node* h,
                                  Node* c);

// chi = elementwise max over positions of Affine(BiLSTM state); dropout on
// chi is the caller's job (train-time max-affine dropout)
Node* encode_utterance(Graph& g, const EncoderNodes& enc, const std::vector<std::size_t>& rows);

}  // namespace detangle
