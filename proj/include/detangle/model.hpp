#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "detangle/encoder.hpp"
#include "detangle/graph.hpp"
#include "detangle/params.hpp"
#include "detangle/rng.hpp"

namespace detangle {

struct HyperParams {
  std::size_t d_i = 50;   // embedding width
  std::size_t d_h = 64;   // recurrent state width
  std::size_t d_ff = 64;  // scorer hidden width
  double word_dropout = 0.0;
  double maxaffine_dropout = 0.0;
  double ff_dropout = 0.0;
  bool bidirectional = false;
  bool thread_encoding = false;
  bool edge_same_user = true;  // PREV child is always on
  bool edge_mention = true;
  std::size_t window = 50;  // candidate-history length L
  double clip = 5.0;

  std::size_t phi_dim() const { return bidirectional ? 2 * d_h : d_h; }
  std::size_t psi_dim() const { return phi_dim() + (thread_encoding ? d_h : 0); }
  std::size_t scorer_input_dim() const;

  // canonical `key = value` text; part of the checkpoint header
  std::string describe() const;
  bool operator==(const HyperParams&) const = default;
};

// All learned weights. Every component is allocated regardless of flags so
// that the parameter order (and therefore checkpoints and optimizer state)
// does not depend on the configuration.
struct ModelParams {
  HyperParams hp;
  EmbeddingTable embeddings;
  LstmCellP<Tensor> tok_fwd, tok_bwd;
  Tensor pool_w, pool_b;
  DagLstmP<Tensor> dag_fwd, dag_bwd;
  GruP<Tensor> thread_gru;
  ScorerP<Tensor> scorer;

  // allocates every tensor for hp and the current embedding table and
  // initializes weights uniform in [-0.1, 0.1] with forget-gate biases at 1
  void init(Rng& rng);

  // fixed traversal order shared by checkpoints, Adam state, graph bindings
  std::vector<std::pair<std::string, Tensor*>> named_tensors();

  std::uint64_t schema_hash() const;
};

// Per-graph leaf bindings, aligned with ModelParams::named_tensors().
struct BoundParams {
  EncoderNodes encoder;
  DagLstmP<Node*> dag_fwd, dag_bwd;
  GruP<Node*> thread_gru;
  ScorerP<Node*> scorer;
  std::vector<Node*> leaves;
};

BoundParams bind(Graph& g, ModelParams& model);

// Versioned binary container: magic, format version, schema hash over the
// feature descriptor and hyperparameters, hyperparameter text, vocabulary,
// then named tensors as (name, rank, dims, little-endian doubles).
void save_checkpoint(ModelParams& model, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace detangle
