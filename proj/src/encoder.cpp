#include "detangle/encoder.hpp"

#include <iostream>
#include <sstream>
#include <stdexcept>

#include "detangle/corpus.hpp"

namespace detangle {

std::vector<std::size_t> EmbeddingTable::rows_of(const std::vector<std::string>& toks) const {
  std::vector<std::size_t> rows;
  rows.reserve(toks.size());
  for (const std::string& t : toks) rows.push_back(row_of(t));
  return rows;
}

EmbeddingTable EmbeddingTable::random(std::vector<std::string> vocabulary, std::size_t dim,
                                      Rng& rng) {
  EmbeddingTable table;
  table.tokens = std::move(vocabulary);
  table.matrix = Tensor({table.tokens.size() + 1, dim});
  for (double& x : table.matrix.data) x = rng.uniform(-0.1, 0.1);
  for (std::size_t i = 0; i < table.tokens.size(); ++i) table.index[table.tokens[i]] = i + 1;
  return table;
}

EmbeddingTable load_embeddings(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> rows;
  std::map<std::string, std::size_t> seen;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<double> values;
    double v;
    while (ls >> v) values.push_back(v);
    if (dim == 0) dim = values.size();
    if (values.empty() || values.size() != dim)
      throw ParseError(line_no, "expected " + std::to_string(dim) + " values, got " +
                                    std::to_string(values.size()));
    auto it = seen.find(token);
    if (it != seen.end()) {
      std::cerr << "embeddings: duplicate token '" << token << "' at line " << line_no
                << ", keeping the later entry\n";
      rows[it->second] = std::move(values);
    } else {
      seen[token] = rows.size();
      tokens.push_back(token);
      rows.push_back(std::move(values));
    }
  }
  if (rows.empty()) throw std::runtime_error("embeddings: empty file");
  EmbeddingTable table;
  table.tokens = std::move(tokens);
  table.matrix = Tensor({table.tokens.size() + 1, dim});
  for (std::size_t i = 0; i < table.tokens.size(); ++i) {
    table.index[table.tokens[i]] = i + 1;
    for (std::size_t c = 0; c < dim; ++c) table.matrix.at(i + 1, c) = rows[i][c];
  }
  return table;
}

std::vector<std::size_t> word_dropout(const std::vector<std::size_t>& rows, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::runtime_error("word dropout: p must be in [0,1)");
  if (p == 0.0) return rows;
  std::vector<std::size_t> out = rows;
  for (std::size_t& r : out)
    if (rng.bernoulli(p)) r = kUnknownRow;
  return out;
}

std::pair<Node*, Node*> lstm_step(Graph& g, const LstmCellP<Node*>& cell, Node* x, Node* h,
                                  Node* c) {
  Node* i = g.sigmoid(g.add(g.add(g.matvec(cell.w_ix, x), g.matvec(cell.w_ih, h)), cell.b_i));
  Node* f = g.sigmoid(g.add(g.add(g.matvec(cell.w_fx, x), g.matvec(cell.w_fh, h)), cell.b_f));
  Node* o = g.sigmoid(g.add(g.add(g.matvec(cell.w_ox, x), g.matvec(cell.w_oh, h)), cell.b_o));
  Node* u = g.tanh(g.add(g.add(g.matvec(cell.w_ux, x), g.matvec(cell.w_uh, h)), cell.b_u));
  Node* c_next = g.add(g.mul(f, c), g.mul(i, u));
  Node* h_next = g.mul(o, g.tanh(c_next));
  return {h_next, c_next};
}

Node* encode_utterance(Graph& g, const EncoderNodes& enc, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw std::runtime_error("encoder: empty token sequence");
  std::size_t n = rows.size();
  std::size_t d_h = enc.pool_w->value.rows();
  std::vector<Node*> embs(n);
  for (std::size_t k = 0; k < n; ++k) embs[k] = g.row_select(enc.embeddings, rows[k]);

  Tensor zero({d_h});
  std::vector<Node*> fwd(n), bwd(n);
  Node* h = g.constant(zero);
  Node* c = g.constant(zero);
  for (std::size_t k = 0; k < n; ++k) {
    auto [h2, c2] = lstm_step(g, enc.tok_fwd, embs[k], h, c);
    fwd[k] = h2;
    h = h2;
    c = c2;
  }
  h = g.constant(zero);
  c = g.constant(zero);
  for (std::size_t k = n; k-- > 0;) {
    auto [h2, c2] = lstm_step(g, enc.tok_bwd, embs[k], h, c);
    bwd[k] = h2;
    h = h2;
    c = c2;
  }
  std::vector<Node*> pooled(n);
  for (std::size_t k = 0; k < n; ++k)
    pooled[k] = g.affine(enc.pool_w, g.concat({fwd[k], bwd[k]}), enc.pool_b);
  return g.max_list(pooled);
}

}  // namespace detangle
