#include "detangle/model.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "detangle/features.hpp"

namespace detangle {

namespace {

constexpr char kMagic[8] = {'D', 'T', 'G', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

std::string bool_str(bool b) { return b ? "true" : "false"; }

// enumerate every tensor with its name, in the canonical order
template <typename F>
void visit_model(ModelParams& m, F&& f) {
  f("embeddings", m.embeddings.matrix);
  m.tok_fwd.visit("tok_fwd", f);
  m.tok_bwd.visit("tok_bwd", f);
  f("pool.w", m.pool_w);
  f("pool.b", m.pool_b);
  m.dag_fwd.visit("dag_fwd", f);
  m.dag_bwd.visit("dag_bwd", f);
  m.thread_gru.visit("thread_gru", f);
  m.scorer.visit("scorer", f);
}

template <typename F>
void visit_bound(BoundParams& b, F&& f) {
  f("embeddings", b.encoder.embeddings);
  b.encoder.tok_fwd.visit("tok_fwd", f);
  b.encoder.tok_bwd.visit("tok_bwd", f);
  f("pool.w", b.encoder.pool_w);
  f("pool.b", b.encoder.pool_b);
  b.dag_fwd.visit("dag_fwd", f);
  b.dag_bwd.visit("dag_bwd", f);
  b.thread_gru.visit("thread_gru", f);
  b.scorer.visit("scorer", f);
}

void fill_uniform(Tensor& t, Rng& rng) {
  for (double& x : t.data) x = rng.uniform(-0.1, 0.1);
}

}  // namespace

std::size_t HyperParams::scorer_input_dim() const {
  return phi_dim() + psi_dim() + feature_schema().dimension;
}

std::string HyperParams::describe() const {
  std::ostringstream out;
  out << "d_i = " << d_i << "\n";
  out << "d_h = " << d_h << "\n";
  out << "d_ff = " << d_ff << "\n";
  out << "word_dropout = " << word_dropout << "\n";
  out << "maxaffine_dropout = " << maxaffine_dropout << "\n";
  out << "ff_dropout = " << ff_dropout << "\n";
  out << "bidirectional = " << bool_str(bidirectional) << "\n";
  out << "thread_encoding = " << bool_str(thread_encoding) << "\n";
  out << "edge_same_user = " << bool_str(edge_same_user) << "\n";
  out << "edge_mention = " << bool_str(edge_mention) << "\n";
  out << "window = " << window << "\n";
  out << "clip = " << clip << "\n";
  return out.str();
}

void ModelParams::init(Rng& rng) {
  std::size_t dh = hp.d_h, di = hp.d_i, dff = hp.d_ff;
  auto alloc_lstm = [&](LstmCellP<Tensor>& c, std::size_t in) {
    c.visit("", [&](const std::string& name, Tensor& t) {
      if (name.find(".b_") != std::string::npos)
        t = Tensor({dh});
      else if (name.find("x") != std::string::npos)
        t = Tensor({dh, in});
      else
        t = Tensor({dh, dh});
    });
  };
  alloc_lstm(tok_fwd, di);
  alloc_lstm(tok_bwd, di);
  pool_w = Tensor({dh, 2 * dh});
  pool_b = Tensor({dh});
  auto alloc_dag = [&](DagLstmP<Tensor>& d) {
    d.visit("", [&](const std::string& name, Tensor& t) {
      if (name.find(".b_") != std::string::npos)
        t = Tensor({dh});
      else
        t = Tensor({dh, dh});  // DAG input is chi, also d_h wide
    });
  };
  alloc_dag(dag_fwd);
  alloc_dag(dag_bwd);
  thread_gru.visit("", [&](const std::string& name, Tensor& t) {
    if (name.find(".b_") != std::string::npos)
      t = Tensor({dh});
    else
      t = Tensor({dh, dh});
  });
  std::size_t in = hp.scorer_input_dim();
  scorer.w1 = Tensor({dff, in});
  scorer.b1 = Tensor({dff});
  scorer.w2 = Tensor({dff, dff});
  scorer.b2 = Tensor({dff});
  scorer.w3 = Tensor({1, dff});
  scorer.b3 = Tensor({1});

  for (auto& [name, tensor] : named_tensors()) {
    if (name == "embeddings") continue;  // table owns its initialization
    fill_uniform(*tensor, rng);
  }
  for (double& x : tok_fwd.b_f.data) x = 1.0;
  for (double& x : tok_bwd.b_f.data) x = 1.0;
  for (double& x : dag_fwd.b_f.data) x = 1.0;
  for (double& x : dag_bwd.b_f.data) x = 1.0;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  visit_model(*this, [&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
  return out;
}

std::uint64_t ModelParams::schema_hash() const {
  return fnv1a(feature_schema().describe() + hp.describe());
}

BoundParams bind(Graph& g, ModelParams& model) {
  BoundParams bound{};
  std::vector<Tensor*> tensors;
  visit_model(model, [&](const std::string&, Tensor& t) { tensors.push_back(&t); });
  std::vector<Node**> slots;
  visit_bound(bound, [&](const std::string&, Node*& n) { slots.push_back(&n); });
  if (tensors.size() != slots.size())
    throw std::runtime_error("model: binding order out of sync");
  bound.leaves.reserve(tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Node* leaf = g.param(*tensors[i]);
    *slots[i] = leaf;
    bound.leaves.push_back(leaf);
  }
  return bound;
}

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::string read_string(std::istream& in) {
  std::uint32_t n = read_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

HyperParams parse_hp(const std::string& text) {
  HyperParams hp;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 3);
    if (key == "d_i") hp.d_i = std::stoul(value);
    else if (key == "d_h") hp.d_h = std::stoul(value);
    else if (key == "d_ff") hp.d_ff = std::stoul(value);
    else if (key == "word_dropout") hp.word_dropout = std::stod(value);
    else if (key == "maxaffine_dropout") hp.maxaffine_dropout = std::stod(value);
    else if (key == "ff_dropout") hp.ff_dropout = std::stod(value);
    else if (key == "bidirectional") hp.bidirectional = value == "true";
    else if (key == "thread_encoding") hp.thread_encoding = value == "true";
    else if (key == "edge_same_user") hp.edge_same_user = value == "true";
    else if (key == "edge_mention") hp.edge_mention = value == "true";
    else if (key == "window") hp.window = std::stoul(value);
    else if (key == "clip") hp.clip = std::stod(value);
    else throw std::runtime_error("checkpoint: unknown hyperparameter " + key);
  }
  return hp;
}

}  // namespace

void save_checkpoint(ModelParams& model, const std::string& path) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kMagic, sizeof kMagic);
  write_u32(out, kFormatVersion);
  write_u64(out, model.schema_hash());
  write_string(out, model.hp.describe());
  write_u32(out, static_cast<std::uint32_t>(model.embeddings.tokens.size()));
  for (const std::string& tok : model.embeddings.tokens) write_string(out, tok);
  auto named = model.named_tensors();
  write_u32(out, static_cast<std::uint32_t>(named.size()));
  for (auto& [name, tensor] : named) {
    write_string(out, name);
    write_u32(out, static_cast<std::uint32_t>(tensor->rank()));
    for (std::size_t d : tensor->shape) write_u64(out, d);
    out.write(reinterpret_cast<const char*>(tensor->data.data()),
              static_cast<std::streamsize>(tensor->data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint32_t version = read_u32(in);
  if (version != kFormatVersion)
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(version));
  std::uint64_t stored_hash = read_u64(in);
  std::string hp_text = read_string(in);

  ModelParams model;
  model.hp = parse_hp(hp_text);
  if (model.schema_hash() != stored_hash)
    throw std::runtime_error(
        "checkpoint: schema hash mismatch; the checkpoint was produced with a "
        "different feature schema or hyperparameter encoding");

  std::uint32_t vocab_size = read_u32(in);
  model.embeddings.tokens.resize(vocab_size);
  for (std::uint32_t i = 0; i < vocab_size; ++i) {
    model.embeddings.tokens[i] = read_string(in);
    model.embeddings.index[model.embeddings.tokens[i]] = i + 1;
  }
  Rng dummy(0);
  model.init(dummy);  // allocate shapes; every tensor is then overwritten
  auto named = model.named_tensors();
  std::uint32_t count = read_u32(in);
  if (count != named.size())
    throw std::runtime_error("checkpoint: tensor count mismatch");
  for (auto& [name, tensor] : named) {
    std::string stored_name = read_string(in);
    if (stored_name != name)
      throw std::runtime_error("checkpoint: expected tensor " + name + ", found " +
                               stored_name);
    std::uint32_t rank = read_u32(in);
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = read_u64(in);
    *tensor = Tensor(shape);
    in.read(reinterpret_cast<char*>(tensor->data.data()),
            static_cast<std::streamsize>(tensor->data.size() * sizeof(double)));
  }
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
  return model;
}

}  // namespace detangle
