#include "detangle/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "detangle/daglstm.hpp"
#include "detangle/features.hpp"
#include "detangle/optim.hpp"

namespace fs = std::filesystem;

namespace detangle {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

namespace {

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::runtime_error("config: expected boolean, got '" + v + "'");
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "train_dir") cfg.train_dir = value;
  else if (key == "dev_dir") cfg.dev_dir = value;
  else if (key == "test_dir") cfg.test_dir = value;
  else if (key == "embeddings") cfg.embeddings_path = value;
  else if (key == "checkpoint") cfg.checkpoint_path = value;
  else if (key == "output_dir") cfg.output_dir = value;
  else if (key == "thresholds") cfg.thresholds_path = value;
  else if (key == "d_i") cfg.hp.d_i = std::stoul(value);
  else if (key == "d_h") cfg.hp.d_h = std::stoul(value);
  else if (key == "d_ff") cfg.hp.d_ff = std::stoul(value);
  else if (key == "word_dropout") cfg.hp.word_dropout = std::stod(value);
  else if (key == "maxaffine_dropout") cfg.hp.maxaffine_dropout = std::stod(value);
  else if (key == "ff_dropout") cfg.hp.ff_dropout = std::stod(value);
  else if (key == "bidirectional") cfg.hp.bidirectional = parse_bool(value);
  else if (key == "thread_encoding") cfg.hp.thread_encoding = parse_bool(value);
  else if (key == "edge_same_user") cfg.hp.edge_same_user = parse_bool(value);
  else if (key == "edge_mention") cfg.hp.edge_mention = parse_bool(value);
  else if (key == "window") cfg.hp.window = std::stoul(value);
  else if (key == "clip") cfg.hp.clip = std::stod(value);
  else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
  else if (key == "max_epochs") cfg.max_epochs = std::stoul(value);
  else if (key == "eval_every") cfg.eval_every = std::stoul(value);
  else if (key == "patience") cfg.patience = std::stoul(value);
  else if (key == "max_seconds") cfg.max_seconds = std::stod(value);
  else if (key == "seed") cfg.seed = std::stoull(value);
  else throw std::runtime_error("config: unknown key '" + key + "'");
}

}  // namespace

RunConfig load_config(const std::string& path) {
  RunConfig cfg;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw ParseError(line_no, "expected 'key = value'");
      continue;
    }
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void apply_overrides(RunConfig& cfg,
                     const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [key, value] : kv) set_key(cfg, key, value);
}

void apply_env_seed(RunConfig& cfg) {
  if (const char* env = std::getenv("DETANGLE_SEED")) cfg.seed = std::stoull(env);
}

std::vector<LabeledConversation> load_dir(const std::string& dir, bool require_annotations) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".log")
      names.push_back(entry.path().stem().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::runtime_error("no .log files in " + dir);
  std::vector<LabeledConversation> out;
  for (const std::string& name : names) {
    LabeledConversation lc;
    lc.name = name;
    lc.conv = parse_log(read_file((fs::path(dir) / (name + ".log")).string()));
    fs::path annot = fs::path(dir) / (name + ".annot");
    if (fs::exists(annot)) {
      lc.gold = load_annotations(read_file(annot.string()));
      attach_annotations(lc.conv, lc.gold);
    } else if (require_annotations) {
      throw std::runtime_error("missing annotations for " + name + " in " + dir);
    } else {
      lc.conv.annotated_begin = 0;
      lc.conv.annotated_end = lc.conv.size();
    }
    out.push_back(std::move(lc));
  }
  return out;
}

ModelParams init_model(const RunConfig& cfg, const std::vector<LabeledConversation>& train) {
  ModelParams model;
  model.hp = cfg.hp;
  Rng rng(cfg.seed);
  if (!cfg.embeddings_path.empty()) {
    model.embeddings = load_embeddings(read_file(cfg.embeddings_path));
    if (model.embeddings.dim() != model.hp.d_i)
      throw std::runtime_error("embeddings width " + std::to_string(model.embeddings.dim()) +
                               " does not match d_i " + std::to_string(model.hp.d_i));
  } else {
    std::set<std::string> vocab;
    for (const LabeledConversation& lc : train)
      for (const Post& post : lc.conv.posts)
        for (const std::string& tok : post.tokens) vocab.insert(tok);
    model.embeddings = EmbeddingTable::random(
        std::vector<std::string>(vocab.begin(), vocab.end()), model.hp.d_i, rng);
  }
  model.init(rng);
  return model;
}

namespace {

struct ChunkRef {
  const LabeledConversation* conv;
  Chunk chunk;
};

std::vector<ChunkRef> all_chunks(const std::vector<LabeledConversation>& train,
                                 const HyperParams& hp) {
  std::vector<ChunkRef> out;
  for (const LabeledConversation& lc : train)
    for (Chunk& c : chunk_training(lc.conv, lc.gold, 50, 100, 50, hp.window))
      out.push_back({&lc, std::move(c)});
  return out;
}

std::span<const Post> chunk_span(const LabeledConversation& lc, const Chunk& chunk) {
  return std::span<const Post>(lc.conv.posts.data() + chunk.begin, chunk.size());
}

}  // namespace

double dev_graph_f1(ModelParams& model, const std::vector<LabeledConversation>& dev) {
  std::size_t tp = 0, pred_n = 0, gold_n = 0;
  for (const LabeledConversation& lc : dev) {
    LinkSet pred = predict_conversation(model, lc, Thresholds{0.0, 0.0});
    PRF prf = graph_prf(pred, lc.gold);
    tp += prf.true_positive;
    pred_n += prf.predicted;
    gold_n += prf.gold;
  }
  return make_prf(tp, pred_n, gold_n).f1;
}

TrainResult train_model(const RunConfig& cfg, ModelParams& model,
                        const std::vector<LabeledConversation>& train,
                        const std::vector<LabeledConversation>& dev, std::ostream& log) {
  TrainResult result;
  auto started = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };
  std::vector<ChunkRef> chunks = all_chunks(train, model.hp);
  if (chunks.empty()) throw std::runtime_error("train: no chunks");
  auto named = model.named_tensors();
  std::vector<Tensor*> tensors;
  for (auto& [name, t] : named) tensors.push_back(t);

  Rng rng(cfg.seed);
  AdamState adam;
  std::size_t stale = 0;
  std::size_t dropped_links = 0, skipped_queries = 0;

  std::vector<std::size_t> order(chunks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t idx : order) {
      const ChunkRef& ref = chunks[idx];
      Graph g;
      BoundParams bound = bind(g, model);
      ChunkLoss cl = chunk_loss(g, bound, model.hp, model.embeddings,
                                chunk_span(*ref.conv, ref.chunk), ref.chunk, true, &rng);
      dropped_links += cl.dropped_links;
      skipped_queries += cl.skipped;
      if (!cl.loss) continue;
      double loss_value = cl.loss->value[0];
      if (!std::isfinite(loss_value)) {
        result.aborted = true;
        result.abort_reason = "non-finite loss at epoch " + std::to_string(epoch);
        log << "abort: " << result.abort_reason << "; last good checkpoint retained\n";
        result.epochs_run = epoch;
        return result;
      }
      loss_sum += loss_value;
      ++loss_count;
      g.backward(cl.loss);
      std::vector<Tensor> zero_grads;  // holds storage for untouched leaves
      std::vector<Tensor*> grads;
      grads.reserve(bound.leaves.size());
      zero_grads.reserve(bound.leaves.size());
      for (Node* leaf : bound.leaves) {
        if (leaf->has_grad) {
          grads.push_back(&leaf->grad);
        } else {
          zero_grads.emplace_back(leaf->value.shape);
          grads.push_back(&zero_grads.back());
        }
      }
      clip_gradients(grads, model.hp.clip);
      try {
        adam_step(tensors, grads, adam, cfg.learning_rate);
      } catch (const std::exception& e) {
        result.aborted = true;
        result.abort_reason = e.what();
        log << "abort: " << e.what() << "; last good checkpoint retained\n";
        result.epochs_run = epoch;
        return result;
      }
    }
    double mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    result.epoch_losses.push_back(mean_loss);
    result.epochs_run = epoch;

    if (epoch % cfg.eval_every == 0 && !dev.empty()) {
      double f1 = dev_graph_f1(model, dev);
      bool improved = f1 > result.best_dev_f1;
      if (improved) {
        result.best_dev_f1 = f1;
        result.best_epoch = epoch;
        stale = 0;
        save_checkpoint(model, cfg.checkpoint_path);
      } else {
        ++stale;
      }
      log << "epoch " << epoch << " loss " << mean_loss << " dev_graph_f1 " << f1
          << (improved ? " *" : "") << "\n";
      if (stale > cfg.patience) {
        log << "early stop after " << stale << " non-improving evaluations\n";
        break;
      }
    } else {
      log << "epoch " << epoch << " loss " << mean_loss << "\n";
    }
    if (cfg.max_seconds > 0.0 && elapsed() > cfg.max_seconds) {
      log << "time budget reached after epoch " << epoch << "\n";
      break;
    }
  }
  if (dropped_links || skipped_queries)
    log << "window-dropped gold links: " << dropped_links
        << ", skipped queries: " << skipped_queries << "\n";
  if (result.best_epoch == 0) {
    // no dev evaluation happened; persist the final weights
    save_checkpoint(model, cfg.checkpoint_path);
  }
  return result;
}

ConversationRun run_conversation(ModelParams& model, const LabeledConversation& lc,
                                 const Thresholds& t) {
  const HyperParams& hp = model.hp;
  Chunk chunk = prepare_eval(lc.conv, lc.gold.empty() ? nullptr : &lc.gold, 100, hp.window);
  std::span<const Post> posts = chunk_span(lc, chunk);

  Graph g;
  BoundParams bound = bind(g, model);
  std::vector<Node*> chi = encode_span(g, bound, hp, model.embeddings, posts, false, nullptr);
  std::vector<Node*> phi = unroll(g, bound, hp, posts, chi);

  ThreadState threads(chunk.begin, chunk.end);
  // tau value cache: post -> (cluster version, encoded thread)
  std::map<std::size_t, std::pair<std::uint64_t, Tensor>> tau_cache;

  ConversationRun run;
  for (std::size_t query = chunk.target_begin; query < chunk.target_end; ++query) {
    std::size_t mark = g.mark();
    std::vector<Node*> tau(posts.size(), nullptr);
    QueryDistribution qd;
    qd.query = query;
    qd.candidates = chunk.candidates(query);
    if (hp.thread_encoding) {
      for (std::size_t j : qd.candidates) {
        auto hit = tau_cache.find(j);
        if (hit != tau_cache.end() && hit->second.first == threads.version_of(j)) {
          tau[j - chunk.begin] = g.constant(hit->second.second);
          continue;
        }
        std::vector<Node*> thread_chi;
        for (std::size_t m : threads.thread_of(j)) thread_chi.push_back(chi[m - chunk.begin]);
        Node* enc = thread_encode(g, bound.thread_gru, thread_chi);
        tau[j - chunk.begin] = enc;
        tau_cache[j] = {threads.version_of(j), enc->value};
      }
    }
    LinkDistribution dist =
        link_distribution(g, bound, hp, posts, chunk, query, phi, tau, false, nullptr);
    qd.probs = dist.probabilities();
    std::vector<std::size_t> links = decide_links(qd, t);
    for (std::size_t j : links) {
      run.links.add(query, j);
      threads.link(query, j);
    }
    run.distributions.push_back(std::move(qd));
    g.truncate(mark);
  }
  return run;
}

LinkSet predict_conversation(ModelParams& model, const LabeledConversation& lc,
                             const Thresholds& t) {
  return run_conversation(model, lc, t).links;
}

EvalSummary evaluate_links(const std::vector<LabeledConversation>& data,
                           const std::vector<LinkSet>& preds) {
  if (data.size() != preds.size())
    throw std::runtime_error("evaluate: conversation/prediction count mismatch");
  std::size_t g_tp = 0, g_pred = 0, g_gold = 0;
  std::size_t c_tp = 0, c_pred = 0, c_gold = 0;
  std::size_t s_tp = 0, s_pred = 0, s_gold = 0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    PRF g = graph_prf(preds[k], data[k].gold);
    g_tp += g.true_positive, g_pred += g.predicted, g_gold += g.gold;
    std::size_t n = data[k].conv.size();
    PRF c = cluster_prf(cluster(preds[k], n), cluster(data[k].gold, n));
    c_tp += c.true_positive, c_pred += c.predicted, c_gold += c.gold;
    PRF s = selflink_prf(preds[k], data[k].gold);
    s_tp += s.true_positive, s_pred += s.predicted, s_gold += s.gold;
  }
  EvalSummary out;
  out.graph = make_prf(g_tp, g_pred, g_gold);
  out.clusters = make_prf(c_tp, c_pred, c_gold);
  out.selflinks = make_prf(s_tp, s_pred, s_gold);
  return out;
}

Thresholds load_thresholds(const std::string& path) {
  Thresholds t;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(std::remove_if(key.begin(), key.end(), ::isspace), key.end());
    double value = std::stod(line.substr(eq + 1));
    if (key == "theta") t.theta = value;
    else if (key == "delta") t.delta = value;
    else throw std::runtime_error("thresholds: unknown key " + key);
  }
  return t;
}

void save_thresholds(const Thresholds& t, const std::string& path) {
  std::ostringstream out;
  out << "theta = " << t.theta << "\n" << "delta = " << t.delta << "\n";
  write_file(path, out.str());
}

std::vector<SearchTrial> random_search(const RunConfig& base, std::size_t n_jobs,
                                       const std::vector<LabeledConversation>& train,
                                       const std::vector<LabeledConversation>& dev,
                                       std::ostream& log) {
  const std::vector<std::size_t> dims = {64, 128, 256};
  const std::vector<double> drops = {0.0, 0.3, 0.5};
  Rng master(base.seed);
  std::vector<SearchTrial> trials;
  for (std::size_t job = 0; job < n_jobs; ++job) {
    Rng sampler = master.fork(job + 1);
    SearchTrial trial;
    trial.index = job;
    trial.hp = base.hp;
    trial.hp.d_h = sampler.pick(dims);
    trial.hp.d_ff = sampler.pick(dims);
    trial.hp.word_dropout = sampler.pick(drops);
    trial.hp.maxaffine_dropout = sampler.pick(drops);
    trial.hp.ff_dropout = sampler.pick(drops);
    trial.hp.bidirectional = sampler.bernoulli(0.5);
    trial.learning_rate = sampler.log_uniform(1e-5, 1e-3);

    RunConfig cfg = base;
    cfg.hp = trial.hp;
    cfg.learning_rate = trial.learning_rate;
    cfg.seed = base.seed + 1000 * (job + 1);
    fs::path trial_dir = fs::path(base.output_dir) / ("trial_" + std::to_string(job));
    fs::create_directories(trial_dir);
    cfg.checkpoint_path = (trial_dir / "model.ckpt").string();

    log << "trial " << job << ": d_h=" << trial.hp.d_h << " d_ff=" << trial.hp.d_ff
        << " word_do=" << trial.hp.word_dropout << " ma_do=" << trial.hp.maxaffine_dropout
        << " ff_do=" << trial.hp.ff_dropout << " bidir=" << trial.hp.bidirectional
        << " lr=" << trial.learning_rate << "\n";
    try {
      ModelParams model = init_model(cfg, train);
      TrainResult tr = train_model(cfg, model, train, dev, log);
      trial.dev_f1 = tr.best_dev_f1;
      if (tr.aborted) {
        trial.failed = true;
        trial.error = tr.abort_reason;
      }
    } catch (const std::exception& e) {
      trial.failed = true;
      trial.error = e.what();
      log << "trial " << job << " failed: " << e.what() << "\n";
    }
    trials.push_back(std::move(trial));
  }
  std::stable_sort(trials.begin(), trials.end(),
                   [](const SearchTrial& a, const SearchTrial& b) { return a.dev_f1 > b.dev_f1; });
  return trials;
}

}  // namespace detangle
