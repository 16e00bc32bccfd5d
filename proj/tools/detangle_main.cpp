#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "detangle/daglstm.hpp"
#include "detangle/features.hpp"
#include "detangle/pipeline.hpp"
#include "detangle/synth.hpp"

namespace fs = std::filesystem;
using namespace detangle;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
};

void add_config_options(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "key = value configuration file");
  auto track = [&opts](const std::string& key) {
    return [&opts, key](const std::string& value) { opts.overrides.emplace_back(key, value); };
  };
  for (const char* key :
       {"train_dir", "dev_dir", "test_dir", "embeddings", "checkpoint", "output_dir",
        "thresholds", "d_i", "d_h", "d_ff", "word_dropout", "maxaffine_dropout", "ff_dropout",
        "bidirectional", "thread_encoding", "edge_same_user", "edge_mention", "window", "clip",
        "learning_rate", "max_epochs", "eval_every", "patience", "max_seconds", "seed"}) {
    cmd->add_option_function<std::string>("--" + std::string(key), track(key));
  }
}

RunConfig make_config(const CommonOpts& opts) {
  RunConfig cfg;
  if (!opts.config_path.empty()) cfg = load_config(opts.config_path);
  apply_overrides(cfg, opts.overrides);
  apply_env_seed(cfg);
  return cfg;
}

// hyperparameters that were explicitly given must agree with the checkpoint
void check_hp_overrides(const RunConfig& cfg, const CommonOpts& opts, const ModelParams& model) {
  RunConfig from_ckpt = cfg;
  from_ckpt.hp = model.hp;
  apply_overrides(from_ckpt, opts.overrides);
  if (!(from_ckpt.hp == model.hp))
    throw std::runtime_error(
        "hyperparameter flags conflict with the checkpoint header; rerun without the "
        "conflicting flags or retrain");
}

LinkSet read_predictions(const fs::path& dir, const std::string& name) {
  fs::path p = dir / (name + ".pred");
  if (!fs::exists(p)) p = dir / (name + ".annot");
  if (!fs::exists(p))
    throw std::runtime_error("no predictions (" + name + ".pred) in " + dir.string());
  return load_annotations(read_file(p.string()));
}

void check_same_universe(const std::string& name, const LinkSet& pred, const LinkSet& gold) {
  std::vector<std::size_t> missing, extra;
  for (const auto& [q, ls] : gold.links)
    if (!pred.links.count(q)) missing.push_back(q);
  for (const auto& [q, ls] : pred.links)
    if (!gold.links.count(q)) extra.push_back(q);
  if (missing.empty() && extra.empty()) return;
  std::ostringstream msg;
  msg << name << ": query universes differ;";
  if (!missing.empty()) {
    msg << " unpredicted gold queries:";
    for (std::size_t k = 0; k < missing.size() && k < 10; ++k) msg << ' ' << missing[k];
    if (missing.size() > 10) msg << " ... (" << missing.size() << " total)";
  }
  if (!extra.empty()) {
    msg << " predictions outside gold:";
    for (std::size_t k = 0; k < extra.size() && k < 10; ++k) msg << ' ' << extra[k];
    if (extra.size() > 10) msg << " ... (" << extra.size() << " total)";
  }
  throw std::runtime_error(msg.str());
}

int cmd_train(const CommonOpts& opts) {
  RunConfig cfg = make_config(opts);
  auto train = load_dir(cfg.train_dir, true);
  std::vector<LabeledConversation> dev;
  if (!cfg.dev_dir.empty()) dev = load_dir(cfg.dev_dir, true);
  ModelParams model = init_model(cfg, train);
  fs::create_directories(cfg.output_dir);
  write_file((fs::path(cfg.output_dir) / "feature_schema.txt").string(),
             feature_schema().describe());
  std::ofstream log_file((fs::path(cfg.output_dir) / "train.log").string());
  struct Tee : std::ostream, std::streambuf {
    std::ostream &a, &b;
    Tee(std::ostream& a_, std::ostream& b_) : std::ostream(this), a(a_), b(b_) {}
    int overflow(int c) override {
      a.put(static_cast<char>(c));
      b.put(static_cast<char>(c));
      return c;
    }
  } tee(std::cout, log_file);
  TrainResult result = train_model(cfg, model, train, dev, tee);
  tee << "best dev graph F1 " << result.best_dev_f1 << " at epoch " << result.best_epoch
      << "; checkpoint: " << cfg.checkpoint_path << "\n";
  return result.aborted ? 1 : 0;
}

int cmd_predict(const CommonOpts& opts) {
  RunConfig cfg = make_config(opts);
  ModelParams model = load_checkpoint(cfg.checkpoint_path);
  check_hp_overrides(cfg, opts, model);
  Thresholds t;
  if (!cfg.thresholds_path.empty()) t = load_thresholds(cfg.thresholds_path);
  auto data = load_dir(cfg.test_dir, false);
  fs::create_directories(cfg.output_dir);
  for (const LabeledConversation& lc : data) {
    LinkSet pred = predict_conversation(model, lc, t);
    write_file((fs::path(cfg.output_dir) / (lc.name + ".pred")).string(),
               serialize_annotations(pred));
    std::cout << lc.name << ": " << pred.query_count() << " queries, " << pred.pair_count()
              << " links\n";
  }
  return 0;
}

int cmd_evaluate(const CommonOpts& opts, const std::string& pred_dir) {
  RunConfig cfg = make_config(opts);
  auto data = load_dir(cfg.test_dir, true);
  std::vector<LinkSet> preds;
  for (const LabeledConversation& lc : data) {
    LinkSet pred = read_predictions(pred_dir, lc.name);
    check_same_universe(lc.name, pred, lc.gold);
    preds.push_back(std::move(pred));
  }
  EvalSummary s = evaluate_links(data, preds);
  std::vector<std::pair<std::string, PRF>> rows = {
      {"graph", s.graph}, {"cluster", s.clusters}, {"selflink", s.selflinks}};
  std::cout << metrics_table(rows) << "\n" << metrics_kv(rows);
  return 0;
}

int cmd_tune(const CommonOpts& opts) {
  RunConfig cfg = make_config(opts);
  ModelParams model = load_checkpoint(cfg.checkpoint_path);
  check_hp_overrides(cfg, opts, model);
  auto dev = load_dir(cfg.dev_dir, true);
  std::vector<QueryDistribution> dists;
  LinkSet gold;
  std::size_t offset = 0;
  std::size_t n_posts = 0;
  // conversations are disjoint, so shift indices into one shared universe
  for (const LabeledConversation& lc : dev) {
    ConversationRun run = run_conversation(model, lc, Thresholds{0.0, 0.0});
    for (QueryDistribution qd : run.distributions) {
      qd.query += offset;
      for (std::size_t& c : qd.candidates) c += offset;
      dists.push_back(std::move(qd));
    }
    for (const auto& [q, ls] : lc.gold.links)
      for (std::size_t j : ls) gold.add(q + offset, j + offset);
    offset += lc.conv.size();
    n_posts = offset;
  }
  Thresholds t = tune_thresholds(dists, gold, n_posts);
  std::string path = cfg.thresholds_path.empty()
                         ? (fs::path(cfg.output_dir) / "thresholds.txt").string()
                         : cfg.thresholds_path;
  save_thresholds(t, path);
  std::cout << "theta = " << t.theta << "\ndelta = " << t.delta << "\nwritten to " << path
            << "\n";
  return 0;
}

int cmd_compare(const CommonOpts& opts, const std::string& dir_a, const std::string& dir_b) {
  RunConfig cfg = make_config(opts);
  auto data = load_dir(cfg.test_dir, true);
  std::size_t n_ab = 0, n_ba = 0;
  for (const LabeledConversation& lc : data) {
    LinkSet a = read_predictions(dir_a, lc.name);
    LinkSet b = read_predictions(dir_b, lc.name);
    McNemarResult r = mcnemar(a, b, lc.gold);
    n_ab += r.n_a_not_b;
    n_ba += r.n_b_not_a;
  }
  double p = binomial_two_sided(n_ab, n_ab + n_ba);
  std::cout << "n_A_not_B = " << n_ab << "\nn_B_not_A = " << n_ba << "\np_value = "
            << std::setprecision(10) << p << "\nsignificant_at_95 = "
            << (p < 0.05 ? "true" : "false") << "\n";
  return 0;
}

int cmd_search(const CommonOpts& opts, std::size_t n_jobs) {
  RunConfig cfg = make_config(opts);
  auto train = load_dir(cfg.train_dir, true);
  auto dev = load_dir(cfg.dev_dir, true);
  fs::create_directories(cfg.output_dir);
  auto trials = random_search(cfg, n_jobs, train, dev, std::cout);
  std::ostringstream table;
  table << std::left << std::setw(6) << "rank" << std::setw(6) << "job" << std::setw(7)
        << "d_h" << std::setw(7) << "d_ff" << std::setw(9) << "word_do" << std::setw(9)
        << "ma_do" << std::setw(9) << "ff_do" << std::setw(7) << "bidir" << std::setw(12)
        << "lr" << std::setw(10) << "dev_f1" << "status\n";
  for (std::size_t r = 0; r < trials.size(); ++r) {
    const SearchTrial& t = trials[r];
    table << std::left << std::setw(6) << r << std::setw(6) << t.index << std::setw(7)
          << t.hp.d_h << std::setw(7) << t.hp.d_ff << std::setw(9) << t.hp.word_dropout
          << std::setw(9) << t.hp.maxaffine_dropout << std::setw(9) << t.hp.ff_dropout
          << std::setw(7) << t.hp.bidirectional << std::setw(12) << std::setprecision(4)
          << t.learning_rate << std::setw(10) << t.dev_f1 << (t.failed ? t.error : "ok")
          << "\n";
  }
  std::cout << table.str();
  write_file((fs::path(cfg.output_dir) / "search_results.txt").string(), table.str());
  return 0;
}

int cmd_synth(std::uint64_t seed, std::size_t n_convs, const std::string& out_dir,
              std::size_t posts) {
  SynthOptions opt;
  opt.n_convs = n_convs;
  if (posts) opt.posts_per_conv = posts;
  fs::create_directories(out_dir);
  for (const SynthConversation& conv : synth_corpus(seed, opt)) {
    write_file((fs::path(out_dir) / (conv.name + ".log")).string(), conv.log);
    write_file((fs::path(out_dir) / (conv.name + ".annot")).string(), conv.annotations);
  }
  std::cout << "wrote " << n_convs << " conversations to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chat disentanglement: reply-to link prediction and thread recovery"};
  app.require_subcommand(1);

  CommonOpts train_opts, predict_opts, eval_opts, tune_opts, compare_opts, search_opts;
  std::string pred_dir, dir_a, dir_b;
  std::size_t n_jobs = 10;
  std::uint64_t synth_seed = 7;
  std::size_t synth_convs = 20, synth_posts = 0;
  std::string synth_out = "synth_corpus";

  add_config_options(app.add_subcommand("train", "train a model"), train_opts);
  add_config_options(app.add_subcommand("predict", "decode reply-to links"), predict_opts);
  auto* ev = app.add_subcommand("evaluate", "score predictions against gold");
  add_config_options(ev, eval_opts);
  ev->add_option("--pred_dir", pred_dir, "directory of .pred files")->required();
  add_config_options(app.add_subcommand("tune", "fit self-link thresholds on dev"), tune_opts);
  auto* cp = app.add_subcommand("compare", "McNemar significance between two predictions");
  add_config_options(cp, compare_opts);
  cp->add_option("--pred_a", dir_a)->required();
  cp->add_option("--pred_b", dir_b)->required();
  auto* se = app.add_subcommand("search", "random hyperparameter search");
  add_config_options(se, search_opts);
  se->add_option("--jobs", n_jobs, "number of trials");
  auto* sy = app.add_subcommand("synth", "generate a synthetic corpus");
  sy->add_option("--seed", synth_seed);
  sy->add_option("--convs", synth_convs);
  sy->add_option("--posts", synth_posts);
  sy->add_option("--out", synth_out);

  CLI11_PARSE(app, argc, argv);
  try {
    if (app.got_subcommand("train")) return cmd_train(train_opts);
    if (app.got_subcommand("predict")) return cmd_predict(predict_opts);
    if (app.got_subcommand("evaluate")) return cmd_evaluate(eval_opts, pred_dir);
    if (app.got_subcommand("tune")) return cmd_tune(tune_opts);
    if (app.got_subcommand("compare")) return cmd_compare(compare_opts, dir_a, dir_b);
    if (app.got_subcommand("search")) return cmd_search(search_opts, n_jobs);
    if (app.got_subcommand("synth"))
      return cmd_synth(synth_seed, synth_convs, synth_out, synth_posts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
