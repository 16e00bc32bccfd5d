#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "detangle/corpus.hpp"
#include "detangle/decode.hpp"
#include "detangle/eval.hpp"
#include "detangle/model.hpp"

namespace detangle {

struct RunConfig {
  std::string train_dir;
  std::string dev_dir;
  std::string test_dir;
  std::string embeddings_path;  // random-initialized vocabulary when empty
  std::string checkpoint_path = "model.ckpt";
  std::string output_dir = ".";
  std::string thresholds_path;

  HyperParams hp;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 30;
  std::size_t eval_every = 1;
  std::size_t patience = 5;
  double max_seconds = 0.0;  // wall-clock training budget; 0 = unlimited
  std::uint64_t seed = 1;
};

// `key = value` lines; '#' starts a comment
RunConfig load_config(const std::string& path);
void apply_overrides(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& kv);
// DETANGLE_SEED environment variable wins over config and flags
void apply_env_seed(RunConfig& cfg);

struct LabeledConversation {
  std::string name;
  Conversation conv;
  LinkSet gold;  // empty for bare logs
};

// Loads NAME.log (+ NAME.annot when present) pairs, sorted by name.
std::vector<LabeledConversation> load_dir(const std::string& dir, bool require_annotations);

// vocabulary from the embeddings file, or from the training tokens (sorted)
ModelParams init_model(const RunConfig& cfg, const std::vector<LabeledConversation>& train);

struct TrainResult {
  double best_dev_f1 = -1.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::vector<double> epoch_losses;
  bool aborted = false;
  std::string abort_reason;
};

// Adam over shuffled training chunks; keeps the checkpoint with the best dev
// graph F1 (argmax decoding) and stops after `patience` non-improving epochs.
TrainResult train_model(const RunConfig& cfg, ModelParams& model,
                        const std::vector<LabeledConversation>& train,
                        const std::vector<LabeledConversation>& dev, std::ostream& log);

// Sequential decode of one conversation: queries in index order, the running
// union-find of decoded links feeding the thread encodings. Collects the full
// per-query distributions and the decoded LinkSet.
struct ConversationRun {
  std::vector<QueryDistribution> distributions;
  LinkSet links;
};
ConversationRun run_conversation(ModelParams& model, const LabeledConversation& lc,
                                 const Thresholds& t);

LinkSet predict_conversation(ModelParams& model, const LabeledConversation& lc,
                             const Thresholds& t);

// micro-averaged metrics over conversations (counts summed, then P/R/F)
struct EvalSummary {
  PRF graph;
  PRF clusters;
  PRF selflinks;
};
EvalSummary evaluate_links(const std::vector<LabeledConversation>& data,
                           const std::vector<LinkSet>& preds);

// aggregate dev graph F1 with argmax decoding (training-time model selection)
double dev_graph_f1(ModelParams& model, const std::vector<LabeledConversation>& dev);

Thresholds load_thresholds(const std::string& path);
void save_thresholds(const Thresholds& t, const std::string& path);

struct SearchTrial {
  std::size_t index = 0;
  HyperParams hp;
  double learning_rate = 0.0;
  double dev_f1 = -1.0;
  bool failed = false;
  std::string error;
};

// n_jobs independent trials, categorical fields uniform, learning rate
// log-uniform in [1e-5, 1e-3]; returns trials sorted by dev graph F1
std::vector<SearchTrial> random_search(const RunConfig& base, std::size_t n_jobs,
                                       const std::vector<LabeledConversation>& train,
                                       const std::vector<LabeledConversation>& dev,
                                       std::ostream& log);

void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace detangle
