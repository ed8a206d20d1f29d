#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "samcnn/dataset.hpp"
#include "samcnn/model.hpp"

namespace samcnn {

struct TrainConfig {
  double lr = 0.03;
  int batch_size = 300;
  int max_epochs = 30;
  int patience = 8;
  std::uint64_t seed = 0;
  double val_fraction = 0.15;
  bool balanced_batches = false;
};

struct ExperimentConfig {
  TrainConfig train;
  ModelConfig model;
  bool seed_set = false;

  std::string serialize() const;  // canonical key=value text
  std::uint64_t config_hash() const;
};

// Flat key=value text, one pair per line, '#' comments allowed. Unknown
// keys are rejected. The seed key may be omitted only if the caller
// supplies one later (seed_set records which).
ExperimentConfig parse_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config_text(const std::string& text,
                                              const std::string& origin);

// One cross-validation fold: test on one year, train on the rest.
struct Fold {
  int test_year = 0;
  std::vector<int> train_years;
};

std::vector<Fold> make_fold_plan(const std::vector<int>& years);

// Query-level split: floor(fraction * n) validation queries, at least one,
// deterministic under the seed. Returns (train, validation), both sorted.
std::pair<std::vector<std::string>, std::vector<std::string>> sample_validation(
    std::vector<std::string> train_queries, double fraction, std::uint64_t seed);

struct Checkpoint {
  ExperimentConfig config;
  std::uint64_t vocab_hash = 0;
  int epoch = 0;
  double val_metric = 0.0;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint make_checkpoint(ModelParams& params, const ExperimentConfig& config,
                           std::uint64_t vocab_hash, int epoch, double val_metric);

// Rebuilds a model from a checkpoint, validating every tensor shape
// against the stored config.
ModelParams restore_model(const Checkpoint& ckpt);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_ap = 0.0;
  double val_p30 = 0.0;
  double seconds = 0.0;
};

void write_epoch_log(const std::vector<EpochLog>& logs, const std::string& path);

struct FoldResult {
  Checkpoint best;
  std::vector<EpochLog> logs;
  int best_epoch = 0;
  double best_val_ap = 0.0;
  std::vector<std::string> train_qids;
  std::vector<std::string> val_qids;
};

// Trains one fold with SGD, selects the epoch with the best validation AP
// (computed through the trec-eval code path over the held-out queries),
// and stops early after `patience` epochs without improvement.
FoldResult run_fold(const DataBundle& bundle, const Fold& fold,
                    const ExperimentConfig& config);

// Scores candidates of the given queries in eval mode and returns a
// ranked run file.
RunFile rerank_queries(const DataBundle& bundle, const std::vector<std::string>& qids,
                       ModelParams& params, const std::string& tag);

}  // namespace samcnn
