#pragma once

#include <vector>

#include "graphtune/graph.hpp"
#include "graphtune/models.hpp"

namespace graphtune::train {

struct TrainConfig {
  double lr = 0.01;
  double weight_decay = 5e-4;
  Index max_epochs = 300;
  Index patience = 50;
  Index batch_size = 32;  // graph tasks
  std::uint64_t seed = 0;
};

void validate_config(const TrainConfig& cfg);

struct EpochStats {
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  nn::ModelParams best_params;
  double best_val_metric = 0.0;
  double best_val_loss = 0.0;
  double test_metric = 0.0;  // NaN when no test set was given
  std::vector<EpochStats> history;
  Index epochs_run = 0;
};

struct EvalProtocol {
  enum class Kind { fixed_split, kfold };
  Kind kind = Kind::fixed_split;
  Index k = 10;
};

struct EvalResult {
  double accuracy = 0.0;
  Matrix probabilities;  // row-stochastic
};

// Accuracy with argmax ties resolved to the lowest class index.
double accuracy_from_probs(const Matrix& probs, const std::vector<Index>& labels,
                           const std::vector<std::uint8_t>& mask);
double accuracy_from_probs(const Matrix& probs, const std::vector<Index>& labels);

// Full-graph training with early stopping on validation accuracy
// (ties broken by lower validation loss); restores the best snapshot.
TrainResult train_node(const nn::ModelSpec& spec, const NodeDataset& data,
                       const SplitMasks& masks, const TrainConfig& cfg);

// Minibatch training over block-diagonal batches; empty test_ids skip the
// final test evaluation (test_metric = NaN).
TrainResult train_graph(const nn::ModelSpec& spec, const GraphDataset& data,
                        const std::vector<Index>& train_ids,
                        const std::vector<Index>& val_ids,
                        const std::vector<Index>& test_ids,
                        const TrainConfig& cfg);

// Probabilities over all nodes; accuracy over the mask.
EvalResult evaluate_node(const nn::ModelSpec& spec, nn::ModelParams& params,
                         const NodeDataset& data,
                         const std::vector<std::uint8_t>& mask);

// Probabilities over the listed graphs, rows aligned with graph_ids.
EvalResult evaluate_graph(const nn::ModelSpec& spec, nn::ModelParams& params,
                          const GraphDataset& data,
                          const std::vector<Index>& graph_ids,
                          Index batch_size = 32);

struct CvResult {
  double mean_accuracy = 0.0;  // over fold test accuracies
  double std_accuracy = 0.0;   // population std
  double mean_val_accuracy = 0.0;
  std::vector<TrainResult> folds;
};

// Fold i is the test set, fold (i+1) mod k the validation set, the rest
// trains. with_test=false leaves fold test sets unevaluated (used by HPO).
CvResult run_cv(const nn::ModelSpec& spec, const GraphDataset& data,
                const FoldPlan& plan, const TrainConfig& cfg,
                bool with_test = true);

}  // namespace graphtune::train
