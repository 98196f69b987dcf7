#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphtune/ensemble.hpp"
#include "graphtune/features.hpp"
#include "graphtune/hpo.hpp"
#include "graphtune/train.hpp"

namespace graphtune::solver {

inline constexpr int kSchemaVersion = 1;

enum class TaskKind { node, graph };
enum class EnsembleKind { none, voting, stacking_glm, stacking_gbm };

std::string to_string(TaskKind t);
std::string to_string(EnsembleKind e);

struct ModelEntry {
  std::string name;
  nn::ModelSpec spec;  // template; in/out dims are filled from the dataset
  train::TrainConfig train_cfg;
  hpo::SearchSpace space;  // empty => default space for the task/family
  bool has_space = false;
};

struct SolverConfig {
  TaskKind task = TaskKind::node;
  std::vector<fe::FeatureStep> feature_pipeline;
  std::vector<ModelEntry> models;
  hpo::HpoConfig hpo_cfg;
  EnsembleKind ensemble = EnsembleKind::none;
  train::EvalProtocol protocol;
  std::optional<double> time_budget;  // seconds
  std::uint64_t seed = 0;
};

void validate_config(const SolverConfig& cfg);
SolverConfig config_from_json(const nlohmann::json& j);

// The artifact's default search spaces (used when a model omits one).
hpo::SearchSpace default_node_space();
hpo::SearchSpace default_graph_space(nn::Family family);

// Per-(model, trial) training seed, derived from the config seed. Exposed so
// individual solver trials can be reproduced externally.
std::uint64_t trial_seed(std::uint64_t master, std::size_t model_index,
                         Index trial_index);

// Budget bookkeeping: checked between trials and phases, running work
// completes, feature engineering and the final evaluation always run.
struct BudgetClock {
  std::optional<double> budget;
  hpo::Clock now;
  double start = 0.0;

  BudgetClock(std::optional<double> budget_seconds, hpo::Clock clock)
      : budget(budget_seconds), now(std::move(clock)), start(now()) {}
  double elapsed() const { return now() - start; }
  bool exceeded() const { return budget && elapsed() >= *budget; }
};

struct TrialRecord {
  hpo::Assignment assignment;
  double score = 0.0;
  double seconds = 0.0;
};

struct ModelReport {
  std::string name;
  std::vector<TrialRecord> trials;
  hpo::Assignment best_assignment;
  double best_val = 0.0;
  double test = 0.0;  // NaN until final evaluation / when unavailable
};

struct EnsembleReport {
  std::string method;
  double val = 0.0;
  double test = 0.0;
};

struct SolverReport {
  std::string dataset_name;
  std::string dataset_digest;
  Index dataset_size = 0;
  std::string task;
  std::vector<ModelReport> models;
  std::optional<EnsembleReport> ensemble;
  std::vector<std::string> leaderboard;  // model names by val accuracy
  double t_fe = 0.0, t_hpo = 0.0, t_ensemble = 0.0, t_total = 0.0;
  bool budget_exhausted = false;
  std::uint64_t seed = 0;
  std::string version;
};

nlohmann::json report_to_json(const SolverReport& report);
SolverReport report_from_json(const nlohmann::json& j);

// A trained best instance: resolved spec (assignment applied, dims filled)
// plus its parameters. Graph protocols carry one instance per fold.
struct BestInstance {
  std::string model_name;
  nn::ModelSpec spec;
  std::vector<nn::ModelParams> params;  // 1 entry, or k folds under CV
};

struct SolveOutput {
  SolverReport report;
  std::vector<BestInstance> best_models;
};

SolveOutput solve(const NodeDataset& dataset, const SolverConfig& cfg,
                  const hpo::Clock& clock = hpo::steady_clock_seconds());
SolveOutput solve(const GraphDataset& dataset, const SolverConfig& cfg,
                  const hpo::Clock& clock = hpo::steady_clock_seconds());

// results.json (atomic write-then-rename) plus params_<model>[.fold<i>].json.
void write_report(const SolveOutput& output, const std::string& dir);
SolverReport read_report(const std::string& dir);

}  // namespace graphtune::solver
