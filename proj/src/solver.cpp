#include "graphtune/solver.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "graphtune/dataset_io.hpp"

namespace graphtune::solver {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

nn::ModelSpec family_defaults(nn::Family family) {
  nn::ModelSpec spec;
  spec.family = family;
  switch (family) {
    case nn::Family::gcn:
    case nn::Family::sage:
      spec.num_layers = 2;
      spec.hidden_dim = 16;
      break;
    case nn::Family::gat:
      spec.num_layers = 2;
      spec.hidden_dim = 8;  // per head
      spec.heads = 8;
      spec.activation = nn::Activation::elu;
      break;
    case nn::Family::gin:
      spec.num_layers = 4;
      spec.hidden_dim = 64;
      break;
    case nn::Family::topk_pool:
      spec.num_layers = 3;
      spec.hidden_dim = 64;
      spec.pool_ratio = 0.8;
      break;
  }
  return spec;
}

Index to_index(const hpo::ParamValue& v) {
  if (std::holds_alternative<Index>(v)) return std::get<Index>(v);
  if (std::holds_alternative<double>(v))
    return static_cast<Index>(std::llround(std::get<double>(v)));
  throw ConfigError("hyper-parameter: expected a number");
}

double to_number(const hpo::ParamValue& v) {
  if (std::holds_alternative<double>(v)) return std::get<double>(v);
  if (std::holds_alternative<Index>(v))
    return static_cast<double>(std::get<Index>(v));
  throw ConfigError("hyper-parameter: expected a number");
}

void apply_assignment(const hpo::Assignment& a, nn::ModelSpec& spec,
                      train::TrainConfig& tc) {
  for (const auto& [name, value] : a) {
    if (name == "hidden_dim") spec.hidden_dim = to_index(value);
    else if (name == "num_layers") spec.num_layers = to_index(value);
    else if (name == "heads") spec.heads = to_index(value);
    else if (name == "dropout") spec.dropout = to_number(value);
    else if (name == "pool_ratio") spec.pool_ratio = to_number(value);
    else if (name == "activation")
      spec.activation = nn::activation_from_string(std::get<std::string>(value));
    else if (name == "lr") tc.lr = to_number(value);
    else if (name == "weight_decay") tc.weight_decay = to_number(value);
    else if (name == "max_epochs") tc.max_epochs = to_index(value);
    else if (name == "patience") tc.patience = to_index(value);
    else if (name == "batch_size") tc.batch_size = to_index(value);
    else
      throw ConfigError("unknown hyper-parameter '" + name + "'");
  }
}

// Project the template's values onto the space dimensions, clamped into
// bounds, so trial 0 evaluates the model's default configuration.
hpo::Assignment default_assignment(const ModelEntry& entry,
                                   const hpo::SearchSpace& space) {
  hpo::Assignment a;
  for (const auto& dim : space.params) {
    double numeric = 0.0;
    std::string categorical;
    if (dim.name == "hidden_dim") numeric = static_cast<double>(entry.spec.hidden_dim);
    else if (dim.name == "num_layers") numeric = static_cast<double>(entry.spec.num_layers);
    else if (dim.name == "heads") numeric = static_cast<double>(entry.spec.heads);
    else if (dim.name == "dropout") numeric = entry.spec.dropout;
    else if (dim.name == "pool_ratio") numeric = entry.spec.pool_ratio;
    else if (dim.name == "activation") categorical = nn::to_string(entry.spec.activation);
    else if (dim.name == "lr") numeric = entry.train_cfg.lr;
    else if (dim.name == "weight_decay") numeric = entry.train_cfg.weight_decay;
    else if (dim.name == "max_epochs") numeric = static_cast<double>(entry.train_cfg.max_epochs);
    else if (dim.name == "patience") numeric = static_cast<double>(entry.train_cfg.patience);
    else if (dim.name == "batch_size") numeric = static_cast<double>(entry.train_cfg.batch_size);
    else
      throw ConfigError("unknown hyper-parameter '" + dim.name + "' in search space");

    switch (dim.kind) {
      case hpo::HyperParamSpec::Kind::categorical: {
        const auto it = std::find(dim.choices.begin(), dim.choices.end(), categorical);
        a[dim.name] = it == dim.choices.end() ? dim.choices.front() : *it;
        break;
      }
      case hpo::HyperParamSpec::Kind::integer:
        a[dim.name] = static_cast<Index>(
            std::llround(std::clamp(numeric, dim.low, dim.high)));
        break;
      case hpo::HyperParamSpec::Kind::numerical:
        a[dim.name] = std::clamp(numeric, dim.low, dim.high);
        break;
    }
  }
  return a;
}

struct ModelState {
  std::vector<TrialRecord> trials;
  double best_score = kNegInf;
  Index best_index = -1;
  hpo::Assignment best_assignment;
  nn::ModelSpec best_spec;
  std::vector<nn::ModelParams> best_params;  // 1 entry, or k folds under CV
  std::vector<hpo::Trial> history;           // for TPE
};

std::vector<std::string> build_leaderboard(const std::vector<ModelState>& states,
                                           const std::vector<ModelEntry>& entries) {
  std::vector<std::size_t> order(states.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return states[a].best_score > states[b].best_score;
  });
  std::vector<std::string> names;
  names.reserve(order.size());
  for (std::size_t i : order) names.push_back(entries[i].name);
  return names;
}

}  // namespace

std::string to_string(TaskKind t) {
  return t == TaskKind::node ? "node" : "graph";
}

std::uint64_t trial_seed(std::uint64_t master, std::size_t model_index,
                         Index trial_index) {
  std::uint64_t s = splitmix64(master ^ 0x7261696E5F5F5FULL);
  s = splitmix64(s ^ (0x100000001B3ULL * (model_index + 1)));
  return splitmix64(s ^ static_cast<std::uint64_t>(trial_index));
}

std::string to_string(EnsembleKind e) {
  switch (e) {
    case EnsembleKind::none: return "none";
    case EnsembleKind::voting: return "voting";
    case EnsembleKind::stacking_glm: return "stacking-glm";
    case EnsembleKind::stacking_gbm: return "stacking-gbm";
  }
  return "?";
}

hpo::SearchSpace default_node_space() {
  using K = hpo::HyperParamSpec::Kind;
  using S = hpo::HyperParamSpec::Scale;
  hpo::SearchSpace space;
  space.params = {
      {"hidden_dim", K::integer, S::log, 8, 128, {}},
      {"num_layers", K::integer, S::linear, 2, 3, {}},
      {"dropout", K::numerical, S::linear, 0.2, 0.8, {}},
      {"lr", K::numerical, S::log, 1e-4, 1e-1, {}},
      {"weight_decay", K::numerical, S::log, 1e-5, 1e-2, {}},
      {"activation", K::categorical, S::linear, 0, 0,
       {"relu", "elu", "leaky_relu", "tanh"}},
  };
  return space;
}

hpo::SearchSpace default_graph_space(nn::Family family) {
  using K = hpo::HyperParamSpec::Kind;
  using S = hpo::HyperParamSpec::Scale;
  hpo::SearchSpace space;
  space.params = {
      {"hidden_dim", K::integer, S::log, 16, 128, {}},
      {"dropout", K::numerical, S::linear, 0.2, 0.8, {}},
      {"lr", K::numerical, S::log, 1e-4, 1e-1, {}},
      {"weight_decay", K::numerical, S::log, 1e-5, 1e-2, {}},
      {"activation", K::categorical, S::linear, 0, 0,
       {"relu", "elu", "leaky_relu", "tanh"}},
  };
  if (family == nn::Family::gin)
    space.params.push_back({"num_layers", K::integer, S::linear, 2, 5, {}});
  if (family == nn::Family::topk_pool)
    space.params.push_back({"pool_ratio", K::numerical, S::linear, 0.25, 0.9, {}});
  return space;
}

void validate_config(const SolverConfig& cfg) {
  if (cfg.models.empty()) throw ConfigError("solver: at least one model required");
  std::set<std::string> names;
  for (const auto& m : cfg.models) {
    if (!names.insert(m.name).second)
      throw ConfigError("solver: duplicate model name '" + m.name + "'");
    const bool graph_family = m.spec.family == nn::Family::gin ||
                              m.spec.family == nn::Family::topk_pool;
    if (cfg.task == TaskKind::node && graph_family)
      throw ConfigError("solver: " + nn::to_string(m.spec.family) +
                        " is a graph-level model");
    if (cfg.task == TaskKind::graph && !graph_family)
      throw ConfigError("solver: " + nn::to_string(m.spec.family) +
                        " is a node-level model");
    train::validate_config(m.train_cfg);
    if (m.has_space) hpo::validate_space(m.space);
  }
  if ((cfg.ensemble == EnsembleKind::stacking_glm ||
       cfg.ensemble == EnsembleKind::stacking_gbm) &&
      cfg.models.size() < 2)
    throw ConfigError("solver: stacking needs at least 2 models");
  hpo::validate_hpo_config(cfg.hpo_cfg);
  if (cfg.task == TaskKind::node &&
      cfg.protocol.kind != train::EvalProtocol::Kind::fixed_split)
    throw ConfigError("solver: node tasks use the fixed_split protocol");
  if (cfg.task == TaskKind::graph &&
      cfg.protocol.kind != train::EvalProtocol::Kind::kfold)
    throw ConfigError("solver: graph tasks use the kfold protocol");
}

SolverConfig config_from_json(const json& j) {
  SolverConfig cfg;
  const std::string task = j.value("task", std::string("node"));
  if (task == "node") cfg.task = TaskKind::node;
  else if (task == "graph") cfg.task = TaskKind::graph;
  else throw ConfigError("config: unknown task '" + task + "'");

  cfg.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("time_budget") && !j["time_budget"].is_null())
    cfg.time_budget = j["time_budget"].get<double>();
  if (j.contains("feature_pipeline") && !j["feature_pipeline"].is_null())
    cfg.feature_pipeline = fe::steps_from_json(j["feature_pipeline"]);

  if (j.contains("hpo")) {
    const auto& h = j["hpo"];
    const std::string method = h.value("method", std::string("random"));
    if (method == "random") cfg.hpo_cfg.method = hpo::HpoConfig::Method::random;
    else if (method == "tpe") cfg.hpo_cfg.method = hpo::HpoConfig::Method::tpe;
    else throw ConfigError("config: unknown hpo method '" + method + "'");
    cfg.hpo_cfg.n_trials = h.value("n_trials", Index{10});
    cfg.hpo_cfg.gamma = h.value("gamma", 0.25);
    cfg.hpo_cfg.n_candidates = h.value("n_candidates", Index{24});
    cfg.hpo_cfg.n_startup = h.value("n_startup", Index{5});
  }
  cfg.hpo_cfg.seed = cfg.seed;

  const std::string ens = j.value("ensemble", std::string("none"));
  if (ens == "none") cfg.ensemble = EnsembleKind::none;
  else if (ens == "voting") cfg.ensemble = EnsembleKind::voting;
  else if (ens == "stacking-glm") cfg.ensemble = EnsembleKind::stacking_glm;
  else if (ens == "stacking-gbm") cfg.ensemble = EnsembleKind::stacking_gbm;
  else throw ConfigError("config: unknown ensemble '" + ens + "'");

  cfg.protocol.kind = cfg.task == TaskKind::node
                          ? train::EvalProtocol::Kind::fixed_split
                          : train::EvalProtocol::Kind::kfold;
  if (j.contains("protocol")) {
    const auto& p = j["protocol"];
    const std::string kind = p.value("kind", std::string());
    if (kind == "fixed_split") cfg.protocol.kind = train::EvalProtocol::Kind::fixed_split;
    else if (kind == "kfold") cfg.protocol.kind = train::EvalProtocol::Kind::kfold;
    else throw ConfigError("config: unknown protocol '" + kind + "'");
    cfg.protocol.k = p.value("k", Index{10});
  }

  if (!j.contains("models") || !j["models"].is_array() || j["models"].empty())
    throw ConfigError("config: 'models' must be a nonempty array");
  std::set<std::string> used_names;
  for (const auto& mj : j["models"]) {
    ModelEntry entry;
    const auto& sj = mj.contains("spec") ? mj["spec"] : mj;
    const nn::Family family =
        nn::family_from_string(sj.at("family").get<std::string>());
    entry.spec = family_defaults(family);
    entry.spec.num_layers = sj.value("num_layers", entry.spec.num_layers);
    entry.spec.hidden_dim = sj.value("hidden_dim", entry.spec.hidden_dim);
    entry.spec.dropout = sj.value("dropout", entry.spec.dropout);
    entry.spec.heads = sj.value("heads", entry.spec.heads);
    entry.spec.eps_learnable = sj.value("eps_learnable", entry.spec.eps_learnable);
    entry.spec.pool_ratio = sj.value("pool_ratio", entry.spec.pool_ratio);
    if (sj.contains("activation"))
      entry.spec.activation =
          nn::activation_from_string(sj["activation"].get<std::string>());
    if (mj.contains("train")) {
      const auto& tj = mj["train"];
      entry.train_cfg.lr = tj.value("lr", entry.train_cfg.lr);
      entry.train_cfg.weight_decay =
          tj.value("weight_decay", entry.train_cfg.weight_decay);
      entry.train_cfg.max_epochs = tj.value("max_epochs", entry.train_cfg.max_epochs);
      entry.train_cfg.patience = tj.value("patience", entry.train_cfg.patience);
      entry.train_cfg.batch_size = tj.value("batch_size", entry.train_cfg.batch_size);
    }
    entry.name = mj.value("name", nn::to_string(family));
    std::string base = entry.name;
    for (int suffix = 2; !used_names.insert(entry.name).second; ++suffix)
      entry.name = base + "_" + std::to_string(suffix);
    if (mj.contains("search_space") && !mj["search_space"].is_null()) {
      entry.space = hpo::space_from_json(mj["search_space"]);
      entry.has_space = true;
    }
    cfg.models.push_back(std::move(entry));
  }
  validate_config(cfg);
  return cfg;
}

namespace {

hpo::SearchSpace space_for(const SolverConfig& cfg, const ModelEntry& entry) {
  if (entry.has_space) return entry.space;
  return cfg.task == TaskKind::node ? default_node_space()
                                    : default_graph_space(entry.spec.family);
}

// Shared HPO loop: trials are issued round-robin across models so every model
// gets its first trial before the budget can cut anything.
template <typename RunTrial>
bool hpo_rounds(const SolverConfig& cfg, std::vector<ModelState>& states,
                const std::vector<hpo::SearchSpace>& spaces,
                const std::vector<hpo::Assignment>& defaults,
                const BudgetClock& budget, const hpo::Clock& clock,
                RunTrial&& run_trial) {
  bool exhausted = false;
  for (Index round = 0; round < cfg.hpo_cfg.n_trials && !exhausted; ++round) {
    for (std::size_t m = 0; m < states.size(); ++m) {
      if (round > 0 && budget.exceeded()) {
        exhausted = true;
        break;
      }
      ModelState& st = states[m];
      Rng rng = make_rng(cfg.seed, 0x50700 + m, static_cast<std::uint64_t>(round));
      hpo::Assignment assignment;
      if (round == 0) {
        assignment = defaults[m];
      } else if (cfg.hpo_cfg.method == hpo::HpoConfig::Method::tpe &&
                 static_cast<Index>(st.history.size()) >= cfg.hpo_cfg.n_startup) {
        assignment = hpo::tpe_suggest(spaces[m], st.history, cfg.hpo_cfg, rng);
      } else {
        assignment = hpo::space_sample(spaces[m], rng);
      }

      const double t0 = clock();
      double score = kNegInf;
      std::string note;
      try {
        score = run_trial(m, round, assignment, st);
      } catch (const std::exception& e) {
        note = e.what();
      }
      const double seconds = clock() - t0;
      st.trials.push_back({assignment, score, seconds});
      hpo::Trial t;
      t.assignment = assignment;
      t.score = score;
      t.seconds = seconds;
      t.index = round;
      t.note = note;
      st.history.push_back(std::move(t));
    }
  }
  return exhausted;
}

SolverReport make_base_report(const SolverConfig& cfg, const std::string& name,
                              const std::string& digest, Index size) {
  SolverReport report;
  report.dataset_name = name.empty() ? std::string("dataset") : name;
  report.dataset_digest = digest;
  report.dataset_size = size;
  report.task = to_string(cfg.task);
  report.seed = cfg.seed;
  report.version = kVersion;
  return report;
}

}  // namespace

SolveOutput solve(const NodeDataset& dataset, const SolverConfig& cfg,
                  const hpo::Clock& clock) {
  validate_config(cfg);
  if (!dataset.masks)
    throw ConfigError("solve: node dataset needs train/val/test masks");
  const SplitMasks& masks = *dataset.masks;
  BudgetClock budget(cfg.time_budget, clock);
  const double t_start = clock();

  NodeDataset work = dataset;
  if (!cfg.feature_pipeline.empty()) {
    fe::FeaturePipeline pipeline(cfg.feature_pipeline);
    pipeline.fit_transform(work, masks.train);
  }
  const double t_fe = clock() - t_start;

  // trials never see the test mask; test numbers come from the final phase
  SplitMasks hpo_masks = masks;
  std::fill(hpo_masks.test.begin(), hpo_masks.test.end(), 0);

  std::vector<hpo::SearchSpace> spaces;
  std::vector<hpo::Assignment> defaults;
  for (const auto& entry : cfg.models) {
    spaces.push_back(space_for(cfg, entry));
    hpo::validate_space(spaces.back());
    defaults.push_back(default_assignment(entry, spaces.back()));
  }

  std::vector<ModelState> states(cfg.models.size());
  const double t_hpo_start = clock();
  const bool exhausted = hpo_rounds(
      cfg, states, spaces, defaults, budget, clock,
      [&](std::size_t m, Index round, const hpo::Assignment& assignment,
          ModelState& st) {
        nn::ModelSpec spec = cfg.models[m].spec;
        train::TrainConfig tc = cfg.models[m].train_cfg;
        apply_assignment(assignment, spec, tc);
        tc.seed = trial_seed(cfg.seed, m, round);
        train::TrainResult r = train_node(spec, work, hpo_masks, tc);
        const double score = r.best_val_metric;
        if (score > st.best_score) {
          st.best_score = score;
          st.best_index = round;
          st.best_assignment = assignment;
          st.best_spec = spec;
          st.best_spec.in_dim = work.features.cols;
          st.best_spec.out_dim = work.num_classes;
          st.best_params.clear();
          st.best_params.push_back(std::move(r.best_params));
        }
        return score;
      });
  const double t_hpo = clock() - t_hpo_start;

  // final probabilities per usable model, over all nodes
  const double t_ens_start = clock();
  std::vector<Matrix> probs(cfg.models.size());
  std::vector<std::size_t> usable;
  for (std::size_t m = 0; m < states.size(); ++m) {
    if (states[m].best_params.empty()) continue;
    train::EvalResult ev = train::evaluate_node(
        states[m].best_spec, states[m].best_params.front(), work, masks.val);
    probs[m] = std::move(ev.probabilities);
    usable.push_back(m);
  }

  std::optional<EnsembleReport> ens_report;
  Matrix ens_probs;
  if (cfg.ensemble != EnsembleKind::none && !budget.exceeded() &&
      usable.size() >= (cfg.ensemble == EnsembleKind::voting ? 1u : 2u)) {
    std::vector<Matrix> base;
    base.reserve(usable.size());
    for (std::size_t m : usable) base.push_back(probs[m]);
    if (cfg.ensemble == EnsembleKind::voting) {
      ens_probs = ensemble::vote(base);
    } else {
      std::vector<Index> val_rows;
      for (Index i = 0; i < work.graph.num_nodes; ++i)
        if (masks.val[static_cast<std::size_t>(i)]) val_rows.push_back(i);
      std::vector<Matrix> base_val;
      std::vector<Index> y_val;
      for (const auto& b : base) {
        Matrix v(static_cast<Index>(val_rows.size()), b.cols);
        for (std::size_t r = 0; r < val_rows.size(); ++r)
          for (Index c = 0; c < b.cols; ++c)
            v(static_cast<Index>(r), c) = b(val_rows[r], c);
        base_val.push_back(std::move(v));
      }
      for (Index i : val_rows) y_val.push_back(work.labels[static_cast<std::size_t>(i)]);
      ensemble::Stacker stacker = ensemble::stack_fit(
          base_val, y_val,
          cfg.ensemble == EnsembleKind::stacking_glm ? ensemble::MetaKind::glm
                                                     : ensemble::MetaKind::gbm);
      ens_probs = ensemble::stack_predict(stacker, base);
    }
    EnsembleReport er;
    er.method = to_string(cfg.ensemble);
    er.val = train::accuracy_from_probs(ens_probs, work.labels, masks.val);
    er.test = kNan;
    ens_report = std::move(er);
  }
  const double t_ensemble = clock() - t_ens_start;

  // final test evaluation (always runs)
  const bool have_test =
      std::any_of(masks.test.begin(), masks.test.end(), [](std::uint8_t v) { return v != 0; });
  SolveOutput out;
  out.report = make_base_report(cfg, work.name, dataset_digest(work),
                                work.graph.num_nodes);
  for (std::size_t m = 0; m < cfg.models.size(); ++m) {
    ModelReport mr;
    mr.name = cfg.models[m].name;
    mr.trials = states[m].trials;
    mr.best_assignment = states[m].best_assignment;
    mr.best_val = states[m].best_score;
    mr.test = (have_test && !states[m].best_params.empty())
                  ? train::accuracy_from_probs(probs[m], work.labels, masks.test)
                  : kNan;
    out.report.models.push_back(std::move(mr));
    if (!states[m].best_params.empty()) {
      BestInstance inst;
      inst.model_name = cfg.models[m].name;
      inst.spec = states[m].best_spec;
      inst.params = std::move(states[m].best_params);
      out.best_models.push_back(std::move(inst));
    }
  }
  if (ens_report) {
    if (have_test)
      ens_report->test =
          train::accuracy_from_probs(ens_probs, work.labels, masks.test);
    out.report.ensemble = std::move(ens_report);
  }
  out.report.leaderboard = build_leaderboard(states, cfg.models);
  out.report.budget_exhausted = exhausted || budget.exceeded();
  out.report.t_fe = t_fe;
  out.report.t_hpo = t_hpo;
  out.report.t_ensemble = t_ensemble;
  out.report.t_total = clock() - t_start;
  return out;
}

SolveOutput solve(const GraphDataset& dataset, const SolverConfig& cfg,
                  const hpo::Clock& clock) {
  validate_config(cfg);
  BudgetClock budget(cfg.time_budget, clock);
  const double t_start = clock();

  GraphDataset work = dataset;
  if (!cfg.feature_pipeline.empty()) {
    // CV has no single training split; structural steps fit on all graphs
    std::vector<std::uint8_t> all(work.graphs.size(), 1);
    fe::FeaturePipeline pipeline(cfg.feature_pipeline);
    pipeline.fit_transform(work, all);
  }
  const double t_fe = clock() - t_start;

  const FoldPlan plan = stratified_kfold(work.labels, cfg.protocol.k, cfg.seed);

  std::vector<hpo::SearchSpace> spaces;
  std::vector<hpo::Assignment> defaults;
  for (const auto& entry : cfg.models) {
    spaces.push_back(space_for(cfg, entry));
    hpo::validate_space(spaces.back());
    defaults.push_back(default_assignment(entry, spaces.back()));
  }

  std::vector<ModelState> states(cfg.models.size());
  const double t_hpo_start = clock();
  const bool exhausted = hpo_rounds(
      cfg, states, spaces, defaults, budget, clock,
      [&](std::size_t m, Index round, const hpo::Assignment& assignment,
          ModelState& st) {
        nn::ModelSpec spec = cfg.models[m].spec;
        train::TrainConfig tc = cfg.models[m].train_cfg;
        apply_assignment(assignment, spec, tc);
        tc.seed = trial_seed(cfg.seed, m, round);
        train::CvResult cv = train::run_cv(spec, work, plan, tc, /*with_test=*/false);
        const double score = cv.mean_val_accuracy;
        if (score > st.best_score) {
          st.best_score = score;
          st.best_index = round;
          st.best_assignment = assignment;
          st.best_spec = spec;
          st.best_spec.in_dim = work.node_features.front().cols;
          st.best_spec.out_dim = work.num_classes;
          st.best_params.clear();
          for (auto& fold : cv.folds)
            st.best_params.push_back(std::move(fold.best_params));
        }
        return score;
      });
  const double t_hpo = clock() - t_hpo_start;

  // final phase: fold test accuracies of each model's best instance.
  // Under cross-validation the ensemble defaults to the best single model,
  // so no ensemble combination is fitted here.
  SolveOutput out;
  out.report = make_base_report(cfg, work.name, dataset_digest(work),
                                static_cast<Index>(work.graphs.size()));
  for (std::size_t m = 0; m < cfg.models.size(); ++m) {
    ModelReport mr;
    mr.name = cfg.models[m].name;
    mr.trials = states[m].trials;
    mr.best_assignment = states[m].best_assignment;
    mr.best_val = states[m].best_score;
    mr.test = kNan;
    if (!states[m].best_params.empty()) {
      double mean = 0.0;
      for (Index fold = 0; fold < plan.k; ++fold) {
        std::vector<Index> test_ids;
        for (std::size_t i = 0; i < plan.fold_of.size(); ++i)
          if (plan.fold_of[i] == fold) test_ids.push_back(static_cast<Index>(i));
        train::EvalResult ev = train::evaluate_graph(
            states[m].best_spec, states[m].best_params[static_cast<std::size_t>(fold)],
            work, test_ids, cfg.models[m].train_cfg.batch_size);
        mean += ev.accuracy;
      }
      mr.test = mean / static_cast<double>(plan.k);
      BestInstance inst;
      inst.model_name = cfg.models[m].name;
      inst.spec = states[m].best_spec;
      inst.params = std::move(states[m].best_params);
      out.best_models.push_back(std::move(inst));
    }
    out.report.models.push_back(std::move(mr));
  }
  out.report.leaderboard = build_leaderboard(states, cfg.models);
  out.report.budget_exhausted = exhausted || budget.exceeded();
  out.report.t_fe = t_fe;
  out.report.t_hpo = t_hpo;
  out.report.t_ensemble = 0.0;
  out.report.t_total = clock() - t_start;
  return out;
}

json report_to_json(const SolverReport& report) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["dataset"] = {{"name", report.dataset_name},
                  {"digest", report.dataset_digest},
                  {"n", report.dataset_size},
                  {"task", report.task}};
  json models = json::array();
  for (const auto& m : report.models) {
    json trials = json::array();
    for (const auto& t : m.trials)
      trials.push_back({{"assignment", hpo::assignment_to_json(t.assignment)},
                        {"score", t.score},
                        {"seconds", t.seconds}});
    models.push_back({{"name", m.name},
                      {"trials", std::move(trials)},
                      {"best",
                       {{"assignment", hpo::assignment_to_json(m.best_assignment)},
                        {"val", m.best_val},
                        {"test", m.test}}}});
  }
  j["models"] = std::move(models);
  if (report.ensemble)
    j["ensemble"] = {{"method", report.ensemble->method},
                     {"val", report.ensemble->val},
                     {"test", report.ensemble->test}};
  else
    j["ensemble"] = nullptr;
  j["leaderboard"] = report.leaderboard;
  j["timings"] = {{"fe", report.t_fe},
                  {"hpo", report.t_hpo},
                  {"ensemble", report.t_ensemble},
                  {"total", report.t_total}};
  j["budget_exhausted"] = report.budget_exhausted;
  j["seed"] = report.seed;
  j["version"] = report.version;
  return j;
}

namespace {

double number_or_nan(const json& j) {
  return j.is_null() ? kNan : j.get<double>();
}

}  // namespace

SolverReport report_from_json(const json& j) {
  if (!j.contains("schema_version"))
    throw DataError("report: missing schema_version");
  if (j["schema_version"].get<int>() != kSchemaVersion)
    throw DataError("report: unsupported schema_version " +
                    std::to_string(j["schema_version"].get<int>()));
  SolverReport report;
  report.dataset_name = j.at("dataset").at("name").get<std::string>();
  report.dataset_digest = j.at("dataset").at("digest").get<std::string>();
  report.dataset_size = j.at("dataset").at("n").get<Index>();
  report.task = j.at("dataset").at("task").get<std::string>();
  for (const auto& mj : j.at("models")) {
    ModelReport m;
    m.name = mj.at("name").get<std::string>();
    for (const auto& tj : mj.at("trials")) {
      TrialRecord t;
      t.assignment = hpo::assignment_from_json(tj.at("assignment"));
      t.score = tj.at("score").is_null() ? kNegInf : tj.at("score").get<double>();
      t.seconds = tj.at("seconds").get<double>();
      m.trials.push_back(std::move(t));
    }
    m.best_assignment = hpo::assignment_from_json(mj.at("best").at("assignment"));
    m.best_val = number_or_nan(mj.at("best").at("val"));
    m.test = number_or_nan(mj.at("best").at("test"));
    report.models.push_back(std::move(m));
  }
  if (j.contains("ensemble") && !j["ensemble"].is_null()) {
    EnsembleReport e;
    e.method = j["ensemble"].at("method").get<std::string>();
    e.val = number_or_nan(j["ensemble"].at("val"));
    e.test = number_or_nan(j["ensemble"].at("test"));
    report.ensemble = std::move(e);
  }
  report.leaderboard = j.at("leaderboard").get<std::vector<std::string>>();
  report.t_fe = j.at("timings").at("fe").get<double>();
  report.t_hpo = j.at("timings").at("hpo").get<double>();
  report.t_ensemble = j.at("timings").at("ensemble").get<double>();
  report.t_total = j.at("timings").at("total").get<double>();
  report.budget_exhausted = j.at("budget_exhausted").get<bool>();
  report.seed = j.at("seed").get<std::uint64_t>();
  report.version = j.at("version").get<std::string>();
  return report;
}

void write_report(const SolveOutput& output, const std::string& dir) {
  fs::create_directories(dir);
  const fs::path results = fs::path(dir) / "results.json";
  const fs::path tmp = fs::path(dir) / "results.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << report_to_json(output.report).dump(2) << "\n";
  }
  fs::rename(tmp, results);
  for (const auto& inst : output.best_models) {
    if (inst.params.size() == 1) {
      nn::save_params(inst.spec, inst.params.front(),
                      (fs::path(dir) / ("params_" + inst.model_name + ".json")).string());
    } else {
      for (std::size_t f = 0; f < inst.params.size(); ++f)
        nn::save_params(inst.spec, inst.params[f],
                        (fs::path(dir) / ("params_" + inst.model_name + "_fold" +
                                          std::to_string(f) + ".json"))
                            .string());
    }
  }
}

SolverReport read_report(const std::string& dir) {
  const fs::path results = fs::path(dir) / "results.json";
  std::ifstream in(results);
  if (!in) throw DataError("cannot open " + results.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(results.string() + ": invalid JSON: " + e.what());
  }
  return report_from_json(j);
}

}  // namespace graphtune::solver
