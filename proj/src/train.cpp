#include "graphtune/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace graphtune::train {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

Index argmax_lowest(const Matrix& probs, Index row) {
  Index best = 0;
  for (Index c = 1; c < probs.cols; ++c)
    if (probs(row, c) > probs(row, best)) best = c;
  return best;
}

double masked_ce(const Matrix& probs, const std::vector<Index>& labels,
                 const std::vector<std::uint8_t>& mask) {
  double loss = 0.0;
  Index count = 0;
  for (Index i = 0; i < probs.rows; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    loss -= std::log(std::max(probs(i, labels[static_cast<std::size_t>(i)]), 1e-300));
    ++count;
  }
  return count > 0 ? loss / static_cast<double>(count) : 0.0;
}

struct BestTracker {
  double val_acc = -1.0;
  double val_loss = std::numeric_limits<double>::infinity();
  nn::ModelParams snapshot;
  Index since_improvement = 0;

  // Patience counts epochs since the accuracy itself improved; an equal
  // accuracy with lower loss only refreshes the snapshot. Returns true when
  // training should stop.
  bool update(double acc, double loss, const nn::ModelParams& params,
              Index patience) {
    if (acc > val_acc) {
      val_acc = acc;
      val_loss = loss;
      snapshot = params.deep_copy();
      since_improvement = 0;
    } else {
      if (acc == val_acc && loss < val_loss) {
        val_loss = loss;
        snapshot = params.deep_copy();
      }
      ++since_improvement;
    }
    return since_improvement >= patience;
  }
};

}  // namespace

void validate_config(const TrainConfig& cfg) {
  if (cfg.lr <= 0 || cfg.weight_decay < 0)
    throw ConfigError("train: lr must be positive, weight_decay nonnegative");
  if (cfg.max_epochs < 1 || cfg.patience < 1 || cfg.batch_size < 1)
    throw ConfigError("train: epochs/patience/batch_size must be positive");
  if (cfg.patience > cfg.max_epochs)
    throw ConfigError("train: patience must be <= max_epochs");
}

double accuracy_from_probs(const Matrix& probs, const std::vector<Index>& labels,
                           const std::vector<std::uint8_t>& mask) {
  Index hits = 0, count = 0;
  for (Index i = 0; i < probs.rows; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    ++count;
    if (argmax_lowest(probs, i) == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  if (count == 0) throw Error("accuracy: empty mask");
  return static_cast<double>(hits) / static_cast<double>(count);
}

double accuracy_from_probs(const Matrix& probs, const std::vector<Index>& labels) {
  std::vector<std::uint8_t> all(static_cast<std::size_t>(probs.rows), 1);
  return accuracy_from_probs(probs, labels, all);
}

TrainResult train_node(const nn::ModelSpec& spec, const NodeDataset& data,
                       const SplitMasks& masks, const TrainConfig& cfg) {
  validate_config(cfg);
  if (data.features.empty()) throw Error("train_node: dataset has no features");
  const auto any = [](const std::vector<std::uint8_t>& m) {
    return std::any_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; });
  };
  if (!any(masks.train) || !any(masks.val))
    throw Error("train_node: train and validation masks must be nonempty");

  nn::ModelSpec resolved = spec;
  resolved.in_dim = data.features.cols;
  resolved.out_dim = data.num_classes;
  nn::validate_spec(resolved);

  nn::NodeContext ctx = nn::make_node_context(data.graph, resolved.family);
  nn::Tensor x = nn::Tensor::from_matrix(data.features);
  Rng rng = make_rng(cfg.seed, /*stream=*/0x11a1);
  nn::ModelParams params = nn::init_params(resolved, rng);

  TrainResult result;
  BestTracker best;
  const nn::AdamConfig adam{cfg.lr, cfg.weight_decay, 0.9, 0.999, 1e-8};

  for (Index epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    nn::Tensor logits = nn::forward_node(resolved, params, ctx, x, true, rng);
    nn::Tensor loss =
        nn::softmax_cross_entropy_masked(logits, data.labels, masks.train);
    if (!std::isfinite(loss.item()))
      throw Error("train_node: non-finite loss at epoch " + std::to_string(epoch));
    params.zero_grad();
    loss.backward();
    nn::adam_step(params, adam);

    nn::Tensor eval_logits = nn::forward_node(resolved, params, ctx, x, false, rng);
    Matrix probs = nn::softmax_rows(eval_logits.to_matrix());
    const double val_acc = accuracy_from_probs(probs, data.labels, masks.val);
    const double val_loss = masked_ce(probs, data.labels, masks.val);
    result.history.push_back({loss.item(), val_acc});
    result.epochs_run = epoch + 1;
    if (best.update(val_acc, val_loss, params, cfg.patience)) break;
  }

  result.best_params = std::move(best.snapshot);
  result.best_val_metric = best.val_acc;
  result.best_val_loss = best.val_loss;
  result.test_metric = kNan;
  if (any(masks.test)) {
    EvalResult ev = evaluate_node(resolved, result.best_params, data, masks.test);
    result.test_metric = ev.accuracy;
  }
  return result;
}

EvalResult evaluate_node(const nn::ModelSpec& spec, nn::ModelParams& params,
                         const NodeDataset& data,
                         const std::vector<std::uint8_t>& mask) {
  nn::ModelSpec resolved = spec;
  resolved.in_dim = data.features.cols;
  resolved.out_dim = data.num_classes;
  nn::NodeContext ctx = nn::make_node_context(data.graph, resolved.family);
  nn::Tensor x = nn::Tensor::from_matrix(data.features);
  Rng rng = make_rng(0);
  nn::Tensor logits = nn::forward_node(resolved, params, ctx, x, false, rng);
  EvalResult out;
  out.probabilities = nn::softmax_rows(logits.to_matrix());
  out.accuracy = accuracy_from_probs(out.probabilities, data.labels, mask);
  return out;
}

namespace {

std::vector<Index> batch_labels(const GraphDataset& data,
                                const std::vector<Index>& ids) {
  std::vector<Index> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    out[i] = data.labels[static_cast<std::size_t>(ids[i])];
  return out;
}

Matrix forward_probs(const nn::ModelSpec& spec, nn::ModelParams& params,
                     const GraphDataset& data, const std::vector<Index>& ids,
                     Index batch_size) {
  Matrix probs(static_cast<Index>(ids.size()), spec.out_dim);
  Rng rng = make_rng(0);
  for (std::size_t start = 0; start < ids.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(ids.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Index> chunk(ids.begin() + static_cast<std::ptrdiff_t>(start),
                             ids.begin() + static_cast<std::ptrdiff_t>(stop));
    nn::GraphBatch batch = nn::make_batch(data, chunk, spec.family);
    nn::Tensor logits = nn::forward_graph(spec, params, batch, false, rng);
    Matrix p = nn::softmax_rows(logits.to_matrix());
    for (std::size_t i = start; i < stop; ++i)
      for (Index c = 0; c < spec.out_dim; ++c)
        probs(static_cast<Index>(i), c) = p(static_cast<Index>(i - start), c);
  }
  return probs;
}

}  // namespace

TrainResult train_graph(const nn::ModelSpec& spec, const GraphDataset& data,
                        const std::vector<Index>& train_ids,
                        const std::vector<Index>& val_ids,
                        const std::vector<Index>& test_ids,
                        const TrainConfig& cfg) {
  validate_config(cfg);
  if (train_ids.empty()) throw Error("train_graph: empty train set");
  if (val_ids.empty()) throw Error("train_graph: empty validation set");
  for (const auto& f : data.node_features)
    if (f.cols == 0)
      throw Error("train_graph: graphs without node features; add a generator "
                  "step (e.g. onehot_degree) first");

  nn::ModelSpec resolved = spec;
  resolved.in_dim = data.node_features.front().cols;
  resolved.out_dim = data.num_classes;
  nn::validate_spec(resolved);

  Rng rng = make_rng(cfg.seed, /*stream=*/0x11a2);
  nn::ModelParams params = nn::init_params(resolved, rng);

  TrainResult result;
  BestTracker best;
  const nn::AdamConfig adam{cfg.lr, cfg.weight_decay, 0.9, 0.999, 1e-8};
  const std::vector<Index> val_labels = batch_labels(data, val_ids);

  std::vector<Index> order(train_ids);
  for (Index epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Index> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                               order.begin() + static_cast<std::ptrdiff_t>(stop));
      nn::GraphBatch batch = nn::make_batch(data, chunk, resolved.family);
      nn::Tensor logits = nn::forward_graph(resolved, params, batch, true, rng);
      std::vector<std::uint8_t> all(chunk.size(), 1);
      nn::Tensor loss =
          nn::softmax_cross_entropy_masked(logits, batch_labels(data, chunk), all);
      if (!std::isfinite(loss.item()))
        throw Error("train_graph: non-finite loss at epoch " + std::to_string(epoch));
      epoch_loss += loss.item() * static_cast<double>(chunk.size());
      params.zero_grad();
      loss.backward();
      nn::adam_step(params, adam);
    }
    epoch_loss /= static_cast<double>(order.size());

    Matrix val_probs = forward_probs(resolved, params, data, val_ids, cfg.batch_size);
    const double val_acc = accuracy_from_probs(val_probs, val_labels);
    double val_loss = 0.0;
    for (Index i = 0; i < val_probs.rows; ++i)
      val_loss -= std::log(std::max(val_probs(i, val_labels[static_cast<std::size_t>(i)]), 1e-300));
    val_loss /= static_cast<double>(val_ids.size());

    result.history.push_back({epoch_loss, val_acc});
    result.epochs_run = epoch + 1;
    if (best.update(val_acc, val_loss, params, cfg.patience)) break;
  }

  result.best_params = std::move(best.snapshot);
  result.best_val_metric = best.val_acc;
  result.best_val_loss = best.val_loss;
  result.test_metric = kNan;
  if (!test_ids.empty()) {
    EvalResult ev = evaluate_graph(resolved, result.best_params, data, test_ids,
                                   cfg.batch_size);
    result.test_metric = ev.accuracy;
  }
  return result;
}

EvalResult evaluate_graph(const nn::ModelSpec& spec, nn::ModelParams& params,
                          const GraphDataset& data,
                          const std::vector<Index>& graph_ids,
                          Index batch_size) {
  nn::ModelSpec resolved = spec;
  resolved.in_dim = data.node_features.front().cols;
  resolved.out_dim = data.num_classes;
  EvalResult out;
  out.probabilities = forward_probs(resolved, params, data, graph_ids, batch_size);
  out.accuracy =
      accuracy_from_probs(out.probabilities, batch_labels(data, graph_ids));
  return out;
}

CvResult run_cv(const nn::ModelSpec& spec, const GraphDataset& data,
                const FoldPlan& plan, const TrainConfig& cfg, bool with_test) {
  if (plan.k < 3)
    throw Error("run_cv: k must be >= 3 (test/val/train folds must be disjoint)");
  if (plan.fold_of.size() != data.graphs.size())
    throw ShapeError("run_cv: fold plan does not match dataset");

  CvResult result;
  std::vector<double> accs;
  for (Index fold = 0; fold < plan.k; ++fold) {
    const Index val_fold = (fold + 1) % plan.k;
    std::vector<Index> train_ids, val_ids, test_ids;
    for (std::size_t i = 0; i < plan.fold_of.size(); ++i) {
      if (plan.fold_of[i] == fold)
        test_ids.push_back(static_cast<Index>(i));
      else if (plan.fold_of[i] == val_fold)
        val_ids.push_back(static_cast<Index>(i));
      else
        train_ids.push_back(static_cast<Index>(i));
    }
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = splitmix64(cfg.seed ^ (0xC4F0ULL + static_cast<std::uint64_t>(fold)));
    TrainResult r = train_graph(spec, data, train_ids, val_ids,
                                with_test ? test_ids : std::vector<Index>{},
                                fold_cfg);
    result.mean_val_accuracy += r.best_val_metric;
    if (with_test) accs.push_back(r.test_metric);
    result.folds.push_back(std::move(r));
  }
  result.mean_val_accuracy /= static_cast<double>(plan.k);
  if (with_test) {
    double mean = std::accumulate(accs.begin(), accs.end(), 0.0) /
                  static_cast<double>(accs.size());
    double var = 0.0;
    for (double a : accs) var += (a - mean) * (a - mean);
    var /= static_cast<double>(accs.size());
    result.mean_accuracy = mean;
    result.std_accuracy = std::sqrt(var);
  } else {
    result.mean_accuracy = kNan;
    result.std_accuracy = kNan;
  }
  return result;
}

}  // namespace graphtune::train
