#include "graphtune/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "graphtune/tensor.hpp"

namespace graphtune::ensemble {

Matrix vote(const std::vector<Matrix>& outputs) {
  if (outputs.empty()) throw Error("vote: no base outputs");
  const Index rows = outputs.front().rows, cols = outputs.front().cols;
  for (const auto& o : outputs)
    if (o.rows != rows || o.cols != cols)
      throw ShapeError("vote: base output shape mismatch");
  Matrix out(rows, cols);
  for (const auto& o : outputs)
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += o.data[i];
  const double inv = 1.0 / static_cast<double>(outputs.size());
  for (auto& v : out.data) v *= inv;
  return out;
}

namespace {

void check_finite(const Matrix& x, const char* who) {
  for (double v : x.data)
    if (!std::isfinite(v)) throw Error(std::string(who) + ": non-finite feature");
}

Matrix glm_scores(const GlmModel& m, const Matrix& x) {
  const Index d = m.weights.rows - 1, C = m.weights.cols;
  if (x.cols != d)
    throw ShapeError("glm: expected " + std::to_string(d) + " features, got " +
                     std::to_string(x.cols));
  Matrix scores(x.rows, C);
  for (Index i = 0; i < x.rows; ++i)
    for (Index c = 0; c < C; ++c) {
      double s = m.weights(d, c);
      for (Index j = 0; j < d; ++j) s += x(i, j) * m.weights(j, c);
      scores(i, c) = s;
    }
  return scores;
}

}  // namespace

GlmModel glm_fit(const Matrix& x, const std::vector<Index>& y,
                 Index num_classes, double l2, double lr, Index epochs) {
  check_finite(x, "glm_fit");
  if (static_cast<Index>(y.size()) != x.rows)
    throw ShapeError("glm_fit: label count != rows");
  const Index n = x.rows, d = x.cols, C = num_classes;
  GlmModel m;
  m.l2 = l2;
  m.weights = Matrix(d + 1, C);  // zero init => deterministic
  Matrix grad(d + 1, C);
  for (Index epoch = 0; epoch < epochs; ++epoch) {
    Matrix probs = nn::softmax_rows(glm_scores(m, x));
    std::fill(grad.data.begin(), grad.data.end(), 0.0);
    for (Index i = 0; i < n; ++i) {
      for (Index c = 0; c < C; ++c) {
        const double delta =
            (probs(i, c) - (y[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0)) /
            static_cast<double>(n);
        for (Index j = 0; j < d; ++j) grad(j, c) += delta * x(i, j);
        grad(d, c) += delta;
      }
    }
    for (Index j = 0; j < d; ++j)
      for (Index c = 0; c < C; ++c)
        m.weights(j, c) -= lr * (grad(j, c) + l2 * m.weights(j, c));
    for (Index c = 0; c < C; ++c) m.weights(d, c) -= lr * grad(d, c);
  }
  return m;
}

Matrix glm_predict(const GlmModel& m, const Matrix& x) {
  check_finite(x, "glm_predict");
  return nn::softmax_rows(glm_scores(m, x));
}

double glm_loss(const GlmModel& m, const Matrix& x, const std::vector<Index>& y) {
  Matrix probs = nn::softmax_rows(glm_scores(m, x));
  double loss = 0.0;
  for (Index i = 0; i < x.rows; ++i)
    loss -= std::log(std::max(probs(i, y[static_cast<std::size_t>(i)]), 1e-300));
  loss /= static_cast<double>(x.rows);
  const Index d = m.weights.rows - 1;
  double penalty = 0.0;
  for (Index j = 0; j < d; ++j)
    for (Index c = 0; c < m.weights.cols; ++c)
      penalty += m.weights(j, c) * m.weights(j, c);
  return loss + 0.5 * m.l2 * penalty;
}

double RegressionTree::predict(const Matrix& x, Index row) const {
  Index node = 0;
  while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const TreeNode& t = nodes[static_cast<std::size_t>(node)];
    node = x(row, t.feature) <= t.threshold ? t.left : t.right;
  }
  return nodes[static_cast<std::size_t>(node)].value;
}

namespace {

struct TreeBuilder {
  const Matrix& x;
  const std::vector<double>& residual;
  const std::vector<double>& hessian;
  const GbmConfig& cfg;
  std::vector<double>& importance;
  RegressionTree tree;

  Index make_leaf(const std::vector<Index>& rows) {
    double sum_r = 0.0, sum_h = 0.0;
    for (Index i : rows) {
      sum_r += residual[static_cast<std::size_t>(i)];
      sum_h += hessian[static_cast<std::size_t>(i)];
    }
    TreeNode leaf;
    leaf.value = sum_r / (sum_h + 1e-3);
    tree.nodes.push_back(leaf);
    return static_cast<Index>(tree.nodes.size()) - 1;
  }

  // Best squared-error reduction; ties go to the lower feature index, then
  // the lower threshold. Zero-gain splits are allowed when a valid partition
  // exists so depth-limited trees can express parity-style targets.
  Index build(const std::vector<Index>& rows, Index depth) {
    if (depth >= cfg.max_depth ||
        static_cast<Index>(rows.size()) < 2 * cfg.min_leaf)
      return make_leaf(rows);

    double parent_sum = 0.0;
    for (Index i : rows) parent_sum += residual[static_cast<std::size_t>(i)];
    const double parent_score =
        parent_sum * parent_sum / static_cast<double>(rows.size());

    double best_gain = -1.0;
    Index best_feature = -1;
    double best_threshold = 0.0;
    std::vector<Index> order(rows);
    for (Index f = 0; f < x.cols; ++f) {
      std::sort(order.begin(), order.end(),
                [&](Index a, Index b) { return x(a, f) < x(b, f); });
      double left_sum = 0.0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        left_sum += residual[static_cast<std::size_t>(order[i])];
        const double xv = x(order[i], f), xn = x(order[i + 1], f);
        if (xv == xn) continue;
        const Index n_left = static_cast<Index>(i) + 1;
        const Index n_right = static_cast<Index>(order.size()) - n_left;
        if (n_left < cfg.min_leaf || n_right < cfg.min_leaf) continue;
        const double right_sum = parent_sum - left_sum;
        const double gain = left_sum * left_sum / static_cast<double>(n_left) +
                            right_sum * right_sum / static_cast<double>(n_right) -
                            parent_score;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold = 0.5 * (xv + xn);
        }
      }
    }
    if (best_feature < 0) return make_leaf(rows);

    importance[static_cast<std::size_t>(best_feature)] += std::max(best_gain, 0.0);
    std::vector<Index> left_rows, right_rows;
    for (Index i : rows) {
      if (x(i, best_feature) <= best_threshold)
        left_rows.push_back(i);
      else
        right_rows.push_back(i);
    }
    TreeNode split;
    split.feature = best_feature;
    split.threshold = best_threshold;
    tree.nodes.push_back(split);
    const Index self = static_cast<Index>(tree.nodes.size()) - 1;
    const Index left = build(left_rows, depth + 1);
    const Index right = build(right_rows, depth + 1);
    tree.nodes[static_cast<std::size_t>(self)].left = left;
    tree.nodes[static_cast<std::size_t>(self)].right = right;
    return self;
  }
};

}  // namespace

GbmModel gbm_fit(const Matrix& x, const std::vector<Index>& y,
                 Index num_classes, const GbmConfig& cfg) {
  check_finite(x, "gbm_fit");
  if (static_cast<Index>(y.size()) != x.rows)
    throw ShapeError("gbm_fit: label count != rows");
  const Index n = x.rows, C = num_classes;
  GbmModel m;
  m.shrinkage = cfg.shrinkage;
  m.num_classes = C;
  m.num_features = x.cols;
  m.importance.assign(static_cast<std::size_t>(x.cols), 0.0);
  m.base_score.assign(static_cast<std::size_t>(C), 0.0);
  for (Index y_i : y) m.base_score.at(static_cast<std::size_t>(y_i)) += 1.0;
  for (auto& b : m.base_score) b /= static_cast<double>(n);

  Matrix f(n, C);
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < C; ++c)
      f(i, c) = std::log(std::max(m.base_score[static_cast<std::size_t>(c)], 1e-12));

  std::vector<Index> all_rows(static_cast<std::size_t>(n));
  std::iota(all_rows.begin(), all_rows.end(), Index{0});
  std::vector<double> residual(static_cast<std::size_t>(n));
  std::vector<double> hessian(static_cast<std::size_t>(n));

  for (Index round = 0; round < cfg.n_rounds; ++round) {
    Matrix probs = nn::softmax_rows(f);
    std::vector<RegressionTree> round_trees;
    round_trees.reserve(static_cast<std::size_t>(C));
    for (Index c = 0; c < C; ++c) {
      for (Index i = 0; i < n; ++i) {
        const double p = probs(i, c);
        residual[static_cast<std::size_t>(i)] =
            (y[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0) - p;
        hessian[static_cast<std::size_t>(i)] = p * (1.0 - p);
      }
      TreeBuilder builder{x, residual, hessian, cfg, m.importance, {}};
      builder.build(all_rows, 0);
      round_trees.push_back(std::move(builder.tree));
    }
    for (Index c = 0; c < C; ++c)
      for (Index i = 0; i < n; ++i)
        f(i, c) += cfg.shrinkage *
                   round_trees[static_cast<std::size_t>(c)].predict(x, i);
    m.trees.push_back(std::move(round_trees));
  }
  return m;
}

Matrix gbm_predict(const GbmModel& m, const Matrix& x) {
  check_finite(x, "gbm_predict");
  if (x.cols != m.num_features)
    throw ShapeError("gbm_predict: expected " + std::to_string(m.num_features) +
                     " features, got " + std::to_string(x.cols));
  if (m.trees.empty()) {
    // no boosting rounds: the prior, exactly
    Matrix out(x.rows, m.num_classes);
    for (Index i = 0; i < x.rows; ++i)
      for (Index c = 0; c < m.num_classes; ++c)
        out(i, c) = m.base_score[static_cast<std::size_t>(c)];
    return out;
  }
  Matrix f(x.rows, m.num_classes);
  for (Index i = 0; i < x.rows; ++i)
    for (Index c = 0; c < m.num_classes; ++c)
      f(i, c) = std::log(std::max(m.base_score[static_cast<std::size_t>(c)], 1e-12));
  for (const auto& round : m.trees)
    for (Index c = 0; c < m.num_classes; ++c)
      for (Index i = 0; i < x.rows; ++i)
        f(i, c) += m.shrinkage * round[static_cast<std::size_t>(c)].predict(x, i);
  return nn::softmax_rows(f);
}

std::vector<double> gbm_importance(const GbmModel& m) { return m.importance; }

namespace {

Matrix stack_features(const std::vector<Matrix>& base_outputs) {
  Matrix meta;
  for (const auto& o : base_outputs) meta = hcat(meta, o);
  return meta;
}

}  // namespace

Stacker stack_fit(const std::vector<Matrix>& base_outputs_on_val,
                  const std::vector<Index>& y_val, MetaKind kind) {
  if (base_outputs_on_val.size() < 2)
    throw Error("stack_fit: stacking needs at least 2 base models");
  const Index rows = base_outputs_on_val.front().rows;
  const Index C = base_outputs_on_val.front().cols;
  for (const auto& o : base_outputs_on_val)
    if (o.rows != rows || o.cols != C)
      throw ShapeError("stack_fit: base output shape mismatch");
  if (static_cast<Index>(y_val.size()) != rows)
    throw ShapeError("stack_fit: labels not row-aligned with base outputs");

  Stacker s;
  s.kind = kind;
  s.num_base = static_cast<Index>(base_outputs_on_val.size());
  s.num_classes = C;
  Matrix meta = stack_features(base_outputs_on_val);
  if (kind == MetaKind::glm)
    s.glm = glm_fit(meta, y_val, C);
  else
    s.gbm = gbm_fit(meta, y_val, C);
  return s;
}

Matrix stack_predict(const Stacker& s, const std::vector<Matrix>& base_outputs) {
  if (static_cast<Index>(base_outputs.size()) != s.num_base)
    throw ShapeError("stack_predict: expected " + std::to_string(s.num_base) +
                     " base outputs");
  Matrix meta = stack_features(base_outputs);
  return s.kind == MetaKind::glm ? glm_predict(s.glm, meta)
                                 : gbm_predict(s.gbm, meta);
}

}  // namespace graphtune::ensemble
