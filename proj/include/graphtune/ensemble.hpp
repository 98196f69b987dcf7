#pragma once

#include <string>
#include <vector>

#include "graphtune/common.hpp"

namespace graphtune::ensemble {

// Soft voting: unweighted mean of row-stochastic matrices.
Matrix vote(const std::vector<Matrix>& outputs);

// Multinomial logistic regression trained by full-batch gradient descent.
// The L2 penalty applies to feature weights only, not the bias row.
struct GlmModel {
  Matrix weights;  // (d+1) x C, last row is the bias
  double l2 = 1e-3;
};

GlmModel glm_fit(const Matrix& x, const std::vector<Index>& y,
                 Index num_classes, double l2 = 1e-3, double lr = 0.1,
                 Index epochs = 500);
Matrix glm_predict(const GlmModel& m, const Matrix& x);
// Mean cross-entropy + l2 penalty, the quantity glm_fit descends.
double glm_loss(const GlmModel& m, const Matrix& x, const std::vector<Index>& y);

struct TreeNode {
  Index feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  double value = 0.0;
  Index left = -1, right = -1;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  double predict(const Matrix& x, Index row) const;
};

struct GbmConfig {
  Index n_rounds = 100;
  Index max_depth = 3;
  double shrinkage = 0.1;
  Index min_leaf = 2;
};

// Softmax-objective gradient boosting: one depth-limited regression tree per
// class per round, split by best squared-error reduction over midpoints of
// sorted unique feature values, Newton leaf values.
struct GbmModel {
  std::vector<std::vector<RegressionTree>> trees;  // [round][class]
  std::vector<double> base_score;                  // per-class prior
  double shrinkage = 0.1;
  Index num_classes = 0;
  Index num_features = 0;
  std::vector<double> importance;  // summed split gain per feature
};

GbmModel gbm_fit(const Matrix& x, const std::vector<Index>& y,
                 Index num_classes, const GbmConfig& cfg = {});
Matrix gbm_predict(const GbmModel& m, const Matrix& x);
std::vector<double> gbm_importance(const GbmModel& m);

enum class MetaKind { glm, gbm };

struct Stacker {
  MetaKind kind = MetaKind::glm;
  GlmModel glm;
  GbmModel gbm;
  Index num_base = 0;
  Index num_classes = 0;
};

// Meta-features are the concatenated base probability rows; the meta-model is
// fit on validation rows only.
Stacker stack_fit(const std::vector<Matrix>& base_outputs_on_val,
                  const std::vector<Index>& y_val, MetaKind kind);
Matrix stack_predict(const Stacker& s, const std::vector<Matrix>& base_outputs);

}  // namespace graphtune::ensemble
