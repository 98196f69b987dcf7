#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphtune/graph.hpp"

namespace graphtune::fe {

// ---- generators (pure functions of graph/params) ----

// L1 row normalization; zero rows pass through unchanged.
Matrix gen_normalize(const Matrix& x);

// Identity matrix, guarded against the known out-of-memory footgun.
Matrix gen_onehot_id(const Graph& g, Index cap = 20000);

// Row v is one-hot at min(deg(v), max_degree); width max_degree+1.
Matrix gen_onehot_degree(const Graph& g, Index max_degree);

// Local degree profile: [deg, min, max, mean, std] of neighbor degrees.
Matrix gen_ldp(const Graph& g);

// Power iteration with uniform teleport; isolated nodes spread their mass
// uniformly. Output sums to 1.
Matrix gen_pagerank(const Graph& g, double damping = 0.85, double tol = 1e-10,
                    Index max_iter = 1000);

// min(k, n) eigenvectors of A (or of the renormalized adjacency) with largest
// |eigenvalue|, unit columns, sign fixed so the largest-magnitude entry is
// positive.
Matrix gen_eigen(const Graph& g, Index k = 32, bool use_normalized = false);

// Per-node counts of connected induced subgraphs by isomorphism class.
// max_size=3: [triangle, path3]; max_size=4 appends
// [clique4, diamond, cycle4, paw, path4, star4].
Matrix gen_graphlet(const Graph& g, Index max_size = 3,
                    Index budget = 10'000'000);

// ---- selectors (fit on training rows only) ----

// Columns with variance > 0 on fit rows; throws if none survive.
std::vector<Index> select_filter_constant(const Matrix& x,
                                          const std::vector<std::uint8_t>& fit_mask);

// Top-k columns by GBM importance, ties to the lower index.
std::vector<Index> select_gbdt(const Matrix& x, const std::vector<Index>& labels,
                               const std::vector<std::uint8_t>& fit_mask,
                               Index num_classes, Index top_k);

// ---- graph-level features ----

// [num_nodes, num_edges, density, mean_degree, max_degree, avg_clustering,
//  transitivity]; self-loops are ignored for these statistics.
GraphFeatureVector graph_stats(const Graph& g);

// Heat-trace signature h(t) = sum_i exp(-t*lambda_i) over the normalized
// Laplacian spectrum, on a log-spaced grid. Isolated nodes contribute
// lambda=0.
GraphFeatureVector netlsd_heat(const Graph& g, Index num_points = 250,
                               double t_min = 1e-2, double t_max = 1e2,
                               Index cap = 3000);

// ---- pipeline ----

struct FeatureStep {
  std::string kind;  // generator | selector | graph-feature
  std::string name;
  nlohmann::json params;
};

struct FittedStep {
  std::vector<Index> selected_cols;  // selectors
  Index learned_max_degree = -1;     // onehot_degree without explicit cap
};

std::vector<FeatureStep> steps_from_json(const nlohmann::json& arr);
nlohmann::json steps_to_json(const std::vector<FeatureStep>& steps);

// Ordered fit-then-transform pipeline. Generators append columns (or become
// the feature matrix when none exists yet), selectors keep fitted column
// sets, graph-feature steps attach per-graph descriptor vectors.
class FeaturePipeline {
 public:
  FeaturePipeline() = default;
  explicit FeaturePipeline(std::vector<FeatureStep> steps);

  void fit_transform(NodeDataset& ds, const std::vector<std::uint8_t>& fit_mask);
  void fit_transform(GraphDataset& ds,
                     const std::vector<std::uint8_t>& train_graph_mask);

  const std::vector<FeatureStep>& steps() const { return steps_; }
  const std::vector<FittedStep>& fitted_state() const { return fitted_; }
  bool is_fitted() const { return fitted_.size() == steps_.size() && !steps_.empty(); }

 private:
  std::vector<FeatureStep> steps_;
  std::vector<FittedStep> fitted_;
};

}  // namespace graphtune::fe
