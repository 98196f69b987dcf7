#pragma once

#include <map>
#include <string>
#include <vector>

#include "graphtune/graph.hpp"
#include "graphtune/tensor.hpp"

namespace graphtune::nn {

enum class Family { gcn, gat, sage, gin, topk_pool };
enum class Activation { relu, elu, leaky_relu, tanh };

Family family_from_string(const std::string& s);
std::string to_string(Family f);
Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

// Declarative architecture description. For GAT, hidden_dim is the per-head
// dimension; for topk_pool, num_layers is the block count.
struct ModelSpec {
  Family family = Family::gcn;
  Index num_layers = 2;
  Index hidden_dim = 16;
  double dropout = 0.5;
  Activation activation = Activation::relu;
  Index heads = 8;             // gat
  bool eps_learnable = false;  // gin
  double pool_ratio = 0.8;     // topk_pool
  Index in_dim = 0;
  Index out_dim = 0;
};

void validate_spec(const ModelSpec& spec);
std::string spec_digest(const ModelSpec& spec);

struct ParamState {
  Tensor value;
  std::vector<double> m, v;  // Adam moments, same length as value
};

struct ModelParams {
  std::map<std::string, ParamState> params;  // name order is the update order
  Index step = 0;

  ModelParams deep_copy() const;
  void zero_grad();
};

ModelParams init_params(const ModelSpec& spec, Rng& rng);

struct AdamConfig {
  double lr = 0.01;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One Adam update from the gradients accumulated in each param tensor.
// Weight decay enters as an L2 term added to the gradient.
void adam_step(ModelParams& params, const AdamConfig& cfg);

// Per-dataset precomputed operators for node-task forwards.
struct NodeContext {
  SparseRef a_hat;      // normalized adjacency (gcn, topk conv)
  SparseRef mean_adj;   // row-normalized adjacency without self loops (sage)
  std::vector<Index> src, dst;  // edges of A+I (gat)
};

NodeContext make_node_context(const Graph& g, Family family);

// Block-diagonal minibatch of graphs for graph-level tasks.
struct GraphBatch {
  Graph block;                  // disjoint union
  Matrix features;              // total_nodes x d
  std::vector<Index> graph_of;  // node -> graph slot, nondecreasing
  Index num_graphs = 0;
  SparseRef a_hat;    // topk_pool
  SparseRef a_plain;  // gin
};

GraphBatch make_batch(const GraphDataset& ds, const std::vector<Index>& graph_ids,
                      Family family);

// Per-graph top-ceil(ratio*n_g) selection by score, ties to the lower node
// index; returns kept node indices in ascending order.
std::vector<Index> topk_select(const std::vector<double>& scores,
                               const std::vector<Index>& graph_of,
                               Index num_graphs, double ratio);

// Node-task forward: logits n x out_dim.
Tensor forward_node(const ModelSpec& spec, ModelParams& params,
                    const NodeContext& ctx, const Tensor& x, bool training,
                    Rng& rng);

// Graph-task forward: logits num_graphs x out_dim.
Tensor forward_graph(const ModelSpec& spec, ModelParams& params,
                     const GraphBatch& batch, bool training, Rng& rng);

void save_params(const ModelSpec& spec, const ModelParams& params,
                 const std::string& path);
ModelParams load_params(const ModelSpec& spec, const std::string& path);

}  // namespace graphtune::nn
