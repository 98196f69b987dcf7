#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "graphtune/common.hpp"

namespace graphtune {

// Immutable sparse undirected graph in compressed-row form.
struct Graph {
  Index num_nodes = 0;
  std::vector<Index> row_offsets;  // length num_nodes+1, nondecreasing
  std::vector<Index> col_indices;  // strictly increasing within each row
  bool undirected = true;

  Index degree(Index v) const { return row_offsets[v + 1] - row_offsets[v]; }
  std::span<const Index> neighbors(Index v) const {
    return {col_indices.data() + row_offsets[v],
            static_cast<std::size_t>(degree(v))};
  }
  // Number of stored (u,v) entries; an undirected edge contributes two.
  Index num_directed_entries() const {
    return static_cast<Index>(col_indices.size());
  }
  // Unique undirected pairs, self-loops counted once.
  Index num_edge_pairs() const;
  bool has_edge(Index u, Index v) const;
};

Graph build_graph(Index num_nodes,
                  const std::vector<std::pair<Index, Index>>& edges,
                  bool undirected);

// Canonical edge-list export: u <= v pairs for undirected graphs, all stored
// entries otherwise.
std::vector<std::pair<Index, Index>> edge_list(const Graph& g);

// Throws if a CSR invariant is violated.
void validate_graph(const Graph& g);

struct SparseMatrix {
  Index rows = 0;
  Index cols = 0;
  std::vector<Index> row_offsets;
  std::vector<Index> col_indices;
  std::vector<double> values;
};

// D^{-1/2} (A + I) D^{-1/2} (self-loops in the input are never duplicated).
// With add_self_loops=false an isolated node raises Error.
SparseMatrix normalized_adjacency(const Graph& g, bool add_self_loops = true);

// Plain binary adjacency of g as a sparse matrix.
SparseMatrix adjacency_matrix(const Graph& g);

struct SplitMasks {
  std::vector<std::uint8_t> train, val, test;
};

struct NodeDataset {
  std::string name;
  Graph graph;
  Matrix features;             // num_nodes x d
  std::vector<Index> labels;   // length num_nodes, values in [0, num_classes)
  Index num_classes = 0;
  std::optional<SplitMasks> masks;
};

struct GraphFeatureVector {
  std::vector<double> values;
  std::vector<std::string> names;
};

struct GraphDataset {
  std::string name;
  std::vector<Graph> graphs;
  std::vector<Matrix> node_features;  // cols==0 marks "no features yet"
  std::vector<Index> labels;          // one per graph
  Index num_classes = 0;
  std::vector<GraphFeatureVector> graph_features;  // filled by graph-feature steps
};

struct FoldPlan {
  Index k = 0;
  std::vector<Index> fold_of;  // length N, values in [0, k)
};

// 20-per-class train nodes, n_val validation, n_test test, sampled without
// replacement from the remainder. Deterministic given seed.
SplitMasks planetoid_style_split(const std::vector<Index>& labels,
                                 Index num_classes, Index per_class = 20,
                                 Index n_val = 500, Index n_test = 1000,
                                 std::uint64_t seed = 0);

// Stratified k-fold: fold sizes and per-class counts each differ by <= 1.
FoldPlan stratified_kfold(const std::vector<Index>& labels, Index k = 10,
                          std::uint64_t seed = 0);

}  // namespace graphtune
