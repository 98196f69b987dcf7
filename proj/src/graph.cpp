#include "graphtune/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace graphtune {

Index Graph::num_edge_pairs() const {
  Index pairs = 0;
  for (Index u = 0; u < num_nodes; ++u) {
    for (Index v : neighbors(u)) {
      if (v >= u) ++pairs;
    }
  }
  if (!undirected) return num_directed_entries();
  return pairs;
}

bool Graph::has_edge(Index u, Index v) const {
  auto nb = neighbors(u);
  return std::binary_search(nb.begin(), nb.end(), v);
}

Graph build_graph(Index num_nodes,
                  const std::vector<std::pair<Index, Index>>& edges,
                  bool undirected) {
  if (num_nodes < 0) throw DataError("build_graph: negative node count");
  std::vector<std::pair<Index, Index>> entries;
  entries.reserve(edges.size() * (undirected ? 2 : 1));
  for (const auto& [u, v] : edges) {
    if (u < 0 || u >= num_nodes || v < 0 || v >= num_nodes) {
      throw DataError("build_graph: edge endpoint out of range: (" +
                      std::to_string(u) + "," + std::to_string(v) +
                      ") with num_nodes=" + std::to_string(num_nodes));
    }
    entries.emplace_back(u, v);
    if (undirected && u != v) entries.emplace_back(v, u);
  }
  std::sort(entries.begin(), entries.end());
  entries.erase(std::unique(entries.begin(), entries.end()), entries.end());

  Graph g;
  g.num_nodes = num_nodes;
  g.undirected = undirected;
  g.row_offsets.assign(static_cast<std::size_t>(num_nodes) + 1, 0);
  g.col_indices.reserve(entries.size());
  for (const auto& [u, v] : entries) g.row_offsets[static_cast<std::size_t>(u) + 1]++;
  for (Index i = 0; i < num_nodes; ++i)
    g.row_offsets[static_cast<std::size_t>(i) + 1] += g.row_offsets[static_cast<std::size_t>(i)];
  for (const auto& [u, v] : entries) g.col_indices.push_back(v);
  return g;
}

std::vector<std::pair<Index, Index>> edge_list(const Graph& g) {
  std::vector<std::pair<Index, Index>> out;
  for (Index u = 0; u < g.num_nodes; ++u) {
    for (Index v : g.neighbors(u)) {
      if (!g.undirected || v >= u) out.emplace_back(u, v);
    }
  }
  return out;
}

void validate_graph(const Graph& g) {
  if (static_cast<Index>(g.row_offsets.size()) != g.num_nodes + 1)
    throw Error("graph: row_offsets length != num_nodes+1");
  if (g.row_offsets.front() != 0 ||
      g.row_offsets.back() != static_cast<Index>(g.col_indices.size()))
    throw Error("graph: row_offsets endpoints invalid");
  for (Index i = 0; i < g.num_nodes; ++i) {
    if (g.row_offsets[static_cast<std::size_t>(i) + 1] < g.row_offsets[static_cast<std::size_t>(i)])
      throw Error("graph: row_offsets not nondecreasing");
    auto nb = g.neighbors(i);
    for (std::size_t j = 0; j < nb.size(); ++j) {
      if (nb[j] < 0 || nb[j] >= g.num_nodes)
        throw Error("graph: neighbor out of range");
      if (j > 0 && nb[j] <= nb[j - 1])
        throw Error("graph: neighbors not strictly increasing");
    }
  }
  if (g.undirected) {
    for (Index u = 0; u < g.num_nodes; ++u)
      for (Index v : g.neighbors(u))
        if (!g.has_edge(v, u)) throw Error("graph: asymmetric undirected edge");
  }
}

SparseMatrix adjacency_matrix(const Graph& g) {
  SparseMatrix m;
  m.rows = m.cols = g.num_nodes;
  m.row_offsets = g.row_offsets;
  m.col_indices = g.col_indices;
  m.values.assign(g.col_indices.size(), 1.0);
  return m;
}

SparseMatrix normalized_adjacency(const Graph& g, bool add_self_loops) {
  if (!g.undirected)
    throw Error("normalized_adjacency: graph must be undirected");
  const Index n = g.num_nodes;
  // degree of A+I, counting each node's self-loop exactly once
  std::vector<double> deg(static_cast<std::size_t>(n), 0.0);
  std::vector<bool> has_loop(static_cast<std::size_t>(n), false);
  for (Index u = 0; u < n; ++u) {
    for (Index v : g.neighbors(u)) {
      deg[static_cast<std::size_t>(u)] += 1.0;
      if (v == u) has_loop[static_cast<std::size_t>(u)] = true;
    }
    if (add_self_loops && !has_loop[static_cast<std::size_t>(u)])
      deg[static_cast<std::size_t>(u)] += 1.0;
  }
  for (Index u = 0; u < n; ++u) {
    if (deg[static_cast<std::size_t>(u)] == 0.0)
      throw Error("normalized_adjacency: isolated node " + std::to_string(u) +
                  " with add_self_loops=false (zero degree)");
  }
  SparseMatrix m;
  m.rows = m.cols = n;
  m.row_offsets.assign(static_cast<std::size_t>(n) + 1, 0);
  for (Index u = 0; u < n; ++u) {
    Index cnt = g.degree(u);
    if (add_self_loops && !has_loop[static_cast<std::size_t>(u)]) cnt += 1;
    m.row_offsets[static_cast<std::size_t>(u) + 1] =
        m.row_offsets[static_cast<std::size_t>(u)] + cnt;
  }
  m.col_indices.resize(static_cast<std::size_t>(m.row_offsets.back()));
  m.values.resize(m.col_indices.size());
  for (Index u = 0; u < n; ++u) {
    Index pos = m.row_offsets[static_cast<std::size_t>(u)];
    bool loop_written = false;
    auto write = [&](Index v) {
      m.col_indices[static_cast<std::size_t>(pos)] = v;
      m.values[static_cast<std::size_t>(pos)] =
          1.0 / std::sqrt(deg[static_cast<std::size_t>(u)] *
                          deg[static_cast<std::size_t>(v)]);
      ++pos;
    };
    for (Index v : g.neighbors(u)) {
      if (add_self_loops && !loop_written && v > u && !has_loop[static_cast<std::size_t>(u)]) {
        write(u);
        loop_written = true;
      }
      write(v);
      if (v == u) loop_written = true;
    }
    if (add_self_loops && !loop_written) write(u);
  }
  return m;
}

SplitMasks planetoid_style_split(const std::vector<Index>& labels,
                                 Index num_classes, Index per_class,
                                 Index n_val, Index n_test,
                                 std::uint64_t seed) {
  const Index n = static_cast<Index>(labels.size());
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(num_classes));
  for (Index i = 0; i < n; ++i)
    by_class.at(static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])).push_back(i);

  Rng rng = make_rng(seed, /*stream=*/0x5eed);
  SplitMasks masks;
  masks.train.assign(static_cast<std::size_t>(n), 0);
  masks.val.assign(static_cast<std::size_t>(n), 0);
  masks.test.assign(static_cast<std::size_t>(n), 0);

  for (Index c = 0; c < num_classes; ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    if (static_cast<Index>(members.size()) < per_class)
      throw DataError("planetoid_style_split: class " + std::to_string(c) +
                      " has only " + std::to_string(members.size()) +
                      " members, needs " + std::to_string(per_class));
    std::shuffle(members.begin(), members.end(), rng);
    for (Index j = 0; j < per_class; ++j)
      masks.train[static_cast<std::size_t>(members[static_cast<std::size_t>(j)])] = 1;
  }

  std::vector<Index> rest;
  rest.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    if (!masks.train[static_cast<std::size_t>(i)]) rest.push_back(i);
  if (static_cast<Index>(rest.size()) < n_val + n_test)
    throw DataError("planetoid_style_split: only " +
                    std::to_string(rest.size()) + " unlabeled nodes, needs " +
                    std::to_string(n_val + n_test));
  std::shuffle(rest.begin(), rest.end(), rng);
  for (Index j = 0; j < n_val; ++j)
    masks.val[static_cast<std::size_t>(rest[static_cast<std::size_t>(j)])] = 1;
  for (Index j = 0; j < n_test; ++j)
    masks.test[static_cast<std::size_t>(rest[static_cast<std::size_t>(n_val + j)])] = 1;
  return masks;
}

FoldPlan stratified_kfold(const std::vector<Index>& labels, Index k,
                          std::uint64_t seed) {
  if (k < 2) throw Error("stratified_kfold: k must be >= 2");
  const Index n = static_cast<Index>(labels.size());
  Index num_classes = 0;
  for (Index y : labels) num_classes = std::max(num_classes, y + 1);
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(num_classes));
  for (Index i = 0; i < n; ++i)
    by_class[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);

  Rng rng = make_rng(seed, /*stream=*/0xf01d);
  FoldPlan plan;
  plan.k = k;
  plan.fold_of.assign(static_cast<std::size_t>(n), 0);
  // Round-robin within each class, rotating the starting fold by the global
  // count so overall fold sizes also stay within 1 of each other.
  Index assigned = 0;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t j = 0; j < members.size(); ++j) {
      plan.fold_of[static_cast<std::size_t>(members[j])] =
          (assigned + static_cast<Index>(j)) % k;
    }
    assigned += static_cast<Index>(members.size());
  }
  return plan;
}

}  // namespace graphtune
