#include "graphtune/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "graphtune/ensemble.hpp"

namespace graphtune::fe {

namespace {

using json = nlohmann::json;

std::vector<Index> simple_degrees(const Graph& g) {
  std::vector<Index> deg(static_cast<std::size_t>(g.num_nodes), 0);
  for (Index u = 0; u < g.num_nodes; ++u)
    for (Index v : g.neighbors(u))
      if (v != u) ++deg[static_cast<std::size_t>(u)];
  return deg;
}

Eigen::MatrixXd dense_adjacency(const Graph& g) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(g.num_nodes, g.num_nodes);
  for (Index u = 0; u < g.num_nodes; ++u)
    for (Index v : g.neighbors(u)) a(u, v) = 1.0;
  return a;
}

}  // namespace

Matrix gen_normalize(const Matrix& x) {
  Matrix out = x;
  for (Index i = 0; i < x.rows; ++i) {
    double norm = 0.0;
    for (Index j = 0; j < x.cols; ++j) norm += std::abs(x(i, j));
    if (norm > 0.0)
      for (Index j = 0; j < x.cols; ++j) out(i, j) = x(i, j) / norm;
  }
  return out;
}

Matrix gen_onehot_id(const Graph& g, Index cap) {
  if (g.num_nodes > cap)
    throw CapacityError("gen_onehot_id: " + std::to_string(g.num_nodes) +
                        " nodes exceeds the cap of " + std::to_string(cap) +
                        " (one-hot ids need n^2 memory)");
  Matrix out(g.num_nodes, g.num_nodes);
  for (Index i = 0; i < g.num_nodes; ++i) out(i, i) = 1.0;
  return out;
}

Matrix gen_onehot_degree(const Graph& g, Index max_degree) {
  if (max_degree < 0) throw ConfigError("gen_onehot_degree: max_degree < 0");
  Matrix out(g.num_nodes, max_degree + 1);
  for (Index v = 0; v < g.num_nodes; ++v)
    out(v, std::min(g.degree(v), max_degree)) = 1.0;
  return out;
}

Matrix gen_ldp(const Graph& g) {
  Matrix out(g.num_nodes, 5);
  for (Index v = 0; v < g.num_nodes; ++v) {
    const auto nb = g.neighbors(v);
    out(v, 0) = static_cast<double>(g.degree(v));
    if (nb.empty()) continue;
    double mn = 1e300, mx = -1e300, sum = 0.0, sq = 0.0;
    for (Index u : nb) {
      const double d = static_cast<double>(g.degree(u));
      mn = std::min(mn, d);
      mx = std::max(mx, d);
      sum += d;
      sq += d * d;
    }
    const double n = static_cast<double>(nb.size());
    const double mean = sum / n;
    out(v, 1) = mn;
    out(v, 2) = mx;
    out(v, 3) = mean;
    out(v, 4) = std::sqrt(std::max(sq / n - mean * mean, 0.0));
  }
  return out;
}

Matrix gen_pagerank(const Graph& g, double damping, double tol, Index max_iter) {
  const Index n = g.num_nodes;
  if (n < 1) throw Error("gen_pagerank: empty graph");
  std::vector<double> x(static_cast<std::size_t>(n), 1.0 / static_cast<double>(n));
  std::vector<double> next(static_cast<std::size_t>(n));
  const auto deg = [&](Index v) { return static_cast<double>(g.degree(v)); };
  double residual = 0.0;
  for (Index it = 0; it < max_iter; ++it) {
    double dangling = 0.0;
    for (Index v = 0; v < n; ++v)
      if (g.degree(v) == 0) dangling += x[static_cast<std::size_t>(v)];
    const double base =
        (1.0 - damping) / static_cast<double>(n) +
        damping * dangling / static_cast<double>(n);
    std::fill(next.begin(), next.end(), base);
    for (Index u = 0; u < n; ++u) {
      if (g.degree(u) == 0) continue;
      const double share = damping * x[static_cast<std::size_t>(u)] / deg(u);
      for (Index v : g.neighbors(u)) next[static_cast<std::size_t>(v)] += share;
    }
    residual = 0.0;
    for (Index v = 0; v < n; ++v)
      residual += std::abs(next[static_cast<std::size_t>(v)] - x[static_cast<std::size_t>(v)]);
    x.swap(next);
    if (residual < tol) {
      Matrix out(n, 1);
      for (Index v = 0; v < n; ++v) out(v, 0) = x[static_cast<std::size_t>(v)];
      return out;
    }
  }
  throw ConvergenceError("gen_pagerank: no convergence after " +
                             std::to_string(max_iter) +
                             " iterations (residual " + std::to_string(residual) + ")",
                         residual);
}

Matrix gen_eigen(const Graph& g, Index k, bool use_normalized) {
  const Index n = g.num_nodes;
  if (n < 1) throw Error("gen_eigen: empty graph");
  Eigen::MatrixXd a;
  if (use_normalized) {
    SparseMatrix s = normalized_adjacency(g, true);
    a = Eigen::MatrixXd::Zero(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index e = s.row_offsets[static_cast<std::size_t>(i)];
           e < s.row_offsets[static_cast<std::size_t>(i) + 1]; ++e)
        a(i, s.col_indices[static_cast<std::size_t>(e)]) = s.values[static_cast<std::size_t>(e)];
  } else {
    a = dense_adjacency(g);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a);
  if (solver.info() != Eigen::Success)
    throw ConvergenceError("gen_eigen: eigensolver failed to converge", 0.0);

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  const auto& ev = solver.eigenvalues();
  std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) {
    const double ai = std::abs(ev(i)), aj = std::abs(ev(j));
    if (ai != aj) return ai > aj;
    return ev(i) > ev(j);
  });

  const Index kk = std::min(k, n);
  Matrix out(n, kk);
  for (Index c = 0; c < kk; ++c) {
    Eigen::VectorXd col = solver.eigenvectors().col(order[static_cast<std::size_t>(c)]);
    Index arg = 0;
    for (Index i = 1; i < n; ++i)
      if (std::abs(col(i)) > std::abs(col(arg))) arg = i;
    if (col(arg) < 0) col = -col;
    for (Index i = 0; i < n; ++i) out(i, c) = col(i);
  }
  return out;
}

namespace {

// Isomorphism classes of connected induced subgraphs on 3 and 4 nodes,
// distinguished by their sorted degree sequences.
// size 3: [triangle, path3]; size 4: [clique4, diamond, cycle4, paw, path4, star4]
Index classify_graphlet(const Graph& g, const std::vector<Index>& nodes) {
  const std::size_t s = nodes.size();
  int degs[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = i + 1; j < s; ++j)
      if (g.has_edge(nodes[i], nodes[j])) {
        ++degs[i];
        ++degs[j];
      }
  std::sort(degs, degs + s);
  if (s == 3) {
    if (degs[0] == 2) return 0;  // triangle
    return 1;                    // path
  }
  if (degs[0] == 3) return 2;                                   // clique4
  if (degs[0] == 2 && degs[1] == 2 && degs[3] == 3) return 3;   // diamond
  if (degs[0] == 2) return 4;                                   // cycle4
  if (degs[1] == 2 && degs[3] == 3) return 5;                   // paw
  if (degs[1] == 1 && degs[3] == 3) return 7;                   // star4
  return 6;                                                     // path4
}

struct GraphletCounter {
  const Graph& g;
  Index max_size;
  Index budget;
  Matrix& counts;
  Index steps = 0;  // candidate tuples visited for the current root

  void record(const std::vector<Index>& sub) {
    const Index cls = classify_graphlet(g, sub);
    for (Index v : sub) counts(v, cls) += 1.0;
  }

  // ESU: each connected induced subgraph with minimum node = root is visited
  // exactly once.
  void extend(std::vector<Index>& sub, std::vector<Index>& ext, Index root) {
    if (++steps > budget)
      throw CapacityError(
          "gen_graphlet: enumeration budget exceeded at node " +
          std::to_string(root) + "; try max_size=3");
    if (static_cast<Index>(sub.size()) >= 3) record(sub);
    if (static_cast<Index>(sub.size()) == max_size) return;
    std::vector<Index> local = ext;
    while (!local.empty()) {
      const Index w = local.back();
      local.pop_back();
      std::vector<Index> next = local;
      for (Index u : g.neighbors(w)) {
        if (u <= root || u == w) continue;
        bool known = std::find(sub.begin(), sub.end(), u) != sub.end();
        if (known) continue;
        // exclusive neighborhood: u must not touch the current subgraph
        bool adjacent_to_sub = false;
        for (Index sv : sub)
          if (g.has_edge(u, sv)) {
            adjacent_to_sub = true;
            break;
          }
        if (adjacent_to_sub) continue;
        if (std::find(next.begin(), next.end(), u) == next.end() &&
            std::find(local.begin(), local.end(), u) == local.end())
          next.push_back(u);
      }
      sub.push_back(w);
      extend(sub, next, root);
      sub.pop_back();
    }
  }
};

}  // namespace

Matrix gen_graphlet(const Graph& g, Index max_size, Index budget) {
  if (max_size != 3 && max_size != 4)
    throw ConfigError("gen_graphlet: max_size must be 3 or 4");
  const Index ncols = max_size == 3 ? 2 : 8;
  Matrix counts(g.num_nodes, ncols);
  GraphletCounter counter{g, max_size, budget, counts};
  for (Index v = 0; v < g.num_nodes; ++v) {
    counter.steps = 0;
    std::vector<Index> sub = {v};
    std::vector<Index> ext;
    for (Index u : g.neighbors(v))
      if (u > v) ext.push_back(u);
    counter.extend(sub, ext, v);
  }
  return counts;
}

std::vector<Index> select_filter_constant(const Matrix& x,
                                          const std::vector<std::uint8_t>& fit_mask) {
  if (static_cast<Index>(fit_mask.size()) != x.rows)
    throw ShapeError("select_filter_constant: mask length != rows");
  std::vector<Index> fit_rows;
  for (Index i = 0; i < x.rows; ++i)
    if (fit_mask[static_cast<std::size_t>(i)]) fit_rows.push_back(i);
  if (fit_rows.empty()) throw Error("select_filter_constant: empty fit mask");
  std::vector<Index> keep;
  for (Index j = 0; j < x.cols; ++j) {
    const double first = x(fit_rows.front(), j);
    bool constant = true;
    for (Index i : fit_rows)
      if (x(i, j) != first) {
        constant = false;
        break;
      }
    if (!constant) keep.push_back(j);
  }
  if (keep.empty())
    throw Error("select_filter_constant: all columns are constant on the fit rows");
  return keep;
}

std::vector<Index> select_gbdt(const Matrix& x, const std::vector<Index>& labels,
                               const std::vector<std::uint8_t>& fit_mask,
                               Index num_classes, Index top_k) {
  if (top_k < 1) throw ConfigError("select_gbdt: top_k must be >= 1");
  if (top_k >= x.cols) {
    std::vector<Index> all(static_cast<std::size_t>(x.cols));
    std::iota(all.begin(), all.end(), Index{0});
    return all;
  }
  std::vector<Index> fit_rows;
  for (Index i = 0; i < x.rows; ++i)
    if (fit_mask[static_cast<std::size_t>(i)]) fit_rows.push_back(i);
  if (fit_rows.empty()) throw Error("select_gbdt: empty fit mask");
  Matrix xf(static_cast<Index>(fit_rows.size()), x.cols);
  std::vector<Index> yf(fit_rows.size());
  for (std::size_t r = 0; r < fit_rows.size(); ++r) {
    for (Index j = 0; j < x.cols; ++j) xf(static_cast<Index>(r), j) = x(fit_rows[r], j);
    yf[r] = labels[static_cast<std::size_t>(fit_rows[r])];
  }
  ensemble::GbmModel model = ensemble::gbm_fit(xf, yf, num_classes);
  const auto importance = ensemble::gbm_importance(model);
  std::vector<Index> order(static_cast<std::size_t>(x.cols));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (importance[static_cast<std::size_t>(a)] != importance[static_cast<std::size_t>(b)])
      return importance[static_cast<std::size_t>(a)] > importance[static_cast<std::size_t>(b)];
    return a < b;
  });
  std::vector<Index> keep(order.begin(), order.begin() + top_k);
  std::sort(keep.begin(), keep.end());
  return keep;
}

GraphFeatureVector graph_stats(const Graph& g) {
  const Index n = g.num_nodes;
  const auto deg = simple_degrees(g);
  double m = 0.0, max_deg = 0.0;
  for (Index v = 0; v < n; ++v) {
    m += static_cast<double>(deg[static_cast<std::size_t>(v)]);
    max_deg = std::max(max_deg, static_cast<double>(deg[static_cast<std::size_t>(v)]));
  }
  m /= 2.0;

  double triangles_total = 0.0, wedges = 0.0, clustering_sum = 0.0;
  for (Index v = 0; v < n; ++v) {
    const auto nb = g.neighbors(v);
    double tri_v = 0.0;
    for (std::size_t i = 0; i < nb.size(); ++i) {
      if (nb[i] == v) continue;
      for (std::size_t j = i + 1; j < nb.size(); ++j) {
        if (nb[j] == v) continue;
        if (g.has_edge(nb[i], nb[j])) tri_v += 1.0;
      }
    }
    const double d = static_cast<double>(deg[static_cast<std::size_t>(v)]);
    triangles_total += tri_v;
    wedges += d * (d - 1.0) / 2.0;
    if (d >= 2.0) clustering_sum += tri_v / (d * (d - 1.0) / 2.0);
  }
  triangles_total /= 3.0;

  GraphFeatureVector out;
  out.names = {"num_nodes", "num_edges",      "density",     "mean_degree",
               "max_degree", "avg_clustering", "transitivity"};
  out.values = {
      static_cast<double>(n),
      m,
      n >= 2 ? 2.0 * m / (static_cast<double>(n) * (static_cast<double>(n) - 1.0)) : 0.0,
      n >= 1 ? 2.0 * m / static_cast<double>(n) : 0.0,
      max_deg,
      n >= 1 ? clustering_sum / static_cast<double>(n) : 0.0,
      wedges > 0.0 ? 3.0 * triangles_total / wedges : 0.0,
  };
  return out;
}

GraphFeatureVector netlsd_heat(const Graph& g, Index num_points, double t_min,
                               double t_max, Index cap) {
  const Index n = g.num_nodes;
  if (n > cap)
    throw CapacityError("netlsd_heat: " + std::to_string(n) +
                        " nodes exceeds the dense-eigensolver cap of " +
                        std::to_string(cap));
  // L = I - D^{-1/2} A D^{-1/2}; rows of isolated nodes stay zero.
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> inv_sqrt_deg(static_cast<std::size_t>(n), 0.0);
  for (Index v = 0; v < n; ++v) {
    const Index d = g.degree(v);
    if (d > 0) {
      inv_sqrt_deg[static_cast<std::size_t>(v)] = 1.0 / std::sqrt(static_cast<double>(d));
      lap(v, v) = 1.0;
    }
  }
  for (Index u = 0; u < n; ++u)
    for (Index v : g.neighbors(u))
      lap(u, v) -= inv_sqrt_deg[static_cast<std::size_t>(u)] *
                   inv_sqrt_deg[static_cast<std::size_t>(v)];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success)
    throw ConvergenceError("netlsd_heat: eigensolver failed to converge", 0.0);

  GraphFeatureVector out;
  out.values.resize(static_cast<std::size_t>(num_points));
  out.names.resize(static_cast<std::size_t>(num_points));
  const double log_min = std::log(t_min), log_max = std::log(t_max);
  for (Index i = 0; i < num_points; ++i) {
    const double t = std::exp(
        log_min + (log_max - log_min) * static_cast<double>(i) /
                      static_cast<double>(num_points - 1));
    double h = 0.0;
    for (Index e = 0; e < n; ++e) h += std::exp(-t * solver.eigenvalues()(e));
    out.values[static_cast<std::size_t>(i)] = h;
    out.names[static_cast<std::size_t>(i)] = "heat_t" + std::to_string(i);
  }
  return out;
}

// ---- pipeline ----

namespace {

constexpr const char* kGenerators[] = {"normalize", "onehot_id", "onehot_degree",
                                       "ldp",       "pagerank",  "eigen",
                                       "graphlet"};
constexpr const char* kSelectors[] = {"filter_constant", "gbdt"};
constexpr const char* kGraphFeatures[] = {"graph_stats", "netlsd"};

bool contains(const char* const* names, std::size_t n, const std::string& s) {
  for (std::size_t i = 0; i < n; ++i)
    if (s == names[i]) return true;
  return false;
}

void validate_step(const FeatureStep& step) {
  if (step.kind == "generator") {
    if (!contains(kGenerators, std::size(kGenerators), step.name))
      throw ConfigError("unknown generator: " + step.name);
  } else if (step.kind == "selector") {
    if (!contains(kSelectors, std::size(kSelectors), step.name))
      throw ConfigError("unknown selector: " + step.name);
  } else if (step.kind == "graph-feature") {
    if (!contains(kGraphFeatures, std::size(kGraphFeatures), step.name))
      throw ConfigError("unknown graph feature: " + step.name);
  } else {
    throw ConfigError("unknown feature step kind: " + step.kind);
  }
}

Matrix run_generator(const FeatureStep& step, const Graph& g, const Matrix& x,
                     const FittedStep& fitted) {
  const json& p = step.params;
  if (step.name == "normalize") return gen_normalize(x);
  if (step.name == "onehot_id")
    return gen_onehot_id(g, p.value("cap", Index{20000}));
  if (step.name == "onehot_degree")
    return gen_onehot_degree(g, fitted.learned_max_degree);
  if (step.name == "ldp") return gen_ldp(g);
  if (step.name == "pagerank")
    return gen_pagerank(g, p.value("damping", 0.85), p.value("tol", 1e-10),
                        p.value("max_iter", Index{1000}));
  if (step.name == "eigen")
    return gen_eigen(g, p.value("k", Index{32}),
                     p.value("matrix", std::string("adjacency")) ==
                         "normalized_adjacency");
  if (step.name == "graphlet")
    return gen_graphlet(g, p.value("max_size", Index{3}),
                        p.value("budget", Index{10'000'000}));
  throw ConfigError("unknown generator: " + step.name);
}

Matrix take_columns(const Matrix& x, const std::vector<Index>& cols) {
  Matrix out(x.rows, static_cast<Index>(cols.size()));
  for (Index i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      out(i, static_cast<Index>(j)) = x(i, cols[j]);
  return out;
}

template <typename E>
[[noreturn]] void rethrow_with_step(const E& e, std::size_t idx,
                                    const FeatureStep& step) {
  throw E("feature step " + std::to_string(idx) + " (" + step.name +
          "): " + e.what());
}

[[noreturn]] void wrap_step_error(std::size_t idx, const FeatureStep& step) {
  try {
    throw;
  } catch (const CapacityError& e) {
    rethrow_with_step(e, idx, step);
  } catch (const ConfigError& e) {
    rethrow_with_step(e, idx, step);
  } catch (const DataError& e) {
    rethrow_with_step(e, idx, step);
  } catch (const ShapeError& e) {
    rethrow_with_step(e, idx, step);
  } catch (const ConvergenceError& e) {
    throw ConvergenceError("feature step " + std::to_string(idx) + " (" +
                               step.name + "): " + e.what(),
                           e.residual());
  } catch (const Error& e) {
    rethrow_with_step(e, idx, step);
  }
}

}  // namespace

std::vector<FeatureStep> steps_from_json(const json& arr) {
  std::vector<FeatureStep> steps;
  if (!arr.is_array()) throw ConfigError("feature pipeline: steps must be an array");
  for (const auto& item : arr) {
    FeatureStep step;
    step.kind = item.value("kind", std::string());
    step.name = item.value("name", std::string());
    step.params = item.value("params", json::object());
    validate_step(step);
    steps.push_back(std::move(step));
  }
  return steps;
}

json steps_to_json(const std::vector<FeatureStep>& steps) {
  json arr = json::array();
  for (const auto& s : steps)
    arr.push_back({{"kind", s.kind}, {"name", s.name}, {"params", s.params}});
  return arr;
}

FeaturePipeline::FeaturePipeline(std::vector<FeatureStep> steps)
    : steps_(std::move(steps)) {
  for (const auto& s : steps_) validate_step(s);
}

void FeaturePipeline::fit_transform(NodeDataset& ds,
                                    const std::vector<std::uint8_t>& fit_mask) {
  fitted_.clear();
  for (std::size_t idx = 0; idx < steps_.size(); ++idx) {
    const FeatureStep& step = steps_[idx];
    FittedStep fitted;
    try {
      if (step.kind == "generator") {
        if (step.name == "onehot_degree") {
          fitted.learned_max_degree = step.params.value("max_degree", Index{-1});
          if (fitted.learned_max_degree < 0) {
            Index md = 0;
            for (Index v = 0; v < ds.graph.num_nodes; ++v)
              md = std::max(md, ds.graph.degree(v));
            fitted.learned_max_degree = md;
          }
        }
        Matrix gen = run_generator(step, ds.graph, ds.features, fitted);
        // normalize transforms the current matrix; other generators append
        ds.features = (step.name == "normalize") ? gen : hcat(ds.features, gen);
      } else if (step.kind == "selector") {
        if (step.name == "filter_constant")
          fitted.selected_cols = select_filter_constant(ds.features, fit_mask);
        else
          fitted.selected_cols =
              select_gbdt(ds.features, ds.labels, fit_mask, ds.num_classes,
                          step.params.value("top_k", Index{32}));
        ds.features = take_columns(ds.features, fitted.selected_cols);
      } else {
        throw ConfigError("graph-feature steps apply to graph datasets");
      }
    } catch (...) {
      wrap_step_error(idx, step);
    }
    fitted_.push_back(std::move(fitted));
  }
}

void FeaturePipeline::fit_transform(GraphDataset& ds,
                                    const std::vector<std::uint8_t>& train_graph_mask) {
  fitted_.clear();
  const Index num_graphs = static_cast<Index>(ds.graphs.size());
  for (std::size_t idx = 0; idx < steps_.size(); ++idx) {
    const FeatureStep& step = steps_[idx];
    FittedStep fitted;
    try {
      if (step.kind == "generator") {
        if (step.name == "onehot_degree") {
          fitted.learned_max_degree = step.params.value("max_degree", Index{-1});
          if (fitted.learned_max_degree < 0) {
            Index md = 0;
            for (const auto& g : ds.graphs)
              for (Index v = 0; v < g.num_nodes; ++v) md = std::max(md, g.degree(v));
            fitted.learned_max_degree = md;
          }
        }
        for (Index gi = 0; gi < num_graphs; ++gi) {
          Matrix gen = run_generator(step, ds.graphs[static_cast<std::size_t>(gi)],
                                     ds.node_features[static_cast<std::size_t>(gi)],
                                     fitted);
          auto& feats = ds.node_features[static_cast<std::size_t>(gi)];
          feats = (step.name == "normalize") ? gen : hcat(feats, gen);
        }
      } else if (step.kind == "selector") {
        if (step.name != "filter_constant")
          throw ConfigError("selector '" + step.name +
                            "' needs node labels and applies to node datasets");
        // fit rows = nodes of training graphs
        Index total = 0;
        for (const auto& f : ds.node_features) total += f.rows;
        Matrix stacked(total, ds.node_features.front().cols);
        std::vector<std::uint8_t> node_mask(static_cast<std::size_t>(total), 0);
        Index off = 0;
        for (Index gi = 0; gi < num_graphs; ++gi) {
          const auto& f = ds.node_features[static_cast<std::size_t>(gi)];
          for (Index i = 0; i < f.rows; ++i) {
            for (Index j = 0; j < f.cols; ++j) stacked(off + i, j) = f(i, j);
            node_mask[static_cast<std::size_t>(off + i)] =
                train_graph_mask[static_cast<std::size_t>(gi)];
          }
          off += f.rows;
        }
        fitted.selected_cols = select_filter_constant(stacked, node_mask);
        for (auto& f : ds.node_features) f = take_columns(f, fitted.selected_cols);
      } else {  // graph-feature
        if (ds.graph_features.empty())
          ds.graph_features.resize(static_cast<std::size_t>(num_graphs));
        for (Index gi = 0; gi < num_graphs; ++gi) {
          GraphFeatureVector v =
              step.name == "graph_stats"
                  ? graph_stats(ds.graphs[static_cast<std::size_t>(gi)])
                  : netlsd_heat(ds.graphs[static_cast<std::size_t>(gi)],
                                step.params.value("num_points", Index{250}),
                                step.params.value("t_min", 1e-2),
                                step.params.value("t_max", 1e2),
                                step.params.value("cap", Index{3000}));
          auto& dst = ds.graph_features[static_cast<std::size_t>(gi)];
          dst.values.insert(dst.values.end(), v.values.begin(), v.values.end());
          dst.names.insert(dst.names.end(), v.names.begin(), v.names.end());
        }
      }
    } catch (...) {
      wrap_step_error(idx, step);
    }
    fitted_.push_back(std::move(fitted));
  }
}

}  // namespace graphtune::fe
