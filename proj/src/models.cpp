#include "graphtune/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace graphtune::nn {

namespace {

using json = nlohmann::json;

Tensor apply_act(Activation act, const Tensor& x) {
  switch (act) {
    case Activation::relu:
      return relu(x);
    case Activation::elu:
      return elu(x);
    case Activation::leaky_relu:
      return leaky_relu(x);
    case Activation::tanh:
      return tanh_act(x);
  }
  throw Error("unknown activation");
}

Tensor glorot(Index rows, Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t = Tensor::zeros(rows, cols, /*requires_grad=*/true);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor zeros_param(Index rows, Index cols) {
  return Tensor::zeros(rows, cols, /*requires_grad=*/true);
}

void put(ModelParams& p, const std::string& name, Tensor t) {
  ParamState st;
  st.m.assign(t.data().size(), 0.0);
  st.v.assign(t.data().size(), 0.0);
  st.value = std::move(t);
  p.params.emplace(name, std::move(st));
}

std::string lkey(Index l, const std::string& suffix) {
  return "l" + std::to_string(l) + "." + suffix;
}

}  // namespace

Family family_from_string(const std::string& s) {
  if (s == "gcn") return Family::gcn;
  if (s == "gat") return Family::gat;
  if (s == "sage" || s == "graphsage") return Family::sage;
  if (s == "gin") return Family::gin;
  if (s == "topk_pool" || s == "topk" || s == "topkpool") return Family::topk_pool;
  throw ConfigError("unknown model family: " + s);
}

std::string to_string(Family f) {
  switch (f) {
    case Family::gcn: return "gcn";
    case Family::gat: return "gat";
    case Family::sage: return "sage";
    case Family::gin: return "gin";
    case Family::topk_pool: return "topk_pool";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "elu") return Activation::elu;
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation: " + s);
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::elu: return "elu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

void validate_spec(const ModelSpec& spec) {
  if (spec.num_layers < 1) throw ConfigError("model: num_layers must be >= 1");
  if (spec.hidden_dim < 1) throw ConfigError("model: hidden_dim must be >= 1");
  if (spec.dropout < 0.0 || spec.dropout >= 1.0)
    throw ConfigError("model: dropout must be in [0,1)");
  if (spec.heads < 1) throw ConfigError("model: heads must be >= 1");
  if (spec.pool_ratio <= 0.0 || spec.pool_ratio > 1.0)
    throw ConfigError("model: pool_ratio must be in (0,1]");
  if (spec.in_dim < 1 || spec.out_dim < 1)
    throw ConfigError("model: in_dim/out_dim must be set");
}

std::string spec_digest(const ModelSpec& spec) {
  json j = {{"family", to_string(spec.family)},
            {"num_layers", spec.num_layers},
            {"hidden_dim", spec.hidden_dim},
            {"dropout", spec.dropout},
            {"activation", to_string(spec.activation)},
            {"heads", spec.heads},
            {"eps_learnable", spec.eps_learnable},
            {"pool_ratio", spec.pool_ratio},
            {"in_dim", spec.in_dim},
            {"out_dim", spec.out_dim}};
  return hex64(fnv1a64(j.dump(), 1469598103934665603ULL));
}

ModelParams ModelParams::deep_copy() const {
  ModelParams out;
  out.step = step;
  for (const auto& [name, st] : params) {
    ParamState copy;
    copy.value = Tensor::from_matrix(st.value.to_matrix(), /*requires_grad=*/true);
    copy.m = st.m;
    copy.v = st.v;
    out.params.emplace(name, std::move(copy));
  }
  return out;
}

void ModelParams::zero_grad() {
  for (auto& [name, st] : params) st.value.zero_grad();
}

ModelParams init_params(const ModelSpec& spec, Rng& rng) {
  validate_spec(spec);
  ModelParams p;
  const Index L = spec.num_layers;
  const Index in = spec.in_dim, out = spec.out_dim, h = spec.hidden_dim;

  switch (spec.family) {
    case Family::gcn: {
      Index d = in;
      for (Index l = 0; l < L; ++l) {
        const Index d_out = (l + 1 == L) ? out : h;
        put(p, lkey(l, "W"), glorot(d, d_out, rng));
        put(p, lkey(l, "b"), zeros_param(1, d_out));
        d = d_out;
      }
      break;
    }
    case Family::sage: {
      Index d = in;
      for (Index l = 0; l < L; ++l) {
        const Index d_out = (l + 1 == L) ? out : h;
        put(p, lkey(l, "W"), glorot(2 * d, d_out, rng));
        put(p, lkey(l, "b"), zeros_param(1, d_out));
        d = d_out;
      }
      break;
    }
    case Family::gat: {
      Index d = in;
      for (Index l = 0; l < L; ++l) {
        const bool last = (l + 1 == L);
        const Index nheads = last ? 1 : spec.heads;
        const Index hd = last ? out : h;
        put(p, lkey(l, "W"), glorot(d, nheads * hd, rng));
        for (Index k = 0; k < nheads; ++k) {
          put(p, lkey(l, "a_src." + std::to_string(k)), glorot(hd, 1, rng));
          put(p, lkey(l, "a_dst." + std::to_string(k)), glorot(hd, 1, rng));
        }
        put(p, lkey(l, "b"), zeros_param(1, nheads * hd));
        d = nheads * hd;
      }
      break;
    }
    case Family::gin: {
      Index d = in;
      for (Index l = 0; l < L; ++l) {
        put(p, lkey(l, "mlp.W1"), glorot(d, h, rng));
        put(p, lkey(l, "mlp.b1"), zeros_param(1, h));
        put(p, lkey(l, "mlp.W2"), glorot(h, h, rng));
        put(p, lkey(l, "mlp.b2"), zeros_param(1, h));
        if (spec.eps_learnable) put(p, lkey(l, "eps"), zeros_param(1, 1));
        d = h;
      }
      put(p, "readout.W", glorot(in + L * h, out, rng));
      put(p, "readout.b", zeros_param(1, out));
      break;
    }
    case Family::topk_pool: {
      Index d = in;
      for (Index l = 0; l < L; ++l) {
        put(p, lkey(l, "W"), glorot(d, h, rng));
        put(p, lkey(l, "b"), zeros_param(1, h));
        put(p, lkey(l, "p"), glorot(h, 1, rng));
        d = h;
      }
      put(p, "head.W1", glorot(2 * h, h, rng));
      put(p, "head.b1", zeros_param(1, h));
      put(p, "head.W2", glorot(h, out, rng));
      put(p, "head.b2", zeros_param(1, out));
      break;
    }
  }
  return p;
}

void adam_step(ModelParams& params, const AdamConfig& cfg) {
  params.step += 1;
  const double t = static_cast<double>(params.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, st] : params.params) {
    auto& value = st.value.data();
    auto& grad = st.value.grad();
    if (grad.size() != value.size()) continue;  // never touched by backward
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i] + cfg.weight_decay * value[i];
      st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
      st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

NodeContext make_node_context(const Graph& g, Family family) {
  NodeContext ctx;
  switch (family) {
    case Family::gcn:
    case Family::topk_pool:
      ctx.a_hat = std::make_shared<const SparseMatrix>(normalized_adjacency(g, true));
      break;
    case Family::sage: {
      SparseMatrix m;
      m.rows = m.cols = g.num_nodes;
      m.row_offsets = g.row_offsets;
      m.col_indices = g.col_indices;
      m.values.resize(g.col_indices.size());
      for (Index u = 0; u < g.num_nodes; ++u) {
        const double d = static_cast<double>(g.degree(u));
        for (Index k = g.row_offsets[static_cast<std::size_t>(u)];
             k < g.row_offsets[static_cast<std::size_t>(u) + 1]; ++k)
          m.values[static_cast<std::size_t>(k)] = 1.0 / d;
      }
      ctx.mean_adj = std::make_shared<const SparseMatrix>(std::move(m));
      break;
    }
    case Family::gat: {
      for (Index u = 0; u < g.num_nodes; ++u) {
        bool loop = false;
        for (Index v : g.neighbors(u)) {
          ctx.src.push_back(v);
          ctx.dst.push_back(u);
          if (v == u) loop = true;
        }
        if (!loop) {
          ctx.src.push_back(u);
          ctx.dst.push_back(u);
        }
      }
      break;
    }
    case Family::gin:
      ctx.a_hat = std::make_shared<const SparseMatrix>(adjacency_matrix(g));
      break;
  }
  return ctx;
}

namespace {

Tensor gcn_forward(const ModelSpec& spec, ModelParams& p, const SparseRef& a_hat,
                   const Tensor& x, bool training, Rng& rng) {
  Tensor h = x;
  for (Index l = 0; l < spec.num_layers; ++l) {
    h = dropout(h, spec.dropout, training, rng);
    h = matmul(h, p.params.at(lkey(l, "W")).value);
    h = spmm(a_hat, h);
    h = add_bias(h, p.params.at(lkey(l, "b")).value);
    if (l + 1 < spec.num_layers) h = apply_act(spec.activation, h);
  }
  return h;
}

Tensor gat_forward(const ModelSpec& spec, ModelParams& p,
                   const std::vector<Index>& src, const std::vector<Index>& dst,
                   const Tensor& x, bool training, Rng& rng) {
  const Index n = x.rows();
  Tensor h = x;
  for (Index l = 0; l < spec.num_layers; ++l) {
    const bool last = (l + 1 == spec.num_layers);
    const Index nheads = last ? 1 : spec.heads;
    const Index hd = last ? spec.out_dim : spec.hidden_dim;
    h = dropout(h, spec.dropout, training, rng);
    Tensor xw = matmul(h, p.params.at(lkey(l, "W")).value);
    std::vector<Tensor> head_out;
    head_out.reserve(static_cast<std::size_t>(nheads));
    for (Index k = 0; k < nheads; ++k) {
      Tensor xwk = nheads == 1 ? xw : col_slice(xw, k * hd, (k + 1) * hd);
      Tensor s_src = matmul(xwk, p.params.at(lkey(l, "a_src." + std::to_string(k))).value);
      Tensor s_dst = matmul(xwk, p.params.at(lkey(l, "a_dst." + std::to_string(k))).value);
      Tensor e = leaky_relu(add(row_gather(s_src, src), row_gather(s_dst, dst)), 0.2);
      // per-destination softmax over incoming edges
      Tensor mx = segment_max(e, dst, n);
      Tensor z = exp_elem(sub(e, row_gather(mx, dst)));
      Tensor denom = segment_sum(z, dst, n);
      Tensor alpha = divide(z, row_gather(denom, dst));
      alpha = dropout(alpha, spec.dropout, training, rng);
      Tensor msg = mul_colvec(row_gather(xwk, src), alpha);
      head_out.push_back(segment_sum(msg, dst, n));
    }
    Tensor out = nheads == 1 ? head_out.front() : concat_cols(head_out);
    out = add_bias(out, p.params.at(lkey(l, "b")).value);
    h = last ? out : apply_act(spec.activation, out);
  }
  return h;
}

Tensor sage_forward(const ModelSpec& spec, ModelParams& p,
                    const SparseRef& mean_adj, const Tensor& x, bool training,
                    Rng& rng) {
  Tensor h = x;
  for (Index l = 0; l < spec.num_layers; ++l) {
    const bool last = (l + 1 == spec.num_layers);
    h = dropout(h, spec.dropout, training, rng);
    Tensor nm = spmm(mean_adj, h);
    std::vector<Tensor> parts = {h, nm};
    Tensor z = add_bias(matmul(concat_cols(parts), p.params.at(lkey(l, "W")).value),
                        p.params.at(lkey(l, "b")).value);
    h = last ? z : row_l2_normalize(apply_act(spec.activation, z));
  }
  return h;
}

Tensor gin_forward(const ModelSpec& spec, ModelParams& p, const GraphBatch& batch,
                   const Tensor& x, bool training, Rng& rng) {
  const Index B = batch.num_graphs;
  Tensor h = x;
  std::vector<Tensor> readouts;
  readouts.push_back(segment_sum(h, batch.graph_of, B));
  for (Index l = 0; l < spec.num_layers; ++l) {
    Tensor agg = spmm(batch.a_plain, h);
    if (spec.eps_learnable)
      agg = add(agg, scale_by_scalar(h, p.params.at(lkey(l, "eps")).value, 1.0));
    else
      agg = add(agg, h);
    Tensor z = add_bias(matmul(agg, p.params.at(lkey(l, "mlp.W1")).value),
                        p.params.at(lkey(l, "mlp.b1")).value);
    z = apply_act(spec.activation, z);
    z = add_bias(matmul(z, p.params.at(lkey(l, "mlp.W2")).value),
                 p.params.at(lkey(l, "mlp.b2")).value);
    h = z;
    readouts.push_back(segment_sum(h, batch.graph_of, B));
  }
  Tensor r = concat_cols(readouts);
  r = dropout(r, spec.dropout, training, rng);
  return add_bias(matmul(r, p.params.at("readout.W").value),
                  p.params.at("readout.b").value);
}

}  // namespace

std::vector<Index> topk_select(const std::vector<double>& scores,
                               const std::vector<Index>& graph_of,
                               Index num_graphs, double ratio) {
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(num_graphs));
  for (std::size_t i = 0; i < graph_of.size(); ++i)
    members[static_cast<std::size_t>(graph_of[i])].push_back(static_cast<Index>(i));
  std::vector<Index> keep;
  for (auto& m : members) {
    if (m.empty()) continue;
    const Index k = static_cast<Index>(
        std::ceil(ratio * static_cast<double>(m.size()) - 1e-12));
    std::stable_sort(m.begin(), m.end(), [&](Index a, Index b) {
      if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
        return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
      return a < b;
    });
    m.resize(static_cast<std::size_t>(std::max<Index>(k, 1)));
    std::sort(m.begin(), m.end());
    keep.insert(keep.end(), m.begin(), m.end());
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

namespace {

std::pair<Graph, std::vector<Index>> induce_subgraph(
    const Graph& g, const std::vector<Index>& graph_of,
    const std::vector<Index>& keep) {
  std::vector<Index> new_id(static_cast<std::size_t>(g.num_nodes), -1);
  for (std::size_t i = 0; i < keep.size(); ++i)
    new_id[static_cast<std::size_t>(keep[i])] = static_cast<Index>(i);
  std::vector<std::pair<Index, Index>> edges;
  for (Index u : keep) {
    for (Index v : g.neighbors(u)) {
      if (v >= u && new_id[static_cast<std::size_t>(v)] >= 0)
        edges.emplace_back(new_id[static_cast<std::size_t>(u)],
                           new_id[static_cast<std::size_t>(v)]);
    }
  }
  Graph sub = build_graph(static_cast<Index>(keep.size()), edges, true);
  std::vector<Index> sub_graph_of(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i)
    sub_graph_of[i] = graph_of[static_cast<std::size_t>(keep[i])];
  return {std::move(sub), std::move(sub_graph_of)};
}

Tensor topk_forward(const ModelSpec& spec, ModelParams& p, const GraphBatch& batch,
                    const Tensor& x, bool training, Rng& rng) {
  const Index B = batch.num_graphs;
  Graph cur = batch.block;
  std::vector<Index> graph_of = batch.graph_of;
  SparseRef a_hat = batch.a_hat;
  Tensor h = x;
  Tensor readout_sum;
  for (Index l = 0; l < spec.num_layers; ++l) {
    h = dropout(h, spec.dropout, training, rng);
    h = apply_act(spec.activation,
                  add_bias(spmm(a_hat, matmul(h, p.params.at(lkey(l, "W")).value)),
                           p.params.at(lkey(l, "b")).value));
    Tensor s = matmul(h, l2_normalize_flat(p.params.at(lkey(l, "p")).value));
    std::vector<Index> keep = topk_select(s.data(), graph_of, B, spec.pool_ratio);
    Tensor gate = tanh_act(s);
    h = mul_colvec(row_gather(h, keep), row_gather(gate, keep));
    auto [sub, sub_graph_of] = induce_subgraph(cur, graph_of, keep);
    cur = std::move(sub);
    graph_of = std::move(sub_graph_of);
    a_hat = std::make_shared<const SparseMatrix>(normalized_adjacency(cur, true));
    std::vector<Tensor> parts = {segment_mean(h, graph_of, B),
                                 segment_max(h, graph_of, B)};
    Tensor r = concat_cols(parts);
    readout_sum = (l == 0) ? r : add(readout_sum, r);
  }
  Tensor z = apply_act(spec.activation,
                       add_bias(matmul(readout_sum, p.params.at("head.W1").value),
                                p.params.at("head.b1").value));
  z = dropout(z, spec.dropout, training, rng);
  return add_bias(matmul(z, p.params.at("head.W2").value),
                  p.params.at("head.b2").value);
}

}  // namespace

GraphBatch make_batch(const GraphDataset& ds, const std::vector<Index>& graph_ids,
                      Family family) {
  GraphBatch batch;
  batch.num_graphs = static_cast<Index>(graph_ids.size());
  Index total = 0;
  Index d = -1;
  for (Index gid : graph_ids) {
    const auto& f = ds.node_features[static_cast<std::size_t>(gid)];
    if (d < 0) d = f.cols;
    if (f.cols != d)
      throw ShapeError("make_batch: inconsistent feature widths across graphs");
    total += ds.graphs[static_cast<std::size_t>(gid)].num_nodes;
  }
  if (d <= 0) throw Error("make_batch: graphs have no node features");

  batch.features = Matrix(total, d);
  batch.graph_of.resize(static_cast<std::size_t>(total));
  std::vector<std::pair<Index, Index>> edges;
  Index off = 0;
  for (std::size_t slot = 0; slot < graph_ids.size(); ++slot) {
    const Index gid = graph_ids[slot];
    const Graph& g = ds.graphs[static_cast<std::size_t>(gid)];
    const Matrix& f = ds.node_features[static_cast<std::size_t>(gid)];
    for (Index u = 0; u < g.num_nodes; ++u) {
      batch.graph_of[static_cast<std::size_t>(off + u)] = static_cast<Index>(slot);
      for (Index c = 0; c < d; ++c) batch.features(off + u, c) = f(u, c);
      for (Index v : g.neighbors(u))
        if (v >= u) edges.emplace_back(off + u, off + v);
    }
    off += g.num_nodes;
  }
  batch.block = build_graph(total, edges, true);
  if (family == Family::topk_pool)
    batch.a_hat = std::make_shared<const SparseMatrix>(
        normalized_adjacency(batch.block, true));
  if (family == Family::gin)
    batch.a_plain = std::make_shared<const SparseMatrix>(adjacency_matrix(batch.block));
  return batch;
}

Tensor forward_node(const ModelSpec& spec, ModelParams& params,
                    const NodeContext& ctx, const Tensor& x, bool training,
                    Rng& rng) {
  switch (spec.family) {
    case Family::gcn:
      return gcn_forward(spec, params, ctx.a_hat, x, training, rng);
    case Family::gat:
      return gat_forward(spec, params, ctx.src, ctx.dst, x, training, rng);
    case Family::sage:
      return sage_forward(spec, params, ctx.mean_adj, x, training, rng);
    default:
      throw ConfigError("family " + to_string(spec.family) +
                        " is a graph-level model, not a node model");
  }
}

Tensor forward_graph(const ModelSpec& spec, ModelParams& params,
                     const GraphBatch& batch, bool training, Rng& rng) {
  Tensor x = Tensor::from_matrix(batch.features);
  switch (spec.family) {
    case Family::gin:
      return gin_forward(spec, params, batch, x, training, rng);
    case Family::topk_pool:
      return topk_forward(spec, params, batch, x, training, rng);
    default:
      throw ConfigError("family " + to_string(spec.family) +
                        " is a node model, not a graph-level model");
  }
}

void save_params(const ModelSpec& spec, const ModelParams& params,
                 const std::string& path) {
  json j;
  j["version"] = 1;
  j["spec_digest"] = spec_digest(spec);
  j["step"] = params.step;
  json tensors = json::object();
  for (const auto& [name, st] : params.params) {
    tensors[name] = {{"shape", {st.value.rows(), st.value.cols()}},
                     {"data", st.value.data()},
                     {"m", st.m},
                     {"v", st.v}};
  }
  j["tensors"] = std::move(tensors);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write params file: " + path);
  out << j.dump() << "\n";
}

ModelParams load_params(const ModelSpec& spec, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open params file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path + ": corrupted params file: " + e.what());
  }
  if (!j.contains("version") || !j["version"].is_number_integer())
    throw DataError(path + ": corrupted params header");
  if (j["version"].get<int>() != 1)
    throw DataError(path + ": unsupported params version " +
                    std::to_string(j["version"].get<int>()));
  if (j.value("spec_digest", std::string()) != spec_digest(spec))
    throw ShapeError(path + ": params were saved for a different model spec");

  Rng rng = make_rng(0);
  ModelParams expected = init_params(spec, rng);
  ModelParams out;
  out.step = j.value("step", Index{0});
  try {
    const auto& tensors = j.at("tensors");
    for (const auto& [name, st] : expected.params) {
      if (!tensors.contains(name))
        throw ShapeError(path + ": missing tensor '" + name + "'");
      const auto& t = tensors.at(name);
      const Index r = t.at("shape").at(0).get<Index>();
      const Index c = t.at("shape").at(1).get<Index>();
      if (r != st.value.rows() || c != st.value.cols())
        throw ShapeError(path + ": tensor '" + name + "' has shape " +
                         std::to_string(r) + "x" + std::to_string(c) +
                         ", spec expects " + std::to_string(st.value.rows()) +
                         "x" + std::to_string(st.value.cols()));
      ParamState ps;
      Matrix m(r, c);
      m.data = t.at("data").get<std::vector<double>>();
      if (static_cast<Index>(m.data.size()) != r * c)
        throw ShapeError(path + ": tensor '" + name + "' data length mismatch");
      ps.value = Tensor::from_matrix(m, /*requires_grad=*/true);
      ps.m = t.at("m").get<std::vector<double>>();
      ps.v = t.at("v").get<std::vector<double>>();
      if (ps.m.size() != m.data.size() || ps.v.size() != m.data.size())
        throw ShapeError(path + ": tensor '" + name + "' moment length mismatch");
      out.params.emplace(name, std::move(ps));
    }
  } catch (const json::exception& e) {
    throw DataError(path + ": corrupted params file: " + e.what());
  }
  return out;
}

}  // namespace graphtune::nn
