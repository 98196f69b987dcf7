#include "graphtune/dataset_io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace graphtune {

namespace {

using json = nlohmann::json;

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  return in;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

// TU files are comma separated, sometimes with stray spaces.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isspace(c);
  });
}

Index parse_index(const std::string& s, const std::string& where, Index line_no) {
  try {
    return static_cast<Index>(std::stoll(s));
  } catch (const std::exception&) {
    throw DataError(where + ": malformed integer '" + s + "' at line " +
                    std::to_string(line_no));
  }
}

}  // namespace

ContentCitesResult load_content_cites(const std::string& content_path,
                                      const std::string& cites_path) {
  ContentCitesResult result;
  ContentCitesMeta& meta = result.meta;
  NodeDataset& ds = result.dataset;

  std::vector<std::vector<double>> feats;
  std::vector<std::string> class_strings;
  Index feat_dim = -1;

  {
    std::ifstream in = open_or_throw(content_path);
    std::string line;
    Index line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (is_blank(line)) continue;
      auto toks = split_ws(line);
      if (toks.size() < 3)
        throw DataError(content_path + ": line " + std::to_string(line_no) +
                        " has fewer than 3 fields");
      if (feat_dim < 0) feat_dim = static_cast<Index>(toks.size()) - 2;
      if (static_cast<Index>(toks.size()) - 2 != feat_dim)
        throw DataError(content_path + ": line " + std::to_string(line_no) +
                        " has " + std::to_string(toks.size() - 2) +
                        " features, expected " + std::to_string(feat_dim));
      const std::string& id = toks.front();
      if (meta.id_to_index.count(id))
        throw DataError(content_path + ": duplicate node id '" + id +
                        "' at line " + std::to_string(line_no));
      meta.id_to_index.emplace(id, static_cast<Index>(meta.node_ids.size()));
      meta.node_ids.push_back(id);
      std::vector<double> row(static_cast<std::size_t>(feat_dim));
      for (Index j = 0; j < feat_dim; ++j) {
        try {
          row[static_cast<std::size_t>(j)] = std::stod(toks[static_cast<std::size_t>(j) + 1]);
        } catch (const std::exception&) {
          throw DataError(content_path + ": malformed feature at line " +
                          std::to_string(line_no));
        }
      }
      feats.push_back(std::move(row));
      class_strings.push_back(toks.back());
    }
  }

  const Index n = static_cast<Index>(meta.node_ids.size());
  if (n == 0) throw DataError(content_path + ": no nodes");

  // class strings -> ids, alphabetical for determinism across file orderings
  std::vector<std::string> classes(class_strings);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  std::map<std::string, Index> class_id;
  for (std::size_t i = 0; i < classes.size(); ++i)
    class_id[classes[i]] = static_cast<Index>(i);

  std::vector<std::pair<Index, Index>> edges;
  {
    std::ifstream in = open_or_throw(cites_path);
    std::string line;
    Index line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (is_blank(line)) continue;
      ++meta.raw_cites_lines;
      auto toks = split_ws(line);
      if (toks.size() != 2)
        throw DataError(cites_path + ": line " + std::to_string(line_no) +
                        " does not have 2 ids");
      auto a = meta.id_to_index.find(toks[0]);
      auto b = meta.id_to_index.find(toks[1]);
      if (a == meta.id_to_index.end() || b == meta.id_to_index.end()) {
        ++meta.skipped_unknown;
        continue;
      }
      edges.emplace_back(a->second, b->second);
    }
  }

  ds.graph = build_graph(n, edges, /*undirected=*/true);
  meta.unique_pairs = ds.graph.num_edge_pairs();

  ds.features = Matrix(n, feat_dim);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < feat_dim; ++j)
      ds.features(i, j) = feats[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  ds.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    ds.labels[static_cast<std::size_t>(i)] = class_id[class_strings[static_cast<std::size_t>(i)]];
  ds.num_classes = static_cast<Index>(classes.size());
  return result;
}

GraphDataset load_tu_dataset(const std::string& dir_path,
                             const std::string& name) {
  const std::string prefix = dir_path + "/" + name + "_";

  // graph_indicator: node -> 1-indexed graph id
  std::vector<Index> graph_of;
  {
    std::ifstream in = open_or_throw(prefix + "graph_indicator.txt");
    std::string line;
    Index line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (is_blank(line)) continue;
      graph_of.push_back(parse_index(line, prefix + "graph_indicator.txt", line_no) - 1);
    }
  }
  const Index total_nodes = static_cast<Index>(graph_of.size());
  Index num_graphs = 0;
  for (Index g : graph_of) {
    if (g < 0) throw DataError(name + ": graph indicator below 1");
    num_graphs = std::max(num_graphs, g + 1);
  }

  // per-graph local node numbering (TU node ids are 1-indexed and global)
  std::vector<Index> local_id(static_cast<std::size_t>(total_nodes));
  std::vector<Index> graph_size(static_cast<std::size_t>(num_graphs), 0);
  for (Index i = 0; i < total_nodes; ++i) {
    Index g = graph_of[static_cast<std::size_t>(i)];
    local_id[static_cast<std::size_t>(i)] = graph_size[static_cast<std::size_t>(g)]++;
  }

  std::vector<std::vector<std::pair<Index, Index>>> per_graph_edges(
      static_cast<std::size_t>(num_graphs));
  {
    std::ifstream in = open_or_throw(prefix + "A.txt");
    std::string line;
    Index line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (is_blank(line)) continue;
      auto toks = split_csv(line);
      if (toks.size() != 2)
        throw DataError(prefix + "A.txt: line " + std::to_string(line_no) +
                        " is not an 'i, j' pair");
      Index u = parse_index(toks[0], prefix + "A.txt", line_no) - 1;
      Index v = parse_index(toks[1], prefix + "A.txt", line_no) - 1;
      if (u < 0 || u >= total_nodes || v < 0 || v >= total_nodes)
        throw DataError(prefix + "A.txt: node id out of range at line " +
                        std::to_string(line_no));
      if (graph_of[static_cast<std::size_t>(u)] != graph_of[static_cast<std::size_t>(v)])
        throw DataError(prefix + "A.txt: edge crosses graph boundary at line " +
                        std::to_string(line_no));
      Index g = graph_of[static_cast<std::size_t>(u)];
      per_graph_edges[static_cast<std::size_t>(g)].emplace_back(
          local_id[static_cast<std::size_t>(u)], local_id[static_cast<std::size_t>(v)]);
    }
  }

  // graph labels, remapped to 0-based contiguous ids in ascending value order
  std::vector<Index> raw_labels;
  {
    std::ifstream in = open_or_throw(prefix + "graph_labels.txt");
    std::string line;
    Index line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (is_blank(line)) continue;
      raw_labels.push_back(parse_index(line, prefix + "graph_labels.txt", line_no));
    }
  }
  if (static_cast<Index>(raw_labels.size()) != num_graphs)
    throw DataError(name + ": graph label count " +
                    std::to_string(raw_labels.size()) + " != graph count " +
                    std::to_string(num_graphs));
  std::vector<Index> label_values(raw_labels);
  std::sort(label_values.begin(), label_values.end());
  label_values.erase(std::unique(label_values.begin(), label_values.end()),
                     label_values.end());
  std::map<Index, Index> label_map;
  for (std::size_t i = 0; i < label_values.size(); ++i)
    label_map[label_values[i]] = static_cast<Index>(i);

  // optional node labels -> one-hot node features
  std::vector<Index> node_labels;
  bool have_node_labels = false;
  {
    std::ifstream in(prefix + "node_labels.txt");
    if (in) {
      have_node_labels = true;
      std::string line;
      Index line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line)) continue;
        node_labels.push_back(parse_index(line, prefix + "node_labels.txt", line_no));
      }
      if (static_cast<Index>(node_labels.size()) != total_nodes)
        throw DataError(name + ": node label count mismatch");
    }
  }
  std::map<Index, Index> node_label_map;
  if (have_node_labels) {
    std::vector<Index> values(node_labels);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (std::size_t i = 0; i < values.size(); ++i)
      node_label_map[values[i]] = static_cast<Index>(i);
  }
  const Index feat_dim = have_node_labels ? static_cast<Index>(node_label_map.size()) : 0;

  GraphDataset ds;
  ds.name = name;
  ds.num_classes = static_cast<Index>(label_values.size());
  ds.labels.resize(static_cast<std::size_t>(num_graphs));
  for (Index g = 0; g < num_graphs; ++g)
    ds.labels[static_cast<std::size_t>(g)] = label_map[raw_labels[static_cast<std::size_t>(g)]];
  ds.graphs.reserve(static_cast<std::size_t>(num_graphs));
  ds.node_features.reserve(static_cast<std::size_t>(num_graphs));
  for (Index g = 0; g < num_graphs; ++g) {
    ds.graphs.push_back(build_graph(graph_size[static_cast<std::size_t>(g)],
                                    per_graph_edges[static_cast<std::size_t>(g)],
                                    /*undirected=*/true));
    ds.node_features.emplace_back(graph_size[static_cast<std::size_t>(g)], feat_dim);
  }
  if (have_node_labels) {
    for (Index i = 0; i < total_nodes; ++i) {
      Index g = graph_of[static_cast<std::size_t>(i)];
      ds.node_features[static_cast<std::size_t>(g)](
          local_id[static_cast<std::size_t>(i)],
          node_label_map[node_labels[static_cast<std::size_t>(i)]]) = 1.0;
    }
  }
  return ds;
}

NodeDataset load_json_node_dataset(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path + ": invalid JSON: " + e.what());
  }
  try {
    NodeDataset ds;
    ds.name = j.value("name", std::string("dataset"));
    const Index n = j.at("num_nodes").get<Index>();
    std::vector<std::pair<Index, Index>> edges;
    for (const auto& e : j.at("edges"))
      edges.emplace_back(e.at(0).get<Index>(), e.at(1).get<Index>());
    ds.graph = build_graph(n, edges, /*undirected=*/true);
    const auto& feats = j.at("features");
    if (static_cast<Index>(feats.size()) != n)
      throw DataError(path + ": features row count != num_nodes");
    const Index d = feats.empty() ? 0 : static_cast<Index>(feats[0].size());
    ds.features = Matrix(n, d);
    for (Index i = 0; i < n; ++i) {
      const auto& row = feats[static_cast<std::size_t>(i)];
      if (static_cast<Index>(row.size()) != d)
        throw DataError(path + ": ragged feature rows");
      for (Index c = 0; c < d; ++c)
        ds.features(i, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    ds.labels = j.at("labels").get<std::vector<Index>>();
    if (static_cast<Index>(ds.labels.size()) != n)
      throw DataError(path + ": labels length != num_nodes");
    ds.num_classes = j.at("num_classes").get<Index>();
    for (Index y : ds.labels)
      if (y < 0 || y >= ds.num_classes)
        throw DataError(path + ": label out of range");
    if (j.contains("masks")) {
      SplitMasks m;
      m.train.assign(static_cast<std::size_t>(n), 0);
      m.val.assign(static_cast<std::size_t>(n), 0);
      m.test.assign(static_cast<std::size_t>(n), 0);
      auto fill = [&](const char* key, std::vector<std::uint8_t>& mask) {
        if (!j["masks"].contains(key)) return;
        for (const auto& idx : j["masks"][key]) {
          Index i = idx.get<Index>();
          if (i < 0 || i >= n) throw DataError(path + ": mask index out of range");
          mask[static_cast<std::size_t>(i)] = 1;
        }
      };
      fill("train", m.train);
      fill("val", m.val);
      fill("test", m.test);
      ds.masks = std::move(m);
    }
    return ds;
  } catch (const json::exception& e) {
    throw DataError(path + ": schema error: " + e.what());
  }
}

void save_json_node_dataset(const NodeDataset& ds, const std::string& path) {
  json j;
  j["name"] = ds.name;
  j["num_nodes"] = ds.graph.num_nodes;
  json edges = json::array();
  for (const auto& [u, v] : edge_list(ds.graph)) edges.push_back({u, v});
  j["edges"] = std::move(edges);
  json feats = json::array();
  for (Index i = 0; i < ds.features.rows; ++i) {
    json row = json::array();
    for (Index c = 0; c < ds.features.cols; ++c) row.push_back(ds.features(i, c));
    feats.push_back(std::move(row));
  }
  j["features"] = std::move(feats);
  j["labels"] = ds.labels;
  j["num_classes"] = ds.num_classes;
  if (ds.masks) {
    auto indices = [](const std::vector<std::uint8_t>& mask) {
      std::vector<Index> out;
      for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) out.push_back(static_cast<Index>(i));
      return out;
    };
    j["masks"] = {{"train", indices(ds.masks->train)},
                  {"val", indices(ds.masks->val)},
                  {"test", indices(ds.masks->test)}};
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  out << j.dump(2) << "\n";
}

namespace {

std::uint64_t digest_graph(const Graph& g, std::uint64_t h) {
  h = fnv1a64(&g.num_nodes, sizeof(g.num_nodes), h);
  h = fnv1a64(g.row_offsets.data(), g.row_offsets.size() * sizeof(Index), h);
  h = fnv1a64(g.col_indices.data(), g.col_indices.size() * sizeof(Index), h);
  return h;
}

}  // namespace

std::string dataset_digest(const NodeDataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;
  h = digest_graph(ds.graph, h);
  h = fnv1a64(ds.features.data.data(), ds.features.data.size() * sizeof(double), h);
  h = fnv1a64(ds.labels.data(), ds.labels.size() * sizeof(Index), h);
  h = fnv1a64(&ds.num_classes, sizeof(ds.num_classes), h);
  return hex64(h);
}

std::string dataset_digest(const GraphDataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& g : ds.graphs) h = digest_graph(g, h);
  for (const auto& f : ds.node_features)
    h = fnv1a64(f.data.data(), f.data.size() * sizeof(double), h);
  h = fnv1a64(ds.labels.data(), ds.labels.size() * sizeof(Index), h);
  h = fnv1a64(&ds.num_classes, sizeof(ds.num_classes), h);
  return hex64(h);
}

}  // namespace graphtune
