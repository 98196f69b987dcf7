#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "graphtune/graph.hpp"

namespace graphtune {

struct ContentCitesMeta {
  std::vector<std::string> node_ids;  // index -> original id string
  std::unordered_map<std::string, Index> id_to_index;
  Index raw_cites_lines = 0;   // nonblank lines in the cites file
  Index unique_pairs = 0;      // symmetrized unique undirected pairs
  Index skipped_unknown = 0;   // cites lines referencing unknown ids
};

struct ContentCitesResult {
  NodeDataset dataset;
  ContentCitesMeta meta;
};

// Plain-text citation network: one node per content line
// (id, d binary word features, class string), one edge per cites line.
ContentCitesResult load_content_cites(const std::string& content_path,
                                      const std::string& cites_path);

// Standard TU benchmark layout: <name>_A.txt, <name>_graph_indicator.txt,
// <name>_graph_labels.txt, optional <name>_node_labels.txt.
GraphDataset load_tu_dataset(const std::string& dir_path,
                             const std::string& name);

// Native JSON dataset format (see README).
NodeDataset load_json_node_dataset(const std::string& path);
void save_json_node_dataset(const NodeDataset& ds, const std::string& path);

std::string dataset_digest(const NodeDataset& ds);
std::string dataset_digest(const GraphDataset& ds);

}  // namespace graphtune
