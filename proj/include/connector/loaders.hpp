#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "connector/graph.hpp"

namespace connector {

enum class GraphKind { homogeneous, signed_graph, heterogeneous, knowledge };

GraphKind parse_graph_kind(const std::string& name);
std::string to_string(GraphKind kind);

/// Where a dataset lives on disk. Roles: edges, nodes, features, labels, train, valid, test.
struct DatasetSpec {
  GraphKind kind = GraphKind::homogeneous;
  std::map<std::string, std::filesystem::path> paths;
  bool directed = false;
  bool weighted = false;

  /// Throws UsageError when a role required by `kind` is missing.
  void validate() const;
  bool has(const std::string& role) const { return paths.contains(role); }
  const std::filesystem::path& path(const std::string& role) const;
};

HomoGraph load_edge_list(const std::filesystem::path& path, bool directed, bool weighted);

/// Signed edges are "src dst sign" with sign in {1, -1}; stored undirected.
SignedGraph load_signed_edge_list(const std::filesystem::path& path, bool directed = false);

/// Node file "token<TAB>type", edge file "src<TAB>dst"; edges are undirected.
HeteroGraph load_hetero(const std::filesystem::path& node_path,
                        const std::filesystem::path& edge_path);

KnowledgeGraph load_triples(const std::filesystem::path& train_path,
                            const std::filesystem::path& valid_path,
                            const std::filesystem::path& test_path);

struct FeatureLoadResult {
  HomoGraph graph;
  std::size_t missing_features = 0;
};

/// Either path may be empty to skip that attachment. Nodes without a feature line get a
/// zero row; every node must have a label when labels are given.
FeatureLoadResult load_features_labels(const std::filesystem::path& features_path,
                                       const std::filesystem::path& labels_path, HomoGraph g);

struct LabelTable {
  std::vector<std::string> tokens;
  std::vector<std::uint32_t> labels;  // aligned with tokens
  std::vector<std::string> names;     // class id -> name, first-appearance order
};

/// Standalone "token class" file, independent of any graph. Duplicate tokens are a DataError.
LabelTable load_label_table(const std::filesystem::path& path);

/// Splits a line on tabs and runs of spaces. Returns no fields for blank and "#" lines.
std::vector<std::string> split_fields(std::string_view line);

}  // namespace connector
