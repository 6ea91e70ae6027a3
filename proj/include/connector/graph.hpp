#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "connector/matrix.hpp"
#include "connector/random.hpp"

namespace connector {

using NodeId = std::uint32_t;

struct Edge {
  NodeId src = 0;
  NodeId dst = 0;
  double weight = 1.0;
};

/// CSR slice for one node. `weights` is empty for unweighted graphs.
struct NeighborSlice {
  std::span<const NodeId> targets;
  std::span<const double> weights;

  std::size_t size() const { return targets.size(); }
  bool empty() const { return targets.empty(); }
  double weight(std::size_t i) const { return weights.empty() ? 1.0 : weights[i]; }
};

/// Homogeneous graph in CSR form with sorted neighbor lists.
///
/// Undirected graphs store both arc directions; a self-loop is stored once.
/// Topology is immutable after construction; features, labels and tokens
/// are attached by loaders.
class HomoGraph {
 public:
  HomoGraph() = default;

  std::size_t num_nodes() const { return num_nodes_; }
  std::size_t num_arcs() const { return targets_.size(); }
  /// Arcs for directed graphs; unordered pairs (self-loops once) for undirected ones.
  std::size_t num_edges() const;
  bool directed() const { return directed_; }
  bool weighted() const { return !weights_.empty(); }

  const std::vector<std::size_t>& offsets() const { return offsets_; }
  const std::vector<NodeId>& targets() const { return targets_; }
  const std::vector<double>& weights() const { return weights_; }

  std::size_t degree(NodeId u) const { return offsets_[u + 1] - offsets_[u]; }
  NeighborSlice neighbors(NodeId u) const;
  /// Binary search over the sorted neighbor list of u.
  bool has_arc(NodeId u, NodeId v) const;
  double arc_weight(std::size_t arc) const { return weights_.empty() ? 1.0 : weights_[arc]; }
  /// Re-enumerates stored arcs in CSR order.
  std::vector<Edge> arcs() const;

  const std::optional<Matrix>& features() const { return features_; }
  const std::optional<std::vector<std::uint32_t>>& labels() const { return labels_; }
  const std::vector<std::string>& label_names() const { return label_names_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::string token(NodeId u) const;

  void set_features(Matrix features);
  void set_labels(std::vector<std::uint32_t> labels, std::vector<std::string> names);
  void set_tokens(std::vector<std::string> tokens);

  friend HomoGraph build_graph(std::span<const Edge> edges, std::size_t num_nodes, bool directed,
                               bool weighted);

 private:
  std::size_t num_nodes_ = 0;
  bool directed_ = false;
  std::vector<std::size_t> offsets_{0};
  std::vector<NodeId> targets_;
  std::vector<double> weights_;
  std::optional<Matrix> features_;
  std::optional<std::vector<std::uint32_t>> labels_;
  std::vector<std::string> label_names_;
  std::vector<std::string> tokens_;
};

/// Builds a CSR graph. Arcs are sorted by (source, target); parallel edges kept.
/// With `weighted == false` the edge weights are ignored.
HomoGraph build_graph(std::span<const Edge> edges, std::size_t num_nodes, bool directed,
                      bool weighted = false);

/// Throws DataError if u is out of range.
NeighborSlice neighbors(const HomoGraph& g, NodeId u);

struct SignedEdge {
  NodeId src = 0;
  NodeId dst = 0;
  int sign = 1;
};

struct SignedGraph {
  HomoGraph base;
  std::vector<std::int8_t> signs;  // aligned with base.targets()

  std::size_t positive_arcs() const;
  std::size_t negative_arcs() const;
};

SignedGraph build_signed_graph(std::span<const SignedEdge> edges, std::size_t num_nodes,
                               bool directed);

struct HeteroGraph {
  HomoGraph base;
  std::vector<std::uint32_t> node_types;
  std::vector<std::string> type_names;
  std::vector<std::vector<NodeId>> nodes_of_type;  // sorted

  std::optional<std::uint32_t> type_id(const std::string& name) const;
};

HeteroGraph build_hetero_graph(HomoGraph base, std::vector<std::uint32_t> node_types,
                               std::vector<std::string> type_names);

struct Triple {
  std::uint32_t head = 0;
  std::uint32_t relation = 0;
  std::uint32_t tail = 0;
  friend bool operator==(const Triple&, const Triple&) = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const {
    return static_cast<std::size_t>(
        mix64((std::uint64_t{t.head} << 32) ^ (std::uint64_t{t.relation} << 16) ^ t.tail));
  }
};

struct KnowledgeGraph {
  std::vector<std::string> entities;
  std::vector<std::string> relations;
  std::unordered_map<std::string, std::uint32_t> entity_ids;
  std::unordered_map<std::string, std::uint32_t> relation_ids;
  std::vector<Triple> train;
  std::vector<Triple> valid;
  std::vector<Triple> test;
  std::unordered_set<Triple, TripleHash> known;

  std::size_t num_entities() const { return entities.size(); }
  std::size_t num_relations() const { return relations.size(); }
  bool is_known(const Triple& t) const { return known.contains(t); }
  /// Recomputes `known` as the union of the three splits; checks id bounds.
  void rebuild_known();
};

/// Vose alias table: O(n) construction, O(1) draws.
class AliasTable {
 public:
  AliasTable() = default;
  explicit AliasTable(std::span<const double> weights);

  std::size_t size() const { return prob_.size(); }
  const std::vector<double>& prob() const { return prob_; }
  const std::vector<std::uint32_t>& alias() const { return alias_; }

  std::size_t draw(Rng& rng) const;
  /// Distribution implied by (prob, alias); equals the normalized input weights.
  std::vector<double> distribution() const;

 private:
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
};

inline AliasTable alias_build(std::span<const double> weights) { return AliasTable(weights); }
inline std::size_t alias_draw(const AliasTable& t, Rng& rng) { return t.draw(rng); }

/// D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I. Undirected graphs only.
SparseMatrix normalized_adjacency(const HomoGraph& g);

}  // namespace connector
