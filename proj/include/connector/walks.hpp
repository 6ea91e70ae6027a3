#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "connector/graph.hpp"

namespace connector {

struct WalkConfig {
  std::size_t walks_per_node = 10;
  std::size_t walk_length = 80;  // nodes per walk
  double p = 1.0;                // return parameter
  double q = 1.0;                // in-out parameter
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool deterministic = false;

  void validate() const;
};

enum class TokenSpace { graph_nodes, context_nodes };

struct WalkCorpus {
  std::vector<std::vector<NodeId>> walks;
  TokenSpace space = TokenSpace::graph_nodes;

  std::size_t num_tokens() const;
};

/// Exact next-step distribution, one entry per outgoing arc of the current node
/// (parallel arcs appear separately).
struct Transition {
  std::vector<NodeId> targets;
  std::vector<double> probs;
};

Transition first_order_transition(const HomoGraph& g, NodeId current);

/// Node2vec bias: w(v,x) * (1/p if x == prev, 1 if prev->x is an arc, 1/q otherwise).
Transition second_order_transition(const HomoGraph& g, NodeId prev, NodeId current, double p,
                                   double q);

/// Arcs of `current` whose endpoint has type `next_type`, uniformly weighted.
Transition typed_transition(const HeteroGraph& hg, NodeId current, std::uint32_t next_type);

WalkCorpus uniform_walks(const HomoGraph& g, const WalkConfig& cfg);
WalkCorpus node2vec_walks(const HomoGraph& g, const WalkConfig& cfg);

/// `metapath` must start and end with the same type; it is cycled with period size()-1.
WalkCorpus metapath_walks(const HeteroGraph& hg, std::span<const std::uint32_t> metapath,
                          const WalkConfig& cfg);

/// Multi-layer structural similarity context.
///
/// distance[k](u, v) holds f_k(u, v); +inf marks pairs undefined at layer k
/// (exactly one of the two rings at distance k is empty, or a degree-0 node is
/// compared against a non-zero degree). Two empty rings contribute 0.
struct StrucContext {
  std::size_t num_nodes = 0;
  std::size_t k_max = 0;
  std::vector<Matrix> distance;
  std::vector<double> mean_weight;                  // per layer, over defined pairs
  std::vector<std::vector<std::uint32_t>> gamma;    // [layer][node]
  std::vector<std::vector<std::vector<NodeId>>> partners;  // [layer][node]
  std::vector<std::vector<AliasTable>> in_layer;    // [layer][node], aligned with partners

  std::size_t num_layers() const { return distance.size(); }
  double weight(std::size_t k, NodeId u, NodeId v) const;
  bool has_layer(std::size_t k, NodeId u) const {
    return k < num_layers() && !partners[k][u].empty();
  }
  /// ln(gamma + e) / (ln(gamma + e) + 1)
  double up_probability(std::size_t k, NodeId u) const;
  Transition in_layer_transition(std::size_t k, NodeId u) const;
};

/// DTW between two sorted degree sequences with cost max(a,b)/min(a,b) - 1.
double degree_sequence_dtw(std::span<const std::size_t> a, std::span<const std::size_t> b);

StrucContext struc2vec_context(const HomoGraph& g, long k_max, std::size_t threads = 1);

WalkCorpus struc2vec_walks(const StrucContext& ctx, const WalkConfig& cfg, double stay_prob = 0.7);

}  // namespace connector
