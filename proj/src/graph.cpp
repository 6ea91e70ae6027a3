#include "connector/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "connector/errors.hpp"

namespace connector {

namespace {

struct Arc {
  NodeId src;
  NodeId dst;
  double weight;
  std::size_t origin;  // index of the input edge, used to carry payloads
};

void check_edge(const Edge& e, std::size_t num_nodes, bool weighted) {
  if (e.src >= num_nodes || e.dst >= num_nodes)
    throw DataError("edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                    ") has an endpoint >= num_nodes " + std::to_string(num_nodes));
  if (weighted && !(e.weight >= 0.0))
    throw DataError("edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                    ") has a negative or NaN weight");
}

std::vector<Arc> expand_arcs(std::span<const Edge> edges, bool directed) {
  std::vector<Arc> arcs;
  arcs.reserve(directed ? edges.size() : 2 * edges.size());
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const Edge& e = edges[i];
    arcs.push_back({e.src, e.dst, e.weight, i});
    if (!directed && e.src != e.dst) arcs.push_back({e.dst, e.src, e.weight, i});
  }
  std::stable_sort(arcs.begin(), arcs.end(), [](const Arc& a, const Arc& b) {
    return a.src != b.src ? a.src < b.src : a.dst < b.dst;
  });
  return arcs;
}

}  // namespace

std::size_t HomoGraph::num_edges() const {
  if (directed_) return num_arcs();
  std::size_t loops = 0;
  for (std::size_t u = 0; u < num_nodes_; ++u)
    for (std::size_t k = offsets_[u]; k < offsets_[u + 1]; ++k)
      if (targets_[k] == u) ++loops;
  return (num_arcs() - loops) / 2 + loops;
}

NeighborSlice HomoGraph::neighbors(NodeId u) const {
  const std::size_t b = offsets_[u];
  const std::size_t e = offsets_[u + 1];
  NeighborSlice s;
  s.targets = std::span<const NodeId>(targets_).subspan(b, e - b);
  if (!weights_.empty()) s.weights = std::span<const double>(weights_).subspan(b, e - b);
  return s;
}

bool HomoGraph::has_arc(NodeId u, NodeId v) const {
  auto first = targets_.begin() + static_cast<std::ptrdiff_t>(offsets_[u]);
  auto last = targets_.begin() + static_cast<std::ptrdiff_t>(offsets_[u + 1]);
  return std::binary_search(first, last, v);
}

std::vector<Edge> HomoGraph::arcs() const {
  std::vector<Edge> out;
  out.reserve(num_arcs());
  for (NodeId u = 0; u < num_nodes_; ++u)
    for (std::size_t k = offsets_[u]; k < offsets_[u + 1]; ++k)
      out.push_back({u, targets_[k], arc_weight(k)});
  return out;
}

std::string HomoGraph::token(NodeId u) const {
  return u < tokens_.size() ? tokens_[u] : std::to_string(u);
}

void HomoGraph::set_features(Matrix features) {
  if (features.rows() != num_nodes_)
    throw DataError("feature matrix has " + std::to_string(features.rows()) + " rows, graph has " +
                    std::to_string(num_nodes_) + " nodes");
  features_ = std::move(features);
}

void HomoGraph::set_labels(std::vector<std::uint32_t> labels, std::vector<std::string> names) {
  if (labels.size() != num_nodes_) throw DataError("label array length differs from node count");
  for (auto l : labels)
    if (l >= names.size()) throw DataError("label id without a class name");
  labels_ = std::move(labels);
  label_names_ = std::move(names);
}

void HomoGraph::set_tokens(std::vector<std::string> tokens) {
  if (tokens.size() != num_nodes_) throw DataError("token table length differs from node count");
  tokens_ = std::move(tokens);
}

HomoGraph build_graph(std::span<const Edge> edges, std::size_t num_nodes, bool directed,
                      bool weighted) {
  for (const Edge& e : edges) check_edge(e, num_nodes, weighted);
  const auto arcs = expand_arcs(edges, directed);

  HomoGraph g;
  g.num_nodes_ = num_nodes;
  g.directed_ = directed;
  g.offsets_.assign(num_nodes + 1, 0);
  g.targets_.reserve(arcs.size());
  if (weighted) g.weights_.reserve(arcs.size());
  for (const Arc& a : arcs) {
    ++g.offsets_[a.src + 1];
    g.targets_.push_back(a.dst);
    if (weighted) g.weights_.push_back(a.weight);
  }
  std::partial_sum(g.offsets_.begin(), g.offsets_.end(), g.offsets_.begin());
  return g;
}

NeighborSlice neighbors(const HomoGraph& g, NodeId u) {
  if (u >= g.num_nodes())
    throw DataError("node " + std::to_string(u) + " out of range (num_nodes " +
                    std::to_string(g.num_nodes()) + ")");
  return g.neighbors(u);
}

std::size_t SignedGraph::positive_arcs() const {
  return static_cast<std::size_t>(std::count(signs.begin(), signs.end(), std::int8_t{1}));
}

std::size_t SignedGraph::negative_arcs() const {
  return static_cast<std::size_t>(std::count(signs.begin(), signs.end(), std::int8_t{-1}));
}

SignedGraph build_signed_graph(std::span<const SignedEdge> edges, std::size_t num_nodes,
                               bool directed) {
  std::vector<Edge> plain;
  plain.reserve(edges.size());
  for (const auto& e : edges) {
    if (e.sign != 1 && e.sign != -1)
      throw DataError("sign must be 1 or -1, got " + std::to_string(e.sign));
    plain.push_back({e.src, e.dst, 1.0});
  }
  for (const Edge& e : plain) check_edge(e, num_nodes, false);
  const auto arcs = expand_arcs(plain, directed);

  SignedGraph sg;
  sg.base = build_graph(plain, num_nodes, directed, false);
  sg.signs.reserve(arcs.size());
  // expand_arcs is deterministic, so its order matches the CSR built above.
  for (const Arc& a : arcs) sg.signs.push_back(static_cast<std::int8_t>(edges[a.origin].sign));
  return sg;
}

std::optional<std::uint32_t> HeteroGraph::type_id(const std::string& name) const {
  for (std::uint32_t i = 0; i < type_names.size(); ++i)
    if (type_names[i] == name) return i;
  return std::nullopt;
}

HeteroGraph build_hetero_graph(HomoGraph base, std::vector<std::uint32_t> node_types,
                               std::vector<std::string> type_names) {
  if (node_types.size() != base.num_nodes())
    throw DataError("every node needs exactly one type");
  HeteroGraph hg;
  hg.nodes_of_type.resize(type_names.size());
  for (NodeId u = 0; u < node_types.size(); ++u) {
    if (node_types[u] >= type_names.size()) throw DataError("node type id out of range");
    hg.nodes_of_type[node_types[u]].push_back(u);
  }
  hg.base = std::move(base);
  hg.node_types = std::move(node_types);
  hg.type_names = std::move(type_names);
  return hg;
}

void KnowledgeGraph::rebuild_known() {
  known.clear();
  for (const auto* split : {&train, &valid, &test}) {
    for (const Triple& t : *split) {
      if (t.head >= entities.size() || t.tail >= entities.size() ||
          t.relation >= relations.size())
        throw DataError("triple id outside vocabulary bounds");
      known.insert(t);
    }
  }
}

AliasTable::AliasTable(std::span<const double> weights) {
  const std::size_t n = weights.size();
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DataError("alias weights must be finite and >= 0");
    total += w;
  }
  if (n == 0 || total <= 0.0) throw DataError("alias weights must contain a positive entry");

  prob_.assign(n, 0.0);
  alias_.resize(n);
  std::iota(alias_.begin(), alias_.end(), 0U);
  std::vector<double> scaled(n);
  std::vector<std::uint32_t> small;
  std::vector<std::uint32_t> large;
  for (std::size_t i = 0; i < n; ++i) {
    scaled[i] = weights[i] * static_cast<double>(n) / total;
    (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));
  }
  while (!small.empty() && !large.empty()) {
    const auto s = small.back();
    small.pop_back();
    const auto l = large.back();
    prob_[s] = scaled[s];
    alias_[s] = l;
    scaled[l] = (scaled[l] + scaled[s]) - 1.0;
    if (scaled[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  for (auto i : large) prob_[i] = 1.0;
  // Leftovers in `small` are rounding residue of mass ~1.
  for (auto i : small) prob_[i] = 1.0;
}

std::size_t AliasTable::draw(Rng& rng) const {
  const std::size_t column = uniform_index(rng, prob_.size());
  return uniform01(rng) < prob_[column] ? column : alias_[column];
}

std::vector<double> AliasTable::distribution() const {
  const double n = static_cast<double>(prob_.size());
  std::vector<double> p(prob_.size(), 0.0);
  for (std::size_t i = 0; i < prob_.size(); ++i) {
    p[i] += prob_[i] / n;
    p[alias_[i]] += (1.0 - prob_[i]) / n;
  }
  return p;
}

SparseMatrix normalized_adjacency(const HomoGraph& g) {
  if (g.directed()) throw UsageError("normalized_adjacency requires an undirected graph");
  const std::size_t n = g.num_nodes();
  std::vector<double> deg(n, 1.0);
  for (NodeId u = 0; u < n; ++u)
    for (std::size_t k = g.offsets()[u]; k < g.offsets()[u + 1]; ++k) deg[u] += g.arc_weight(k);

  SparseMatrix s;
  s.rows = s.cols = n;
  s.offsets.assign(n + 1, 0);
  for (NodeId u = 0; u < n; ++u) {
    // Merge the self-loop term into the sorted neighbor list.
    bool self_done = false;
    const double du = 1.0 / std::sqrt(deg[u]);
    auto emit = [&](NodeId v, double w) {
      if (!s.indices.empty() && s.offsets[u] < s.indices.size() && s.indices.back() == v) {
        s.values.back() += w * du / std::sqrt(deg[v]);
      } else {
        s.indices.push_back(v);
        s.values.push_back(w * du / std::sqrt(deg[v]));
      }
    };
    for (std::size_t k = g.offsets()[u]; k < g.offsets()[u + 1]; ++k) {
      const NodeId v = g.targets()[k];
      if (!self_done && v >= u) {
        emit(u, 1.0);
        self_done = true;
      }
      emit(v, g.arc_weight(k));
    }
    if (!self_done) emit(u, 1.0);
    s.offsets[u + 1] = s.indices.size();
  }
  return s;
}

}  // namespace connector
