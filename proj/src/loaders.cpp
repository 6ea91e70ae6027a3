#include "connector/loaders.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <unordered_map>

#include "connector/errors.hpp"

namespace connector {

namespace {

class LineReader {
 public:
  explicit LineReader(const std::filesystem::path& path) : path_(path), in_(path) {
    if (!in_) throw DataError("cannot open " + path.string());
  }

  /// Next non-blank, non-comment line split into fields.
  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      fields = split_fields(line);
      if (!fields.empty()) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(path_.string() + ":" + std::to_string(line_no_) + ": " + what);
  }

  std::size_t line_no() const { return line_no_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t line_no_ = 0;
};

class TokenTable {
 public:
  std::uint32_t intern(const std::string& token) {
    auto [it, inserted] = ids_.try_emplace(token, static_cast<std::uint32_t>(tokens_.size()));
    if (inserted) tokens_.push_back(token);
    return it->second;
  }
  const std::uint32_t* find(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return tokens_.size(); }
  std::vector<std::string>& tokens() { return tokens_; }
  std::unordered_map<std::string, std::uint32_t>& ids() { return ids_; }

 private:
  std::unordered_map<std::string, std::uint32_t> ids_;
  std::vector<std::string> tokens_;
};

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

void collect_triples(const std::filesystem::path& path, TokenTable& ents,
                     TokenTable& rels, std::vector<Triple>& out) {
  LineReader reader(path);
  std::vector<std::string> f;
  while (reader.next(f)) {
    if (f.size() != 3)
      reader.fail("expected 3 fields (head relation tail), got " + std::to_string(f.size()));
    const auto h = ents.intern(f[0]);
    const auto r = rels.intern(f[1]);
    const auto t = ents.intern(f[2]);
    out.push_back({h, r, t});
  }
}

}  // namespace

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> fields;
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  if (i == line.size() || line[i] == '#') return fields;
  while (i < line.size()) {
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    fields.emplace_back(line.substr(i, j - i));
    while (j < line.size() && (line[j] == ' ' || line[j] == '\t')) ++j;
    i = j;
  }
  return fields;
}

GraphKind parse_graph_kind(const std::string& name) {
  if (name == "homogeneous") return GraphKind::homogeneous;
  if (name == "signed") return GraphKind::signed_graph;
  if (name == "heterogeneous") return GraphKind::heterogeneous;
  if (name == "knowledge") return GraphKind::knowledge;
  throw UsageError("unknown graph kind '" + name +
                   "' (expected homogeneous, signed, heterogeneous or knowledge)");
}

std::string to_string(GraphKind kind) {
  switch (kind) {
    case GraphKind::homogeneous: return "homogeneous";
    case GraphKind::signed_graph: return "signed";
    case GraphKind::heterogeneous: return "heterogeneous";
    case GraphKind::knowledge: return "knowledge";
  }
  return "?";
}

void DatasetSpec::validate() const {
  std::vector<std::string> required;
  switch (kind) {
    case GraphKind::homogeneous:
    case GraphKind::signed_graph: required = {"edges"}; break;
    case GraphKind::heterogeneous: required = {"nodes", "edges"}; break;
    case GraphKind::knowledge: required = {"train", "valid", "test"}; break;
  }
  for (const auto& role : required)
    if (!has(role))
      throw UsageError("dataset of kind " + to_string(kind) + " needs a '" + role + "' path");
}

const std::filesystem::path& DatasetSpec::path(const std::string& role) const {
  auto it = paths.find(role);
  if (it == paths.end()) throw UsageError("dataset has no '" + role + "' path");
  return it->second;
}

HomoGraph load_edge_list(const std::filesystem::path& path, bool directed, bool weighted) {
  LineReader reader(path);
  TokenTable nodes;
  std::vector<Edge> edges;
  std::vector<std::string> f;
  while (reader.next(f)) {
    const std::size_t want = weighted ? 3 : 2;
    if (weighted && f.size() == 2) reader.fail("weight field missing");
    if (f.size() != want)
      reader.fail("expected " + std::to_string(want) + " fields, got " + std::to_string(f.size()));
    Edge e;
    e.src = nodes.intern(f[0]);
    e.dst = nodes.intern(f[1]);
    if (weighted) {
      if (!parse_double(f[2], e.weight)) reader.fail("bad weight '" + f[2] + "'");
      if (!(e.weight >= 0.0)) reader.fail("negative weight '" + f[2] + "'");
    }
    edges.push_back(e);
  }
  if (nodes.size() == 0) throw DataError(path.string() + ": no edges (empty graph)");
  HomoGraph g = build_graph(edges, nodes.size(), directed, weighted);
  g.set_tokens(std::move(nodes.tokens()));
  return g;
}

SignedGraph load_signed_edge_list(const std::filesystem::path& path, bool directed) {
  LineReader reader(path);
  TokenTable nodes;
  std::vector<SignedEdge> edges;
  std::vector<std::string> f;
  while (reader.next(f)) {
    if (f.size() != 3)
      reader.fail("expected 3 fields (src dst sign), got " + std::to_string(f.size()));
    int sign = 0;
    if (f[2] == "1" || f[2] == "+1")
      sign = 1;
    else if (f[2] == "-1")
      sign = -1;
    else
      reader.fail("sign must be 1 or -1, got '" + f[2] + "'");
    const auto s = nodes.intern(f[0]);
    const auto d = nodes.intern(f[1]);
    edges.push_back({s, d, sign});
  }
  if (nodes.size() == 0) throw DataError(path.string() + ": no edges (empty graph)");
  SignedGraph sg = build_signed_graph(edges, nodes.size(), directed);
  sg.base.set_tokens(std::move(nodes.tokens()));
  return sg;
}

HeteroGraph load_hetero(const std::filesystem::path& node_path,
                        const std::filesystem::path& edge_path) {
  TokenTable nodes;
  TokenTable types;
  std::vector<std::uint32_t> node_types;
  {
    LineReader reader(node_path);
    std::vector<std::string> f;
    while (reader.next(f)) {
      if (f.size() != 2)
        reader.fail("expected 2 fields (token type), got " + std::to_string(f.size()));
      const auto type = types.intern(f[1]);
      if (const auto* id = nodes.find(f[0])) {
        if (node_types[*id] != type)
          reader.fail("node '" + f[0] + "' declared with conflicting types '" +
                      types.tokens()[node_types[*id]] + "' and '" + f[1] + "'");
        continue;
      }
      nodes.intern(f[0]);
      node_types.push_back(type);
    }
  }
  if (nodes.size() == 0) throw DataError(node_path.string() + ": no nodes");

  std::vector<Edge> edges;
  {
    LineReader reader(edge_path);
    std::vector<std::string> f;
    while (reader.next(f)) {
      if (f.size() != 2)
        reader.fail("expected 2 fields (src dst), got " + std::to_string(f.size()));
      const auto* s = nodes.find(f[0]);
      if (!s) reader.fail("edge endpoint '" + f[0] + "' is not in the node file");
      const auto* d = nodes.find(f[1]);
      if (!d) reader.fail("edge endpoint '" + f[1] + "' is not in the node file");
      edges.push_back({*s, *d, 1.0});
    }
  }
  HomoGraph base = build_graph(edges, nodes.size(), false, false);
  base.set_tokens(std::move(nodes.tokens()));
  return build_hetero_graph(std::move(base), std::move(node_types), std::move(types.tokens()));
}

KnowledgeGraph load_triples(const std::filesystem::path& train_path,
                            const std::filesystem::path& valid_path,
                            const std::filesystem::path& test_path) {
  TokenTable ents;
  TokenTable rels;
  KnowledgeGraph kg;
  collect_triples(train_path, ents, rels, kg.train);
  collect_triples(valid_path, ents, rels, kg.valid);
  collect_triples(test_path, ents, rels, kg.test);
  kg.entities = std::move(ents.tokens());
  kg.entity_ids = std::move(ents.ids());
  kg.relations = std::move(rels.tokens());
  kg.relation_ids = std::move(rels.ids());
  kg.rebuild_known();
  return kg;
}

FeatureLoadResult load_features_labels(const std::filesystem::path& features_path,
                                       const std::filesystem::path& labels_path, HomoGraph g) {
  std::unordered_map<std::string, NodeId> index;
  for (NodeId u = 0; u < g.num_nodes(); ++u) index.emplace(g.token(u), u);
  auto lookup = [&](const LineReader& reader, const std::string& token) {
    auto it = index.find(token);
    if (it == index.end()) reader.fail("token '" + token + "' is not a graph node");
    return it->second;
  };

  FeatureLoadResult result;
  if (!features_path.empty()) {
    LineReader reader(features_path);
    std::vector<std::string> f;
    std::vector<std::pair<NodeId, std::vector<double>>> rows;
    std::size_t width = 0;
    while (reader.next(f)) {
      if (f.size() < 2) reader.fail("feature line needs a token and at least one value");
      if (rows.empty()) width = f.size() - 1;
      if (f.size() - 1 != width)
        reader.fail("feature width " + std::to_string(f.size() - 1) + " differs from " +
                    std::to_string(width));
      std::vector<double> values(width);
      for (std::size_t i = 0; i < width; ++i)
        if (!parse_double(f[i + 1], values[i])) reader.fail("bad feature value '" + f[i + 1] + "'");
      rows.emplace_back(lookup(reader, f[0]), std::move(values));
    }
    Matrix features(g.num_nodes(), width);
    std::vector<bool> seen(g.num_nodes(), false);
    for (auto& [u, values] : rows) {
      std::copy(values.begin(), values.end(), features.row(u).begin());
      seen[u] = true;
    }
    result.missing_features =
        static_cast<std::size_t>(std::count(seen.begin(), seen.end(), false));
    g.set_features(std::move(features));
  }

  if (!labels_path.empty()) {
    LineReader reader(labels_path);
    TokenTable classes;
    std::vector<std::uint32_t> labels(g.num_nodes(), 0);
    std::vector<bool> seen(g.num_nodes(), false);
    std::vector<std::string> f;
    while (reader.next(f)) {
      if (f.size() != 2) reader.fail("label line must be 'token class'");
      const NodeId u = lookup(reader, f[0]);
      labels[u] = classes.intern(f[1]);
      seen[u] = true;
    }
    for (NodeId u = 0; u < g.num_nodes(); ++u)
      if (!seen[u]) throw DataError(labels_path.string() + ": node '" + g.token(u) + "' has no label");
    g.set_labels(std::move(labels), std::move(classes.tokens()));
  }
  result.graph = std::move(g);
  return result;
}

LabelTable load_label_table(const std::filesystem::path& path) {
  LineReader reader(path);
  TokenTable classes, seen;
  LabelTable t;
  std::vector<std::string> f;
  while (reader.next(f)) {
    if (f.size() != 2) reader.fail("label line must be 'token class'");
    if (seen.find(f[0])) reader.fail("duplicate token '" + f[0] + "'");
    seen.intern(f[0]);
    t.tokens.push_back(f[0]);
    t.labels.push_back(classes.intern(f[1]));
  }
  t.names = std::move(classes.tokens());
  return t;
}

}  // namespace connector
