#include "connector/runner.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "connector/errors.hpp"
#include "connector/signed.hpp"
#include "connector/spectral.hpp"

namespace connector {

namespace {

Json walk_defaults() {
  return {{"walks_per_node", 10}, {"walk_length", 80}, {"dim", 128},       {"window", 5},
          {"negatives", 5},       {"epochs", 5},       {"initial_lr", 0.025}, {"min_lr", 0.0001},
          {"subsample", 0.0}};
}

Json kge_defaults() {
  return {{"dim", 50},         {"margin", 1.0},     {"lr", 0.01},
          {"epochs", 500},     {"batch_size", 100}, {"corruption", "uniform"}};
}

Json gnn_defaults() {
  return {{"layers", 2},         {"hidden_dim", 0},   {"dropout", 0.5},
          {"lr", 0.01},          {"weight_decay", 5e-4}, {"epochs", 200},
          {"patience", 20},      {"train_ratio", 0.5}, {"valid_ratio", 0.25}};
}

struct ModelEntry {
  std::string name;
  GraphKind kind;
  Json defaults;
};

const std::vector<ModelEntry>& registry() {
  static const std::vector<ModelEntry> entries = [] {
    std::vector<ModelEntry> r;
    r.push_back({"deepwalk", GraphKind::homogeneous, walk_defaults()});
    Json n2v = walk_defaults();
    n2v["p"] = 1.0;
    n2v["q"] = 1.0;
    r.push_back({"node2vec", GraphKind::homogeneous, n2v});
    Json mp = walk_defaults();
    mp["metapath"] = "";
    mp["hetero_negatives"] = false;
    r.push_back({"metapath2vec", GraphKind::heterogeneous, mp});
    Json s2v = walk_defaults();
    s2v["k_max"] = 3;
    s2v["stay_prob"] = 0.7;
    r.push_back({"struc2vec", GraphKind::homogeneous, s2v});
    r.push_back({"hope", GraphKind::homogeneous, {{"dim", 128}, {"beta", 0.0}}});
    r.push_back({"sine", GraphKind::signed_graph,
                 {{"dim", 64}, {"delta", 1.0}, {"delta0", 0.5}, {"lambda", 1e-4}, {"lr", 0.01},
                  {"epochs", 50}, {"batch_size", 100}, {"symmetrize", true}}});
    Json te = kge_defaults();
    te["norm"] = "l2";
    r.push_back({"transe", GraphKind::knowledge, te});
    r.push_back({"transh", GraphKind::knowledge, kge_defaults()});
    Json tr = kge_defaults();
    tr.erase("dim");
    tr["entity_dim"] = 50;
    tr["relation_dim"] = 50;
    r.push_back({"transr", GraphKind::knowledge, tr});
    r.push_back({"gcn", GraphKind::homogeneous, gnn_defaults()});
    r.push_back({"graphsage", GraphKind::homogeneous, gnn_defaults()});
    Json gin = gnn_defaults();
    gin["epsilon"] = 0.0;
    gin["learn_epsilon"] = false;
    r.push_back({"gin", GraphKind::homogeneous, gin});
    Json gat = gnn_defaults();
    gat["heads"] = 8;
    gat["output_heads"] = 1;
    gat["leaky_slope"] = 0.2;
    r.push_back({"gat", GraphKind::homogeneous, gat});
    return r;
  }();
  return entries;
}

const ModelEntry& entry(const std::string& model) {
  for (const auto& e : registry())
    if (e.name == model) return e;
  std::string msg = "unknown model '" + model + "'; valid models:";
  for (const auto& e : registry()) msg += " " + e.name;
  throw UsageError(msg);
}

bool is_walk_model(const std::string& m) {
  return m == "deepwalk" || m == "node2vec" || m == "metapath2vec" || m == "struc2vec";
}
bool is_kge_model(const std::string& m) { return m == "transe" || m == "transh" || m == "transr"; }
bool is_gnn_model(const std::string& m) {
  return m == "gcn" || m == "graphsage" || m == "gin" || m == "gat";
}

// Coerces a user value to the type of the declared default.
Json coerce_param(const std::string& model, const std::string& key, const Json& def,
                  const Json& value) {
  auto bad = [&](const std::string& want) {
    return UsageError("parameter '" + key + "' of model '" + model + "' must be " + want +
                      ", got " + value.dump());
  };
  if (def.is_boolean()) {
    if (!value.is_boolean()) throw bad("a boolean");
    return value;
  }
  if (def.is_string()) {
    if (!value.is_string()) throw bad("a string");
    return value;
  }
  if (def.is_number_integer()) {
    if (value.is_number_unsigned()) return value.get<std::uint64_t>();
    if (value.is_number_integer()) {
      if (value.get<std::int64_t>() < 0) throw bad("a non-negative integer");
      return static_cast<std::uint64_t>(value.get<std::int64_t>());
    }
    if (value.is_number_float()) {
      const double v = value.get<double>();
      if (v >= 0.0 && v == std::floor(v) && v < 9.0e15) return static_cast<std::uint64_t>(v);
    }
    throw bad("a non-negative integer");
  }
  if (!value.is_number()) throw bad("a number");
  return value.get<double>();
}

std::uint64_t p_uint(const RunConfig& rc, const char* key) { return rc.params.at(key).get<std::uint64_t>(); }
double p_real(const RunConfig& rc, const char* key) { return rc.params.at(key).get<double>(); }
bool p_bool(const RunConfig& rc, const char* key) { return rc.params.at(key).get<bool>(); }
std::string p_str(const RunConfig& rc, const char* key) { return rc.params.at(key).get<std::string>(); }

const std::vector<std::string>& dataset_roles() {
  static const std::vector<std::string> roles{"edges", "nodes",  "features", "labels",
                                              "train", "valid", "test"};
  return roles;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative()) path = std::filesystem::absolute(base) / path;
  return path.lexically_normal();
}

template <typename T>
T get_typed(const Json& doc, const char* key, const char* want) {
  try {
    return doc.at(key).get<T>();
  } catch (const Json::exception&) {
    throw UsageError(std::string("config field '") + key + "' must be " + want);
  }
}

void validate_params(const RunConfig& rc) {
  if (is_walk_model(rc.model)) {
    walk_config(rc);
    sgns_config(rc);
    if (rc.model == "struc2vec") {
      const double s = p_real(rc, "stay_prob");
      if (!(s >= 0.0 && s <= 1.0)) throw UsageError("stay_prob must be in [0, 1]");
    }
  } else if (is_kge_model(rc.model)) {
    kge_config(rc);
  } else if (is_gnn_model(rc.model)) {
    gnn_config(rc);
    const double tr = p_real(rc, "train_ratio"), va = p_real(rc, "valid_ratio");
    if (!(tr > 0.0 && va >= 0.0 && tr + va < 1.0))
      throw UsageError("train_ratio and valid_ratio must satisfy 0 < train, 0 <= valid, sum < 1");
  } else if (rc.model == "hope") {
    if (p_uint(rc, "dim") == 0) throw UsageError("hope dim must be >= 1");
  } else if (rc.model == "sine") {
    SineConfig c;
    c.dim = p_uint(rc, "dim");
    c.delta = p_real(rc, "delta");
    c.delta0 = p_real(rc, "delta0");
    c.lambda = p_real(rc, "lambda");
    c.lr = p_real(rc, "lr");
    c.epochs = p_uint(rc, "epochs");
    c.batch_size = p_uint(rc, "batch_size");
    c.validate();
  }
  if (!(rc.eval_ratio > 0.0 && rc.eval_ratio < 1.0)) throw UsageError("eval_ratio must be in (0, 1)");
}

// ---- tensors in JSON ----

Json tensor_json(const CheckpointTensor& t) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < t.value.rows(); ++r) {
    const auto row = t.value.row(r);
    rows.push_back(Json(std::vector<double>(row.begin(), row.end())));
  }
  return {{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}, {"values", rows}};
}

CheckpointTensor tensor_from_json(const Json& j) {
  CheckpointTensor t;
  t.name = j.at("name").get<std::string>();
  const auto rows = j.at("rows").get<std::size_t>(), cols = j.at("cols").get<std::size_t>();
  const Json& values = j.at("values");
  if (!values.is_array() || values.size() != rows)
    throw DataError("tensor '" + t.name + "' row count does not match its shape");
  t.value = Matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const Json& row = values[r];
    if (!row.is_array() || row.size() != cols)
      throw DataError("tensor '" + t.name + "' row " + std::to_string(r) + " has the wrong width");
    for (std::size_t c = 0; c < cols; ++c) t.value(r, c) = row[c].get<double>();
  }
  return t;
}

Json rng_descriptor(std::uint64_t seed, std::size_t next_epoch) {
  return {{"generator", "mt19937_64"},
          {"seed", seed},
          {"reseeded", "per epoch from (seed, stream, epoch)"},
          {"next_epoch", next_epoch}};
}

void check_model(const Checkpoint& cp, const RunConfig& rc) {
  if (cp.model != rc.model)
    throw DataError("checkpoint holds model '" + cp.model + "', run is '" + rc.model + "'");
}

const Matrix& shaped(const Checkpoint& cp, const std::string& name, std::size_t rows,
                     std::size_t cols) {
  if (!cp.has_tensor(name)) throw DataError("checkpoint lacks tensor '" + name + "'");
  const Matrix& m = cp.tensor(name);
  if (m.rows() != rows || m.cols() != cols)
    throw DataError("checkpoint tensor '" + name + "' is " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                    std::to_string(cols));
  return m;
}

std::vector<double> doubles(const Json& j) { return j.get<std::vector<double>>(); }

// ---- graph loading ----

HomoGraph load_homogeneous(const DatasetSpec& spec, std::vector<std::string>& warnings) {
  HomoGraph g = load_edge_list(spec.path("edges"), spec.directed, spec.weighted);
  const std::filesystem::path features = spec.has("features") ? spec.path("features") : "";
  const std::filesystem::path labels = spec.has("labels") ? spec.path("labels") : "";
  if (features.empty() && labels.empty()) return g;
  auto loaded = load_features_labels(features, labels, std::move(g));
  if (loaded.missing_features > 0)
    warnings.push_back(std::to_string(loaded.missing_features) + " nodes have no feature row");
  return std::move(loaded.graph);
}

void require_graph(const RunConfig& rc) {
  if (!rc.has_graph) throw UsageError("config for model '" + rc.model + "' has no graph section");
  rc.graph.validate();
}

// Rows of `table` for every token in node-id order.
NamedEmbedding node_rows(const Vocab& vocab, const Matrix& table, const HomoGraph& g) {
  std::vector<std::pair<NodeId, std::uint32_t>> order;
  for (std::uint32_t i = 0; i < vocab.size(); ++i) order.emplace_back(vocab.tokens[i], i);
  std::sort(order.begin(), order.end());
  NamedEmbedding e;
  e.vectors = Matrix(order.size(), table.cols());
  for (std::size_t r = 0; r < order.size(); ++r) {
    e.tokens.push_back(g.token(order[r].first));
    const auto src = table.row(order[r].second);
    std::copy(src.begin(), src.end(), e.vectors.row(r).begin());
  }
  return e;
}

void add_report(Json& metrics, const std::string& prefix, const NodeClassification& nc) {
  metrics[prefix + "accuracy"] = nc.report.accuracy;
  metrics[prefix + "micro_f1"] = nc.report.micro_f1;
  metrics[prefix + "macro_f1"] = nc.report.macro_f1;
  metrics[prefix + "train_size"] = nc.split.train.size();
  metrics[prefix + "test_size"] = nc.split.test.size();
}

// Node classification on a main table whose tokens are graph nodes.
void classify_if_labelled(const RunConfig& rc, const HomoGraph& g, const NamedEmbedding& emb,
                          RunResult& result) {
  if (!g.labels()) return;
  std::unordered_map<std::string, NodeId> index;
  for (NodeId u = 0; u < g.num_nodes(); ++u) index.emplace(g.token(u), u);
  std::vector<std::uint32_t> labels;
  for (const auto& t : emb.tokens) labels.push_back((*g.labels())[index.at(t)]);
  const auto nc = evaluate_node_classification(emb.vectors, labels, rc.eval_ratio, rc.seed);
  for (const auto& w : nc.split.warnings) result.warnings.push_back(w);
  add_report(result.metrics, "node_classification.", nc);
}

Checkpoint tables_checkpoint(const RunConfig& rc, const RunResult& r, std::size_t epochs) {
  Checkpoint cp;
  cp.model = rc.model;
  cp.config = rc.to_json();
  for (const auto& e : r.embeddings)
    cp.tensors.push_back({e.suffix.empty() ? "embeddings" : e.suffix, e.vectors});
  cp.state = {{"epochs_done", epochs}, {"rng", rng_descriptor(rc.seed, epochs)}};
  return cp;
}

void no_resume(const RunConfig& rc) {
  if (!rc.resume.empty())
    throw UsageError("resume is supported for KGE and GNN models, not '" + rc.model + "'");
}

struct WalkSetup {
  HomoGraph graph;  // base graph of a heterogeneous input
  std::optional<HeteroGraph> hetero;
  WalkCorpus corpus;
};

WalkSetup make_walks(const RunConfig& rc, std::vector<std::string>& warnings) {
  if (!is_walk_model(rc.model)) throw UsageError("model '" + rc.model + "' is not walk-based");
  require_graph(rc);
  const WalkConfig wc = walk_config(rc);
  WalkSetup w;
  if (rc.model == "metapath2vec") {
    w.hetero = load_hetero(rc.graph.path("nodes"), rc.graph.path("edges"));
    std::vector<std::uint32_t> path;
    std::istringstream in(p_str(rc, "metapath"));
    for (std::string t; in >> t;) {
      const auto id = w.hetero->type_id(t);
      if (!id) throw UsageError("metapath type '" + t + "' does not occur in the graph");
      path.push_back(*id);
    }
    if (path.size() < 2) throw UsageError("metapath2vec needs a 'metapath' of at least two types");
    w.corpus = metapath_walks(*w.hetero, path, wc);
    w.graph = w.hetero->base;
    return w;
  }
  w.graph = load_homogeneous(rc.graph, warnings);
  if (rc.model == "deepwalk") {
    w.corpus = uniform_walks(w.graph, wc);
  } else if (rc.model == "node2vec") {
    w.corpus = node2vec_walks(w.graph, wc);
  } else {
    const auto ctx = struc2vec_context(w.graph, static_cast<long>(p_uint(rc, "k_max")),
                                       rc.effective_threads());
    w.corpus = struc2vec_walks(ctx, wc, p_real(rc, "stay_prob"));
  }
  return w;
}

RunResult run_walk_model(const RunConfig& rc) {
  no_resume(rc);
  RunResult r;
  const SgnsConfig sc = sgns_config(rc);
  const WalkSetup w = make_walks(rc, r.warnings);
  const auto vocab = build_vocab(w.corpus);
  SgnsOptions opt;
  if (w.hetero) opt.type_of = std::span<const std::uint32_t>(w.hetero->node_types);
  const auto table = train_sgns(w.corpus, vocab, sc, opt);
  r.embeddings.push_back(node_rows(vocab, table.input, w.graph));
  if (!w.hetero) classify_if_labelled(rc, w.graph, r.embeddings.front(), r);
  r.metrics["vocab_size"] = vocab.size();
  r.metrics["corpus_tokens"] = w.corpus.num_tokens();
  r.checkpoint = tables_checkpoint(rc, r, sc.epochs);
  return r;
}

RunResult run_hope(const RunConfig& rc) {
  no_resume(rc);
  RunResult r;
  const HomoGraph g = load_homogeneous(rc.graph, r.warnings);
  KatzConfig kc;
  kc.dim = p_uint(rc, "dim");
  kc.beta = p_real(rc, "beta");
  const auto emb = hope_embed(g, kc);
  std::vector<std::string> tokens;
  for (NodeId u = 0; u < g.num_nodes(); ++u) tokens.push_back(g.token(u));
  r.embeddings.push_back({"", tokens, emb.source});
  r.embeddings.push_back({"target", tokens, emb.target});
  r.metrics["beta"] = emb.beta;
  classify_if_labelled(rc, g, r.embeddings.front(), r);
  r.checkpoint = tables_checkpoint(rc, r, 0);
  return r;
}

RunResult run_sine(const RunConfig& rc) {
  no_resume(rc);
  RunResult r;
  const SignedGraph sg = load_signed_edge_list(rc.graph.path("edges"), rc.graph.directed);
  SineConfig c;
  c.dim = p_uint(rc, "dim");
  c.delta = p_real(rc, "delta");
  c.delta0 = p_real(rc, "delta0");
  c.lambda = p_real(rc, "lambda");
  c.lr = p_real(rc, "lr");
  c.epochs = p_uint(rc, "epochs");
  c.batch_size = p_uint(rc, "batch_size");
  c.symmetrize = p_bool(rc, "symmetrize");
  c.seed = rc.seed;
  c.threads = rc.effective_threads();
  const auto res = train_sine(sg, c);
  NamedEmbedding e;
  const std::size_t n = sg.base.num_nodes();
  e.vectors = Matrix(n, c.dim);
  for (NodeId u = 0; u < n; ++u) {
    e.tokens.push_back(sg.base.token(u));
    const auto src = res.embeddings.row(u);
    std::copy(src.begin(), src.end(), e.vectors.row(u).begin());
  }
  r.embeddings.push_back(std::move(e));
  if (!res.losses.empty()) r.metrics["final_loss"] = res.losses.back();
  r.checkpoint = tables_checkpoint(rc, r, c.epochs);
  r.checkpoint->tensors.front().value = res.embeddings;  // keeps the virtual row
  return r;
}

void add_ranking(Json& metrics, const std::string& prefix, const RankingMetrics& m) {
  metrics[prefix + "mr"] = m.mr;
  metrics[prefix + "mrr"] = m.mrr;
  metrics[prefix + "hits@1"] = m.hits1;
  metrics[prefix + "hits@3"] = m.hits3;
  metrics[prefix + "hits@10"] = m.hits10;
  metrics[prefix + "queries"] = m.queries;
}

RunResult run_kge(const RunConfig& rc) {
  RunResult r;
  const KnowledgeGraph kg =
      load_triples(rc.graph.path("train"), rc.graph.path("valid"), rc.graph.path("test"));
  const KgeConfig cfg = kge_config(rc);
  KgeState state;
  if (!rc.resume.empty()) {
    state = kge_state_from(load_checkpoint(rc.resume), rc, kg.num_entities(), kg.num_relations());
  } else {
    state.model = init_kge(kg.num_entities(), kg.num_relations(), cfg);
  }
  train_kge(kg, cfg, state);
  r.embeddings.push_back({"", kg.entities, state.model.entities});
  r.embeddings.push_back({"relations", kg.relations, state.model.relations});
  r.metrics["epochs_done"] = state.epochs_done;
  if (!state.losses.empty()) r.metrics["final_loss"] = state.losses.back();
  if (!kg.test.empty()) {
    add_ranking(r.metrics, "test.raw.", evaluate_ranking(state.model, kg, false, cfg.threads));
    add_ranking(r.metrics, "test.filtered.", evaluate_ranking(state.model, kg, true, cfg.threads));
  }
  r.checkpoint = kge_checkpoint(rc, state);
  return r;
}

RunResult run_gnn(const RunConfig& rc) {
  RunResult r;
  HomoGraph g = load_homogeneous(rc.graph, r.warnings);
  if (!g.labels()) throw UsageError("model '" + rc.model + "' needs a 'labels' file in the graph section");
  if (!g.features()) {
    r.warnings.push_back("no features given; using one-hot node identity features");
    g.set_features(Matrix::identity(g.num_nodes()));
  }
  const GnnConfig cfg = gnn_config(rc);
  const auto three = split_nodes(*g.labels(), p_real(rc, "train_ratio"), p_real(rc, "valid_ratio"), rc.seed);
  for (const auto& w : three.warnings) r.warnings.push_back(w);
  const GnnSplit split{three.train, three.valid, three.test};
  const std::size_t classes = g.label_names().size();
  GnnState state = rc.resume.empty()
                       ? init_gnn_state(cfg, g.features()->cols(), classes)
                       : gnn_state_from(load_checkpoint(rc.resume), rc, g.features()->cols(), classes);
  train_gnn(g, split, cfg, state);
  GnnModel best = state.model;
  if (!state.best_params.empty())
    for (std::size_t i = 0; i < best.params.size(); ++i) best.params[i].value = state.best_params[i];
  const auto out = gnn_predict(best, prepare_gnn_graph(g, cfg.variant), *g.features());
  std::vector<std::string> tokens;
  for (NodeId u = 0; u < g.num_nodes(); ++u) tokens.push_back(g.token(u));
  r.embeddings.push_back({"", tokens, out.penultimate});
  r.embeddings.push_back({"logits", tokens, out.logits});
  r.metrics["epochs_done"] = state.epochs_done;
  r.metrics["stopped_early"] = state.stopped;
  if (std::isfinite(state.best_val)) r.metrics["best_val_loss"] = state.best_val;
  r.metrics["train_accuracy"] = accuracy_on(out.logits, *g.labels(), split.train);
  r.metrics["valid_accuracy"] = accuracy_on(out.logits, *g.labels(), split.valid);
  r.metrics["test_accuracy"] = accuracy_on(out.logits, *g.labels(), split.test);
  r.checkpoint = gnn_checkpoint(rc, state);
  return r;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace

const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& e : registry()) n.push_back(e.name);
    return n;
  }();
  return names;
}

bool is_model(const std::string& name) {
  const auto& n = model_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

GraphKind model_graph_kind(const std::string& model) { return entry(model).kind; }
const Json& param_defaults(const std::string& model) { return entry(model).defaults; }

Json RunConfig::to_json() const {
  Json j;
  j["model"] = model;
  if (has_graph) {
    Json gj{{"kind", to_string(graph.kind)}, {"directed", graph.directed}, {"weighted", graph.weighted}};
    for (const auto& [role, path] : graph.paths) gj[role] = path.string();
    j["graph"] = gj;
  }
  j["params"] = params;
  j["seed"] = seed;
  j["threads"] = threads;
  j["deterministic"] = deterministic;
  j["output_dir"] = output_dir.string();
  j["eval_ratio"] = eval_ratio;
  if (!resume.empty()) j["resume"] = resume.string();
  return j;
}

RunConfig config_from_json(const Json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw UsageError("config must be a JSON object");
  static const std::vector<std::string> allowed{"model",       "graph",      "params", "seed",
                                                "threads",     "deterministic", "output_dir",
                                                "eval_ratio",  "resume",     "versions"};
  for (const auto& [key, _] : doc.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw UsageError("unknown config field '" + key + "'");
  if (!doc.contains("model")) throw UsageError("config has no 'model'");
  RunConfig rc;
  rc.output_dir = resolve(base_dir, "out");
  rc.model = get_typed<std::string>(doc, "model", "a string");
  const ModelEntry& e = entry(rc.model);

  rc.params = e.defaults;
  if (doc.contains("params")) {
    const Json& p = doc.at("params");
    if (!p.is_object()) throw UsageError("config field 'params' must be an object");
    for (const auto& [key, value] : p.items()) {
      if (!e.defaults.contains(key))
        throw UsageError("unknown parameter '" + key + "' for model '" + rc.model + "'");
      rc.params[key] = coerce_param(rc.model, key, e.defaults.at(key), value);
    }
  }
  // Integer defaults are stored unsigned so every document uses one representation.
  for (auto& [key, value] : rc.params.items())
    if (value.is_number_integer()) value = value.get<std::uint64_t>();

  if (doc.contains("graph")) {
    const Json& g = doc.at("graph");
    if (!g.is_object()) throw UsageError("config field 'graph' must be an object");
    rc.has_graph = true;
    rc.graph.kind = e.kind;
    for (const auto& [key, value] : g.items()) {
      if (key == "kind") {
        if (!value.is_string()) throw UsageError("graph kind must be a string");
        rc.graph.kind = parse_graph_kind(value.get<std::string>());
      } else if (key == "directed" || key == "weighted") {
        if (!value.is_boolean()) throw UsageError("graph field '" + key + "' must be a boolean");
        (key == "directed" ? rc.graph.directed : rc.graph.weighted) = value.get<bool>();
      } else if (std::find(dataset_roles().begin(), dataset_roles().end(), key) != dataset_roles().end()) {
        if (!value.is_string()) throw UsageError("graph path '" + key + "' must be a string");
        rc.graph.paths[key] = resolve(base_dir, value.get<std::string>());
      } else {
        throw UsageError("unknown graph field '" + key + "'");
      }
    }
    if (rc.graph.kind != e.kind)
      throw UsageError("model '" + rc.model + "' needs a " + to_string(e.kind) + " graph, config says " +
                       to_string(rc.graph.kind));
    rc.graph.validate();
  }
  if (doc.contains("seed")) rc.seed = get_typed<std::uint64_t>(doc, "seed", "a non-negative integer");
  if (doc.contains("threads")) rc.threads = get_typed<std::size_t>(doc, "threads", "a non-negative integer");
  if (rc.threads == 0) rc.threads = hardware_threads();
  if (doc.contains("deterministic")) rc.deterministic = get_typed<bool>(doc, "deterministic", "a boolean");
  if (doc.contains("output_dir"))
    rc.output_dir = resolve(base_dir, get_typed<std::string>(doc, "output_dir", "a string"));
  if (doc.contains("eval_ratio")) rc.eval_ratio = get_typed<double>(doc, "eval_ratio", "a number");
  if (doc.contains("resume")) rc.resume = resolve(base_dir, get_typed<std::string>(doc, "resume", "a string"));
  validate_params(rc);
  return rc;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path.string() + "'");
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw UsageError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  auto base = path.parent_path();
  if (base.empty()) base = ".";
  return config_from_json(doc, std::filesystem::absolute(base));
}

WalkConfig walk_config(const RunConfig& rc) {
  WalkConfig c;
  c.walks_per_node = p_uint(rc, "walks_per_node");
  c.walk_length = p_uint(rc, "walk_length");
  if (rc.params.contains("p")) c.p = p_real(rc, "p");
  if (rc.params.contains("q")) c.q = p_real(rc, "q");
  c.seed = rc.seed;
  c.threads = rc.effective_threads();
  c.deterministic = rc.deterministic;
  c.validate();
  return c;
}

SgnsConfig sgns_config(const RunConfig& rc) {
  SgnsConfig c;
  c.dim = p_uint(rc, "dim");
  c.window = p_uint(rc, "window");
  c.negatives = p_uint(rc, "negatives");
  c.epochs = p_uint(rc, "epochs");
  c.initial_lr = p_real(rc, "initial_lr");
  c.min_lr = p_real(rc, "min_lr");
  c.subsample = p_real(rc, "subsample");
  if (rc.params.contains("hetero_negatives")) c.hetero_negatives = p_bool(rc, "hetero_negatives");
  c.seed = rc.seed;
  c.threads = rc.effective_threads();
  c.deterministic = rc.deterministic;
  c.validate();
  return c;
}

KgeConfig kge_config(const RunConfig& rc) {
  KgeConfig c;
  if (rc.model == "transe") {
    const auto norm = p_str(rc, "norm");
    if (norm != "l1" && norm != "l2") throw UsageError("transe norm must be 'l1' or 'l2'");
    c.variant = norm == "l1" ? KgeVariant::transe_l1 : KgeVariant::transe_l2;
  } else {
    c.variant = parse_kge_variant(rc.model);
  }
  if (rc.model == "transr") {
    c.d_e = p_uint(rc, "entity_dim");
    c.d_r = p_uint(rc, "relation_dim");
  } else {
    c.d_e = c.d_r = p_uint(rc, "dim");
  }
  c.margin = p_real(rc, "margin");
  c.lr = p_real(rc, "lr");
  c.epochs = p_uint(rc, "epochs");
  c.batch_size = p_uint(rc, "batch_size");
  c.corruption = parse_corruption(p_str(rc, "corruption"));
  c.seed = rc.seed;
  c.threads = rc.effective_threads();
  c.validate();
  return c;
}

GnnConfig gnn_config(const RunConfig& rc) {
  GnnConfig c;
  c.variant = parse_gnn_variant(rc.model);
  c.layers = p_uint(rc, "layers");
  c.hidden_dim = p_uint(rc, "hidden_dim");
  c.dropout = p_real(rc, "dropout");
  c.lr = p_real(rc, "lr");
  c.weight_decay = p_real(rc, "weight_decay");
  c.epochs = p_uint(rc, "epochs");
  c.patience = p_uint(rc, "patience");
  if (rc.params.contains("epsilon")) c.epsilon = p_real(rc, "epsilon");
  if (rc.params.contains("learn_epsilon")) c.learn_epsilon = p_bool(rc, "learn_epsilon");
  if (rc.params.contains("heads")) c.heads = p_uint(rc, "heads");
  if (rc.params.contains("output_heads")) c.output_heads = p_uint(rc, "output_heads");
  if (rc.params.contains("leaky_slope")) c.leaky_slope = p_real(rc, "leaky_slope");
  c.seed = rc.seed;
  c.validate();
  return c;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string embeddings_to_string(const Matrix& vectors, std::span<const std::string> tokens) {
  if (tokens.size() != vectors.rows()) throw UsageError("embedding rows and tokens differ in count");
  if (!vectors.all_finite()) throw NumericError("refusing to save non-finite embeddings");
  std::string s = std::to_string(vectors.rows()) + " " + std::to_string(vectors.cols()) + "\n";
  for (std::size_t r = 0; r < vectors.rows(); ++r) {
    if (tokens[r].empty() || tokens[r].find_first_of(" \t\n") != std::string::npos)
      throw UsageError("token '" + tokens[r] + "' cannot be written in word2vec format");
    s += tokens[r];
    for (double v : vectors.row(r)) {
      s += ' ';
      s += format_double(v);
    }
    s += '\n';
  }
  return s;
}

void save_embeddings(const std::filesystem::path& path, const Matrix& vectors,
                     std::span<const std::string> tokens) {
  write_text(path, embeddings_to_string(vectors, tokens));
}

EmbeddingFile load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  auto fail = [&](std::size_t line, const std::string& what) {
    return DataError(path.string() + ":" + std::to_string(line) + ": " + what);
  };
  std::string line;
  if (!std::getline(in, line)) throw fail(1, "missing 'N D' header");
  std::size_t n = 0, d = 0;
  {
    const auto f = split_fields(line);
    if (f.size() != 2) throw fail(1, "header must be 'N D'");
    auto parse = [&](const std::string& s, std::size_t& out) {
      const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw fail(1, "bad header value '" + s + "'");
    };
    parse(f[0], n);
    parse(f[1], d);
  }
  EmbeddingFile e;
  e.vectors = Matrix(n, d);
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t row = 0, line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto f = split_fields(line);
    if (f.empty()) continue;
    if (row == n) throw fail(line_no, "more rows than the header's " + std::to_string(n));
    if (f.size() != d + 1)
      throw fail(line_no, "expected " + std::to_string(d) + " values, found " + std::to_string(f.size() - 1));
    if (!seen.emplace(f[0], row).second) throw fail(line_no, "duplicate token '" + f[0] + "'");
    e.tokens.push_back(f[0]);
    for (std::size_t j = 0; j < d; ++j) {
      const std::string& s = f[j + 1];
      double v = 0.0;
      const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw fail(line_no, "bad value '" + s + "'");
      e.vectors(row, j) = v;
    }
    ++row;
  }
  if (row != n) throw fail(line_no, "header claims " + std::to_string(n) + " rows, found " + std::to_string(row));
  return e;
}

const Matrix& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw DataError("checkpoint lacks tensor '" + name + "'");
}

bool Checkpoint::has_tensor(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const auto& t) { return t.name == name; });
}

std::string checkpoint_to_string(const Checkpoint& cp) {
  Json j;
  j["format_version"] = cp.format_version;
  j["model"] = cp.model;
  j["config"] = cp.config;
  Json ts = Json::array();
  for (const auto& t : cp.tensors) {
    if (!t.value.all_finite()) throw NumericError("checkpoint tensor '" + t.name + "' is not finite");
    ts.push_back(tensor_json(t));
  }
  j["tensors"] = ts;
  j["state"] = cp.state;
  return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw DataError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    Checkpoint cp;
    cp.format_version = j.at("format_version").get<int>();
    if (cp.format_version > kCheckpointFormatVersion)
      throw DataError("checkpoint format_version " + std::to_string(cp.format_version) +
                      " is newer than supported version " + std::to_string(kCheckpointFormatVersion));
    if (cp.format_version < 1) throw DataError("bad checkpoint format_version");
    cp.model = j.at("model").get<std::string>();
    cp.config = j.at("config");
    for (const auto& t : j.at("tensors")) cp.tensors.push_back(tensor_from_json(t));
    cp.state = j.at("state");
    return cp;
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) {
  write_text(path, checkpoint_to_string(cp));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return checkpoint_from_string(ss.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Checkpoint kge_checkpoint(const RunConfig& rc, const KgeState& state) {
  Checkpoint cp;
  cp.model = rc.model;
  cp.config = rc.to_json();
  const auto& m = state.model;
  cp.tensors.push_back({"entities", m.entities});
  cp.tensors.push_back({"relations", m.relations});
  if (m.variant == KgeVariant::transh) cp.tensors.push_back({"normals", m.normals});
  for (std::size_t r = 0; r < m.maps.size(); ++r) cp.tensors.push_back({"map." + std::to_string(r), m.maps[r]});
  cp.state = {{"epochs_done", state.epochs_done},
              {"losses", state.losses},
              {"variant", to_string(m.variant)},
              {"rng", rng_descriptor(rc.seed, state.epochs_done)}};
  return cp;
}

KgeState kge_state_from(const Checkpoint& cp, const RunConfig& rc, std::size_t num_entities,
                        std::size_t num_relations) {
  check_model(cp, rc);
  const KgeConfig cfg = kge_config(rc);
  KgeState s;
  try {
    s.model.variant = parse_kge_variant(cp.state.at("variant").get<std::string>());
    if (s.model.variant != cfg.variant)
      throw DataError("checkpoint variant " + to_string(s.model.variant) + " differs from the config's " +
                      to_string(cfg.variant));
    s.epochs_done = cp.state.at("epochs_done").get<std::size_t>();
    s.losses = doubles(cp.state.at("losses"));
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed KGE checkpoint state: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(e.what());
  }
  s.model.entities = shaped(cp, "entities", num_entities, cfg.d_e);
  s.model.relations = shaped(cp, "relations", num_relations, cfg.d_r);
  if (cfg.variant == KgeVariant::transh) s.model.normals = shaped(cp, "normals", num_relations, cfg.d_e);
  if (cfg.variant == KgeVariant::transr)
    for (std::size_t r = 0; r < num_relations; ++r)
      s.model.maps.push_back(shaped(cp, "map." + std::to_string(r), cfg.d_e, cfg.d_r));
  return s;
}

Checkpoint gnn_checkpoint(const RunConfig& rc, const GnnState& state) {
  Checkpoint cp;
  cp.model = rc.model;
  cp.config = rc.to_json();
  const auto& params = state.model.params;
  for (const auto& p : params) cp.tensors.push_back({p.name, p.value});
  for (std::size_t i = 0; i < params.size(); ++i) cp.tensors.push_back({"adam_m/" + params[i].name, state.adam_m[i]});
  for (std::size_t i = 0; i < params.size(); ++i) cp.tensors.push_back({"adam_v/" + params[i].name, state.adam_v[i]});
  for (std::size_t i = 0; i < state.best_params.size(); ++i)
    cp.tensors.push_back({"best/" + params[i].name, state.best_params[i]});
  cp.state = {{"in_dim", state.model.in_dim},
              {"classes", state.model.classes},
              {"step", state.step},
              {"epochs_done", state.epochs_done},
              {"best_val", std::isfinite(state.best_val) ? Json(state.best_val) : Json(nullptr)},
              {"bad_epochs", state.bad_epochs},
              {"stopped", state.stopped},
              {"train_loss", state.train_loss},
              {"val_loss", state.val_loss},
              {"rng", rng_descriptor(rc.seed, state.epochs_done)}};
  return cp;
}

GnnState gnn_state_from(const Checkpoint& cp, const RunConfig& rc, std::size_t in_dim,
                        std::size_t classes) {
  check_model(cp, rc);
  const GnnConfig cfg = gnn_config(rc);
  GnnState s = init_gnn_state(cfg, in_dim, classes);
  try {
    if (cp.state.at("in_dim").get<std::size_t>() != in_dim || cp.state.at("classes").get<std::size_t>() != classes)
      throw DataError("checkpoint was trained on a different feature width or class count");
    s.step = cp.state.at("step").get<std::size_t>();
    s.epochs_done = cp.state.at("epochs_done").get<std::size_t>();
    const Json& bv = cp.state.at("best_val");
    s.best_val = bv.is_null() ? std::numeric_limits<double>::infinity() : bv.get<double>();
    s.bad_epochs = cp.state.at("bad_epochs").get<std::size_t>();
    s.stopped = cp.state.at("stopped").get<bool>();
    s.train_loss = doubles(cp.state.at("train_loss"));
    s.val_loss = doubles(cp.state.at("val_loss"));
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed GNN checkpoint state: ") + e.what());
  }
  const bool has_best = cp.has_tensor("best/" + s.model.params.front().name);
  for (std::size_t i = 0; i < s.model.params.size(); ++i) {
    auto& p = s.model.params[i];
    const auto r = p.value.rows(), c = p.value.cols();
    p.value = shaped(cp, p.name, r, c);
    s.adam_m[i] = shaped(cp, "adam_m/" + p.name, r, c);
    s.adam_v[i] = shaped(cp, "adam_v/" + p.name, r, c);
    if (has_best) s.best_params.push_back(shaped(cp, "best/" + p.name, r, c));
  }
  return s;
}

RunResult run_model(const RunConfig& rc) {
  require_graph(rc);
  if (is_walk_model(rc.model)) return run_walk_model(rc);
  if (is_kge_model(rc.model)) return run_kge(rc);
  if (is_gnn_model(rc.model)) return run_gnn(rc);
  if (rc.model == "hope") return run_hope(rc);
  if (rc.model == "sine") return run_sine(rc);
  throw UsageError("unknown model '" + rc.model + "'");
}

Json manifest_json(const RunConfig& rc) {
  Json j = rc.to_json();
  j["versions"] = {{"connector", kVersion},
                   {"checkpoint_format", kCheckpointFormatVersion},
                   {"cxx_standard", static_cast<long>(__cplusplus)},
                   {"compiler", __VERSION__}};
  return j;
}

std::string metrics_text(const Json& metrics) {
  std::string s;
  for (const auto& [key, value] : metrics.items()) {
    s += key;
    s += ' ';
    if (value.is_number_float())
      s += format_double(value.get<double>());
    else if (value.is_string())
      s += value.get<std::string>();
    else
      s += value.dump();
    s += '\n';
  }
  return s;
}

void write_run_outputs(const RunConfig& rc, const RunResult& result) {
  std::filesystem::create_directories(rc.output_dir);
  for (const auto& e : result.embeddings) {
    const std::string name = e.suffix.empty() ? "embeddings.txt" : "embeddings_" + e.suffix + ".txt";
    save_embeddings(rc.output_dir / name, e.vectors, e.tokens);
  }
  write_text(rc.output_dir / "metrics.json", result.metrics.dump(2) + "\n");
  write_text(rc.output_dir / "metrics.txt", metrics_text(result.metrics));
  write_text(rc.output_dir / "manifest.json", manifest_json(rc).dump(2) + "\n");
  if (result.checkpoint) save_checkpoint(rc.output_dir / "checkpoint.json", *result.checkpoint);
}

NodeClassification evaluate_embedding_file(const std::filesystem::path& embeddings,
                                           const std::filesystem::path& labels, double ratio,
                                           std::uint64_t seed) {
  const EmbeddingFile e = load_embeddings(embeddings);
  const LabelTable t = load_label_table(labels);
  std::unordered_map<std::string, std::uint32_t> label_of;
  for (std::size_t i = 0; i < t.tokens.size(); ++i) label_of.emplace(t.tokens[i], t.labels[i]);
  std::vector<std::size_t> rows;
  std::vector<std::uint32_t> y;
  for (std::size_t r = 0; r < e.tokens.size(); ++r) {
    auto it = label_of.find(e.tokens[r]);
    if (it == label_of.end()) continue;
    rows.push_back(r);
    y.push_back(it->second);
  }
  if (rows.empty()) throw DataError("no embedding token has a label in " + labels.string());
  Matrix x(rows.size(), e.vectors.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = e.vectors.row(rows[i]);
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }
  return evaluate_node_classification(x, y, ratio, seed);
}

TokenCorpus walk_corpus(const RunConfig& rc) {
  std::vector<std::string> warnings;
  WalkSetup w = make_walks(rc, warnings);
  TokenCorpus t;
  t.corpus = std::move(w.corpus);
  for (NodeId u = 0; u < w.graph.num_nodes(); ++u) t.tokens.push_back(w.graph.token(u));
  return t;
}

std::string corpus_text(const TokenCorpus& t) {
  std::string s;
  for (const auto& walk : t.corpus.walks) {
    for (std::size_t i = 0; i < walk.size(); ++i) {
      if (i) s += ' ';
      s += t.tokens.at(walk[i]);
    }
    s += '\n';
  }
  return s;
}

std::vector<std::filesystem::path> export_graph(const RunConfig& rc) {
  require_graph(rc);
  std::filesystem::create_directories(rc.output_dir);
  std::vector<std::filesystem::path> files;
  auto emit = [&](const std::string& name, const std::string& text) {
    files.push_back(rc.output_dir / name);
    write_text(files.back(), text);
  };
  // Undirected graphs list each edge once, smaller endpoint first.
  auto edge_lines = [](const HomoGraph& g, const std::vector<std::int8_t>* signs) {
    std::string s;
    const auto& off = g.offsets();
    for (NodeId u = 0; u < g.num_nodes(); ++u)
      for (std::size_t a = off[u]; a < off[u + 1]; ++a) {
        const NodeId v = g.targets()[a];
        if (!g.directed() && v < u) continue;
        s += g.token(u) + ' ' + g.token(v);
        if (signs) s += (*signs)[a] > 0 ? " 1" : " -1";
        else if (g.weighted()) s += ' ' + format_double(g.arc_weight(a));
        s += '\n';
      }
    return s;
  };
  switch (rc.graph.kind) {
    case GraphKind::homogeneous:
      emit("edges.txt", edge_lines(load_edge_list(rc.graph.path("edges"), rc.graph.directed,
                                                  rc.graph.weighted), nullptr));
      break;
    case GraphKind::signed_graph: {
      const auto sg = load_signed_edge_list(rc.graph.path("edges"), rc.graph.directed);
      emit("edges.txt", edge_lines(sg.base, &sg.signs));
      break;
    }
    case GraphKind::heterogeneous: {
      const auto hg = load_hetero(rc.graph.path("nodes"), rc.graph.path("edges"));
      std::string nodes;
      for (NodeId u = 0; u < hg.base.num_nodes(); ++u)
        nodes += hg.base.token(u) + '\t' + hg.type_names[hg.node_types[u]] + '\n';
      emit("nodes.txt", nodes);
      emit("edges.txt", edge_lines(hg.base, nullptr));
      break;
    }
    case GraphKind::knowledge: {
      const auto kg = load_triples(rc.graph.path("train"), rc.graph.path("valid"), rc.graph.path("test"));
      auto lines = [&](const std::vector<Triple>& ts) {
        std::string s;
        for (const auto& t : ts)
          s += kg.entities[t.head] + '\t' + kg.relations[t.relation] + '\t' + kg.entities[t.tail] + '\n';
        return s;
      };
      emit("train.txt", lines(kg.train));
      emit("valid.txt", lines(kg.valid));
      emit("test.txt", lines(kg.test));
      break;
    }
  }
  return files;
}

}  // namespace connector
