#include "connector/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "connector/errors.hpp"

namespace connector {

namespace {

constexpr std::uint64_t kInitStream = 0x474e4e;
constexpr std::uint64_t kDropoutStream = 0x474e4f;

std::string layer_name(std::size_t layer, const std::string& what) {
  return "layer" + std::to_string(layer) + "." + what;
}

bool is_last(const GnnModel& m, std::size_t layer) { return layer + 1 == m.cfg.layers; }

std::size_t layer_in(const GnnModel& m, std::size_t layer) {
  if (layer == 0) return m.in_dim;
  const std::size_t h = m.cfg.effective_hidden();
  return m.cfg.variant == GnnVariant::gat ? h * m.cfg.heads : h;
}

std::size_t layer_out(const GnnModel& m, std::size_t layer) {
  return is_last(m, layer) ? m.classes : m.cfg.effective_hidden();
}

Tape::Var var_of(const GnnModel& m, std::span<const Tape::Var> vars, std::size_t layer,
                 const std::string& what) {
  return vars[m.index_of(layer_name(layer, what))];
}

Tape::Var gat_head(Tape& tape, const GnnModel& m, const GnnGraph& gg, std::size_t layer,
                   std::size_t head, Tape::Var h, std::span<const Tape::Var> vars,
                   LayerContext& ctx) {
  const std::string p = "head" + std::to_string(head) + ".";
  const Tape::Var wh = tape.matmul(h, var_of(m, vars, layer, p + "W"));
  const Tape::Var s_dst = tape.matmul(wh, var_of(m, vars, layer, p + "a_dst"));
  const Tape::Var s_src = tape.matmul(wh, var_of(m, vars, layer, p + "a_src"));
  const Tape::Var e = tape.leaky_relu(
      tape.add(tape.gather_rows(s_dst, gg.edge_dst), tape.gather_rows(s_src, gg.edge_src)),
      m.cfg.leaky_slope);
  const Tape::Var alpha = tape.segment_softmax(e, gg.edge_offsets);
  if (ctx.attention) ctx.attention->push_back(alpha);
  const Tape::Var msg = tape.hadamard(tape.gather_rows(wh, gg.edge_src), alpha);
  return tape.scatter_add(msg, gg.edge_dst, gg.num_nodes);
}

}  // namespace

GnnVariant parse_gnn_variant(const std::string& s) {
  if (s == "gcn") return GnnVariant::gcn;
  if (s == "sage" || s == "graphsage") return GnnVariant::sage;
  if (s == "gin") return GnnVariant::gin;
  if (s == "gat") return GnnVariant::gat;
  throw UsageError("unknown gnn variant '" + s + "'");
}

std::string to_string(GnnVariant v) {
  switch (v) {
    case GnnVariant::gcn: return "gcn";
    case GnnVariant::sage: return "graphsage";
    case GnnVariant::gin: return "gin";
    case GnnVariant::gat: return "gat";
  }
  return "?";
}

void GnnConfig::validate() const {
  if (layers < 1) throw UsageError("gnn layers must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("gnn dropout must be in [0, 1)");
  if (!(lr > 0.0)) throw UsageError("gnn lr must be > 0");
  if (weight_decay < 0.0) throw UsageError("gnn weight_decay must be >= 0");
  if (heads < 1 || output_heads < 1) throw UsageError("gat heads must be >= 1");
}

std::size_t GnnConfig::effective_hidden() const {
  if (hidden_dim > 0) return hidden_dim;
  return variant == GnnVariant::gat ? 8 : 16;
}

std::size_t GnnModel::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].name == name) return i;
  throw UsageError("gnn: no parameter named '" + name + "'");
}

GnnModel init_gnn(const GnnConfig& cfg, std::size_t in_dim, std::size_t classes) {
  cfg.validate();
  if (in_dim < 1 || classes < 1) throw UsageError("gnn needs at least one feature and one class");
  GnnModel m;
  m.cfg = cfg;
  m.in_dim = in_dim;
  m.classes = classes;
  Rng rng(derive_seed(cfg.seed, kInitStream));
  auto glorot = [&](std::size_t rows, std::size_t cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix w(rows, cols);
    for (double& v : w.data()) v = dist(rng);
    return w;
  };
  auto add = [&](std::size_t layer, const std::string& what, Matrix v, bool decay) {
    m.params.push_back({layer_name(layer, what), std::move(v), decay});
  };
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::size_t in = layer_in(m, l), out = layer_out(m, l);
    switch (cfg.variant) {
      case GnnVariant::gcn:
        add(l, "W", glorot(in, out), true);
        add(l, "b", Matrix(1, out), false);
        break;
      case GnnVariant::sage:
        add(l, "W", glorot(2 * in, out), true);
        add(l, "b", Matrix(1, out), false);
        break;
      case GnnVariant::gin:
        add(l, "W1", glorot(in, out), true);
        add(l, "b1", Matrix(1, out), false);
        add(l, "W2", glorot(out, out), true);
        add(l, "b2", Matrix(1, out), false);
        if (cfg.learn_epsilon) add(l, "eps", Matrix(1, 1, cfg.epsilon), false);
        break;
      case GnnVariant::gat: {
        const std::size_t heads = is_last(m, l) ? cfg.output_heads : cfg.heads;
        for (std::size_t k = 0; k < heads; ++k) {
          const std::string p = "head" + std::to_string(k) + ".";
          add(l, p + "W", glorot(in, out), true);
          add(l, p + "a_src", glorot(out, 1), true);
          add(l, p + "a_dst", glorot(out, 1), true);
        }
        add(l, "b", Matrix(1, is_last(m, l) ? out : out * heads), false);
        break;
      }
    }
  }
  return m;
}

GnnGraph prepare_gnn_graph(const HomoGraph& g, GnnVariant variant) {
  GnnGraph gg;
  const std::size_t n = g.num_nodes();
  gg.num_nodes = n;
  switch (variant) {
    case GnnVariant::gcn:
      gg.norm_adj = normalized_adjacency(g);
      break;
    case GnnVariant::sage:
    case GnnVariant::gin: {
      SparseMatrix& s = variant == GnnVariant::sage ? gg.mean_adj : gg.sum_adj;
      s.rows = s.cols = n;
      s.offsets = g.offsets();
      s.indices.assign(g.targets().begin(), g.targets().end());
      s.values.resize(g.num_arcs());
      for (NodeId u = 0; u < n; ++u) {
        const double inv = g.degree(u) ? 1.0 / static_cast<double>(g.degree(u)) : 0.0;
        for (std::size_t k = g.offsets()[u]; k < g.offsets()[u + 1]; ++k)
          s.values[k] = variant == GnnVariant::sage ? inv : g.arc_weight(k);
      }
      break;
    }
    case GnnVariant::gat:
      gg.edge_offsets.push_back(0);
      for (NodeId u = 0; u < n; ++u) {
        gg.edge_dst.push_back(u);
        gg.edge_src.push_back(u);
        NodeId last = u;
        bool any = false;
        for (NodeId v : g.neighbors(u).targets) {
          if (v == u || (any && v == last)) continue;
          gg.edge_dst.push_back(u);
          gg.edge_src.push_back(v);
          last = v;
          any = true;
        }
        gg.edge_offsets.push_back(gg.edge_dst.size());
      }
      break;
  }
  return gg;
}

Tape::Var layer_forward(Tape& tape, const GnnModel& m, const GnnGraph& gg, std::size_t layer,
                        Tape::Var h, std::span<const Tape::Var> param_vars, LayerContext& ctx) {
  if (layer >= m.cfg.layers) throw UsageError("gnn: layer index out of range");
  if (param_vars.size() != m.params.size()) throw UsageError("gnn: parameter count mismatch");
  const Matrix& hv = tape.value(h);
  if (hv.rows() != gg.num_nodes || hv.cols() != layer_in(m, layer)) {
    std::ostringstream msg;
    msg << "gnn layer " << layer << ": input is " << hv.rows() << "x" << hv.cols() << ", expected "
        << gg.num_nodes << "x" << layer_in(m, layer);
    throw UsageError(msg.str());
  }
  const bool last = is_last(m, layer);
  if (ctx.training && ctx.rng && m.cfg.dropout > 0.0) h = tape.dropout(h, m.cfg.dropout, *ctx.rng);

  Tape::Var out = 0;
  switch (m.cfg.variant) {
    case GnnVariant::gcn:
      out = tape.add(tape.spmm(gg.norm_adj, tape.matmul(h, var_of(m, param_vars, layer, "W"))),
                     var_of(m, param_vars, layer, "b"));
      break;
    case GnnVariant::sage:
      out = tape.add(tape.matmul(tape.concat(h, tape.spmm(gg.mean_adj, h)),
                                 var_of(m, param_vars, layer, "W")),
                     var_of(m, param_vars, layer, "b"));
      break;
    case GnnVariant::gin: {
      Tape::Var one_plus_eps;
      if (m.cfg.learn_epsilon) {
        one_plus_eps = tape.add(var_of(m, param_vars, layer, "eps"), tape.owned(Matrix(1, 1, 1.0)));
      } else {
        one_plus_eps = tape.owned(Matrix(1, 1, 1.0 + m.cfg.epsilon));
      }
      const Tape::Var agg = tape.add(tape.hadamard(h, one_plus_eps), tape.spmm(gg.sum_adj, h));
      const Tape::Var hidden = tape.relu(tape.add(
          tape.matmul(agg, var_of(m, param_vars, layer, "W1")), var_of(m, param_vars, layer, "b1")));
      out = tape.add(tape.matmul(hidden, var_of(m, param_vars, layer, "W2")),
                     var_of(m, param_vars, layer, "b2"));
      break;
    }
    case GnnVariant::gat: {
      const std::size_t heads = last ? m.cfg.output_heads : m.cfg.heads;
      Tape::Var acc = gat_head(tape, m, gg, layer, 0, h, param_vars, ctx);
      for (std::size_t k = 1; k < heads; ++k) {
        const Tape::Var hk = gat_head(tape, m, gg, layer, k, h, param_vars, ctx);
        acc = last ? tape.add(acc, hk) : tape.concat(acc, hk);
      }
      if (last && heads > 1) acc = tape.scale(acc, 1.0 / static_cast<double>(heads));
      out = tape.add(acc, var_of(m, param_vars, layer, "b"));
      break;
    }
  }
  if (last) return out;
  return m.cfg.variant == GnnVariant::gat ? tape.elu(out) : tape.relu(out);
}

GnnForward gnn_forward(Tape& tape, const GnnModel& m, const GnnGraph& gg, const Matrix& features,
                       LayerContext ctx) {
  GnnForward f;
  for (const auto& p : m.params) f.params.push_back(tape.variable(p.value));
  if (!ctx.attention) ctx.attention = &f.attention;
  Tape::Var h = tape.constant(features);
  for (std::size_t l = 0; l < m.cfg.layers; ++l) {
    if (is_last(m, l)) f.penultimate = h;
    h = layer_forward(tape, m, gg, l, h, f.params, ctx);
  }
  f.logits = h;
  return f;
}

GnnState init_gnn_state(const GnnConfig& cfg, std::size_t in_dim, std::size_t classes) {
  GnnState s;
  s.model = init_gnn(cfg, in_dim, classes);
  for (const auto& p : s.model.params) {
    s.adam_m.emplace_back(p.value.rows(), p.value.cols());
    s.adam_v.emplace_back(p.value.rows(), p.value.cols());
  }
  return s;
}

double accuracy_on(const Matrix& logits, std::span<const std::uint32_t> labels,
                   std::span<const std::uint32_t> rows) {
  if (rows.empty()) return 0.0;
  std::size_t correct = 0;
  for (auto r : rows) {
    const auto z = logits.row(r);
    const auto pred = static_cast<std::uint32_t>(std::max_element(z.begin(), z.end()) - z.begin());
    correct += pred == labels[r];
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

GnnOutputs gnn_predict(const GnnModel& m, const GnnGraph& gg, const Matrix& features) {
  Tape tape;
  const auto f = gnn_forward(tape, m, gg, features);
  return {tape.value(f.logits), tape.value(f.penultimate)};
}

namespace {

void check_inputs(const HomoGraph& g, const GnnSplit& split) {
  if (!g.features() || !g.labels()) throw UsageError("gnn training needs node features and labels");
  if (split.train.empty()) throw UsageError("gnn: empty train mask");
  std::vector<std::uint8_t> seen(g.num_nodes(), 0);
  for (const auto* part : {&split.train, &split.valid, &split.test})
    for (auto u : *part) {
      if (u >= g.num_nodes()) throw UsageError("gnn: split index out of range");
      if (seen[u]++) throw UsageError("gnn: train/valid/test masks overlap");
    }
}

std::size_t num_classes(const HomoGraph& g) {
  std::size_t c = g.label_names().size();
  for (auto l : *g.labels()) c = std::max<std::size_t>(c, l + 1);
  return c;
}

}  // namespace

void train_gnn(const HomoGraph& g, const GnnSplit& split, const GnnConfig& cfg, GnnState& state) {
  cfg.validate();
  check_inputs(g, split);
  GnnModel& m = state.model;
  const Matrix& x = *g.features();
  const auto& labels = *g.labels();
  if (x.cols() != m.in_dim) throw DataError("gnn: feature width does not match the model");
  const GnnGraph gg = prepare_gnn_graph(g, m.cfg.variant);
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  for (std::size_t epoch = state.epochs_done; epoch < cfg.epochs && !state.stopped; ++epoch) {
    Rng rng(derive_seed(cfg.seed, kDropoutStream, epoch));
    Tape tape;
    LayerContext ctx{true, &rng, nullptr};
    const auto f = gnn_forward(tape, m, gg, x, ctx);
    const auto loss = tape.cross_entropy(f.logits, labels, split.train);
    const double lv = tape.value(loss)(0, 0);
    if (!std::isfinite(lv)) throw NumericError("gnn: non-finite loss at epoch " + std::to_string(epoch));
    tape.backward(loss);
    ++state.step;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      auto& p = m.params[i].value.data();
      const auto& gr = tape.grad(f.params[i]).data();
      auto& mm = state.adam_m[i].data();
      auto& vv = state.adam_v[i].data();
      const double wd = m.params[i].decay ? cfg.weight_decay : 0.0;
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double gk = gr[k] + wd * p[k];
        mm[k] = b1 * mm[k] + (1.0 - b1) * gk;
        vv[k] = b2 * vv[k] + (1.0 - b2) * gk * gk;
        p[k] -= cfg.lr * (mm[k] / c1) / (std::sqrt(vv[k] / c2) + eps);
      }
    }
    state.train_loss.push_back(lv);
    state.epochs_done = epoch + 1;

    if (split.valid.empty()) continue;
    Tape eval;
    const auto fe = gnn_forward(eval, m, gg, x);
    const double val = eval.value(eval.cross_entropy(fe.logits, labels, split.valid))(0, 0);
    state.val_loss.push_back(val);
    if (val < state.best_val) {
      state.best_val = val;
      state.bad_epochs = 0;
      state.best_params.clear();
      for (const auto& p : m.params) state.best_params.push_back(p.value);
    } else if (++state.bad_epochs >= cfg.patience) {
      state.stopped = true;
    }
  }
}

GnnRunResult train_node_classifier(const HomoGraph& g, const GnnSplit& split, const GnnConfig& cfg) {
  check_inputs(g, split);
  GnnRunResult r;
  r.state = init_gnn_state(cfg, g.features()->cols(), num_classes(g));
  train_gnn(g, split, cfg, r.state);
  r.best = r.state.model;
  if (!r.state.best_params.empty())
    for (std::size_t i = 0; i < r.best.params.size(); ++i) r.best.params[i].value = r.state.best_params[i];
  const auto out = gnn_predict(r.best, prepare_gnn_graph(g, cfg.variant), *g.features());
  r.test_accuracy = accuracy_on(out.logits, *g.labels(), split.test);
  return r;
}

}  // namespace connector
