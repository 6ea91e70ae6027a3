#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "connector/graph.hpp"
#include "connector/matrix.hpp"
#include "connector/tape.hpp"

namespace connector {

enum class GnnVariant { gcn, sage, gin, gat };

GnnVariant parse_gnn_variant(const std::string& s);
std::string to_string(GnnVariant v);

struct GnnConfig {
  GnnVariant variant = GnnVariant::gcn;
  std::size_t layers = 2;
  std::size_t hidden_dim = 0;  // 0 selects 16, or 8 per head for GAT
  double epsilon = 0.0;        // GIN
  bool learn_epsilon = false;  // GIN
  std::size_t heads = 8;       // GAT hidden layers, concatenated
  std::size_t output_heads = 1;  // GAT output layer, averaged
  double leaky_slope = 0.2;
  double dropout = 0.5;
  double lr = 0.01;
  double weight_decay = 5e-4;
  std::size_t epochs = 200;
  std::size_t patience = 20;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t effective_hidden() const;
};

struct NamedTensor {
  std::string name;
  Matrix value;
  bool decay = true;  // weight decay applies
};

struct GnnModel {
  GnnConfig cfg;
  std::size_t in_dim = 0;
  std::size_t classes = 0;
  std::vector<NamedTensor> params;

  std::size_t index_of(const std::string& name) const;
  Matrix& param(const std::string& name) { return params[index_of(name)].value; }
  const Matrix& param(const std::string& name) const { return params[index_of(name)].value; }
};

GnnModel init_gnn(const GnnConfig& cfg, std::size_t in_dim, std::size_t classes);

/// Graph operators a variant needs, built once per graph.
struct GnnGraph {
  std::size_t num_nodes = 0;
  SparseMatrix norm_adj;  // GCN: D^-1/2 (A + I) D^-1/2
  SparseMatrix mean_adj;  // SAGE: row-normalized A, empty rows stay zero
  SparseMatrix sum_adj;   // GIN: A
  // GAT: incoming edges of node u, self-loop included, at [edge_offsets[u], edge_offsets[u+1]).
  std::vector<std::size_t> edge_offsets;
  std::vector<std::uint32_t> edge_dst, edge_src;
};

GnnGraph prepare_gnn_graph(const HomoGraph& g, GnnVariant variant);

struct LayerContext {
  bool training = false;
  Rng* rng = nullptr;
  std::vector<Tape::Var>* attention = nullptr;  // GAT: one E x 1 var per head
};

/// One layer; `param_vars` aligns with model.params.
Tape::Var layer_forward(Tape& tape, const GnnModel& m, const GnnGraph& gg, std::size_t layer,
                        Tape::Var h, std::span<const Tape::Var> param_vars, LayerContext& ctx);

struct GnnForward {
  Tape::Var logits = 0;
  Tape::Var penultimate = 0;  // input of the last layer
  std::vector<Tape::Var> params;
  std::vector<Tape::Var> attention;
};

GnnForward gnn_forward(Tape& tape, const GnnModel& m, const GnnGraph& gg, const Matrix& features,
                       LayerContext ctx = {});

struct GnnSplit {
  std::vector<std::uint32_t> train, valid, test;
};

struct GnnState {
  GnnModel model;
  std::vector<Matrix> adam_m, adam_v;
  std::size_t step = 0;
  std::size_t epochs_done = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;
  bool stopped = false;
  std::vector<Matrix> best_params;
  std::vector<double> train_loss, val_loss;
};

GnnState init_gnn_state(const GnnConfig& cfg, std::size_t in_dim, std::size_t classes);

/// Continues from state.epochs_done up to cfg.epochs or early stop. The
/// state's model keeps the latest parameters; best_params holds the ones
/// with the lowest validation loss.
void train_gnn(const HomoGraph& g, const GnnSplit& split, const GnnConfig& cfg, GnnState& state);

struct GnnOutputs {
  Matrix logits;
  Matrix penultimate;
};

GnnOutputs gnn_predict(const GnnModel& m, const GnnGraph& gg, const Matrix& features);
double accuracy_on(const Matrix& logits, std::span<const std::uint32_t> labels,
                   std::span<const std::uint32_t> rows);

struct GnnRunResult {
  GnnState state;
  GnnModel best;  // parameters with the lowest validation loss
  double test_accuracy = 0.0;
};

GnnRunResult train_node_classifier(const HomoGraph& g, const GnnSplit& split, const GnnConfig& cfg);

}  // namespace connector
