#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "connector/eval.hpp"
#include "connector/gnn.hpp"
#include "connector/kge.hpp"
#include "connector/loaders.hpp"
#include "connector/matrix.hpp"
#include "connector/parallel.hpp"
#include "connector/sgns.hpp"
#include "connector/walks.hpp"

namespace connector {

using Json = nlohmann::json;

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr const char* kVersion = "0.1.0";

/// Registry order; also the order listed in error messages.
const std::vector<std::string>& model_names();
bool is_model(const std::string& name);
GraphKind model_graph_kind(const std::string& model);
/// Declared parameters and their defaults for one model, as a JSON object.
const Json& param_defaults(const std::string& model);

struct RunConfig {
  std::string model;
  DatasetSpec graph;
  bool has_graph = false;
  Json params = Json::object();  // defaults filled
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool deterministic = false;
  std::filesystem::path output_dir = "out";
  double eval_ratio = 0.5;        // node classification on embeddings when labels exist
  std::filesystem::path resume;   // checkpoint to continue from (KGE and GNN models)

  std::size_t effective_threads() const { return deterministic ? 1 : threads; }
  /// Document accepted back by config_from_json; paths are absolute.
  Json to_json() const;
};

/// Relative dataset and resume paths resolve against `base_dir`.
RunConfig config_from_json(const Json& doc, const std::filesystem::path& base_dir);
RunConfig parse_config(const std::filesystem::path& path);

/// Per-module configs built from a RunConfig; each is validated.
WalkConfig walk_config(const RunConfig& rc);
SgnsConfig sgns_config(const RunConfig& rc);
KgeConfig kge_config(const RunConfig& rc);
GnnConfig gnn_config(const RunConfig& rc);

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);

struct EmbeddingFile {
  std::vector<std::string> tokens;
  Matrix vectors;
};

/// word2vec text format: "N D" then "token v1 ... vD" per row.
void save_embeddings(const std::filesystem::path& path, const Matrix& vectors,
                     std::span<const std::string> tokens);
std::string embeddings_to_string(const Matrix& vectors, std::span<const std::string> tokens);
EmbeddingFile load_embeddings(const std::filesystem::path& path);

struct CheckpointTensor {
  std::string name;
  Matrix value;
  friend bool operator==(const CheckpointTensor&, const CheckpointTensor&) = default;
};

struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  std::string model;
  Json config = Json::object();
  std::vector<CheckpointTensor> tensors;
  Json state = Json::object();  // counters, loss curves, rng descriptor

  const Matrix& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string checkpoint_to_string(const Checkpoint& cp);
Checkpoint checkpoint_from_string(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint kge_checkpoint(const RunConfig& rc, const KgeState& state);
/// Throws DataError on a model or tensor shape mismatch.
KgeState kge_state_from(const Checkpoint& cp, const RunConfig& rc, std::size_t num_entities,
                        std::size_t num_relations);

Checkpoint gnn_checkpoint(const RunConfig& rc, const GnnState& state);
GnnState gnn_state_from(const Checkpoint& cp, const RunConfig& rc, std::size_t in_dim,
                        std::size_t classes);

struct NamedEmbedding {
  std::string suffix;  // "" for the main table, else written as embeddings_<suffix>.txt
  std::vector<std::string> tokens;
  Matrix vectors;
};

struct RunResult {
  std::vector<NamedEmbedding> embeddings;  // first entry is the main table
  Json metrics = Json::object();
  std::optional<Checkpoint> checkpoint;
  std::vector<std::string> warnings;
};

RunResult run_model(const RunConfig& rc);

/// embeddings*.txt, metrics.json, metrics.txt, manifest.json and checkpoint.json.
void write_run_outputs(const RunConfig& rc, const RunResult& result);

Json manifest_json(const RunConfig& rc);

/// Node classification on an embedding file joined with a label file by token.
NodeClassification evaluate_embedding_file(const std::filesystem::path& embeddings,
                                           const std::filesystem::path& labels, double ratio,
                                           std::uint64_t seed);

struct TokenCorpus {
  WalkCorpus corpus;
  std::vector<std::string> tokens;  // node id -> token
};

/// Walks of a walk-based model exactly as `train` would generate them.
TokenCorpus walk_corpus(const RunConfig& rc);
/// One walk per line, space-separated tokens.
std::string corpus_text(const TokenCorpus& t);

/// Writes the dataset under rc.output_dir as plain text; returns the files written.
std::vector<std::filesystem::path> export_graph(const RunConfig& rc);

/// Flat "key value" lines, keys sorted.
std::string metrics_text(const Json& metrics);

enum ExitCode { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

/// `args` excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace connector
