#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "connector/graph.hpp"
#include "connector/walks.hpp"

namespace connector {

struct Vocab {
  std::vector<NodeId> tokens;  // vocab index -> token
  std::unordered_map<NodeId, std::uint32_t> index;
  std::vector<std::uint64_t> counts;
  std::vector<double> noise_weights;  // counts^0.75

  std::size_t size() const { return tokens.size(); }
  std::uint32_t at(NodeId token) const;
  double noise_probability(std::uint32_t i) const;
};

/// Every token that occurs at least once; first-occurrence order.
Vocab build_vocab(const WalkCorpus& corpus);

/// Input ("syn0") and output ("syn1neg") vectors, one row per vocab entry.
struct EmbeddingTable {
  std::size_t dim = 0;
  Matrix input;
  Matrix output;
};

struct SgnsConfig {
  std::size_t dim = 128;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double initial_lr = 0.025;
  double min_lr = 0.0001;
  std::uint64_t seed = 0;
  bool hetero_negatives = false;
  double subsample = 0.0;  // word2vec "sample" threshold; 0 disables
  std::size_t threads = 1;
  bool deterministic = false;

  void validate() const;
};

struct SgnsGradient {
  double loss = 0.0;
  std::vector<double> grad_u;
  std::vector<double> grad_v;
};

/// Loss and gradients of -log σ(u·v) (label 1) or -log σ(-u·v) (label 0).
SgnsGradient sgns_step(std::span<const double> u, std::span<const double> v, int label);

/// Noise distribution over vocab entries, optionally split per token type.
class NegativeSampler {
 public:
  NegativeSampler(const Vocab& vocab, std::optional<std::span<const std::uint32_t>> type_of);

  std::uint32_t draw(Rng& rng) const;
  /// Draw restricted to vocab entries whose token has `type`.
  std::uint32_t draw_of_type(std::uint32_t type, Rng& rng) const;
  std::uint32_t type_of(std::uint32_t vocab_index) const { return types_[vocab_index]; }

 private:
  AliasTable all_;
  std::vector<std::uint32_t> types_;
  std::vector<AliasTable> per_type_;
  std::vector<std::vector<std::uint32_t>> members_;
};

struct SgnsOptions {
  /// Token -> type, indexed by token id. Required when hetero_negatives is set.
  std::optional<std::span<const std::uint32_t>> type_of;
  /// Called with (context vocab index, negative vocab index) for every negative drawn.
  /// Only invoked in single-worker runs.
  std::function<void(std::uint32_t, std::uint32_t)> on_negative;
};

/// Returns the full table; `input` holds the node embeddings.
EmbeddingTable train_sgns(const WalkCorpus& corpus, const Vocab& vocab, const SgnsConfig& cfg,
                          const SgnsOptions& options = {});

/// The table train_sgns starts from: input uniform in ±0.5/dim, output zero.
EmbeddingTable init_embeddings(std::size_t vocab_size, std::size_t dim, std::uint64_t seed);

}  // namespace connector
