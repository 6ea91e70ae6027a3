#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "connector/graph.hpp"
#include "connector/matrix.hpp"
#include "connector/random.hpp"

namespace connector {

enum class KgeVariant { transe_l1, transe_l2, transh, transr };

KgeVariant parse_kge_variant(const std::string& s);
std::string to_string(KgeVariant v);

enum class Corruption { uniform, bernoulli };

Corruption parse_corruption(const std::string& s);
std::string to_string(Corruption c);

struct KgeModel {
  KgeVariant variant = KgeVariant::transe_l2;
  Matrix entities;          // |E| x d_e
  Matrix relations;         // |R| x d_r
  Matrix normals;           // |R| x d_e, TransH only
  std::vector<Matrix> maps; // |R| matrices d_e x d_r, TransR only

  std::size_t entity_dim() const { return entities.cols(); }
  std::size_t relation_dim() const { return relations.cols(); }
  void check_invariants() const;
};

struct KgeConfig {
  KgeVariant variant = KgeVariant::transe_l2;
  std::size_t d_e = 50;
  std::size_t d_r = 50;
  double margin = 1.0;
  double lr = 0.01;
  std::size_t epochs = 500;
  std::size_t batch_size = 100;
  Corruption corruption = Corruption::uniform;
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // evaluation only

  void validate() const;
};

KgeModel init_kge(std::size_t num_entities, std::size_t num_relations, const KgeConfig& cfg);

/// Lower is more plausible.
double score(const KgeModel& m, std::uint32_t h, std::uint32_t r, std::uint32_t t);
inline double score(const KgeModel& m, const Triple& x) { return score(m, x.head, x.relation, x.tail); }

struct ScoreGradient {
  double score = 0.0;
  std::vector<double> head, relation, tail;
  std::vector<double> normal;  // TransH
  Matrix map;                  // TransR
};

/// Analytic gradient of score() with respect to every parameter it touches.
ScoreGradient score_gradient(const KgeModel& m, const Triple& x);

/// Per-relation probability of replacing the head (tph / (tph + hpt) from train).
std::vector<double> bernoulli_head_probabilities(const KnowledgeGraph& kg);

struct CorruptedTriple {
  Triple triple;
  bool replaced_head = false;
};

/// `head_prob` is only read in bernoulli mode.
CorruptedTriple corrupt(const Triple& x, std::size_t num_entities, Corruption mode,
                        std::span<const double> head_prob, Rng& rng);

inline double margin_loss(double pos, double neg, double margin) {
  const double v = margin + pos - neg;
  return v > 0.0 ? v : 0.0;
}

/// Mean hinge over every train triple against every single-side corruption.
double expected_margin_loss(const KgeModel& m, const KnowledgeGraph& kg, double margin);

struct KgeState {
  KgeModel model;
  std::size_t epochs_done = 0;
  std::vector<double> losses;  // mean per-pair loss, one per epoch
};

/// Runs epochs [state.epochs_done, cfg.epochs). Resuming from a saved state
/// reproduces the uninterrupted run exactly.
void train_kge(const KnowledgeGraph& kg, const KgeConfig& cfg, KgeState& state);
KgeState train_kge(const KnowledgeGraph& kg, const KgeConfig& cfg);

struct RankingMetrics {
  double mr = 0.0;
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
  std::size_t queries = 0;
};

/// Rank of the true entity; ties get the mean rank of their block.
double tie_rank(std::size_t better, std::size_t ties);

/// Head and tail ranks for each triple, in order (2 per triple).
std::vector<double> ranking_ranks(const KgeModel& m, const KnowledgeGraph& kg,
                                  std::span<const Triple> triples, bool filtered,
                                  std::size_t threads = 1);

RankingMetrics summarize_ranks(std::span<const double> ranks);

RankingMetrics evaluate_ranking(const KgeModel& m, const KnowledgeGraph& kg, bool filtered,
                                std::size_t threads = 1);

}  // namespace connector
