#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "connector/graph.hpp"
#include "connector/matrix.hpp"

namespace connector {

struct BalanceTriplet {
  NodeId u = 0;
  NodeId v_pos = 0;  // num_nodes marks the virtual node
  NodeId v_neg = 0;
  bool uses_virtual = false;
  friend bool operator==(const BalanceTriplet&, const BalanceTriplet&) = default;
};

/// Triplets grouped by u in node order. With `symmetrize`, in-arcs of a
/// directed graph count as neighbours too.
std::vector<BalanceTriplet> extract_balance_triplets(const SignedGraph& sg, bool symmetrize = true,
                                                     std::size_t threads = 1);

struct SineGradient {
  double loss = 0.0;
  std::vector<double> u, pos, neg;
};

/// max(0, x_u.x_n + d - x_u.x_p) with d = delta0 for virtual triplets.
double sine_loss(std::span<const double> xu, std::span<const double> xp, std::span<const double> xn,
                 double delta, double delta0, bool uses_virtual);
SineGradient sine_gradient(std::span<const double> xu, std::span<const double> xp,
                           std::span<const double> xn, double delta, double delta0,
                           bool uses_virtual);

struct SineConfig {
  std::size_t dim = 64;
  double delta = 1.0;
  double delta0 = 0.5;
  double lambda = 1e-4;
  double lr = 0.01;
  std::size_t epochs = 50;
  std::size_t batch_size = 100;
  bool symmetrize = true;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
};

struct SineResult {
  Matrix embeddings;           // (num_nodes + 1) x dim, last row is the virtual node
  std::vector<double> losses;  // mean objective per triplet, one per epoch
};

Matrix init_sine(std::size_t num_nodes, const SineConfig& cfg);
SineResult train_sine(const SignedGraph& sg, const SineConfig& cfg);

}  // namespace connector
