#pragma once

#include <cstddef>
#include <vector>

#include "connector/graph.hpp"
#include "connector/matrix.hpp"

namespace connector {

struct KatzConfig {
  double beta = 0.0;  // <= 0 selects 0.5 / estimated spectral radius
  std::size_t dim = 128;
};

/// Dense (weighted) adjacency; parallel arcs accumulate.
Matrix adjacency_matrix(const HomoGraph& g);

/// Power-iteration estimate of the spectral radius of A (100 steps by default).
double spectral_radius_estimate(const HomoGraph& g, std::size_t iterations = 100);

/// Solves A X = B by LU decomposition with partial pivoting.
Matrix lu_solve(const Matrix& a, const Matrix& b);

/// S = (I - beta A)^-1 beta A. Throws UsageError unless beta * rho(A) < 1.
Matrix katz_matrix(const HomoGraph& g, double beta);

struct Svd {
  Matrix u;                   // rows x rank
  std::vector<double> sigma;  // descending
  Matrix v;                   // cols x rank
};

/// Top-`rank` singular triplets via one-sided Jacobi rotations.
Svd truncated_svd(const Matrix& m, std::size_t rank);

struct HopeEmbedding {
  Matrix source;  // U sqrt(Σ)
  Matrix target;  // V sqrt(Σ)
  double beta = 0.0;
};

HopeEmbedding hope_embed(const HomoGraph& g, const KatzConfig& cfg);

}  // namespace connector
