#include "connector/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "connector/errors.hpp"

namespace connector {

namespace {

// One-sided Jacobi (Hestenes) on a tall matrix: orthogonalizes the columns of
// `work` in place and accumulates the rotations into `v`.
void hestenes(Matrix& work, Matrix& v) {
  const std::size_t m = work.rows();
  const std::size_t n = work.cols();
  v = Matrix::identity(n);
  for (int sweep = 0; sweep < 80; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += work(i, p) * work(i, p);
          beta += work(i, q) * work(i, q);
          gamma += work(i, p) * work(i, q);
        }
        if (gamma == 0.0) continue;
        const double scale = std::sqrt(alpha * beta);
        if (scale == 0.0) continue;
        off = std::max(off, std::abs(gamma) / scale);
        if (std::abs(gamma) <= 1e-17 * scale) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = work(i, p);
          const double wq = work(i, q);
          work(i, p) = c * wp - s * wq;
          work(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p);
          const double vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (off < 1e-15) break;
  }
}

// Replaces columns flagged in `fill` with unit vectors orthogonal to all others.
void complete_orthonormal(Matrix& q, const std::vector<bool>& fill) {
  const std::size_t m = q.rows();
  std::size_t candidate = 0;
  for (std::size_t col = 0; col < q.cols(); ++col) {
    if (!fill[col]) continue;
    while (candidate < m) {
      std::vector<double> x(m, 0.0);
      x[candidate++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t other = 0; other < q.cols(); ++other) {
          if (other == col || (fill[other] && other > col)) continue;
          double d = 0.0;
          for (std::size_t i = 0; i < m; ++i) d += q(i, other) * x[i];
          for (std::size_t i = 0; i < m; ++i) x[i] -= d * q(i, other);
        }
      }
      const double nx = norm2(x);
      if (nx > 0.5) {
        for (std::size_t i = 0; i < m; ++i) q(i, col) = x[i] / nx;
        break;
      }
    }
  }
}

}  // namespace

Matrix adjacency_matrix(const HomoGraph& g) {
  Matrix a(g.num_nodes(), g.num_nodes());
  for (NodeId u = 0; u < g.num_nodes(); ++u)
    for (std::size_t k = g.offsets()[u]; k < g.offsets()[u + 1]; ++k)
      a(u, g.targets()[k]) += g.arc_weight(k);
  return a;
}

double spectral_radius_estimate(const HomoGraph& g, std::size_t iterations) {
  const std::size_t n = g.num_nodes();
  if (n == 0) return 0.0;
  std::vector<double> x(n, 1.0 / std::sqrt(static_cast<double>(n)));
  std::vector<double> y(n);
  double lambda = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    std::fill(y.begin(), y.end(), 0.0);
    for (NodeId u = 0; u < n; ++u)
      for (std::size_t k = g.offsets()[u]; k < g.offsets()[u + 1]; ++k)
        y[u] += g.arc_weight(k) * x[g.targets()[k]];
    lambda = norm2(y);
    if (lambda == 0.0) return 0.0;
    for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / lambda;
  }
  return lambda;
}

Matrix lu_solve(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.rows() != n) throw UsageError("lu_solve: shape mismatch");
  Matrix lu = a;
  Matrix x = b;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(lu(i, k)) > std::abs(lu(pivot, k))) pivot = i;
    if (lu(pivot, k) == 0.0) throw NumericError("lu_solve: singular matrix");
    if (pivot != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(pivot, j));
      for (std::size_t j = 0; j < x.cols(); ++j) std::swap(x(k, j), x(pivot, j));
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = lu(i, k) / lu(k, k);
      lu(i, k) = f;
      for (std::size_t j = k + 1; j < n; ++j) lu(i, j) -= f * lu(k, j);
      for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) -= f * x(k, j);
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double s = x(k, j);
      for (std::size_t i = k + 1; i < n; ++i) s -= lu(k, i) * x(i, j);
      x(k, j) = s / lu(k, k);
    }
  }
  return x;
}

Matrix katz_matrix(const HomoGraph& g, double beta) {
  if (!(beta > 0.0)) throw UsageError("katz beta must be > 0");
  const double rho = spectral_radius_estimate(g);
  if (beta * rho >= 1.0) {
    std::ostringstream msg;
    msg << "katz beta " << beta << " too large: beta * rho(A) = " << beta * rho
        << " >= 1 (rho estimate " << rho << ")";
    throw UsageError(msg.str());
  }
  const std::size_t n = g.num_nodes();
  const Matrix beta_a = beta * adjacency_matrix(g);
  return lu_solve(Matrix::identity(n) - beta_a, beta_a);
}

Svd truncated_svd(const Matrix& m, std::size_t rank) {
  if (!m.all_finite()) throw NumericError("truncated_svd: non-finite entries");
  if (rank > std::min(m.rows(), m.cols()))
    throw UsageError("truncated_svd: rank exceeds min(rows, cols)");
  const bool wide = m.cols() > m.rows();
  Matrix work = wide ? m.transpose() : m;
  Matrix right;
  hestenes(work, right);

  const std::size_t k = work.cols();
  std::vector<double> sigma(k);
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < work.rows(); ++i) s += work(i, j) * work(i, j);
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  const double tiny = (sigma.empty() ? 0.0 : sigma[order[0]]) * 1e-14;
  Matrix left(work.rows(), rank);
  Matrix rv(right.rows(), rank);
  std::vector<double> s(rank);
  std::vector<bool> fill(rank, false);
  for (std::size_t c = 0; c < rank; ++c) {
    const std::size_t j = order[c];
    s[c] = sigma[j];
    for (std::size_t i = 0; i < right.rows(); ++i) rv(i, c) = right(i, j);
    if (sigma[j] > tiny && sigma[j] > 0.0) {
      for (std::size_t i = 0; i < work.rows(); ++i) left(i, c) = work(i, j) / sigma[j];
    } else {
      fill[c] = true;
    }
  }
  complete_orthonormal(left, fill);

  Svd out;
  out.sigma = std::move(s);
  if (wide) {
    out.u = std::move(rv);
    out.v = std::move(left);
  } else {
    out.u = std::move(left);
    out.v = std::move(rv);
  }
  return out;
}

HopeEmbedding hope_embed(const HomoGraph& g, const KatzConfig& cfg) {
  if (cfg.dim < 1 || cfg.dim > g.num_nodes())
    throw UsageError("hope dim must be in [1, num_nodes]");
  double beta = cfg.beta;
  if (beta <= 0.0) {
    const double rho = spectral_radius_estimate(g);
    beta = rho > 0.0 ? 0.5 / rho : 0.5;
  }
  const Matrix s = katz_matrix(g, beta);
  const Svd svd = truncated_svd(s, cfg.dim);
  HopeEmbedding out;
  out.beta = beta;
  out.source = svd.u;
  out.target = svd.v;
  for (std::size_t c = 0; c < cfg.dim; ++c) {
    const double r = std::sqrt(svd.sigma[c]);
    for (std::size_t i = 0; i < out.source.rows(); ++i) out.source(i, c) *= r;
    for (std::size_t i = 0; i < out.target.rows(); ++i) out.target(i, c) *= r;
  }
  return out;
}

}  // namespace connector
