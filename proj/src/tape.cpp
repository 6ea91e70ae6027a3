#include "connector/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "connector/errors.hpp"

namespace connector {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw UsageError("tape: " + msg);
}

// out += g * b^T
void add_matmul_nt(Matrix& out, const Matrix& g, const Matrix& b) {
  for (std::size_t i = 0; i < g.rows(); ++i) {
    const auto gi = g.row(i);
    auto oi = out.row(i);
    for (std::size_t k = 0; k < b.rows(); ++k) oi[k] += dot(gi, b.row(k));
  }
}

// out += a^T * g
void add_matmul_tn(Matrix& out, const Matrix& a, const Matrix& g) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ai = a.row(i);
    const auto gi = g.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double s = ai[k];
      if (s == 0.0) continue;
      auto ok = out.row(k);
      for (std::size_t j = 0; j < gi.size(); ++j) ok[j] += s * gi[j];
    }
  }
}

enum class Broadcast { same, row, column, scalar };

Broadcast broadcast_kind(const Matrix& a, const Matrix& b, bool allow_row, bool allow_column) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::same;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::scalar;
  if (allow_row && b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  if (allow_column && b.cols() == 1 && b.rows() == a.rows()) return Broadcast::column;
  throw UsageError("tape: shape mismatch " + std::to_string(a.rows()) + "x" +
                   std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                   std::to_string(b.cols()));
}

double bval(const Matrix& b, Broadcast k, std::size_t i, std::size_t j) {
  switch (k) {
    case Broadcast::same: return b(i, j);
    case Broadcast::row: return b(0, j);
    case Broadcast::column: return b(i, 0);
    case Broadcast::scalar: return b(0, 0);
  }
  return 0.0;
}

double& bref(Matrix& b, Broadcast k, std::size_t i, std::size_t j) {
  switch (k) {
    case Broadcast::same: return b(i, j);
    case Broadcast::row: return b(0, j);
    case Broadcast::column: return b(i, 0);
    case Broadcast::scalar: break;
  }
  return b(0, 0);
}

}  // namespace

Tape::Var Tape::constant(const Matrix& m) {
  Node n;
  n.ref = &m;
  nodes_.push_back(std::move(n));
  return static_cast<Var>(nodes_.size() - 1);
}

Tape::Var Tape::variable(const Matrix& m) {
  const Var v = constant(m);
  nodes_[v].requires_grad = true;
  return v;
}

Tape::Var Tape::owned(Matrix m, bool requires_grad) {
  Node n;
  n.own = std::move(m);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<Var>(nodes_.size() - 1);
}

const Matrix& Tape::value(Var v) const {
  require(v < nodes_.size(), "unknown variable");
  const Node& n = nodes_[v];
  return n.ref ? *n.ref : n.own;
}

Tape::Var Tape::push(Matrix value, bool requires_grad,
                     std::function<void(Tape&, const Matrix&)> back, const char* op) {
  require(!backward_done_, "cannot record after backward");
  if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  Node n;
  n.own = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<Var>(nodes_.size() - 1);
}

Matrix& Tape::grad_buffer(Var v) {
  Matrix& g = grads_[v];
  if (g.rows() == 0 && g.cols() == 0) {
    const Matrix& x = value(v);
    g = Matrix(x.rows(), x.cols());
  }
  return g;
}

const Matrix& Tape::grad(Var v) const {
  require(backward_done_, "grad requested before backward");
  require(v < nodes_.size(), "unknown variable");
  auto& self = const_cast<Tape&>(*this);
  return self.grad_buffer(v);
}

void Tape::backward(Var loss) {
  require(!nodes_.empty() && loss < nodes_.size(), "backward called before any forward op");
  require(!backward_done_, "backward already run");
  const Matrix& l = value(loss);
  require(l.rows() == 1 && l.cols() == 1, "loss must be a 1x1 scalar");
  grads_.assign(nodes_.size(), Matrix());
  backward_done_ = true;
  if (!nodes_[loss].requires_grad) return;
  grad_buffer(loss)(0, 0) = 1.0;
  for (std::size_t i = loss + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.back || grads_[i].size() == 0) continue;
    n.back(*this, grads_[i]);
  }
}

Tape::Var Tape::matmul(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  require(A.cols() == B.rows(), "matmul shape mismatch");
  return push(connector::matmul(A, B), needs(a) || needs(b),
              [a, b](Tape& t, const Matrix& g) {
                if (t.needs(a)) add_matmul_nt(t.grad_buffer(a), g, t.value(b));
                if (t.needs(b)) add_matmul_tn(t.grad_buffer(b), t.value(a), g);
              },
              "matmul");
}

Tape::Var Tape::spmm(const SparseMatrix& s, Var x) {
  const Matrix& X = value(x);
  require(s.cols == X.rows(), "spmm shape mismatch");
  const SparseMatrix* sp = &s;
  return push(connector::spmm(s, X), needs(x),
              [sp, x](Tape& t, const Matrix& g) {
                Matrix& gx = t.grad_buffer(x);
                for (std::size_t i = 0; i < sp->rows; ++i) {
                  const auto gi = g.row(i);
                  for (std::size_t k = sp->offsets[i]; k < sp->offsets[i + 1]; ++k) {
                    auto row = gx.row(sp->indices[k]);
                    const double w = sp->values[k];
                    for (std::size_t j = 0; j < row.size(); ++j) row[j] += w * gi[j];
                  }
                }
              },
              "spmm");
}

Tape::Var Tape::add(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  const Broadcast kind = broadcast_kind(A, B, true, false);
  Matrix out = A;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) += bval(B, kind, i, j);
  return push(std::move(out), needs(a) || needs(b),
              [a, b, kind](Tape& t, const Matrix& g) {
                if (t.needs(a)) {
                  auto& ga = t.grad_buffer(a).data();
                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g.data()[i];
                }
                if (t.needs(b)) {
                  Matrix& gb = t.grad_buffer(b);
                  for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) bref(gb, kind, i, j) += g(i, j);
                }
              },
              "add");
}

Tape::Var Tape::hadamard(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  const Broadcast kind = broadcast_kind(A, B, false, true);
  Matrix out = A;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) *= bval(B, kind, i, j);
  return push(std::move(out), needs(a) || needs(b),
              [a, b, kind](Tape& t, const Matrix& g) {
                const Matrix& A = t.value(a);
                const Matrix& B = t.value(b);
                if (t.needs(a)) {
                  Matrix& ga = t.grad_buffer(a);
                  for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) += g(i, j) * bval(B, kind, i, j);
                }
                if (t.needs(b)) {
                  Matrix& gb = t.grad_buffer(b);
                  for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) bref(gb, kind, i, j) += g(i, j) * A(i, j);
                }
              },
              "hadamard");
}

Tape::Var Tape::scale(Var a, double s) {
  return push(s * value(a), needs(a),
              [a, s](Tape& t, const Matrix& g) {
                auto& ga = t.grad_buffer(a).data();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * g.data()[i];
              },
              "scale");
}

Tape::Var Tape::relu(Var a) { return leaky_relu(a, 0.0); }

double Tape::min_kink_distance() const {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& n : nodes_)
    if (n.kink_input)
      for (double x : value(*n.kink_input).data()) d = std::min(d, std::abs(x));
  return d;
}

Tape::Var Tape::leaky_relu(Var a, double slope) {
  Matrix out = value(a);
  for (double& v : out.data())
    if (v < 0.0) v *= slope;
  const Var v = push(std::move(out), needs(a),
              [a, slope](Tape& t, const Matrix& g) {
                const auto& x = t.value(a).data();
                auto& ga = t.grad_buffer(a).data();
                for (std::size_t i = 0; i < ga.size(); ++i)
                  ga[i] += g.data()[i] * (x[i] > 0.0 ? 1.0 : slope);
              },
              "leaky_relu");
  nodes_[v].kink_input = a;
  return v;
}

Tape::Var Tape::elu(Var a, double alpha) {
  Matrix out = value(a);
  for (double& v : out.data())
    if (v < 0.0) v = alpha * std::expm1(v);
  const Var self = static_cast<Var>(nodes_.size());
  const Var v = push(std::move(out), needs(a),
              [a, alpha, self](Tape& t, const Matrix& g) {
                const auto& x = t.value(a).data();
                const auto& y = t.value(self).data();
                auto& ga = t.grad_buffer(a).data();
                for (std::size_t i = 0; i < ga.size(); ++i)
                  ga[i] += g.data()[i] * (x[i] > 0.0 ? 1.0 : y[i] + alpha);
              },
              "elu");
  nodes_[v].kink_input = a;
  return v;
}

Tape::Var Tape::row_softmax(Var a) {
  Matrix out = value(a);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double& v : r) s += (v = std::exp(v - mx));
    for (double& v : r) v /= s;
  }
  const Var self = static_cast<Var>(nodes_.size());
  return push(std::move(out), needs(a),
              [a, self](Tape& t, const Matrix& g) {
                const Matrix& y = t.value(self);
                Matrix& ga = t.grad_buffer(a);
                for (std::size_t i = 0; i < y.rows(); ++i) {
                  const double d = dot(g.row(i), y.row(i));
                  for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - d);
                }
              },
              "row_softmax");
}

Tape::Var Tape::segment_softmax(Var scores, std::span<const std::size_t> offsets) {
  const Matrix& s = value(scores);
  require(s.cols() == 1, "segment_softmax expects a column");
  require(!offsets.empty() && offsets.back() == s.rows(), "segment offsets do not cover scores");
  Matrix out = s;
  auto& y = out.data();
  for (std::size_t seg = 0; seg + 1 < offsets.size(); ++seg) {
    const std::size_t b = offsets[seg], e = offsets[seg + 1];
    if (b == e) continue;
    const double mx = *std::max_element(y.begin() + b, y.begin() + e);
    double total = 0.0;
    for (std::size_t k = b; k < e; ++k) total += (y[k] = std::exp(y[k] - mx));
    for (std::size_t k = b; k < e; ++k) y[k] /= total;
  }
  std::vector<std::size_t> offs(offsets.begin(), offsets.end());
  const Var self = static_cast<Var>(nodes_.size());
  return push(std::move(out), needs(scores),
              [scores, self, offs = std::move(offs)](Tape& t, const Matrix& g) {
                const auto& y = t.value(self).data();
                auto& gs = t.grad_buffer(scores).data();
                for (std::size_t seg = 0; seg + 1 < offs.size(); ++seg) {
                  double d = 0.0;
                  for (std::size_t k = offs[seg]; k < offs[seg + 1]; ++k) d += g.data()[k] * y[k];
                  for (std::size_t k = offs[seg]; k < offs[seg + 1]; ++k)
                    gs[k] += y[k] * (g.data()[k] - d);
                }
              },
              "segment_softmax");
}

Tape::Var Tape::concat(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  require(A.rows() == B.rows(), "concat row mismatch");
  Matrix out(A.rows(), A.cols() + B.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) {
    std::copy(A.row(i).begin(), A.row(i).end(), out.row(i).begin());
    std::copy(B.row(i).begin(), B.row(i).end(), out.row(i).begin() + A.cols());
  }
  const std::size_t split = A.cols();
  return push(std::move(out), needs(a) || needs(b),
              [a, b, split](Tape& t, const Matrix& g) {
                for (std::size_t i = 0; i < g.rows(); ++i) {
                  const auto gi = g.row(i);
                  if (t.needs(a)) {
                    auto r = t.grad_buffer(a).row(i);
                    for (std::size_t j = 0; j < split; ++j) r[j] += gi[j];
                  }
                  if (t.needs(b)) {
                    auto r = t.grad_buffer(b).row(i);
                    for (std::size_t j = 0; j < r.size(); ++j) r[j] += gi[split + j];
                  }
                }
              },
              "concat");
}

Tape::Var Tape::dropout(Var a, double p, Rng& rng) {
  require(p >= 0.0 && p < 1.0, "dropout p must be in [0, 1)");
  if (p == 0.0) return scale(a, 1.0);
  const Matrix& A = value(a);
  Matrix mask(A.rows(), A.cols());
  const double keep = 1.0 / (1.0 - p);
  for (double& m : mask.data()) m = uniform01(rng) < p ? 0.0 : keep;
  Matrix out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= mask.data()[i];
  return push(std::move(out), needs(a),
              [a, mask = std::move(mask)](Tape& t, const Matrix& g) {
                auto& ga = t.grad_buffer(a).data();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g.data()[i] * mask.data()[i];
              },
              "dropout");
}

Tape::Var Tape::gather_rows(Var a, std::span<const std::uint32_t> idx) {
  const Matrix& A = value(a);
  Matrix out(idx.size(), A.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < A.rows(), "gather index out of range");
    std::copy(A.row(idx[i]).begin(), A.row(idx[i]).end(), out.row(i).begin());
  }
  std::vector<std::uint32_t> ids(idx.begin(), idx.end());
  return push(std::move(out), needs(a),
              [a, ids = std::move(ids)](Tape& t, const Matrix& g) {
                Matrix& ga = t.grad_buffer(a);
                for (std::size_t i = 0; i < ids.size(); ++i) {
                  auto r = ga.row(ids[i]);
                  const auto gi = g.row(i);
                  for (std::size_t j = 0; j < r.size(); ++j) r[j] += gi[j];
                }
              },
              "gather_rows");
}

Tape::Var Tape::scatter_add(Var a, std::span<const std::uint32_t> idx, std::size_t rows) {
  const Matrix& A = value(a);
  require(idx.size() == A.rows(), "scatter index count mismatch");
  Matrix out(rows, A.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < rows, "scatter index out of range");
    auto r = out.row(idx[i]);
    const auto ai = A.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += ai[j];
  }
  std::vector<std::uint32_t> ids(idx.begin(), idx.end());
  return push(std::move(out), needs(a),
              [a, ids = std::move(ids)](Tape& t, const Matrix& g) {
                Matrix& ga = t.grad_buffer(a);
                for (std::size_t i = 0; i < ids.size(); ++i) {
                  auto r = ga.row(i);
                  const auto gi = g.row(ids[i]);
                  for (std::size_t j = 0; j < r.size(); ++j) r[j] += gi[j];
                }
              },
              "scatter_add");
}

Tape::Var Tape::cross_entropy(Var logits, std::span<const std::uint32_t> labels,
                              std::span<const std::uint32_t> rows) {
  const Matrix& z = value(logits);
  require(labels.size() == z.rows(), "label count mismatch");
  require(!rows.empty(), "cross_entropy over an empty row set");
  Matrix probs(rows.size(), z.cols());
  double loss = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = z.row(rows[k]);
    require(labels[rows[k]] < z.cols(), "label out of range");
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double v : r) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    loss += lse - r[labels[rows[k]]];
    for (std::size_t j = 0; j < r.size(); ++j) probs(k, j) = std::exp(r[j] - lse);
  }
  const double n = static_cast<double>(rows.size());
  std::vector<std::uint32_t> rs(rows.begin(), rows.end());
  std::vector<std::uint32_t> ls(labels.begin(), labels.end());
  return push(Matrix(1, 1, loss / n), needs(logits),
              [logits, n, rs = std::move(rs), ls = std::move(ls), probs = std::move(probs)](
                  Tape& t, const Matrix& g) {
                Matrix& gz = t.grad_buffer(logits);
                const double s = g(0, 0) / n;
                for (std::size_t k = 0; k < rs.size(); ++k) {
                  auto r = gz.row(rs[k]);
                  for (std::size_t j = 0; j < r.size(); ++j) r[j] += s * probs(k, j);
                  r[ls[rs[k]]] -= s;
                }
              },
              "cross_entropy");
}

Tape::Var Tape::sum(Var a) {
  double s = 0.0;
  for (double v : value(a).data()) s += v;
  return push(Matrix(1, 1, s), needs(a),
              [a](Tape& t, const Matrix& g) {
                for (double& v : t.grad_buffer(a).data()) v += g(0, 0);
              },
              "sum");
}

}  // namespace connector
