#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "connector/matrix.hpp"
#include "connector/random.hpp"

namespace connector {

/// Reverse-mode autodiff over dense matrices. Ops are recorded in call order;
/// backward() walks them once in reverse.
class Tape {
 public:
  using Var = std::uint32_t;

  /// Leaves referencing caller-owned matrices; they must outlive the tape.
  Var constant(const Matrix& m);
  Var variable(const Matrix& m);
  /// Leaf owning its value.
  Var owned(Matrix m, bool requires_grad = false);

  const Matrix& value(Var v) const;
  /// Gradient after backward(); a zero matrix if v did not influence the loss.
  const Matrix& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  /// Smallest |x| over the inputs of recorded relu, leaky_relu and elu ops;
  /// +inf if there are none. Finite differences are only valid beyond it.
  double min_kink_distance() const;

  void backward(Var loss);

  Var matmul(Var a, Var b);
  Var spmm(const SparseMatrix& s, Var x);  // s must outlive the tape
  /// b may match a, or be a 1 x cols row broadcast down the rows.
  Var add(Var a, Var b);
  /// b may match a, be an n x 1 column broadcast across columns, or 1 x 1.
  Var hadamard(Var a, Var b);
  Var scale(Var a, double s);
  Var relu(Var a);
  Var leaky_relu(Var a, double slope);
  Var elu(Var a, double alpha = 1.0);
  Var row_softmax(Var a);
  /// Softmax of an E x 1 column within segments [offsets[i], offsets[i+1]).
  Var segment_softmax(Var scores, std::span<const std::size_t> offsets);
  Var concat(Var a, Var b);  // column-wise
  Var dropout(Var a, double p, Rng& rng);
  Var gather_rows(Var a, std::span<const std::uint32_t> idx);
  Var scatter_add(Var a, std::span<const std::uint32_t> idx, std::size_t rows);
  /// Mean softmax cross-entropy over `rows`, as a 1 x 1 value.
  Var cross_entropy(Var logits, std::span<const std::uint32_t> labels,
                    std::span<const std::uint32_t> rows);
  Var sum(Var a);

 private:
  struct Node {
    Matrix own;
    const Matrix* ref = nullptr;
    bool requires_grad = false;
    std::function<void(Tape&, const Matrix& g)> back;
    std::optional<Var> kink_input;  // argument of a piecewise activation
  };

  Var push(Matrix value, bool requires_grad, std::function<void(Tape&, const Matrix&)> back,
           const char* op);
  Matrix& grad_buffer(Var v);
  bool needs(Var v) const { return nodes_[v].requires_grad; }

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
  bool backward_done_ = false;
};

}  // namespace connector
