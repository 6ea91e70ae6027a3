#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "connector/errors.hpp"
#include "connector/tape.hpp"
#include "fd_oracle.hpp"

using namespace connector;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> n01;
  Matrix m(r, c);
  for (double& v : m.data()) v = n01(rng);
  return m;
}

// Checks every input of a single op. `build` records the op given leaf vars;
// the scalar loss is sum(op(...) * weights) with fixed random weights.
void check_op(std::vector<Matrix> inputs,
              const std::function<Tape::Var(Tape&, const std::vector<Tape::Var>&)>& build,
              std::mt19937_64& rng, double tol = 1e-7) {
  Matrix weights;
  auto loss_of = [&](Tape& t, bool make_weights) {
    std::vector<Tape::Var> vars;
    for (auto& m : inputs) vars.push_back(t.variable(m));
    const Tape::Var out = build(t, vars);
    if (make_weights) weights = random_matrix(rng, t.value(out).rows(), t.value(out).cols());
    return std::pair{t.sum(t.hadamard(out, t.constant(weights))), vars};
  };
  Tape tape;
  auto [loss, vars] = loss_of(tape, true);
  tape.backward(loss);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto f = [&] {
      Tape t;
      return t.value(loss_of(t, false).first)(0, 0);
    };
    const auto numeric = fd::gradient(inputs[i].data(), f);
    EXPECT_LE(fd::relative_error(tape.grad(vars[i]).data(), numeric), tol) << "input " << i;
  }
}

}  // namespace

TEST(Tape, SumGradientIsOnes) {
  Matrix w(2, 2, 3.0);
  Tape t;
  const auto v = t.variable(w);
  t.backward(t.sum(v));
  for (double g : t.grad(v).data()) EXPECT_EQ(g, 1.0);
}

TEST(Tape, FanOutAccumulates) {
  Matrix x(3, 2, 0.5);
  Tape t;
  const auto v = t.variable(x);
  t.backward(t.add(t.sum(v), t.sum(v)));
  for (double g : t.grad(v).data()) EXPECT_EQ(g, 2.0);
}

TEST(Tape, SquaredNormOfProductMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix a = random_matrix(rng, 3, 3), b = random_matrix(rng, 3, 3);
    auto loss = [&](Tape& t, Tape::Var& va, Tape::Var& vb) {
      va = t.variable(a);
      vb = t.variable(b);
      const auto c = t.matmul(va, vb);
      return t.sum(t.hadamard(c, c));
    };
    Tape t;
    Tape::Var va, vb;
    t.backward(loss(t, va, vb));
    auto f = [&] {
      Tape u;
      Tape::Var x, y;
      return u.value(loss(u, x, y))(0, 0);
    };
    EXPECT_LE(fd::relative_error(t.grad(va).data(), fd::gradient(a.data(), f)), 1e-6);
    EXPECT_LE(fd::relative_error(t.grad(vb).data(), fd::gradient(b.data(), f)), 1e-6);
  }
}

TEST(Tape, BackwardErrors) {
  Tape empty;
  EXPECT_THROW(empty.backward(0), UsageError);
  Matrix x(2, 2, 1.0);
  Tape t;
  const auto v = t.variable(x);
  EXPECT_THROW(t.backward(v), UsageError);  // not scalar
  EXPECT_THROW(t.grad(v), UsageError);
  const auto s = t.sum(v);
  t.backward(s);
  EXPECT_THROW(t.backward(s), UsageError);
}

TEST(Tape, ShapeMismatchIsUsageError) {
  Matrix a(2, 3), b(2, 3), c(3, 2);
  Tape t;
  EXPECT_THROW(t.matmul(t.constant(a), t.constant(b)), UsageError);
  EXPECT_THROW(t.add(t.constant(a), t.constant(c)), UsageError);
  EXPECT_THROW(t.concat(t.constant(a), t.constant(c)), UsageError);
}

TEST(Tape, NonFiniteValueIsNumericError) {
  Matrix a(1, 1, 1e308);
  Tape t;
  EXPECT_THROW(t.scale(t.constant(a), 10.0), NumericError);
}

TEST(Tape, ConstantsGetNoGradient) {
  Matrix a(2, 2, 1.0), b(2, 2, 2.0);
  Tape t;
  const auto ca = t.constant(a);
  const auto vb = t.variable(b);
  const auto out = t.sum(t.hadamard(ca, vb));
  EXPECT_FALSE(t.requires_grad(ca));
  t.backward(out);
  for (double g : t.grad(ca).data()) EXPECT_EQ(g, 0.0);
  for (double g : t.grad(vb).data()) EXPECT_EQ(g, 1.0);
}

TEST(TapeOps, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  SparseMatrix s;
  s.rows = 4;
  s.cols = 3;
  s.offsets = {0, 2, 2, 3, 5};
  s.indices = {0, 2, 1, 0, 1};
  s.values = {0.5, -1.0, 2.0, 0.25, 1.5};
  const std::vector<std::size_t> segments{0, 2, 3, 6};
  const std::vector<std::uint32_t> gather_idx{2, 0, 2, 1, 3};
  const std::vector<std::uint32_t> labels{0, 2, 1, 1};
  const std::vector<std::uint32_t> rows{0, 1, 3};

  for (int trial = 0; trial < 20; ++trial) {
    check_op({random_matrix(rng, 4, 3), random_matrix(rng, 3, 5)},
             [](Tape& t, auto& v) { return t.matmul(v[0], v[1]); }, rng);
    check_op({random_matrix(rng, 3, 2)}, [&](Tape& t, auto& v) { return t.spmm(s, v[0]); }, rng);
    check_op({random_matrix(rng, 4, 3), random_matrix(rng, 4, 3)},
             [](Tape& t, auto& v) { return t.add(v[0], v[1]); }, rng);
    check_op({random_matrix(rng, 4, 3), random_matrix(rng, 1, 3)},
             [](Tape& t, auto& v) { return t.add(v[0], v[1]); }, rng);
    check_op({random_matrix(rng, 4, 3), random_matrix(rng, 4, 3)},
             [](Tape& t, auto& v) { return t.hadamard(v[0], v[1]); }, rng);
    check_op({random_matrix(rng, 4, 3), random_matrix(rng, 4, 1)},
             [](Tape& t, auto& v) { return t.hadamard(v[0], v[1]); }, rng);
    check_op({random_matrix(rng, 4, 3), random_matrix(rng, 1, 1)},
             [](Tape& t, auto& v) { return t.hadamard(v[0], v[1]); }, rng);
    check_op({random_matrix(rng, 4, 3)}, [](Tape& t, auto& v) { return t.scale(v[0], -1.7); }, rng);
    check_op({random_matrix(rng, 4, 3)}, [](Tape& t, auto& v) { return t.relu(v[0]); }, rng);
    check_op({random_matrix(rng, 4, 3)}, [](Tape& t, auto& v) { return t.leaky_relu(v[0], 0.2); },
             rng);
    check_op({random_matrix(rng, 4, 3)}, [](Tape& t, auto& v) { return t.elu(v[0]); }, rng);
    check_op({random_matrix(rng, 4, 3)}, [](Tape& t, auto& v) { return t.row_softmax(v[0]); }, rng);
    check_op({random_matrix(rng, 6, 1)},
             [&](Tape& t, auto& v) { return t.segment_softmax(v[0], segments); }, rng);
    check_op({random_matrix(rng, 4, 3), random_matrix(rng, 4, 2)},
             [](Tape& t, auto& v) { return t.concat(v[0], v[1]); }, rng);
    check_op({random_matrix(rng, 4, 3)},
             [](Tape& t, auto& v) {
               Rng r(99);  // same mask on every evaluation
               return t.dropout(v[0], 0.4, r);
             },
             rng);
    check_op({random_matrix(rng, 4, 3)},
             [&](Tape& t, auto& v) { return t.gather_rows(v[0], gather_idx); }, rng);
    check_op({random_matrix(rng, 5, 3)},
             [&](Tape& t, auto& v) { return t.scatter_add(v[0], gather_idx, 4); }, rng);
    check_op({random_matrix(rng, 4, 3)},
             [&](Tape& t, auto& v) { return t.cross_entropy(v[0], labels, rows); }, rng);
  }
}

TEST(TapeOps, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(3);
  Matrix a = random_matrix(rng, 5, 4);
  a(0, 0) = 800.0;  // overflow without the max shift
  Tape t;
  const auto& y = t.value(t.row_softmax(t.constant(a)));
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (double v : y.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(TapeOps, CrossEntropyOfUniformLogits) {
  Matrix z(2, 4);
  const std::vector<std::uint32_t> labels{1, 3}, rows{0, 1};
  Tape t;
  EXPECT_NEAR(t.value(t.cross_entropy(t.constant(z), labels, rows))(0, 0), std::log(4.0), 1e-15);
}

TEST(Tape, MinKinkDistanceTracksActivationInputs) {
  Matrix a(1, 3);
  a(0, 0) = 0.5;
  a(0, 1) = -0.02;
  a(0, 2) = 3.0;
  Tape t;
  const auto x = t.constant(a);
  EXPECT_EQ(t.min_kink_distance(), std::numeric_limits<double>::infinity());
  t.scale(x, 2.0);
  EXPECT_EQ(t.min_kink_distance(), std::numeric_limits<double>::infinity());
  t.relu(x);
  EXPECT_DOUBLE_EQ(t.min_kink_distance(), 0.02);
  t.elu(t.scale(x, 0.1));
  EXPECT_DOUBLE_EQ(t.min_kink_distance(), 0.002);
}
