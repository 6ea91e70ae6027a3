#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>

#include "connector/errors.hpp"
#include "connector/loaders.hpp"
#include "connector/signed.hpp"
#include "fd_oracle.hpp"

using namespace connector;

namespace {

SignedGraph random_signed(std::mt19937_64& rng, std::size_t n, double density, bool directed) {
  std::vector<SignedEdge> edges;
  std::bernoulli_distribution coin(density);
  for (NodeId u = 0; u < n; ++u)
    for (NodeId v = directed ? 0 : u + 1; v < n; ++v)
      if (u != v && coin(rng)) edges.push_back({u, v, rng() % 3 == 0 ? -1 : 1});
  return build_signed_graph(edges, n, directed);
}

double frobenius(const Matrix& m) { return m.frobenius_norm(); }

}  // namespace

TEST(Triplets, MixedNeighbors) {
  const std::vector<SignedEdge> e{{0, 1, 1}, {0, 2, -1}};
  const auto t = extract_balance_triplets(build_signed_graph(e, 3, false));
  // Node 0 gives the full triplet; nodes 1 and 2 each have one signed edge.
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[0], (BalanceTriplet{0, 1, 2, false}));
  EXPECT_EQ(t[1], (BalanceTriplet{1, 0, 3, true}));
  EXPECT_EQ(t[2], (BalanceTriplet{2, 3, 0, true}));
}

TEST(Triplets, PositiveOnlyUsesVirtualNegative) {
  const std::vector<SignedEdge> e{{0, 1, 1}, {0, 2, 1}};
  const auto t = extract_balance_triplets(build_signed_graph(e, 3, true), false);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0], (BalanceTriplet{0, 1, 3, true}));
  EXPECT_EQ(t[1], (BalanceTriplet{0, 2, 3, true}));
}

TEST(Triplets, CartesianCount) {
  const std::vector<SignedEdge> e{{0, 1, 1}, {0, 2, 1}, {0, 3, -1}, {0, 4, -1}};
  const auto t = extract_balance_triplets(build_signed_graph(e, 5, true), false);
  EXPECT_EQ(t.size(), 4u);
}

TEST(Triplets, UnsignedNodesProduceNothing) {
  const std::vector<SignedEdge> e{{0, 1, 1}};
  const auto t = extract_balance_triplets(build_signed_graph(e, 4, false));
  for (const auto& x : t) EXPECT_LT(x.u, 2u);
  EXPECT_THROW(extract_balance_triplets(build_signed_graph({}, 0, false)), DataError);
}

TEST(Triplets, SignConstraintsAndCountFormula) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const bool directed = trial % 2 == 1;
    const auto sg = random_signed(rng, 3 + rng() % 30, 0.2, directed);
    const auto& g = sg.base;
    const std::size_t n = g.num_nodes();
    // Degrees counted independently from arc signs, in-arcs included when directed.
    std::vector<std::size_t> p(n, 0), q(n, 0);
    for (NodeId u = 0; u < n; ++u)
      for (std::size_t k = g.offsets()[u]; k < g.offsets()[u + 1]; ++k) {
        (sg.signs[k] > 0 ? p : q)[u]++;
        if (directed) (sg.signs[k] > 0 ? p : q)[g.targets()[k]]++;
      }
    std::size_t expected = 0;
    for (std::size_t u = 0; u < n; ++u)
      expected += p[u] * q[u] + p[u] * (q[u] == 0) + q[u] * (p[u] == 0);
    const auto t = extract_balance_triplets(sg, true, 3);
    EXPECT_EQ(t.size(), expected);
    EXPECT_EQ(t, extract_balance_triplets(sg, true, 1));
    auto has_sign = [&](NodeId a, NodeId b, int s) {
      for (std::size_t k = g.offsets()[a]; k < g.offsets()[a + 1]; ++k)
        if (g.targets()[k] == b && sg.signs[k] == s) return true;
      for (std::size_t k = g.offsets()[b]; k < g.offsets()[b + 1]; ++k)
        if (g.targets()[k] == a && sg.signs[k] == s) return true;
      return false;
    };
    for (const auto& x : t) {
      EXPECT_FALSE(x.v_pos == n && x.v_neg == n);
      EXPECT_EQ(x.uses_virtual, x.v_pos == n || x.v_neg == n);
      if (x.v_pos != n) EXPECT_TRUE(has_sign(x.u, x.v_pos, 1));
      if (x.v_neg != n) EXPECT_TRUE(has_sign(x.u, x.v_neg, -1));
    }
  }
}

TEST(SineLoss, Examples) {
  const std::vector<double> u{1.0, 0.0}, p{2.0, 0.0}, n{0.5, 0.0}, z{0.0, 0.0};
  EXPECT_EQ(sine_loss(u, p, n, 1.0, 0.5, false), 0.0);
  EXPECT_EQ(sine_loss(z, z, z, 1.0, 0.5, false), 1.0);
  EXPECT_EQ(sine_loss(z, z, z, 1.0, 0.5, true), 0.5);
  const std::vector<double> short_v{1.0};
  EXPECT_THROW(sine_loss(u, short_v, n, 1.0, 0.5, false), UsageError);
}

TEST(SineLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  int checked = 0;
  while (checked < 100) {
    std::vector<double> u(6), p(6), n(6);
    for (auto* v : {&u, &p, &n})
      for (double& x : *v) x = n01(rng);
    const bool virt = rng() % 2;
    const double gap = dot(u, n) + (virt ? 0.5 : 1.0) - dot(u, p);
    if (std::abs(gap) <= 1e-4) continue;
    const auto g = sine_gradient(u, p, n, 1.0, 0.5, virt);
    auto f = [&] { return sine_loss(u, p, n, 1.0, 0.5, virt); };
    EXPECT_LE(fd::relative_error(g.u, fd::gradient(u, f)), 1e-6);
    EXPECT_LE(fd::relative_error(g.pos, fd::gradient(p, f)), 1e-6);
    EXPECT_LE(fd::relative_error(g.neg, fd::gradient(n, f)), 1e-6);
    ++checked;
  }
}

TEST(SineLoss, NonNegativeAndRotationInvariant) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::MatrixXd q = Eigen::MatrixXd::NullaryExpr(5, 5, [&] { return n01(rng); })
                                  .householderQr()
                                  .householderQ();
    Eigen::VectorXd u(5), p(5), n(5);
    for (auto* v : {&u, &p, &n})
      for (long i = 0; i < 5; ++i) (*v)(i) = n01(rng);
    auto loss = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c) {
      return sine_loss({a.data(), 5}, {b.data(), 5}, {c.data(), 5}, 1.0, 0.5, false);
    };
    const double base = loss(u, p, n);
    EXPECT_GE(base, 0.0);
    const Eigen::VectorXd qu = q * u, qp = q * p, qn = q * n;
    EXPECT_NEAR(loss(qu, qp, qn), base, 1e-9);
  }
}

TEST(Sine, ZeroEpochsIsInitialization) {
  const std::vector<SignedEdge> e{{0, 1, 1}, {0, 2, -1}};
  SineConfig cfg;
  cfg.epochs = 0;
  cfg.dim = 4;
  const auto r = train_sine(build_signed_graph(e, 3, false), cfg);
  EXPECT_EQ(r.embeddings, init_sine(3, cfg));
  EXPECT_EQ(r.embeddings.rows(), 4u);
}

TEST(Sine, NoSignedEdgesIsDataError) {
  EXPECT_THROW(train_sine(build_signed_graph({}, 3, false), SineConfig{}), DataError);
}

TEST(Sine, TwoFactionsSeparate) {
  // Factions {0..5} and {6..11}: + inside, - across.
  std::vector<SignedEdge> edges;
  for (NodeId a = 0; a < 12; ++a)
    for (NodeId b = a + 1; b < 12; ++b) edges.push_back({a, b, (a < 6) == (b < 6) ? 1 : -1});
  const auto sg = build_signed_graph(edges, 12, false);
  SineConfig cfg;
  cfg.dim = 8;
  cfg.epochs = 100;
  cfg.seed = 3;
  const auto r = train_sine(sg, cfg);
  double intra = 0, inter = 0;
  int ni = 0, nx = 0;
  for (NodeId a = 0; a < 12; ++a)
    for (NodeId b = a + 1; b < 12; ++b) {
      const double d = dot(r.embeddings.row(a), r.embeddings.row(b));
      if ((a < 6) == (b < 6)) intra += d, ++ni;
      else inter += d, ++nx;
    }
  EXPECT_GT(intra / ni, inter / nx);
  EXPECT_LT(r.losses.back(), r.losses.front());
}

TEST(Sine, LargeLambdaShrinksNorm) {
  const auto sg = load_signed_edge_list(std::string(CONNECTOR_TEST_DATA) + "/signed_mixed.txt");
  SineConfig cfg;
  cfg.dim = 8;
  cfg.epochs = 20;
  cfg.seed = 11;
  cfg.lambda = 0.0;
  const double free = frobenius(train_sine(sg, cfg).embeddings);
  cfg.lambda = 1e3;
  const auto heavy = train_sine(sg, cfg);
  EXPECT_TRUE(heavy.embeddings.all_finite());
  EXPECT_LT(frobenius(heavy.embeddings), free);
}
