#include "connector/signed.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "connector/errors.hpp"
#include "connector/parallel.hpp"
#include "connector/random.hpp"

namespace connector {

namespace {

constexpr std::uint64_t kInitStream = 0x5349;
constexpr std::uint64_t kEpochStream = 0x534a;

struct SignedNeighbors {
  std::vector<std::vector<NodeId>> pos, neg;
};

SignedNeighbors collect_neighbors(const SignedGraph& sg, bool symmetrize) {
  const HomoGraph& g = sg.base;
  SignedNeighbors out;
  out.pos.resize(g.num_nodes());
  out.neg.resize(g.num_nodes());
  for (NodeId u = 0; u < g.num_nodes(); ++u)
    for (std::size_t k = g.offsets()[u]; k < g.offsets()[u + 1]; ++k)
      (sg.signs[k] > 0 ? out.pos : out.neg)[u].push_back(g.targets()[k]);
  if (symmetrize && g.directed()) {
    for (NodeId u = 0; u < g.num_nodes(); ++u)
      for (std::size_t k = g.offsets()[u]; k < g.offsets()[u + 1]; ++k) {
        const NodeId v = g.targets()[k];
        if (v != u) (sg.signs[k] > 0 ? out.pos : out.neg)[v].push_back(u);
      }
  }
  return out;
}

}  // namespace

std::vector<BalanceTriplet> extract_balance_triplets(const SignedGraph& sg, bool symmetrize,
                                                     std::size_t threads) {
  const std::size_t n = sg.base.num_nodes();
  if (n == 0) throw DataError("signed graph is empty");
  const auto nb = collect_neighbors(sg, symmetrize);
  const auto virt = static_cast<NodeId>(n);
  std::vector<std::vector<BalanceTriplet>> per_node(n);
  parallel_chunks(n, threads, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) {
      const auto u = static_cast<NodeId>(i);
      const auto& p = nb.pos[u];
      const auto& q = nb.neg[u];
      auto& out = per_node[u];
      if (!p.empty() && !q.empty()) {
        for (NodeId a : p)
          for (NodeId c : q) out.push_back({u, a, c, false});
      } else if (!p.empty()) {
        for (NodeId a : p) out.push_back({u, a, virt, true});
      } else {
        for (NodeId c : q) out.push_back({u, virt, c, true});
      }
    }
  });
  std::vector<BalanceTriplet> all;
  for (auto& v : per_node) all.insert(all.end(), v.begin(), v.end());
  return all;
}

double sine_loss(std::span<const double> xu, std::span<const double> xp, std::span<const double> xn,
                 double delta, double delta0, bool uses_virtual) {
  if (xu.size() != xp.size() || xu.size() != xn.size())
    throw UsageError("sine_loss: dimension mismatch");
  const double v = dot(xu, xn) + (uses_virtual ? delta0 : delta) - dot(xu, xp);
  return v > 0.0 ? v : 0.0;
}

SineGradient sine_gradient(std::span<const double> xu, std::span<const double> xp,
                           std::span<const double> xn, double delta, double delta0,
                           bool uses_virtual) {
  SineGradient g;
  g.loss = sine_loss(xu, xp, xn, delta, delta0, uses_virtual);
  const std::size_t d = xu.size();
  g.u.assign(d, 0.0);
  g.pos.assign(d, 0.0);
  g.neg.assign(d, 0.0);
  if (g.loss > 0.0) {
    for (std::size_t i = 0; i < d; ++i) {
      g.u[i] = xn[i] - xp[i];
      g.pos[i] = -xu[i];
      g.neg[i] = xu[i];
    }
  }
  return g;
}

void SineConfig::validate() const {
  if (dim < 1) throw UsageError("sine dim must be >= 1");
  if (!(lr > 0.0)) throw UsageError("sine lr must be > 0");
  if (lambda < 0.0) throw UsageError("sine lambda must be >= 0");
  if (delta < 0.0 || delta0 < 0.0) throw UsageError("sine margins must be >= 0");
  if (batch_size < 1) throw UsageError("sine batch_size must be >= 1");
}

Matrix init_sine(std::size_t num_nodes, const SineConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, kInitStream));
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix x(num_nodes + 1, cfg.dim);
  for (double& v : x.data()) v = dist(rng);
  return x;
}

SineResult train_sine(const SignedGraph& sg, const SineConfig& cfg) {
  cfg.validate();
  const auto triplets = extract_balance_triplets(sg, cfg.symmetrize, cfg.threads);
  if (triplets.empty()) throw DataError("sine: graph has no signed edges, no triplets to train on");
  SineResult res;
  res.embeddings = init_sine(sg.base.num_nodes(), cfg);
  Matrix& x = res.embeddings;
  const double total = static_cast<double>(triplets.size());
  std::vector<std::size_t> order(triplets.size());
  Matrix grad(x.rows(), x.cols());
  std::vector<std::uint8_t> touched(x.rows(), 0);
  std::vector<NodeId> touched_list;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, kEpochStream, epoch));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double hinge = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      for (std::size_t i = b; i < end; ++i) {
        const auto& t = triplets[order[i]];
        const auto g = sine_gradient(x.row(t.u), x.row(t.v_pos), x.row(t.v_neg), cfg.delta,
                                     cfg.delta0, t.uses_virtual);
        hinge += g.loss;
        if (g.loss == 0.0) continue;
        for (auto [node, part] : {std::pair{t.u, &g.u}, std::pair{t.v_pos, &g.pos},
                                  std::pair{t.v_neg, &g.neg}}) {
          auto row = grad.row(node);
          for (std::size_t k = 0; k < row.size(); ++k) row[k] += (*part)[k];
          if (!touched[node]) touched[node] = 1, touched_list.push_back(node);
        }
      }
      for (NodeId node : touched_list) {
        auto row = x.row(node);
        auto g = grad.row(node);
        for (std::size_t k = 0; k < row.size(); ++k) {
          row[k] -= cfg.lr * g[k];
          g[k] = 0.0;
        }
        touched[node] = 0;
      }
      touched_list.clear();
      // Proximal step for this batch's share of lambda * ||X||_F^2.
      if (cfg.lambda > 0.0) {
        const double shrink =
            1.0 / (1.0 + 2.0 * cfg.lr * cfg.lambda * static_cast<double>(end - b) / total);
        for (double& v : x.data()) v *= shrink;
      }
    }
    double sq = 0.0;
    for (double v : x.data()) sq += v * v;
    const double objective = (hinge + cfg.lambda * sq) / total;
    if (!std::isfinite(objective)) {
      std::ostringstream msg;
      msg << "sine: non-finite loss at epoch " << epoch;
      throw NumericError(msg.str());
    }
    res.losses.push_back(objective);
  }
  return res;
}

}  // namespace connector
