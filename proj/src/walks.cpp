#include "connector/walks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <string>

#include "connector/errors.hpp"
#include "connector/parallel.hpp"

namespace connector {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::size_t worker_count(const WalkConfig& cfg) { return cfg.deterministic ? 1 : cfg.threads; }

/// Walks start from every node of `starts` once per round, in a per-round shuffled
/// order. Each walk owns an rng seeded from (seed ^ start, round), so the corpus
/// does not depend on the worker count.
template <typename WalkFrom>
WalkCorpus generate(std::span<const NodeId> starts, const WalkConfig& cfg, WalkFrom&& walk_from) {
  const std::size_t n = starts.size();
  const std::size_t total = n * cfg.walks_per_node;
  std::vector<NodeId> schedule;
  schedule.reserve(total);
  std::vector<NodeId> order(starts.begin(), starts.end());
  for (std::size_t round = 0; round < cfg.walks_per_node; ++round) {
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5eedULL, round));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    schedule.insert(schedule.end(), order.begin(), order.end());
  }

  WalkCorpus corpus;
  corpus.walks.resize(total);
  parallel_chunks(total, worker_count(cfg), [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) {
      const NodeId start = schedule[i];
      Rng rng(derive_seed(cfg.seed ^ start, i / n));
      auto& walk = corpus.walks[i];
      walk.reserve(cfg.walk_length);
      walk.push_back(start);
      walk_from(walk, rng);
    }
  });
  return corpus;
}

std::vector<NodeId> all_nodes(std::size_t n) {
  std::vector<NodeId> v(n);
  for (NodeId i = 0; i < n; ++i) v[i] = i;
  return v;
}

/// Per-node alias tables over arc weights; empty tables for unweighted graphs.
std::vector<AliasTable> arc_samplers(const HomoGraph& g) {
  std::vector<AliasTable> tables;
  if (!g.weighted()) return tables;
  tables.resize(g.num_nodes());
  for (NodeId u = 0; u < g.num_nodes(); ++u) {
    const auto s = g.neighbors(u);
    double total = 0.0;
    for (double w : s.weights) total += w;
    if (total > 0.0) tables[u] = AliasTable(s.weights);
  }
  return tables;
}

/// Index into neighbors(u) for a first-order step, or npos for a sink.
std::size_t first_order_pick(const HomoGraph& g, const std::vector<AliasTable>& samplers, NodeId u,
                             Rng& rng) {
  const std::size_t d = g.degree(u);
  if (d == 0) return std::string::npos;
  if (samplers.empty()) return uniform_index(rng, d);
  if (samplers[u].size() == 0) return std::string::npos;  // all-zero weights
  return samplers[u].draw(rng);
}

double node2vec_bias(const HomoGraph& g, NodeId prev, NodeId x, double p, double q) {
  if (x == prev) return 1.0 / p;
  if (g.has_arc(prev, x)) return 1.0;
  return 1.0 / q;
}

std::size_t pick_cumulative(std::span<const double> weights, double total, Rng& rng) {
  const double r = uniform01(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (r < acc) return i;
  }
  // Rounding: fall back to the last positive weight.
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return i;
  return std::string::npos;
}

Transition normalized(std::vector<NodeId> targets, std::vector<double> w) {
  double total = 0.0;
  for (double x : w) total += x;
  if (total > 0.0)
    for (double& x : w) x /= total;
  return {std::move(targets), std::move(w)};
}

}  // namespace

void WalkConfig::validate() const {
  if (walk_length < 1) throw UsageError("walk_length must be >= 1");
  if (!(p > 0.0)) throw UsageError("node2vec p must be > 0");
  if (!(q > 0.0)) throw UsageError("node2vec q must be > 0");
}

std::size_t WalkCorpus::num_tokens() const {
  std::size_t n = 0;
  for (const auto& w : walks) n += w.size();
  return n;
}

Transition first_order_transition(const HomoGraph& g, NodeId current) {
  const auto s = neighbors(g, current);
  std::vector<double> w(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) w[i] = s.weight(i);
  return normalized({s.targets.begin(), s.targets.end()}, std::move(w));
}

Transition second_order_transition(const HomoGraph& g, NodeId prev, NodeId current, double p,
                                   double q) {
  const auto s = neighbors(g, current);
  std::vector<double> w(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    w[i] = s.weight(i) * node2vec_bias(g, prev, s.targets[i], p, q);
  return normalized({s.targets.begin(), s.targets.end()}, std::move(w));
}

Transition typed_transition(const HeteroGraph& hg, NodeId current, std::uint32_t next_type) {
  const auto s = neighbors(hg.base, current);
  std::vector<NodeId> targets;
  for (NodeId x : s.targets)
    if (hg.node_types[x] == next_type) targets.push_back(x);
  std::vector<double> w(targets.size(), 1.0);
  return normalized(std::move(targets), std::move(w));
}

WalkCorpus uniform_walks(const HomoGraph& g, const WalkConfig& cfg) {
  cfg.validate();
  if (g.num_nodes() == 0) throw DataError("cannot walk an empty graph");
  const auto samplers = arc_samplers(g);
  const auto starts = all_nodes(g.num_nodes());
  return generate(starts, cfg, [&](std::vector<NodeId>& walk, Rng& rng) {
    while (walk.size() < cfg.walk_length) {
      const NodeId u = walk.back();
      const std::size_t k = first_order_pick(g, samplers, u, rng);
      if (k == std::string::npos) break;
      walk.push_back(g.neighbors(u).targets[k]);
    }
  });
}

WalkCorpus node2vec_walks(const HomoGraph& g, const WalkConfig& cfg) {
  cfg.validate();
  if (g.num_nodes() == 0) throw DataError("cannot walk an empty graph");
  const auto samplers = arc_samplers(g);
  const auto starts = all_nodes(g.num_nodes());
  return generate(starts, cfg, [&](std::vector<NodeId>& walk, Rng& rng) {
    std::vector<double> w;
    while (walk.size() < cfg.walk_length) {
      const NodeId v = walk.back();
      const auto s = g.neighbors(v);
      if (s.empty()) break;
      if (walk.size() == 1) {
        const std::size_t k = first_order_pick(g, samplers, v, rng);
        if (k == std::string::npos) break;
        walk.push_back(s.targets[k]);
        continue;
      }
      const NodeId t = walk[walk.size() - 2];
      w.resize(s.size());
      double total = 0.0;
      for (std::size_t i = 0; i < s.size(); ++i) {
        w[i] = s.weight(i) * node2vec_bias(g, t, s.targets[i], cfg.p, cfg.q);
        total += w[i];
      }
      if (!(total > 0.0)) break;
      walk.push_back(s.targets[pick_cumulative(w, total, rng)]);
    }
  });
}

WalkCorpus metapath_walks(const HeteroGraph& hg, std::span<const std::uint32_t> metapath,
                          const WalkConfig& cfg) {
  cfg.validate();
  if (metapath.size() < 2) throw UsageError("metapath needs at least two types");
  if (metapath.front() != metapath.back())
    throw UsageError("metapath must start and end with the same type");
  for (auto t : metapath)
    if (t >= hg.type_names.size()) throw UsageError("metapath type id out of range");
  const std::size_t period = metapath.size() - 1;
  const auto& starts = hg.nodes_of_type[metapath.front()];
  return generate(starts, cfg, [&](std::vector<NodeId>& walk, Rng& rng) {
    std::vector<NodeId> typed;
    while (walk.size() < cfg.walk_length) {
      const std::uint32_t next_type = metapath[walk.size() % period];
      typed.clear();
      for (NodeId x : hg.base.neighbors(walk.back()).targets)
        if (hg.node_types[x] == next_type) typed.push_back(x);
      if (typed.empty()) break;
      walk.push_back(typed[uniform_index(rng, typed.size())]);
    }
  });
}

double degree_sequence_dtw(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.empty() && b.empty()) return 0.0;
  if (a.empty() || b.empty()) return kInf;
  auto cost = [](std::size_t x, std::size_t y) {
    if (x == y) return 0.0;
    const auto lo = static_cast<double>(std::min(x, y));
    const auto hi = static_cast<double>(std::max(x, y));
    return lo == 0.0 ? kInf : hi / lo - 1.0;
  };
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<double> prev(m + 1, kInf);
  std::vector<double> cur(m + 1, kInf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = kInf;
    for (std::size_t j = 1; j <= m; ++j)
      cur[j] = cost(a[i - 1], b[j - 1]) + std::min({prev[j], cur[j - 1], prev[j - 1]});
    std::swap(prev, cur);
  }
  return prev[m];
}

double StrucContext::weight(std::size_t k, NodeId u, NodeId v) const {
  const double f = distance[k](u, v);
  return std::isinf(f) ? 0.0 : std::exp(-f);
}

double StrucContext::up_probability(std::size_t k, NodeId u) const {
  const double x = std::log(static_cast<double>(gamma[k][u]) + std::numbers::e);
  return x / (x + 1.0);
}

Transition StrucContext::in_layer_transition(std::size_t k, NodeId u) const {
  const auto& ps = partners[k][u];
  std::vector<double> w(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) w[i] = weight(k, u, ps[i]);
  return normalized(ps, std::move(w));
}

StrucContext struc2vec_context(const HomoGraph& g, long k_max, std::size_t threads) {
  if (k_max < 0) throw UsageError("k_max must be >= 0");
  const std::size_t n = g.num_nodes();
  const auto layers = static_cast<std::size_t>(k_max) + 1;

  // rings[u][k]: sorted degrees of the nodes at hop distance exactly k from u.
  std::vector<std::vector<std::vector<std::size_t>>> rings(n);
  parallel_chunks(n, threads, [&](std::size_t b, std::size_t e, std::size_t) {
    std::vector<long> dist(n);
    for (std::size_t src = b; src < e; ++src) {
      std::fill(dist.begin(), dist.end(), -1);
      auto& r = rings[src];
      std::queue<NodeId> frontier;
      frontier.push(static_cast<NodeId>(src));
      dist[src] = 0;
      while (!frontier.empty()) {
        const NodeId u = frontier.front();
        frontier.pop();
        const auto d = static_cast<std::size_t>(dist[u]);
        if (d >= layers) break;
        if (r.size() <= d) r.resize(d + 1);
        r[d].push_back(g.degree(u));
        for (NodeId v : g.neighbors(u).targets) {
          if (dist[v] < 0) {
            dist[v] = dist[u] + 1;
            frontier.push(v);
          }
        }
      }
      for (auto& ring : r) std::sort(ring.begin(), ring.end());
    }
  });

  StrucContext ctx;
  ctx.num_nodes = n;
  ctx.k_max = static_cast<std::size_t>(k_max);
  ctx.distance.assign(layers, Matrix(n, n, kInf));
  parallel_chunks(n, threads, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t u = b; u < e; ++u) {
      for (std::size_t v = 0; v < n; ++v) {
        double acc = 0.0;
        for (std::size_t k = 0; k < layers; ++k) {
          const auto ring_u = k < rings[u].size() ? std::span<const std::size_t>(rings[u][k])
                                                  : std::span<const std::size_t>();
          const auto ring_v = k < rings[v].size() ? std::span<const std::size_t>(rings[v][k])
                                                  : std::span<const std::size_t>();
          acc += degree_sequence_dtw(ring_u, ring_v);
          if (std::isinf(acc)) break;
          ctx.distance[k](u, v) = acc;
        }
      }
    }
  });

  // Drop trailing layers with no defined pair.
  while (ctx.distance.size() > 1) {
    const auto& last = ctx.distance.back();
    bool any = false;
    for (std::size_t u = 0; u < n && !any; ++u)
      for (std::size_t v = 0; v < n && !any; ++v) any = u != v && !std::isinf(last(u, v));
    if (any) break;
    ctx.distance.pop_back();
  }

  const std::size_t used = ctx.distance.size();
  ctx.mean_weight.assign(used, 0.0);
  ctx.gamma.assign(used, std::vector<std::uint32_t>(n, 0));
  ctx.partners.assign(used, std::vector<std::vector<NodeId>>(n));
  ctx.in_layer.assign(used, std::vector<AliasTable>(n));
  for (std::size_t k = 0; k < used; ++k) {
    double sum = 0.0;
    std::size_t count = 0;
    for (NodeId u = 0; u < n; ++u)
      for (NodeId v = 0; v < n; ++v)
        if (u != v && !std::isinf(ctx.distance[k](u, v))) {
          sum += ctx.weight(k, u, v);
          ++count;
          ctx.partners[k][u].push_back(v);
        }
    ctx.mean_weight[k] = count ? sum / static_cast<double>(count) : 0.0;
    for (NodeId u = 0; u < n; ++u) {
      const auto& ps = ctx.partners[k][u];
      if (ps.empty()) continue;
      std::vector<double> w(ps.size());
      for (std::size_t i = 0; i < ps.size(); ++i) {
        w[i] = ctx.weight(k, u, ps[i]);
        if (w[i] > ctx.mean_weight[k]) ++ctx.gamma[k][u];
      }
      ctx.in_layer[k][u] = AliasTable(w);
    }
  }
  return ctx;
}

WalkCorpus struc2vec_walks(const StrucContext& ctx, const WalkConfig& cfg, double stay_prob) {
  cfg.validate();
  if (!(stay_prob > 0.0 && stay_prob < 1.0)) throw UsageError("stay_prob must be in (0, 1)");
  if (ctx.num_nodes == 0) throw DataError("cannot walk an empty graph");
  const auto starts = all_nodes(ctx.num_nodes);
  return generate(starts, cfg, [&](std::vector<NodeId>& walk, Rng& rng) {
    std::size_t layer = 0;
    NodeId u = walk.back();
    if (!ctx.has_layer(0, u)) return;
    while (walk.size() < cfg.walk_length) {
      if (uniform01(rng) < stay_prob) {
        const auto& ps = ctx.partners[layer][u];
        u = ps[ctx.in_layer[layer][u].draw(rng)];
        walk.push_back(u);
        continue;
      }
      if (uniform01(rng) < ctx.up_probability(layer, u)) {
        if (ctx.has_layer(layer + 1, u)) ++layer;
      } else if (layer > 0) {
        --layer;
      }
    }
  });
}

}  // namespace connector
