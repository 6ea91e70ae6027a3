#include "connector/kge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "connector/errors.hpp"
#include "connector/parallel.hpp"

namespace connector {

namespace {

constexpr std::uint64_t kInitStream = 0x4b4745;
constexpr std::uint64_t kEpochStream = 0x4b4746;

void check_ids(const KgeModel& m, std::uint32_t h, std::uint32_t r, std::uint32_t t) {
  if (h >= m.entities.rows() || t >= m.entities.rows() || r >= m.relations.rows()) {
    std::ostringstream msg;
    msg << "kge triple (" << h << ", " << r << ", " << t << ") out of range for "
        << m.entities.rows() << " entities and " << m.relations.rows() << " relations";
    throw UsageError(msg.str());
  }
}

// e = f(h, t) + r, where f is the variant's projection of h - t. Writes x = h - t.
std::vector<double> residual(const KgeModel& m, std::uint32_t h, std::uint32_t r, std::uint32_t t,
                             std::vector<double>& x) {
  const auto hv = m.entities.row(h);
  const auto tv = m.entities.row(t);
  const auto rv = m.relations.row(r);
  const std::size_t de = m.entity_dim();
  x.resize(de);
  for (std::size_t i = 0; i < de; ++i) x[i] = hv[i] - tv[i];
  std::vector<double> e(rv.begin(), rv.end());
  switch (m.variant) {
    case KgeVariant::transe_l1:
    case KgeVariant::transe_l2:
      for (std::size_t i = 0; i < de; ++i) e[i] += x[i];
      break;
    case KgeVariant::transh: {
      const auto w = m.normals.row(r);
      const double wx = dot(w, x);
      for (std::size_t i = 0; i < de; ++i) e[i] += x[i] - wx * w[i];
      break;
    }
    case KgeVariant::transr: {
      const Matrix& map = m.maps[r];
      for (std::size_t i = 0; i < de; ++i) {
        if (x[i] == 0.0) continue;
        const auto mrow = map.row(i);
        for (std::size_t j = 0; j < e.size(); ++j) e[j] += x[i] * mrow[j];
      }
      break;
    }
  }
  return e;
}

double norm_of(const KgeModel& m, std::span<const double> e) {
  if (m.variant == KgeVariant::transe_l1) {
    double s = 0.0;
    for (double v : e) s += std::abs(v);
    return s;
  }
  return norm2(e);
}

void normalize_row(std::span<double> row) {
  const double n = norm2(row);
  if (n > 0.0)
    for (double& v : row) v /= n;
}

}  // namespace

KgeVariant parse_kge_variant(const std::string& s) {
  if (s == "transe" || s == "transe-l2" || s == "transe_l2") return KgeVariant::transe_l2;
  if (s == "transe-l1" || s == "transe_l1") return KgeVariant::transe_l1;
  if (s == "transh") return KgeVariant::transh;
  if (s == "transr") return KgeVariant::transr;
  throw UsageError("unknown kge variant '" + s + "'");
}

std::string to_string(KgeVariant v) {
  switch (v) {
    case KgeVariant::transe_l1: return "transe-l1";
    case KgeVariant::transe_l2: return "transe-l2";
    case KgeVariant::transh: return "transh";
    case KgeVariant::transr: return "transr";
  }
  return "?";
}

Corruption parse_corruption(const std::string& s) {
  if (s == "uniform") return Corruption::uniform;
  if (s == "bernoulli") return Corruption::bernoulli;
  throw UsageError("unknown corruption mode '" + s + "' (expected uniform or bernoulli)");
}

std::string to_string(Corruption c) { return c == Corruption::uniform ? "uniform" : "bernoulli"; }

void KgeModel::check_invariants() const {
  if (variant != KgeVariant::transr && relations.cols() != entities.cols())
    throw NumericError("kge: d_r must equal d_e for this variant");
  for (std::size_t i = 0; i < entities.rows(); ++i)
    if (norm2(entities.row(i)) > 1.0 + 1e-9) throw NumericError("kge: entity outside unit ball");
  if (variant == KgeVariant::transh)
    for (std::size_t r = 0; r < normals.rows(); ++r)
      if (std::abs(norm2(normals.row(r)) - 1.0) > 1e-9) throw NumericError("kge: normal not unit");
}

void KgeConfig::validate() const {
  if (!(margin > 0.0)) throw UsageError("kge margin must be > 0");
  if (d_e < 1 || d_r < 1) throw UsageError("kge dims must be >= 1");
  if (variant != KgeVariant::transr && d_e != d_r)
    throw UsageError("kge d_r must equal d_e for " + to_string(variant));
  if (!(lr > 0.0)) throw UsageError("kge lr must be > 0");
  if (batch_size < 1) throw UsageError("kge batch_size must be >= 1");
}

KgeModel init_kge(std::size_t num_entities, std::size_t num_relations, const KgeConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, kInitStream));
  KgeModel m;
  m.variant = cfg.variant;
  auto fill = [&](Matrix& mat, std::size_t rows, std::size_t cols) {
    const double bound = 6.0 / std::sqrt(static_cast<double>(cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    mat = Matrix(rows, cols);
    for (double& v : mat.data()) v = dist(rng);
    for (std::size_t i = 0; i < rows; ++i) normalize_row(mat.row(i));
  };
  fill(m.entities, num_entities, cfg.d_e);
  fill(m.relations, num_relations, cfg.d_r);
  if (cfg.variant == KgeVariant::transh) fill(m.normals, num_relations, cfg.d_e);
  if (cfg.variant == KgeVariant::transr) {
    Matrix id(cfg.d_e, cfg.d_r);
    for (std::size_t i = 0; i < std::min(cfg.d_e, cfg.d_r); ++i) id(i, i) = 1.0;
    m.maps.assign(num_relations, id);
  }
  return m;
}

double score(const KgeModel& m, std::uint32_t h, std::uint32_t r, std::uint32_t t) {
  check_ids(m, h, r, t);
  std::vector<double> x;
  return norm_of(m, residual(m, h, r, t, x));
}

ScoreGradient score_gradient(const KgeModel& m, const Triple& tr) {
  check_ids(m, tr.head, tr.relation, tr.tail);
  std::vector<double> x;
  const auto e = residual(m, tr.head, tr.relation, tr.tail, x);
  ScoreGradient out;
  out.score = norm_of(m, e);
  const std::size_t de = m.entity_dim();

  // g = ds/de
  std::vector<double> g(e.size(), 0.0);
  if (m.variant == KgeVariant::transe_l1) {
    for (std::size_t i = 0; i < e.size(); ++i) g[i] = e[i] > 0 ? 1.0 : (e[i] < 0 ? -1.0 : 0.0);
  } else if (out.score > 0.0) {
    for (std::size_t i = 0; i < e.size(); ++i) g[i] = e[i] / out.score;
  }
  out.relation = g;

  std::vector<double> gx(de);  // ds/dx
  switch (m.variant) {
    case KgeVariant::transe_l1:
    case KgeVariant::transe_l2:
      gx = g;
      break;
    case KgeVariant::transh: {
      const auto w = m.normals.row(tr.relation);
      const double wg = dot(w, g);
      const double wx = dot(w, x);
      out.normal.resize(de);
      for (std::size_t i = 0; i < de; ++i) {
        gx[i] = g[i] - wg * w[i];
        out.normal[i] = -(wg * x[i] + wx * g[i]);
      }
      break;
    }
    case KgeVariant::transr: {
      const Matrix& map = m.maps[tr.relation];
      out.map = Matrix(de, map.cols());
      for (std::size_t i = 0; i < de; ++i) {
        gx[i] = dot(map.row(i), g);
        for (std::size_t j = 0; j < map.cols(); ++j) out.map(i, j) = x[i] * g[j];
      }
      break;
    }
  }
  out.head = gx;
  out.tail.resize(de);
  for (std::size_t i = 0; i < de; ++i) out.tail[i] = -gx[i];
  return out;
}

std::vector<double> bernoulli_head_probabilities(const KnowledgeGraph& kg) {
  const std::size_t R = kg.num_relations();
  std::vector<std::unordered_map<std::uint32_t, std::size_t>> tails_per_head(R), heads_per_tail(R);
  for (const auto& t : kg.train) {
    ++tails_per_head[t.relation][t.head];
    ++heads_per_tail[t.relation][t.tail];
  }
  std::vector<double> p(R, 0.5);
  for (std::size_t r = 0; r < R; ++r) {
    if (tails_per_head[r].empty()) continue;
    std::size_t n = 0;
    for (const auto& [h, c] : tails_per_head[r]) n += c;
    const double tph = static_cast<double>(n) / static_cast<double>(tails_per_head[r].size());
    const double hpt = static_cast<double>(n) / static_cast<double>(heads_per_tail[r].size());
    p[r] = tph / (tph + hpt);
  }
  return p;
}

CorruptedTriple corrupt(const Triple& x, std::size_t num_entities, Corruption mode,
                        std::span<const double> head_prob, Rng& rng) {
  const double p = mode == Corruption::uniform ? 0.5 : head_prob[x.relation];
  CorruptedTriple out{x, uniform01(rng) < p};
  const auto e = static_cast<std::uint32_t>(uniform_index(rng, num_entities));
  if (out.replaced_head) out.triple.head = e;
  else out.triple.tail = e;
  return out;
}

double expected_margin_loss(const KgeModel& m, const KnowledgeGraph& kg, double margin) {
  const auto E = static_cast<std::uint32_t>(kg.num_entities());
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& x : kg.train) {
    const double pos = score(m, x);
    for (std::uint32_t e = 0; e < E; ++e) {
      total += margin_loss(pos, score(m, e, x.relation, x.tail), margin);
      total += margin_loss(pos, score(m, x.head, x.relation, e), margin);
      count += 2;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

namespace {

struct GradBuffer {
  Matrix entities, relations, normals;
  std::vector<Matrix> maps;
  std::vector<std::uint8_t> entity_touched, relation_touched;
  std::vector<std::uint32_t> entity_list, relation_list;

  explicit GradBuffer(const KgeModel& m)
      : entities(m.entities.rows(), m.entities.cols()),
        relations(m.relations.rows(), m.relations.cols()),
        normals(m.normals.rows(), m.normals.cols()),
        entity_touched(m.entities.rows(), 0),
        relation_touched(m.relations.rows(), 0) {
    for (const auto& map : m.maps) maps.emplace_back(map.rows(), map.cols());
  }

  void touch_entity(std::uint32_t e) {
    if (!entity_touched[e]) entity_touched[e] = 1, entity_list.push_back(e);
  }
  void touch_relation(std::uint32_t r) {
    if (!relation_touched[r]) relation_touched[r] = 1, relation_list.push_back(r);
  }

  void add(const Triple& t, const ScoreGradient& g, double sign) {
    touch_entity(t.head);
    touch_entity(t.tail);
    touch_relation(t.relation);
    auto axpy = [sign](std::span<double> y, const std::vector<double>& x) {
      for (std::size_t i = 0; i < x.size(); ++i) y[i] += sign * x[i];
    };
    axpy(entities.row(t.head), g.head);
    axpy(entities.row(t.tail), g.tail);
    axpy(relations.row(t.relation), g.relation);
    if (!g.normal.empty()) axpy(normals.row(t.relation), g.normal);
    if (g.map.size()) axpy(maps[t.relation].data(), g.map.data());
  }

  // Applies param -= lr * grad on touched rows, then clears the buffer.
  void apply(KgeModel& m, double lr) {
    auto step = [lr](std::span<double> p, std::span<double> g) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] -= lr * g[i];
        g[i] = 0.0;
      }
    };
    for (auto e : entity_list) {
      step(m.entities.row(e), entities.row(e));
      auto row = m.entities.row(e);
      const double n = norm2(row);
      if (n > 1.0)
        for (double& v : row) v /= n;
      entity_touched[e] = 0;
    }
    for (auto r : relation_list) {
      step(m.relations.row(r), relations.row(r));
      if (m.variant == KgeVariant::transh) {
        step(m.normals.row(r), normals.row(r));
        normalize_row(m.normals.row(r));
      }
      if (m.variant == KgeVariant::transr) step(m.maps[r].data(), maps[r].data());
      relation_touched[r] = 0;
    }
    entity_list.clear();
    relation_list.clear();
  }
};

}  // namespace

void train_kge(const KnowledgeGraph& kg, const KgeConfig& cfg, KgeState& state) {
  cfg.validate();
  if (kg.train.empty()) throw DataError("kge: train split is empty");
  KgeModel& m = state.model;
  if (m.entities.rows() != kg.num_entities() || m.relations.rows() != kg.num_relations())
    throw UsageError("kge: model shape does not match the knowledge graph");
  const auto head_prob = bernoulli_head_probabilities(kg);
  GradBuffer grads(m);
  std::vector<std::size_t> order(kg.train.size());

  for (std::size_t epoch = state.epochs_done; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, kEpochStream, epoch));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0, batch = 0; b < order.size(); b += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      double batch_loss = 0.0;
      for (std::size_t i = b; i < end; ++i) {
        const Triple& pos = kg.train[order[i]];
        const Triple neg =
            corrupt(pos, kg.num_entities(), cfg.corruption, head_prob, rng).triple;
        const auto gp = score_gradient(m, pos);
        const auto gn = score_gradient(m, neg);
        const double loss = margin_loss(gp.score, gn.score, cfg.margin);
        batch_loss += loss;
        if (loss > 0.0) {
          grads.add(pos, gp, 1.0);
          grads.add(neg, gn, -1.0);
        }
      }
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "kge: non-finite loss at epoch " << epoch << ", batch " << batch;
        throw NumericError(msg.str());
      }
      grads.apply(m, cfg.lr);
      epoch_loss += batch_loss;
    }
    state.losses.push_back(epoch_loss / static_cast<double>(kg.train.size()));
    state.epochs_done = epoch + 1;
  }
}

KgeState train_kge(const KnowledgeGraph& kg, const KgeConfig& cfg) {
  KgeState state;
  state.model = init_kge(kg.num_entities(), kg.num_relations(), cfg);
  train_kge(kg, cfg, state);
  return state;
}

double tie_rank(std::size_t better, std::size_t ties) {
  return static_cast<double>(better) + 1.0 + static_cast<double>(ties) / 2.0;
}

std::vector<double> ranking_ranks(const KgeModel& m, const KnowledgeGraph& kg,
                                  std::span<const Triple> triples, bool filtered,
                                  std::size_t threads) {
  const auto E = static_cast<std::uint32_t>(kg.num_entities());
  std::vector<double> ranks(2 * triples.size());
  parallel_chunks(triples.size(), threads, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) {
      const Triple& x = triples[i];
      const double truth = score(m, x);
      for (int side = 0; side < 2; ++side) {
        std::size_t better = 0, ties = 0;
        for (std::uint32_t c = 0; c < E; ++c) {
          Triple cand = x;
          (side == 0 ? cand.head : cand.tail) = c;
          if (cand == x) continue;
          if (filtered && kg.is_known(cand)) continue;
          const double s = score(m, cand);
          if (s < truth) ++better;
          else if (s == truth) ++ties;
        }
        ranks[2 * i + side] = tie_rank(better, ties);
      }
    }
  });
  return ranks;
}

RankingMetrics summarize_ranks(std::span<const double> ranks) {
  RankingMetrics out;
  out.queries = ranks.size();
  if (ranks.empty()) return out;
  for (double r : ranks) {
    out.mr += r;
    out.mrr += 1.0 / r;
    out.hits1 += r <= 1.0 ? 1.0 : 0.0;
    out.hits3 += r <= 3.0 ? 1.0 : 0.0;
    out.hits10 += r <= 10.0 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(ranks.size());
  out.mr /= n;
  out.mrr /= n;
  out.hits1 /= n;
  out.hits3 /= n;
  out.hits10 /= n;
  return out;
}

RankingMetrics evaluate_ranking(const KgeModel& m, const KnowledgeGraph& kg, bool filtered,
                                std::size_t threads) {
  if (kg.test.empty()) throw DataError("kge: test split is empty");
  const auto ranks = ranking_ranks(m, kg, kg.test, filtered, threads);
  return summarize_ranks(ranks);
}

}  // namespace connector
