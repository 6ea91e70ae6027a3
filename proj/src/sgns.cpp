#include "connector/sgns.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "connector/errors.hpp"
#include "connector/parallel.hpp"

namespace connector {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// Row access for the shared embedding matrices. With Shared, element accesses
/// are relaxed atomics so concurrent workers race benignly (asynchronous SGD).
template <bool Shared>
struct Cell {
  static double load(double& x) {
    if constexpr (Shared) return std::atomic_ref<double>(x).load(std::memory_order_relaxed);
    else return x;
  }
  static void add(double& x, double delta) {
    if constexpr (Shared) {
      std::atomic_ref<double> r(x);
      r.store(r.load(std::memory_order_relaxed) + delta, std::memory_order_relaxed);
    } else {
      x += delta;
    }
  }
};

struct TrainState {
  const WalkCorpus& corpus;
  const Vocab& vocab;
  const SgnsConfig& cfg;
  const SgnsOptions& options;
  const NegativeSampler& sampler;
  EmbeddingTable& table;
  std::vector<double> keep_prob;  // empty when subsampling is off
  std::atomic<std::size_t> processed{0};
  double total_tokens = 0.0;
};

template <bool Shared>
void train_shard(TrainState& st, std::size_t epoch, std::size_t begin, std::size_t end,
                 std::size_t worker) {
  using C = Cell<Shared>;
  const std::size_t dim = st.cfg.dim;
  Rng rng(derive_seed(st.cfg.seed, 0x5a5aULL + epoch, worker));
  std::vector<double> grad_in(dim);
  std::vector<std::uint32_t> sentence;
  std::size_t local = 0;
  double lr = st.cfg.initial_lr;

  for (std::size_t w = begin; w < end; ++w) {
    sentence.clear();
    for (NodeId token : st.corpus.walks[w]) {
      const auto idx = st.vocab.at(token);
      if (!st.keep_prob.empty() && uniform01(rng) >= st.keep_prob[idx]) continue;
      sentence.push_back(idx);
    }
    for (std::size_t i = 0; i < sentence.size(); ++i) {
      if (local == 64) {
        st.processed.fetch_add(local, std::memory_order_relaxed);
        local = 0;
      }
      if (local == 0) {
        const double progress =
            static_cast<double>(st.processed.load(std::memory_order_relaxed)) / st.total_tokens;
        lr = std::max(st.cfg.min_lr,
                      st.cfg.initial_lr - (st.cfg.initial_lr - st.cfg.min_lr) * progress);
      }
      ++local;
      const std::uint32_t center = sentence[i];
      const auto reach = static_cast<std::size_t>(1 + uniform_index(rng, st.cfg.window));
      const std::size_t lo = i >= reach ? i - reach : 0;
      const std::size_t hi = std::min(sentence.size() - 1, i + reach);
      auto in_row = st.table.input.row(center);
      for (std::size_t j = lo; j <= hi; ++j) {
        if (j == i) continue;
        const std::uint32_t context = sentence[j];
        std::fill(grad_in.begin(), grad_in.end(), 0.0);
        for (std::size_t n = 0; n <= st.cfg.negatives; ++n) {
          std::uint32_t target = context;
          double label = 1.0;
          if (n > 0) {
            target = st.cfg.hetero_negatives
                         ? st.sampler.draw_of_type(st.sampler.type_of(context), rng)
                         : st.sampler.draw(rng);
            if (st.options.on_negative) st.options.on_negative(context, target);
            if (target == context) continue;
            label = 0.0;
          }
          auto out_row = st.table.output.row(target);
          double f = 0.0;
          for (std::size_t d = 0; d < dim; ++d) f += C::load(in_row[d]) * C::load(out_row[d]);
          const double g = (label - sigmoid(f)) * lr;
          for (std::size_t d = 0; d < dim; ++d) grad_in[d] += g * C::load(out_row[d]);
          for (std::size_t d = 0; d < dim; ++d) C::add(out_row[d], g * C::load(in_row[d]));
        }
        for (std::size_t d = 0; d < dim; ++d) C::add(in_row[d], grad_in[d]);
      }
    }
  }
  st.processed.fetch_add(local, std::memory_order_relaxed);
}

}  // namespace

std::uint32_t Vocab::at(NodeId token) const {
  auto it = index.find(token);
  if (it == index.end()) throw DataError("token " + std::to_string(token) + " is not in the vocabulary");
  return it->second;
}

double Vocab::noise_probability(std::uint32_t i) const {
  double total = 0.0;
  for (double w : noise_weights) total += w;
  return noise_weights[i] / total;
}

Vocab build_vocab(const WalkCorpus& corpus) {
  Vocab v;
  for (const auto& walk : corpus.walks) {
    for (NodeId t : walk) {
      auto [it, inserted] = v.index.try_emplace(t, static_cast<std::uint32_t>(v.tokens.size()));
      if (inserted) {
        v.tokens.push_back(t);
        v.counts.push_back(0);
      }
      ++v.counts[it->second];
    }
  }
  if (v.tokens.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  v.noise_weights.reserve(v.counts.size());
  for (auto c : v.counts) v.noise_weights.push_back(std::pow(static_cast<double>(c), 0.75));
  return v;
}

void SgnsConfig::validate() const {
  if (dim < 1) throw UsageError("sgns dim must be >= 1");
  if (window < 1) throw UsageError("sgns window must be >= 1");
  if (negatives < 1) throw UsageError("sgns negatives must be >= 1");
  if (!(initial_lr > min_lr && min_lr >= 0.0))
    throw UsageError("sgns needs initial_lr > min_lr >= 0");
  if (subsample < 0.0) throw UsageError("sgns subsample must be >= 0");
}

SgnsGradient sgns_step(std::span<const double> u, std::span<const double> v, int label) {
  if (u.size() != v.size()) throw UsageError("sgns_step: vectors differ in dimension");
  if (label != 0 && label != 1) throw UsageError("sgns_step: label must be 0 or 1");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!std::isfinite(u[i]) || !std::isfinite(v[i]))
      throw NumericError("sgns_step: non-finite input");
    s += u[i] * v[i];
  }
  SgnsGradient out;
  out.loss = label == 1 ? softplus(-s) : softplus(s);
  const double coeff = sigmoid(s) - label;
  out.grad_u.resize(u.size());
  out.grad_v.resize(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    out.grad_u[i] = coeff * v[i];
    out.grad_v[i] = coeff * u[i];
  }
  return out;
}

NegativeSampler::NegativeSampler(const Vocab& vocab,
                                 std::optional<std::span<const std::uint32_t>> type_of)
    : all_(vocab.noise_weights), types_(vocab.size(), 0) {
  if (!type_of) return;
  std::uint32_t num_types = 0;
  for (std::uint32_t i = 0; i < vocab.size(); ++i) {
    const NodeId token = vocab.tokens[i];
    if (token >= type_of->size()) throw DataError("token without a type");
    types_[i] = (*type_of)[token];
    num_types = std::max(num_types, types_[i] + 1);
  }
  members_.resize(num_types);
  for (std::uint32_t i = 0; i < vocab.size(); ++i) members_[types_[i]].push_back(i);
  per_type_.resize(num_types);
  for (std::uint32_t t = 0; t < num_types; ++t) {
    if (members_[t].empty()) continue;
    std::vector<double> w;
    w.reserve(members_[t].size());
    for (auto i : members_[t]) w.push_back(vocab.noise_weights[i]);
    per_type_[t] = AliasTable(w);
  }
}

std::uint32_t NegativeSampler::draw(Rng& rng) const {
  return static_cast<std::uint32_t>(all_.draw(rng));
}

std::uint32_t NegativeSampler::draw_of_type(std::uint32_t type, Rng& rng) const {
  if (type >= per_type_.size() || members_[type].empty())
    throw UsageError("no typed noise distribution for type " + std::to_string(type));
  return members_[type][per_type_[type].draw(rng)];
}

EmbeddingTable init_embeddings(std::size_t vocab_size, std::size_t dim, std::uint64_t seed) {
  EmbeddingTable t;
  t.dim = dim;
  t.input = Matrix(vocab_size, dim);
  t.output = Matrix(vocab_size, dim);
  Rng rng(derive_seed(seed, 0x1417ULL));
  const double half = 0.5 / static_cast<double>(dim);
  std::uniform_real_distribution<double> u(-half, half);
  for (double& x : t.input.data()) x = u(rng);
  return t;
}

EmbeddingTable train_sgns(const WalkCorpus& corpus, const Vocab& vocab, const SgnsConfig& cfg,
                          const SgnsOptions& options) {
  cfg.validate();
  if (cfg.hetero_negatives && !options.type_of)
    throw UsageError("hetero_negatives requires a token -> type map");
  const NegativeSampler sampler(vocab, cfg.hetero_negatives ? options.type_of : std::nullopt);
  EmbeddingTable table = init_embeddings(vocab.size(), cfg.dim, cfg.seed);

  TrainState st{corpus, vocab, cfg, options, sampler, table, {}};
  if (cfg.subsample > 0.0) {
    double total = 0.0;
    for (auto c : vocab.counts) total += static_cast<double>(c);
    st.keep_prob.resize(vocab.size());
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      const double f = static_cast<double>(vocab.counts[i]) / total;
      st.keep_prob[i] = std::min(1.0, (std::sqrt(f / cfg.subsample) + 1.0) * cfg.subsample / f);
    }
  }
  st.total_tokens = static_cast<double>(corpus.num_tokens() * std::max<std::size_t>(cfg.epochs, 1));

  std::size_t workers = cfg.deterministic ? 1 : std::max<std::size_t>(1, cfg.threads);
  if (options.on_negative) workers = 1;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (workers == 1) {
      train_shard<false>(st, epoch, 0, corpus.walks.size(), 0);
    } else {
      parallel_chunks(corpus.walks.size(), workers,
                      [&](std::size_t b, std::size_t e, std::size_t w) {
                        train_shard<true>(st, epoch, b, e, w);
                      });
    }
  }
  if (!table.input.all_finite()) throw NumericError("sgns training produced non-finite vectors");
  return table;
}

}  // namespace connector
