#include "connector/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "connector/errors.hpp"
#include "connector/random.hpp"

namespace connector {

namespace {

constexpr std::uint64_t kSplitStream = 0x53504c;

// Members of each class in node order, classes in id order, each shuffled.
std::map<std::uint32_t, std::vector<std::uint32_t>> shuffled_classes(
    std::span<const std::uint32_t> labels, std::uint64_t seed) {
  std::map<std::uint32_t, std::vector<std::uint32_t>> by_class;
  for (std::uint32_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  Rng rng(derive_seed(seed, kSplitStream));
  for (auto& [c, members] : by_class) std::shuffle(members.begin(), members.end(), rng);
  return by_class;
}

std::size_t train_share(std::size_t count, double ratio) {
  auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(count)));
  if (count >= 2 && k == 0) k = 1;
  if (count == 1) k = 1;
  return k;
}

std::string singleton_warning(std::uint32_t c) {
  return "class " + std::to_string(c) + " has a single member; it is placed in train";
}

}  // namespace

Split split_nodes(std::span<const std::uint32_t> labels, double train_ratio, std::uint64_t seed) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw UsageError("train ratio must be in (0, 1)");
  Split s;
  s.ratio = train_ratio;
  s.seed = seed;
  auto classes = shuffled_classes(labels, seed);
  // Per-class floors, then top up to floor(ratio * n) by largest remainder.
  std::vector<std::pair<std::uint32_t, std::size_t>> share;
  std::size_t assigned = 0;
  for (auto& [c, members] : classes) {
    share.emplace_back(c, train_share(members.size(), train_ratio));
    assigned += share.back().second;
  }
  const auto target =
      static_cast<std::size_t>(std::floor(train_ratio * static_cast<double>(labels.size())));
  auto remainder = [&](std::uint32_t c) {
    const double exact = train_ratio * static_cast<double>(classes[c].size());
    return exact - std::floor(exact);
  };
  std::vector<std::size_t> order(share.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return remainder(share[a].first) > remainder(share[b].first);
  });
  for (std::size_t i : order) {
    if (assigned >= target) break;
    auto& [c, k] = share[i];
    if (k + 1 < classes[c].size() && remainder(c) > 0.0) ++k, ++assigned;
  }
  for (auto& [c, k] : share) {
    const auto& members = classes[c];
    if (members.size() == 1) s.warnings.push_back(singleton_warning(c));
    s.train.insert(s.train.end(), members.begin(), members.begin() + k);
    s.test.insert(s.test.end(), members.begin() + k, members.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

ThreeWaySplit split_nodes(std::span<const std::uint32_t> labels, double train_ratio,
                          double valid_ratio, std::uint64_t seed) {
  if (!(train_ratio > 0.0 && valid_ratio >= 0.0 && train_ratio + valid_ratio < 1.0))
    throw UsageError("split ratios must satisfy 0 < train, 0 <= valid, train + valid < 1");
  ThreeWaySplit s;
  for (auto& [c, members] : shuffled_classes(labels, seed)) {
    const std::size_t n = members.size();
    const std::size_t k = train_share(n, train_ratio);
    const std::size_t v = std::min(n - k, static_cast<std::size_t>(std::floor(
                                              valid_ratio * static_cast<double>(n))));
    if (n == 1) s.warnings.push_back(singleton_warning(c));
    s.train.insert(s.train.end(), members.begin(), members.begin() + k);
    s.valid.insert(s.valid.end(), members.begin() + k, members.begin() + k + v);
    s.test.insert(s.test.end(), members.begin() + k + v, members.end());
  }
  for (auto* part : {&s.train, &s.valid, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

void LogregConfig::validate() const {
  if (l2 < 0.0) throw UsageError("logreg l2 must be >= 0");
  if (!(lr > 0.0)) throw UsageError("logreg lr must be > 0");
  if (!(intercept_scaling > 0.0)) throw UsageError("logreg intercept_scaling must be > 0");
}

double logreg_objective(const Matrix& w, const Matrix& x, std::span<const std::uint32_t> labels,
                        std::span<const std::uint32_t> rows, double l2, Matrix* grad,
                        double intercept_scaling) {
  const std::size_t d = x.cols();
  const std::size_t classes = w.cols();
  if (w.rows() != d + 1) throw UsageError("logreg weights must be (d + 1) x classes");
  if (rows.empty()) throw UsageError("logreg needs at least one row");
  if (grad) *grad = Matrix(w.rows(), w.cols());
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  std::vector<double> z(classes);
  double loss = 0.0;
  for (auto r : rows) {
    const auto xr = x.row(r);
    for (std::size_t c = 0; c < classes; ++c) z[c] = intercept_scaling * w(d, c);
    for (std::size_t i = 0; i < d; ++i) {
      if (xr[i] == 0.0) continue;
      const auto wi = w.row(i);
      for (std::size_t c = 0; c < classes; ++c) z[c] += xr[i] * wi[c];
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    const std::uint32_t y = labels[r];
    if (y >= classes) throw UsageError("logreg label out of range");
    loss += (lse - z[y]) * inv_n;
    if (!grad) continue;
    for (std::size_t c = 0; c < classes; ++c) {
      const double delta = (std::exp(z[c] - lse) - (c == y ? 1.0 : 0.0)) * inv_n;
      for (std::size_t i = 0; i < d; ++i) (*grad)(i, c) += delta * xr[i];
      (*grad)(d, c) += delta * intercept_scaling;
    }
  }
  double sq = 0.0;
  for (double v : w.data()) sq += v * v;
  loss += l2 * sq;
  if (grad)
    for (std::size_t i = 0; i < w.size(); ++i) grad->data()[i] += 2.0 * l2 * w.data()[i];
  return loss;
}

LogregModel train_logreg(const Matrix& x, std::span<const std::uint32_t> labels,
                         std::span<const std::uint32_t> rows, std::size_t classes,
                         const LogregConfig& cfg) {
  cfg.validate();
  if (rows.empty()) throw UsageError("logreg: empty training set");
  std::vector<std::uint8_t> present(classes, 0);
  std::size_t distinct = 0;
  for (auto r : rows) {
    if (labels[r] >= classes) throw UsageError("logreg label out of range");
    distinct += !present[labels[r]]++;
  }
  if (distinct < 2) throw UsageError("logreg: training set contains a single class");
  if (!x.all_finite()) throw NumericError("logreg: non-finite input features");

  LogregModel m;
  m.weights = Matrix(x.cols() + 1, classes);
  m.intercept_scaling = cfg.intercept_scaling;
  Matrix grad;
  double f = logreg_objective(m.weights, x, labels, rows, cfg.l2, &grad, cfg.intercept_scaling);
  m.losses.push_back(f);
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    double gg = 0.0;
    for (double v : grad.data()) gg += v * v;
    if (gg == 0.0) break;
    double step = cfg.lr;
    bool accepted = false;
    Matrix trial(m.weights.rows(), m.weights.cols());
    while (step > 1e-16) {
      for (std::size_t i = 0; i < trial.size(); ++i)
        trial.data()[i] = m.weights.data()[i] - step * grad.data()[i];
      const double ft = logreg_objective(trial, x, labels, rows, cfg.l2, nullptr, cfg.intercept_scaling);
      if (ft <= f - 1e-4 * step * gg) {
        m.weights = std::move(trial);
        f = logreg_objective(m.weights, x, labels, rows, cfg.l2, &grad, cfg.intercept_scaling);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    if (!std::isfinite(f)) throw NumericError("logreg: non-finite loss");
    m.losses.push_back(f);
  }
  return m;
}

std::vector<std::uint32_t> predict(const LogregModel& m, const Matrix& x,
                                   std::span<const std::uint32_t> rows) {
  if (x.cols() != m.dim()) throw UsageError("logreg: feature width does not match the model");
  const std::size_t d = m.dim();
  std::vector<std::uint32_t> out;
  out.reserve(rows.size());
  std::vector<double> z(m.classes());
  for (auto r : rows) {
    const auto xr = x.row(r);
    for (std::size_t c = 0; c < z.size(); ++c) {
      double s = m.intercept_scaling * m.weights(d, c);
      for (std::size_t i = 0; i < d; ++i) s += xr[i] * m.weights(i, c);
      z[c] = s;
    }
    out.push_back(static_cast<std::uint32_t>(std::max_element(z.begin(), z.end()) - z.begin()));
  }
  return out;
}

ClassificationReport score_predictions(std::span<const std::uint32_t> predicted,
                                       std::span<const std::uint32_t> truth) {
  if (predicted.size() != truth.size()) throw UsageError("prediction/label count mismatch");
  ClassificationReport r;
  r.support = truth.size();
  if (truth.empty()) return r;
  std::map<std::uint32_t, std::size_t> tp, fp, fn;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] == truth[i]) {
      ++correct;
      ++tp[truth[i]];
    } else {
      ++fp[predicted[i]];
      ++fn[truth[i]];
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  std::size_t stp = 0, sfp = 0, sfn = 0;
  for (auto& [c, v] : tp) stp += v;
  for (auto& [c, v] : fp) sfp += v;
  for (auto& [c, v] : fn) sfn += v;
  r.micro_f1 = 2.0 * stp / static_cast<double>(2 * stp + sfp + sfn);
  std::map<std::uint32_t, bool> present;
  for (auto t : truth) present[t] = true;
  double macro = 0.0;
  for (auto& [c, _] : present) {
    const double t = static_cast<double>(tp[c]);
    const double denom = 2.0 * t + static_cast<double>(fp[c] + fn[c]);
    macro += denom > 0.0 ? 2.0 * t / denom : 0.0;
  }
  r.macro_f1 = macro / static_cast<double>(present.size());
  return r;
}

ClassificationReport classify_and_score(const LogregModel& m, const Matrix& x,
                                        std::span<const std::uint32_t> labels,
                                        std::span<const std::uint32_t> rows) {
  const auto pred = predict(m, x, rows);
  std::vector<std::uint32_t> truth;
  truth.reserve(rows.size());
  for (auto r : rows) truth.push_back(labels[r]);
  return score_predictions(pred, truth);
}

NodeClassification evaluate_node_classification(const Matrix& embeddings,
                                                std::span<const std::uint32_t> labels,
                                                double train_ratio, std::uint64_t seed,
                                                const LogregConfig& cfg) {
  if (embeddings.rows() != labels.size()) throw UsageError("embedding rows and labels differ in count");
  NodeClassification out;
  out.split = split_nodes(labels, train_ratio, seed);
  std::uint32_t classes = 0;
  for (auto l : labels) classes = std::max(classes, l + 1);
  out.model = train_logreg(embeddings, labels, out.split.train, classes, cfg);
  out.report = classify_and_score(out.model, embeddings, labels, out.split.test);
  return out;
}

}  // namespace connector
