#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "connector/matrix.hpp"

namespace connector {

struct Split {
  std::vector<std::uint32_t> train, test;  // sorted
  double ratio = 0.5;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

/// Stratified shuffle split: each class puts floor(ratio * count) members in
/// train, at least one when it has two or more; a singleton goes to train.
/// If that leaves train short of floor(ratio * n), classes with the largest
/// fractional remainder get one extra member each.
Split split_nodes(std::span<const std::uint32_t> labels, double train_ratio, std::uint64_t seed);

struct ThreeWaySplit {
  std::vector<std::uint32_t> train, valid, test;  // sorted
  std::vector<std::string> warnings;
};

/// Same stratification with a validation share carved out of the remainder.
ThreeWaySplit split_nodes(std::span<const std::uint32_t> labels, double train_ratio,
                          double valid_ratio, std::uint64_t seed);

struct LogregConfig {
  double l2 = 1e-4;
  std::size_t iters = 500;
  double lr = 1.0;  // initial step of each backtracking search
  double intercept_scaling = 1.0;  // value of the constant feature that carries the bias

  void validate() const;
};

struct LogregModel {
  Matrix weights;  // (d + 1) x classes, last row is the bias
  std::vector<double> losses;  // objective before each iteration, then final
  double intercept_scaling = 1.0;

  std::size_t dim() const { return weights.rows() - 1; }
  std::size_t classes() const { return weights.cols(); }
};

/// Mean softmax cross-entropy over `rows` plus l2 * ||W||_F^2; fills `grad` if given.
double logreg_objective(const Matrix& w, const Matrix& x, std::span<const std::uint32_t> labels,
                        std::span<const std::uint32_t> rows, double l2, Matrix* grad = nullptr,
                        double intercept_scaling = 1.0);

LogregModel train_logreg(const Matrix& x, std::span<const std::uint32_t> labels,
                         std::span<const std::uint32_t> rows, std::size_t classes,
                         const LogregConfig& cfg = {});

std::vector<std::uint32_t> predict(const LogregModel& m, const Matrix& x,
                                   std::span<const std::uint32_t> rows);

struct ClassificationReport {
  double accuracy = 0.0;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  std::size_t support = 0;
};

/// Macro-F1 averages over classes present in `truth`.
ClassificationReport score_predictions(std::span<const std::uint32_t> predicted,
                                       std::span<const std::uint32_t> truth);

ClassificationReport classify_and_score(const LogregModel& m, const Matrix& x,
                                        std::span<const std::uint32_t> labels,
                                        std::span<const std::uint32_t> rows);

struct NodeClassification {
  Split split;
  LogregModel model;
  ClassificationReport report;
};

/// Split, fit on train, score on test.
NodeClassification evaluate_node_classification(const Matrix& embeddings,
                                                std::span<const std::uint32_t> labels,
                                                double train_ratio, std::uint64_t seed,
                                                const LogregConfig& cfg = {});

}  // namespace connector
