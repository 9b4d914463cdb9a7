#pragma once

#include "convens/data/dataset.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace convens {

struct ClassMetrics {
  int label = 0;
  Index support = 0;
  /// One-vs-rest accuracy.
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::optional<double> auc;
};

struct MetricReport {
  Task task = Task::Classification;
  Index samples = 0;
  double accuracy = 0.0;
  std::vector<std::vector<Index>> confusion;
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  std::optional<double> macro_auc;
  double rmse = 0.0;
  double mae = 0.0;
  double r2 = 0.0;
  /// Regression only: fraction of predictions landing in the true decile bin.
  std::optional<double> binned_accuracy;

  nlohmann::json to_json() const;
  /// Header plus one row per class (classification) or one summary row.
  std::string to_csv() const;
};

/// Area under the ROC curve via the rank statistic (ties count 1/2).
/// Undefined when only one class is present.
std::optional<double> roc_auc(const std::vector<double>& scores, const std::vector<bool>& positive);

/// `scores` (n x classes), when given, feeds per-class one-vs-rest AUC.
MetricReport evaluate_classification(const std::vector<int>& predicted, const std::vector<int>& truth, int classes,
                                     const Tensor<float>* scores = nullptr);

MetricReport evaluate_regression(const std::vector<double>& predicted, const std::vector<double>& truth,
                                 const DecileBinning* binning = nullptr);

}  // namespace convens
