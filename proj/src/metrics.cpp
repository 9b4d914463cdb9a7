#include "convens/ensemble/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace convens {

std::optional<double> roc_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  const auto pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (positive[order[t]]) rank_sum += avg_rank;
    }
    i = j;
  }
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

MetricReport evaluate_classification(const std::vector<int>& predicted, const std::vector<int>& truth, int classes,
                                     const Tensor<float>* scores) {
  if (predicted.size() != truth.size()) throw ShapeError("evaluate: prediction/truth length mismatch");
  MetricReport r;
  r.task = Task::Classification;
  r.samples = static_cast<Index>(truth.size());
  r.confusion.assign(static_cast<std::size_t>(classes), std::vector<Index>(static_cast<std::size_t>(classes), 0));
  Index hits = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (truth[k] < 0 || truth[k] >= classes || predicted[k] < 0 || predicted[k] >= classes) {
      throw ShapeError("evaluate: class index out of range");
    }
    ++r.confusion[static_cast<std::size_t>(truth[k])][static_cast<std::size_t>(predicted[k])];
    hits += predicted[k] == truth[k];
  }
  const auto n = static_cast<double>(truth.size());
  r.accuracy = truth.empty() ? 0.0 : static_cast<double>(hits) / n;
  double auc_sum = 0.0;
  int auc_count = 0;
  for (int c = 0; c < classes; ++c) {
    ClassMetrics m;
    m.label = c;
    Index tp = r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    Index actual = 0, predicted_pos = 0;
    for (int o = 0; o < classes; ++o) {
      actual += r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(o)];
      predicted_pos += r.confusion[static_cast<std::size_t>(o)][static_cast<std::size_t>(c)];
    }
    const Index fp = predicted_pos - tp, fn = actual - tp;
    m.support = actual;
    m.precision = predicted_pos ? static_cast<double>(tp) / static_cast<double>(predicted_pos) : 0.0;
    m.recall = actual ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
    m.accuracy = truth.empty() ? 0.0 : (n - static_cast<double>(fp + fn)) / n;
    if (scores != nullptr) {
      if (scores->rows() != r.samples || scores->cols() != classes) throw ShapeError("evaluate: score matrix shape");
      std::vector<double> s(truth.size());
      std::vector<bool> pos(truth.size());
      for (std::size_t k = 0; k < truth.size(); ++k) {
        s[k] = (*scores)[static_cast<Index>(k) * classes + c];
        pos[k] = truth[k] == c;
      }
      m.auc = roc_auc(s, pos);
      if (m.auc) {
        auc_sum += *m.auc;
        ++auc_count;
      }
    }
    r.macro_precision += m.precision / classes;
    r.macro_recall += m.recall / classes;
    r.per_class.push_back(m);
  }
  if (auc_count > 0) r.macro_auc = auc_sum / auc_count;
  return r;
}

MetricReport evaluate_regression(const std::vector<double>& predicted, const std::vector<double>& truth,
                                 const DecileBinning* binning) {
  if (predicted.size() != truth.size()) throw ShapeError("evaluate: prediction/truth length mismatch");
  MetricReport r;
  r.task = Task::Regression;
  r.samples = static_cast<Index>(truth.size());
  if (truth.empty()) return r;
  const auto n = static_cast<double>(truth.size());
  const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / n;
  double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0;
  Index bin_hits = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const double d = predicted[k] - truth[k];
    ss_res += d * d;
    abs_sum += std::abs(d);
    ss_tot += (truth[k] - mean) * (truth[k] - mean);
    if (binning) bin_hits += bin_of(*binning, predicted[k]) == bin_of(*binning, truth[k]);
  }
  r.rmse = std::sqrt(ss_res / n);
  r.mae = abs_sum / n;
  r.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  if (binning) {
    r.binned_accuracy = static_cast<double>(bin_hits) / n;
    r.accuracy = *r.binned_accuracy;
  }
  return r;
}

nlohmann::json MetricReport::to_json() const {
  using nlohmann::json;
  json j;
  j["task"] = task == Task::Classification ? "classification" : "regression";
  j["samples"] = samples;
  j["accuracy"] = accuracy;
  if (task == Task::Classification) {
    j["macro_precision"] = macro_precision;
    j["macro_recall"] = macro_recall;
    j["macro_auc"] = macro_auc ? json(*macro_auc) : json(nullptr);
    j["confusion"] = confusion;
    json classes = json::array();
    for (const auto& c : per_class) {
      classes.push_back({{"label", c.label},
                         {"support", c.support},
                         {"accuracy", c.accuracy},
                         {"precision", c.precision},
                         {"recall", c.recall},
                         {"auc", c.auc ? json(*c.auc) : json(nullptr)}});
    }
    j["per_class"] = classes;
  } else {
    j["rmse"] = rmse;
    j["mae"] = mae;
    j["r2"] = r2;
    j["binned_accuracy"] = binned_accuracy ? json(*binned_accuracy) : json(nullptr);
  }
  return j;
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  if (task == Task::Classification) {
    os << "label,support,accuracy,precision,recall,auc\n";
    for (const auto& c : per_class) {
      os << c.label << ',' << c.support << ',' << c.accuracy << ',' << c.precision << ',' << c.recall << ',';
      if (c.auc) os << *c.auc;
      os << '\n';
    }
    os << "all," << samples << ',' << accuracy << ',' << macro_precision << ',' << macro_recall << ',';
    if (macro_auc) os << *macro_auc;
    os << '\n';
  } else {
    os << "samples,rmse,mae,r2,binned_accuracy\n";
    os << samples << ',' << rmse << ',' << mae << ',' << r2 << ',';
    if (binned_accuracy) os << *binned_accuracy;
    os << '\n';
  }
  return os.str();
}

}  // namespace convens
