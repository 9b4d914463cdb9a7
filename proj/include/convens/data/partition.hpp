#pragma once

#include "convens/data/dataset.hpp"

#include <algorithm>
#include <cstdint>
#include <vector>

namespace convens {

struct PartitionSpec {
  /// Minimum per-class training fraction, in (0, 1].
  double alpha = 0.05;
  /// Maximum relative train/test fraction discrepancy, in [0, 1].
  double delta = 0.0;
  int edges = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One edge's sampled slice of the train and test sets.
struct EdgeSplit {
  /// Sorted sample indices.
  std::vector<Index> train;
  std::vector<Index> test;
  /// Per-class drawn fractions: X ~ U[alpha, 1] and clamp(X * (1 + Y), 0, 1).
  std::vector<double> train_fraction;
  std::vector<double> test_fraction;
  /// Per-class Y ~ U[-delta, delta].
  std::vector<double> discrepancy;

  bool holds_train(Index k) const { return std::binary_search(train.begin(), train.end(), k); }
  bool holds_test(Index k) const { return std::binary_search(test.begin(), test.end(), k); }
};

struct EdgeAssignment {
  PartitionSpec spec;
  int classes = 0;
  Index train_size = 0;
  Index test_size = 0;
  std::vector<EdgeSplit> edges;

  /// Fraction of training samples held by at least one edge.
  double train_coverage() const;
  double test_coverage() const;
};

EdgeAssignment sample_edge_assignment(const std::vector<int>& train_labels,
                                      const std::vector<int>& test_labels, int classes,
                                      const PartitionSpec& spec);

EdgeAssignment sample_edge_assignment(const Dataset& train, const Dataset& test, const PartitionSpec& spec);

}  // namespace convens
