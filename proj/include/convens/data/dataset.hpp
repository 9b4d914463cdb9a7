#pragma once

#include "convens/nn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace convens {

enum class Task { Classification, Regression };
enum class Split { Train, Test };

/// Samples plus either class labels or real targets. For regression data the
/// `labels` hold decile bins once `bin_regression_targets` has run.
struct Dataset {
  Tensor<float> inputs;
  std::vector<int> labels;
  std::vector<double> targets;
  int num_classes = 0;
  Task task = Task::Classification;
  Split split = Split::Train;

  Index size() const { return inputs.rows(); }
  Shape sample_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }

  /// One-hot rows (classification) or an (n, 1) column of targets.
  Tensor<float> target_tensor() const;
  Tensor<float> target_tensor(const std::vector<Index>& indices) const;

  Dataset subset(const std::vector<Index>& indices) const;
  void validate() const;
};

/// Big-endian IDX image (magic 0x803) and label (magic 0x801) files. Pixels
/// are scaled to [0, 1]; inputs have shape (n, 1, rows, cols).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 Split split = Split::Train);

/// Numeric CSV with a header row. Feature columns are z-scored (population
/// variance; constant columns become zero). The target column stays raw.
Dataset load_csv_regression(const std::filesystem::path& path, const std::string& target_column);

struct SyntheticSpec {
  Index samples = 1000;
  int classes = 10;
  Shape sample_shape{32};
  /// Std-dev of class centroids around the origin.
  double separation = 1.0;
  /// Std-dev of per-sample noise around its centroid.
  double noise = 1.0;
  std::uint64_t seed = 0;
};

/// Balanced Gaussian blobs: sample i belongs to class i mod c.
Dataset make_synthetic_classification(const SyntheticSpec& spec);
Dataset make_synthetic_classification(Index n, int classes, const Shape& sample_shape, std::uint64_t seed);

/// Train and test sets drawn from the same blob centroids.
std::pair<Dataset, Dataset> make_synthetic_split(const SyntheticSpec& spec, Index test_samples);

/// Seeded random train/test split.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double test_fraction, std::uint64_t seed);

struct DecileBinning {
  /// Nine strictly increasing interior edges; bin = number of edges < value.
  std::vector<double> edges;
};

/// Assigns 10 equal-count bins by training-target rank, derives the edges,
/// and maps the test targets through the same edges. Labels of both sets are
/// overwritten with bin indices and num_classes set to 10.
DecileBinning bin_regression_targets(Dataset& train, Dataset& test);

int bin_of(const DecileBinning& binning, double value);

}  // namespace convens
