#include "convens/data/dataset.hpp"
#include "convens/data/partition.hpp"
#include "convens/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace convens {

Tensor<float> Dataset::target_tensor() const {
  std::vector<Index> all(static_cast<std::size_t>(size()));
  std::iota(all.begin(), all.end(), Index{0});
  return target_tensor(all);
}

Tensor<float> Dataset::target_tensor(const std::vector<Index>& indices) const {
  const auto n = static_cast<Index>(indices.size());
  if (task == Task::Classification) {
    Tensor<float> t(Shape{n, num_classes});
    for (Index r = 0; r < n; ++r) t[r * num_classes + labels[static_cast<std::size_t>(indices[static_cast<std::size_t>(r)])]] = 1.0f;
    return t;
  }
  Tensor<float> t(Shape{n, 1});
  for (Index r = 0; r < n; ++r) t[r] = static_cast<float>(targets[static_cast<std::size_t>(indices[static_cast<std::size_t>(r)])]);
  return t;
}

Dataset Dataset::subset(const std::vector<Index>& indices) const {
  Dataset out;
  out.inputs = inputs.gather_rows(indices);
  out.num_classes = num_classes;
  out.task = task;
  out.split = split;
  for (Index i : indices) {
    if (!labels.empty()) out.labels.push_back(labels[static_cast<std::size_t>(i)]);
    if (!targets.empty()) out.targets.push_back(targets[static_cast<std::size_t>(i)]);
  }
  return out;
}

void Dataset::validate() const {
  const auto n = static_cast<std::size_t>(size());
  if (task == Task::Classification) {
    if (labels.size() != n) throw ShapeError("dataset: label count does not match inputs");
    for (int l : labels) {
      if (l < 0 || l >= num_classes) throw ShapeError("dataset: label out of [0, c)");
    }
  } else if (targets.size() != n) {
    throw ShapeError("dataset: target count does not match inputs");
  }
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, Split split) {
  const auto img = read_file(images);
  if (img.size() < 16) throw FormatError(images.string() + ": truncated header");
  if (be32(img, 0) != 0x00000803) throw FormatError(images.string() + ": bad magic for IDX images");
  const Index n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  if (static_cast<Index>(img.size()) - 16 < n * rows * cols) throw FormatError(images.string() + ": truncated pixel data");

  const auto lab = read_file(labels);
  if (lab.size() < 8) throw FormatError(labels.string() + ": truncated header");
  if (be32(lab, 0) != 0x00000801) throw FormatError(labels.string() + ": bad magic for IDX labels");
  const Index nl = be32(lab, 4);
  if (static_cast<Index>(lab.size()) - 8 < nl) throw FormatError(labels.string() + ": truncated label data");
  if (nl != n) {
    throw FormatError("image/label count mismatch: " + std::to_string(n) + " vs " + std::to_string(nl));
  }

  Dataset ds;
  ds.split = split;
  ds.task = Task::Classification;
  ds.inputs = Tensor<float>(Shape{n, 1, rows, cols});
  for (Index k = 0; k < n * rows * cols; ++k) ds.inputs[k] = static_cast<float>(img[16 + static_cast<std::size_t>(k)]) / 255.0f;
  ds.labels.resize(static_cast<std::size_t>(n));
  int max_label = 0;
  for (Index k = 0; k < n; ++k) {
    ds.labels[static_cast<std::size_t>(k)] = lab[8 + static_cast<std::size_t>(k)];
    max_label = std::max(max_label, ds.labels[static_cast<std::size_t>(k)]);
  }
  ds.num_classes = max_label + 1;
  return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r\"");
    const auto e = cell.find_last_not_of(" \t\r\"");
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

Dataset load_csv_regression(const std::filesystem::path& path, const std::string& target_column) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header");
  const auto header = split_csv_line(line);
  const auto it = std::find(header.begin(), header.end(), target_column);
  if (it == header.end()) throw FormatError(path.string() + ": missing target column '" + target_column + "'");
  const auto target_col = static_cast<std::size_t>(it - header.begin());

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " cells");
    }
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto& s = cells[c];
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), row[c]);
      if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": non-numeric cell '" + s +
                          "' in column '" + header[c] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(path.string() + ": no rows");

  const auto n = static_cast<Index>(rows.size());
  const auto features = static_cast<Index>(header.size()) - 1;
  Dataset ds;
  ds.task = Task::Regression;
  ds.inputs = Tensor<float>(Shape{n, features});
  ds.targets.resize(rows.size());
  Index f = 0;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == target_col) {
      for (Index r = 0; r < n; ++r) ds.targets[static_cast<std::size_t>(r)] = rows[static_cast<std::size_t>(r)][c];
      continue;
    }
    double mean = 0.0;
    for (const auto& row : rows) mean += row[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& row : rows) var += (row[c] - mean) * (row[c] - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (Index r = 0; r < n; ++r) {
      const double z = sd > 1e-12 ? (rows[static_cast<std::size_t>(r)][c] - mean) / sd : 0.0;
      ds.inputs[r * features + f] = static_cast<float>(z);
    }
    ++f;
  }
  return ds;
}

namespace {

std::vector<Vector<double>> draw_centroids(const SyntheticSpec& spec) {
  Rng rng = make_rng(derive_seed(spec.seed, "centroids"));
  std::normal_distribution<double> dist(0.0, spec.separation);
  const Index dims = shape_product(spec.sample_shape);
  std::vector<Vector<double>> centroids;
  for (int c = 0; c < spec.classes; ++c) {
    Vector<double> mu(dims);
    for (Index d = 0; d < dims; ++d) mu[d] = dist(rng);
    centroids.push_back(std::move(mu));
  }
  return centroids;
}

Dataset draw_blobs(const SyntheticSpec& spec, const std::vector<Vector<double>>& centroids, Index n,
                   std::uint64_t stream, Split split) {
  if (spec.classes < 1 || n < spec.classes) throw ConfigError("synthetic data needs n >= c >= 1");
  Rng rng = make_rng(stream);
  std::normal_distribution<double> noise(0.0, spec.noise);
  const Index dims = shape_product(spec.sample_shape);
  Dataset ds;
  ds.task = Task::Classification;
  ds.split = split;
  ds.num_classes = spec.classes;
  Shape shape{n};
  shape.insert(shape.end(), spec.sample_shape.begin(), spec.sample_shape.end());
  ds.inputs = Tensor<float>(shape);
  ds.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % spec.classes);
    ds.labels[static_cast<std::size_t>(i)] = label;
    for (Index d = 0; d < dims; ++d) {
      ds.inputs[i * dims + d] = static_cast<float>(centroids[static_cast<std::size_t>(label)][d] + noise(rng));
    }
  }
  return ds;
}

}  // namespace

Dataset make_synthetic_classification(const SyntheticSpec& spec) {
  return draw_blobs(spec, draw_centroids(spec), spec.samples, derive_seed(spec.seed, "train"), Split::Train);
}

Dataset make_synthetic_classification(Index n, int classes, const Shape& sample_shape, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.samples = n;
  spec.classes = classes;
  spec.sample_shape = sample_shape;
  spec.seed = seed;
  return make_synthetic_classification(spec);
}

std::pair<Dataset, Dataset> make_synthetic_split(const SyntheticSpec& spec, Index test_samples) {
  const auto centroids = draw_centroids(spec);
  return {draw_blobs(spec, centroids, spec.samples, derive_seed(spec.seed, "train"), Split::Train),
          draw_blobs(spec, centroids, test_samples, derive_seed(spec.seed, "test"), Split::Test)};
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must be in (0, 1)");
  std::vector<Index> order(static_cast<std::size_t>(ds.size()));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng = make_rng(derive_seed(seed, "split"));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ds.size())));
  std::vector<Index> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<Index> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  auto tr = ds.subset(train);
  auto te = ds.subset(test);
  tr.split = Split::Train;
  te.split = Split::Test;
  return {std::move(tr), std::move(te)};
}

int bin_of(const DecileBinning& binning, double value) {
  return static_cast<int>(std::lower_bound(binning.edges.begin(), binning.edges.end(), value) - binning.edges.begin());
}

DecileBinning bin_regression_targets(Dataset& train, Dataset& test) {
  constexpr int kBins = 10;
  const auto n = train.targets.size();
  if (n == 0) throw ConfigError("decile binning needs a nonempty training set");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return train.targets[a] < train.targets[b]; });
  std::vector<double> sorted(n);
  for (std::size_t r = 0; r < n; ++r) sorted[r] = train.targets[order[r]];
  std::vector<double> distinct;
  std::unique_copy(sorted.begin(), sorted.end(), std::back_inserter(distinct));
  if (distinct.size() < static_cast<std::size_t>(kBins)) {
    throw ConfigError("decile binning needs at least 10 distinct target values, got " +
                      std::to_string(distinct.size()));
  }

  // Edges sit at midpoints between consecutive distinct values; ties at a
  // rank boundary push the edge to the next distinct value.
  const auto midpoints = static_cast<Index>(distinct.size()) - 1;
  DecileBinning binning;
  Index prev = -1;
  for (int j = 1; j < kBins; ++j) {
    const auto boundary = static_cast<std::size_t>((static_cast<std::size_t>(j) * n + kBins - 1) / kBins);
    const double below = sorted[boundary - 1];
    Index t = std::lower_bound(distinct.begin(), distinct.end(), below) - distinct.begin();
    t = std::max(t, prev + 1);
    t = std::min(t, midpoints - (kBins - j));
    binning.edges.push_back(0.5 * (distinct[static_cast<std::size_t>(t)] + distinct[static_cast<std::size_t>(t) + 1]));
    prev = t;
  }

  train.labels.assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) train.labels[order[r]] = static_cast<int>(r * kBins / n);
  test.labels.resize(test.targets.size());
  for (std::size_t k = 0; k < test.targets.size(); ++k) test.labels[k] = bin_of(binning, test.targets[k]);
  train.num_classes = test.num_classes = kBins;
  return binning;
}

void PartitionSpec::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in (0, 1], got " + std::to_string(alpha));
  if (!(delta >= 0.0 && delta <= 1.0)) throw ConfigError("delta must be in [0, 1], got " + std::to_string(delta));
  if (edges < 1) throw ConfigError("edge count must be >= 1");
}

namespace {

double coverage(const std::vector<EdgeSplit>& edges, Index size, bool train) {
  if (size == 0) return 0.0;
  std::vector<char> seen(static_cast<std::size_t>(size), 0);
  for (const auto& e : edges) {
    for (Index k : train ? e.train : e.test) seen[static_cast<std::size_t>(k)] = 1;
  }
  return static_cast<double>(std::count(seen.begin(), seen.end(), 1)) / static_cast<double>(size);
}

std::vector<std::vector<Index>> by_class(const std::vector<int>& labels, int classes) {
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(classes));
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] < 0 || labels[k] >= classes) throw ShapeError("partition: label out of range");
    out[static_cast<std::size_t>(labels[k])].push_back(static_cast<Index>(k));
  }
  return out;
}

std::vector<Index> sample_without_replacement(std::vector<Index> pool, Index count, Rng& rng) {
  for (Index i = 0; i < count; ++i) {
    std::uniform_int_distribution<Index> pick(i, static_cast<Index>(pool.size()) - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(count));
  return pool;
}

Index fraction_count(Index available, double fraction) {
  if (fraction <= 0.0 || available == 0) return 0;
  return std::clamp<Index>(std::llround(static_cast<double>(available) * fraction), 1, available);
}

}  // namespace

double EdgeAssignment::train_coverage() const { return coverage(edges, train_size, true); }
double EdgeAssignment::test_coverage() const { return coverage(edges, test_size, false); }

EdgeAssignment sample_edge_assignment(const std::vector<int>& train_labels, const std::vector<int>& test_labels,
                                      int classes, const PartitionSpec& spec) {
  spec.validate();
  const auto train_classes = by_class(train_labels, classes);
  const auto test_classes = by_class(test_labels, classes);
  for (int c = 0; c < classes; ++c) {
    if (train_classes[static_cast<std::size_t>(c)].empty()) {
      throw ConfigError("partition: class " + std::to_string(c) + " absent from training set");
    }
  }

  EdgeAssignment out;
  out.spec = spec;
  out.classes = classes;
  out.train_size = static_cast<Index>(train_labels.size());
  out.test_size = static_cast<Index>(test_labels.size());
  for (int e = 0; e < spec.edges; ++e) {
    Rng rng = make_rng(derive_seed(spec.seed, "edge-partition", static_cast<std::uint64_t>(e)));
    std::uniform_real_distribution<double> draw_train(spec.alpha, 1.0);
    std::uniform_real_distribution<double> draw_gap(-spec.delta, spec.delta);
    EdgeSplit split;
    for (int c = 0; c < classes; ++c) {
      const auto& tr = train_classes[static_cast<std::size_t>(c)];
      const auto& te = test_classes[static_cast<std::size_t>(c)];
      const double x = spec.alpha < 1.0 ? draw_train(rng) : 1.0;
      const double y = spec.delta > 0.0 ? draw_gap(rng) : 0.0;
      const double test_fraction = std::clamp(x * (1.0 + y), 0.0, 1.0);
      if (te.empty() && test_fraction > 0.0 && !test_labels.empty()) {
        throw ConfigError("partition: class " + std::to_string(c) + " absent from test set");
      }
      auto picked = sample_without_replacement(tr, fraction_count(static_cast<Index>(tr.size()), x), rng);
      split.train.insert(split.train.end(), picked.begin(), picked.end());
      auto picked_test = sample_without_replacement(te, fraction_count(static_cast<Index>(te.size()), test_fraction), rng);
      split.test.insert(split.test.end(), picked_test.begin(), picked_test.end());
      split.train_fraction.push_back(x);
      split.test_fraction.push_back(test_fraction);
      split.discrepancy.push_back(y);
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    out.edges.push_back(std::move(split));
  }
  return out;
}

EdgeAssignment sample_edge_assignment(const Dataset& train, const Dataset& test, const PartitionSpec& spec) {
  return sample_edge_assignment(train.labels, test.labels, train.num_classes, spec);
}

}  // namespace convens
