#ifndef MALINIT_DATA_HPP
#define MALINIT_DATA_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "malinit/tensor.hpp"

namespace malinit {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/**
 * Labelled samples with features scaled into [0, 1].
 *
 * `features` is row-major (samples x dim). `sample_shape` is [dim] for
 * tabular data or [H, W, C] for images. Train/test membership is given by
 * index lists into the sample rows.
 */
struct Dataset {
  std::string name;
  std::size_t dim = 0;
  Shape sample_shape;
  std::size_t classes = 0;
  std::vector<double> features;
  std::vector<int> labels;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;

  std::size_t size() const { return labels.size(); }
  std::span<const double> sample(std::size_t i) const { return {features.data() + i * dim, dim}; }
  double random_guess_accuracy() const { return classes ? 1.0 / static_cast<double>(classes) : 0.0; }

  void validate() const {
    if (dim == 0 || features.size() != labels.size() * dim) throw DataError("dataset: feature matrix size mismatch");
    for (auto l : labels)
      if (l < 0 || static_cast<std::size_t>(l) >= classes) throw DataError("dataset: label out of range");
    for (auto v : features)
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("dataset: feature outside [0, 1]");
    for (auto i : train_idx)
      if (i >= size()) throw DataError("dataset: train index out of range");
    for (auto i : test_idx)
      if (i >= size()) throw DataError("dataset: test index out of range");
  }
};

/// Per-feature min-max scaling to [0, 1]; constant features map to 0.
inline void normalize_min_max(std::vector<double>& features, std::size_t dim) {
  if (dim == 0) return;
  const std::size_t rows = features.size() / dim;
  for (std::size_t j = 0; j < dim; ++j) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < rows; ++i) {
      lo = std::min(lo, features[i * dim + j]);
      hi = std::max(hi, features[i * dim + j]);
    }
    const double span = hi - lo;
    for (std::size_t i = 0; i < rows; ++i) {
      double& v = features[i * dim + j];
      v = span > 0.0 ? std::clamp((v - lo) / span, 0.0, 1.0) : 0.0;
    }
  }
}

/// Deterministic shuffled split; at least one sample lands on each side.
inline void split_train_test(Dataset& ds, double test_fraction, std::uint64_t seed) {
  const std::size_t n = ds.size();
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw DataError("split: test fraction must lie in (0, 1)");
  if (n < 2) throw DataError("split: need at least 2 samples, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  ds.test_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  ds.train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(ds.test_idx.begin(), ds.test_idx.end());
  std::sort(ds.train_idx.begin(), ds.train_idx.end());
}

/**
 * Isotropic unit-variance Gaussian clusters. Class k is centred at
 * (separation / sqrt 2) e_k, so any two centres are `separation` apart.
 * Features are min-max normalized afterwards; 20% of samples form the test set.
 */
inline Dataset gaussian_blobs(std::size_t classes, std::size_t dim, std::size_t per_class, double separation,
                              std::uint64_t seed, double test_fraction = 0.2) {
  if (classes < 2 || dim < 2 || per_class < 1) throw DataError("gaussian_blobs: degenerate sizes");
  if (classes > dim) throw DataError("gaussian_blobs: need dim >= classes for simplex centres");
  if (!(separation >= 0.0)) throw DataError("gaussian_blobs: separation must be nonnegative");
  Dataset ds;
  ds.name = "blobs";
  ds.dim = dim;
  ds.sample_shape = {dim};
  ds.classes = classes;
  const double offset = separation / std::sqrt(2.0);
  Rng rng = Rng(seed).split(0);
  ds.features.reserve(classes * per_class * dim);
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t k = 0; k < classes; ++k) {
      for (std::size_t j = 0; j < dim; ++j) ds.features.push_back(rng.normal() + (j == k ? offset : 0.0));
      ds.labels.push_back(static_cast<int>(k));
    }
  normalize_min_max(ds.features, dim);
  split_train_test(ds, test_fraction, Rng(seed).split(1).next_u64());
  return ds;
}

struct CsvOptions {
  /// Column holding the class id; negative counts from the end (-1 = last).
  long label_column = -1;
  bool header = false;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Numeric CSV with an integer label column. Missing or non-numeric cells are rejected.
inline Dataset load_csv(const std::string& path, const CsvOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  Dataset ds;
  ds.name = path;
  std::string line;
  std::size_t line_no = 0, cols = 0;
  std::vector<double> raw;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (opts.header && line_no == 1) continue;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cols == 0) {
      cols = cells.size();
      if (cols < 2) throw DataError(path + ": need at least one feature and a label column");
    }
    if (cells.size() != cols)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(cols) + " cells, got " +
                      std::to_string(cells.size()));
    const long lc = opts.label_column < 0 ? static_cast<long>(cols) + opts.label_column : opts.label_column;
    if (lc < 0 || lc >= static_cast<long>(cols)) throw DataError(path + ": label column out of range");
    for (std::size_t c = 0; c < cols; ++c) {
      const std::string cell = detail::trim(cells[c]);
      if (cell.empty())
        throw DataError(path + ":" + std::to_string(line_no) + ": missing value in column " + std::to_string(c + 1));
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cell.size() || !std::isfinite(v))
        throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric cell '" + cell + "' in column " +
                        std::to_string(c + 1));
      if (static_cast<long>(c) == lc) {
        if (v < 0 || v != std::floor(v))
          throw DataError(path + ":" + std::to_string(line_no) + ": label '" + cell + "' is not a class id");
        ds.labels.push_back(static_cast<int>(v));
        max_label = std::max(max_label, static_cast<int>(v));
      } else {
        raw.push_back(v);
      }
    }
  }
  if (ds.labels.empty()) throw DataError(path + ": no data rows");
  if (ds.labels.size() < 2) throw DataError(path + ": a single row cannot be split into train and test");
  ds.dim = cols - 1;
  ds.sample_shape = {ds.dim};
  ds.classes = static_cast<std::size_t>(std::max(max_label + 1, 2));
  ds.features = std::move(raw);
  normalize_min_max(ds.features, ds.dim);
  split_train_test(ds, opts.test_fraction, opts.seed);
  return ds;
}

namespace detail {

inline std::uint32_t read_be32(const std::string& bytes, std::size_t off) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + off;
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

}  // namespace detail

/**
 * IDX image/label pair (magic 0x00000803 / 0x00000801, big-endian sizes).
 * Pixels are divided by 255. With test_fraction == 0 every sample is
 * training data; use `append_test_split` to attach a separate test file.
 */
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, double test_fraction = 0.0,
                        std::uint64_t seed = 0) {
  const std::string img = detail::read_file_bytes(images_path);
  const std::string lab = detail::read_file_bytes(labels_path);
  if (img.size() < 16) throw DataError(images_path + ": truncated IDX header");
  if (lab.size() < 8) throw DataError(labels_path + ": truncated IDX header");
  if (detail::read_be32(img, 0) != 0x00000803u) throw DataError(images_path + ": bad IDX image magic");
  if (detail::read_be32(lab, 0) != 0x00000801u) throw DataError(labels_path + ": bad IDX label magic");
  const std::size_t count = detail::read_be32(img, 4);
  const std::size_t rows = detail::read_be32(img, 8);
  const std::size_t cols = detail::read_be32(img, 12);
  const std::size_t n_labels = detail::read_be32(lab, 4);
  if (n_labels != count)
    throw DataError("IDX: " + std::to_string(count) + " images but " + std::to_string(n_labels) + " labels");
  const std::size_t pixels = rows * cols;
  if (img.size() != 16 + count * pixels)
    throw DataError(images_path + ": expected " + std::to_string(16 + count * pixels) + " bytes, found " +
                    std::to_string(img.size()));
  if (lab.size() != 8 + count)
    throw DataError(labels_path + ": expected " + std::to_string(8 + count) + " bytes, found " +
                    std::to_string(lab.size()));
  Dataset ds;
  ds.name = images_path;
  ds.dim = pixels;
  ds.sample_shape = {rows, cols, 1};
  ds.features.resize(count * pixels);
  for (std::size_t i = 0; i < ds.features.size(); ++i)
    ds.features[i] = static_cast<unsigned char>(img[16 + i]) / 255.0;
  ds.labels.resize(count);
  int max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    ds.labels[i] = static_cast<unsigned char>(lab[8 + i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.classes = static_cast<std::size_t>(std::max(max_label + 1, 10));
  if (test_fraction > 0.0) {
    split_train_test(ds, test_fraction, seed);
  } else {
    ds.train_idx.resize(count);
    std::iota(ds.train_idx.begin(), ds.train_idx.end(), std::size_t{0});
  }
  return ds;
}

/// Appends `test`'s samples to `train` as its test set.
inline Dataset append_test_split(Dataset train, const Dataset& test) {
  if (train.dim != test.dim) throw DataError("append_test_split: feature dimension mismatch");
  const std::size_t base = train.size();
  train.features.insert(train.features.end(), test.features.begin(), test.features.end());
  train.labels.insert(train.labels.end(), test.labels.begin(), test.labels.end());
  train.classes = std::max(train.classes, test.classes);
  train.test_idx.clear();
  for (std::size_t i = 0; i < test.size(); ++i) train.test_idx.push_back(base + i);
  return train;
}

/// Keeps the first `max_train` / `max_test` samples of each split (0 = keep all).
inline Dataset subsample(Dataset ds, std::size_t max_train, std::size_t max_test) {
  if (max_train && ds.train_idx.size() > max_train) ds.train_idx.resize(max_train);
  if (max_test && ds.test_idx.size() > max_test) ds.test_idx.resize(max_test);
  return ds;
}

/// Cache as MLNT containers: <stem>.features.bin ([N, dim]), <stem>.labels.bin ([N]).
inline void save_dataset(const Dataset& ds, const std::string& stem) {
  save_tensor(WeightTensor({ds.size(), ds.dim}, ds.features), stem + ".features.bin",
              {{"name", ds.name}, {"classes", ds.classes}, {"sample_shape", ds.sample_shape}});
  std::vector<double> labels(ds.labels.begin(), ds.labels.end());
  save_tensor(WeightTensor({ds.size()}, labels), stem + ".labels.bin",
              {{"train_idx", ds.train_idx}, {"test_idx", ds.test_idx}});
}

inline Dataset load_dataset(const std::string& stem) {
  const auto feats = load_tensor(stem + ".features.bin");
  const auto labels = load_tensor(stem + ".labels.bin");
  std::ifstream fm(stem + ".features.bin.json"), lm(stem + ".labels.bin.json");
  if (!fm || !lm) throw DataError(stem + ": missing dataset sidecar");
  const auto fmeta = nlohmann::json::parse(fm);
  const auto lmeta = nlohmann::json::parse(lm);
  Dataset ds;
  ds.name = fmeta.value("name", stem);
  ds.dim = feats.shape().at(1);
  ds.sample_shape = fmeta.at("sample_shape").get<Shape>();
  ds.classes = fmeta.at("classes").get<std::size_t>();
  ds.features = feats.values();
  for (auto v : labels.data()) ds.labels.push_back(static_cast<int>(v));
  ds.train_idx = lmeta.at("train_idx").get<std::vector<std::size_t>>();
  ds.test_idx = lmeta.at("test_idx").get<std::vector<std::size_t>>();
  ds.validate();
  return ds;
}

}  // namespace malinit

#endif  // MALINIT_DATA_HPP
