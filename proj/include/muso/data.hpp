#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "muso/common.hpp"

namespace muso {

enum class SplitTag { train, test };

/// Column-per-sample dataset with integer labels in [0, C).
/// An optional superclass map (fine class -> superclass) supports sub-class
/// unlearning: training targets then use the superclass labels.
struct Dataset {
  Matrix x;  // d x N
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::optional<std::vector<int>> superclass_map;
  SplitTag split = SplitTag::train;

  Index dim() const { return x.rows(); }
  Index size() const { return x.cols(); }

  int num_effective_classes() const {
    if (!superclass_map) return num_classes;
    return 1 + *std::max_element(superclass_map->begin(), superclass_map->end());
  }

  /// Labels the model trains on: superclasses when a map is present.
  std::vector<int> effective_labels() const {
    if (!superclass_map) return labels;
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = (*superclass_map)[labels[i]];
    return out;
  }

  void validate() const {
    require(x.cols() >= 1, "Dataset: empty");
    require(static_cast<Index>(labels.size()) == x.cols(), "Dataset: label count mismatch");
    require(x.allFinite(), "Dataset: non-finite feature entries");
    for (int label : labels)
      require(label >= 0 && label < num_classes, "Dataset: label out of range");
    if (superclass_map)
      require(static_cast<int>(superclass_map->size()) == num_classes,
              "Dataset: superclass map size mismatch");
  }
};

// ---------------------------------------------------------------------------
// IDX files (big-endian; magic 0x00000803 for images, 0x00000801 for labels)
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("truncated IDX file: " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_u32_be(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Loads an IDX image/label pair. Pixels are scaled to [0,1]; each image is
/// flattened row-major into one column of X.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        SplitTag split = SplitTag::train) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("cannot open IDX file: " + images_path);
  if (detail::read_u32_be(img, images_path) != kIdxImagesMagic)
    throw std::runtime_error("bad magic in IDX image file: " + images_path);
  const std::uint32_t n = detail::read_u32_be(img, images_path);
  const std::uint32_t rows = detail::read_u32_be(img, images_path);
  const std::uint32_t cols = detail::read_u32_be(img, images_path);
  const std::size_t d = std::size_t(rows) * cols;
  std::vector<unsigned char> pixels(std::size_t(n) * d);
  img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (static_cast<std::size_t>(img.gcount()) != pixels.size())
    throw std::runtime_error("truncated IDX image file: " + images_path);

  std::ifstream lbl(labels_path, std::ios::binary);
  if (!lbl) throw std::runtime_error("cannot open IDX file: " + labels_path);
  if (detail::read_u32_be(lbl, labels_path) != kIdxLabelsMagic)
    throw std::runtime_error("bad magic in IDX label file: " + labels_path);
  const std::uint32_t n_labels = detail::read_u32_be(lbl, labels_path);
  if (n_labels != n)
    throw std::runtime_error("count mismatch between IDX files: " + images_path + " has " +
                             std::to_string(n) + " images, " + labels_path + " has " +
                             std::to_string(n_labels) + " labels");
  std::vector<unsigned char> raw_labels(n_labels);
  lbl.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(n_labels));
  if (static_cast<std::size_t>(lbl.gcount()) != raw_labels.size())
    throw std::runtime_error("truncated IDX label file: " + labels_path);

  Dataset ds;
  ds.x.resize(static_cast<Index>(d), static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      ds.x(static_cast<Index>(j), static_cast<Index>(i)) = pixels[i * d + j] / 255.0;
  ds.labels.assign(raw_labels.begin(), raw_labels.end());
  ds.num_classes = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  ds.class_names.resize(ds.num_classes);
  for (int c = 0; c < ds.num_classes; ++c) ds.class_names[c] = std::to_string(c);
  ds.split = split;
  ds.validate();
  return ds;
}

/// Writes an IDX pair; rows*cols must equal the feature dimension.
inline void save_idx(const Matrix& x, const std::vector<int>& labels, std::uint32_t rows,
                     std::uint32_t cols, const std::string& images_path,
                     const std::string& labels_path) {
  require(static_cast<Index>(std::size_t(rows) * cols) == x.rows(),
          "save_idx: rows*cols must equal feature dimension");
  require(static_cast<Index>(labels.size()) == x.cols(), "save_idx: label count mismatch");
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("cannot write IDX file: " + images_path);
  detail::write_u32_be(img, kIdxImagesMagic);
  detail::write_u32_be(img, static_cast<std::uint32_t>(x.cols()));
  detail::write_u32_be(img, rows);
  detail::write_u32_be(img, cols);
  for (Index i = 0; i < x.cols(); ++i)
    for (Index j = 0; j < x.rows(); ++j) {
      const auto byte = static_cast<unsigned char>(std::lround(x(j, i) * 255.0));
      img.write(reinterpret_cast<const char*>(&byte), 1);
    }

  std::ofstream lbl(labels_path, std::ios::binary);
  if (!lbl) throw std::runtime_error("cannot write IDX file: " + labels_path);
  detail::write_u32_be(lbl, kIdxLabelsMagic);
  detail::write_u32_be(lbl, static_cast<std::uint32_t>(labels.size()));
  for (int label : labels) {
    const auto byte = static_cast<unsigned char>(label);
    lbl.write(reinterpret_cast<const char*>(&byte), 1);
  }
}

// ---------------------------------------------------------------------------
// CSV (header row: label,x0,...,x{d-1})
// ---------------------------------------------------------------------------

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write CSV: " + path);
  out << "label";
  for (Index j = 0; j < ds.dim(); ++j) out << ",x" << j;
  out << "\n";
  out.precision(17);
  for (Index i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (Index j = 0; j < ds.dim(); ++j) out << ',' << ds.x(j, i);
    out << "\n";
  }
}

inline Dataset load_csv(const std::string& path, SplitTag split = SplitTag::train) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open CSV: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty CSV: " + path);
  Index d = static_cast<Index>(std::count(line.begin(), line.end(), ','));
  std::vector<double> values;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    labels.push_back(std::stoi(cell));
    for (Index j = 0; j < d; ++j) {
      if (!std::getline(ss, cell, ',')) throw std::runtime_error("ragged CSV row: " + path);
      values.push_back(std::stod(cell));
    }
  }
  Dataset ds;
  const Index n = static_cast<Index>(labels.size());
  ds.x.resize(d, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) ds.x(j, i) = values[i * d + j];
  ds.labels = std::move(labels);
  ds.num_classes = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  ds.class_names.resize(ds.num_classes);
  for (int c = 0; c < ds.num_classes; ++c) ds.class_names[c] = std::to_string(c);
  ds.split = split;
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Construction and splitting
// ---------------------------------------------------------------------------

/// Keeps the listed classes (relabeled to 0..|keep|-1 in list order), at most
/// per_class_cap samples per class chosen by seeded shuffle.
inline Dataset filter_classes(const Dataset& ds, const std::vector<int>& keep,
                              std::optional<Index> per_class_cap, std::uint64_t seed) {
  require(!keep.empty(), "filter_classes: keep list empty");
  for (int c : keep) require(c >= 0 && c < ds.num_classes, "filter_classes: class out of range");

  std::vector<Index> chosen;
  std::vector<int> new_labels;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    std::vector<Index> members;
    for (Index i = 0; i < ds.size(); ++i)
      if (ds.labels[i] == keep[k]) members.push_back(i);
    if (per_class_cap && static_cast<Index>(members.size()) > *per_class_cap) {
      auto rng = make_rng(derive_seed(seed, "filter_classes/" + std::to_string(keep[k])));
      detail::seeded_shuffle_indices(members, rng);
      members.resize(*per_class_cap);
      std::sort(members.begin(), members.end());
    }
    for (Index i : members) {
      chosen.push_back(i);
      new_labels.push_back(static_cast<int>(k));
    }
  }
  require(!chosen.empty(), "filter_classes: empty result");

  Dataset out;
  out.x.resize(ds.dim(), static_cast<Index>(chosen.size()));
  for (std::size_t i = 0; i < chosen.size(); ++i) out.x.col(static_cast<Index>(i)) = ds.x.col(chosen[i]);
  out.labels = std::move(new_labels);
  out.num_classes = static_cast<int>(keep.size());
  for (int c : keep)
    out.class_names.push_back(c < static_cast<int>(ds.class_names.size()) ? ds.class_names[c]
                                                                          : std::to_string(c));
  out.split = ds.split;
  out.validate();
  return out;
}

/// Gaussian blobs: class c is N(separation * e_c, I), so distinct class means
/// are separation*sqrt(2) apart. Samples are laid out class-major.
inline Dataset synth_gaussian(Index d, int num_classes, Index per_class, double separation,
                              std::uint64_t seed, SplitTag split = SplitTag::train) {
  require(d >= 1 && num_classes >= 1 && per_class >= 1, "synth_gaussian: sizes must be positive");
  require(separation >= 0.0, "synth_gaussian: separation must be nonnegative");
  require(num_classes <= d, "synth_gaussian: needs num_classes <= d for basis-direction means");
  auto rng = make_rng(derive_seed(seed, "synth_gaussian"));
  std::normal_distribution<double> noise(0.0, 1.0);

  Dataset ds;
  ds.x.resize(d, per_class * num_classes);
  ds.labels.resize(per_class * num_classes);
  Index col = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (Index i = 0; i < per_class; ++i, ++col) {
      for (Index j = 0; j < d; ++j) ds.x(j, col) = noise(rng);
      ds.x(c, col) += separation;
      ds.labels[col] = c;
    }
  }
  ds.num_classes = num_classes;
  for (int c = 0; c < num_classes; ++c) ds.class_names.push_back("class" + std::to_string(c));
  ds.split = split;
  ds.validate();
  return ds;
}

/// Splits off a seeded n_forget-sample subset of target_class as a new fine
/// class and installs the superclass map (new class -> target_class), so a
/// sub-class scenario forgets exactly that subset while training targets stay
/// on the original classes.
inline Dataset carve_fine_class(const Dataset& ds, int target_class, Index n_forget,
                                std::uint64_t seed) {
  require(!ds.superclass_map, "carve_fine_class: dataset already has a superclass map");
  require(target_class >= 0 && target_class < ds.num_classes,
          "carve_fine_class: class out of range");
  std::vector<Index> members;
  for (Index i = 0; i < ds.size(); ++i)
    if (ds.labels[i] == target_class) members.push_back(i);
  require(n_forget >= 1 && n_forget <= static_cast<Index>(members.size()),
          "carve_fine_class: n_forget out of range");
  auto rng = make_rng(derive_seed(seed, "carve_fine_class"));
  detail::seeded_shuffle_indices(members, rng);
  members.resize(n_forget);

  Dataset out = ds;
  for (Index i : members) out.labels[i] = ds.num_classes;
  out.num_classes = ds.num_classes + 1;
  out.class_names.push_back(ds.class_names[target_class] + "/forget");
  std::vector<int> map(out.num_classes);
  for (int c = 0; c < ds.num_classes; ++c) map[c] = c;
  map[ds.num_classes] = target_class;
  out.superclass_map = std::move(map);
  out.validate();
  return out;
}

enum class ScenarioKind { full_class, sub_class, random_subset };

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::full_class;
  int target = -1;         // class to forget (full-class / sub-class)
  double fraction = 0.0;   // forget fraction (random)
  std::uint64_t seed = 0;  // random scenario sampling
};

struct ScenarioSplit {
  std::vector<Index> retain_indices;  // sorted, unique
  std::vector<Index> forget_indices;  // sorted, unique, nonempty
  ScenarioSpec scenario;

  Index n_retain() const { return static_cast<Index>(retain_indices.size()); }
  Index n_forget() const { return static_cast<Index>(forget_indices.size()); }
};

inline ScenarioSplit split_scenario(const Dataset& ds, const ScenarioSpec& spec) {
  std::vector<Index> forget;
  switch (spec.kind) {
    case ScenarioKind::full_class:
      require(spec.target >= 0 && spec.target < ds.num_classes,
              "split_scenario: full-class target out of range");
      for (Index i = 0; i < ds.size(); ++i)
        if (ds.labels[i] == spec.target) forget.push_back(i);
      break;
    case ScenarioKind::sub_class:
      require(ds.superclass_map.has_value(),
              "split_scenario: sub-class scenario needs a superclass map");
      require(spec.target >= 0 && spec.target < ds.num_classes,
              "split_scenario: sub-class target out of range");
      for (Index i = 0; i < ds.size(); ++i)
        if (ds.labels[i] == spec.target) forget.push_back(i);
      break;
    case ScenarioKind::random_subset: {
      require(spec.fraction > 0.0 && spec.fraction < 1.0,
              "split_scenario: fraction must be in (0,1)");
      const Index n_forget = static_cast<Index>(spec.fraction * static_cast<double>(ds.size()));
      std::vector<Index> all(ds.size());
      std::iota(all.begin(), all.end(), Index{0});
      auto rng = make_rng(derive_seed(spec.seed, "split_scenario/random"));
      detail::seeded_shuffle_indices(all, rng);
      forget.assign(all.begin(), all.begin() + n_forget);
      std::sort(forget.begin(), forget.end());
      break;
    }
  }
  require(!forget.empty(), "split_scenario: empty forget set");

  ScenarioSplit out;
  out.scenario = spec;
  out.forget_indices = std::move(forget);
  std::vector<char> is_forget(ds.size(), 0);
  for (Index i : out.forget_indices) is_forget[i] = 1;
  for (Index i = 0; i < ds.size(); ++i)
    if (!is_forget[i]) out.retain_indices.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// Target encoding
// ---------------------------------------------------------------------------

enum class TargetEncoding { one_hot, pm_one_binary };

struct TargetMatrix {
  Matrix y;  // N x C (one-hot) or N x 1 (pm-one)
  TargetEncoding encoding = TargetEncoding::one_hot;
};

inline TargetMatrix encode_targets(const std::vector<int>& labels, int num_classes,
                                   TargetEncoding scheme) {
  const Index n = static_cast<Index>(labels.size());
  TargetMatrix out;
  out.encoding = scheme;
  if (scheme == TargetEncoding::pm_one_binary) {
    require(num_classes == 2, "encode_targets: pm-one encoding requires exactly 2 classes");
    out.y.resize(n, 1);
    for (Index i = 0; i < n; ++i) out.y(i, 0) = labels[i] == 1 ? 1.0 : -1.0;
  } else {
    out.y = Matrix::Zero(n, num_classes);
    for (Index i = 0; i < n; ++i) {
      require(labels[i] >= 0 && labels[i] < num_classes, "encode_targets: label out of range");
      out.y(i, labels[i]) = 1.0;
    }
  }
  return out;
}

/// Gathers the columns of x at the given sample indices.
inline Matrix gather_columns(const Matrix& x, const std::vector<Index>& indices) {
  Matrix out(x.rows(), static_cast<Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) out.col(static_cast<Index>(i)) = x.col(indices[i]);
  return out;
}

/// Gathers rows (sample-major matrices such as targets).
inline Matrix gather_rows(const Matrix& y, const std::vector<Index>& indices) {
  Matrix out(static_cast<Index>(indices.size()), y.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) out.row(static_cast<Index>(i)) = y.row(indices[i]);
  return out;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& v, const std::vector<Index>& indices) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(v[i]);
  return out;
}

}  // namespace muso
