#include "muso/data.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "oracle_helpers.hpp"

using muso::Dataset;
using muso::Index;
using muso::Matrix;
using muso::ScenarioKind;
using muso::ScenarioSpec;
using muso::TargetEncoding;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir() {
  const fs::path p = fs::temp_directory_path() / "muso_data_test";
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> u32_be(std::uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
}

void append(std::vector<unsigned char>& dst, const std::vector<unsigned char>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

TEST(LoadIdx, ByteScalingDefinition) {
  const fs::path dir = temp_dir();
  std::vector<unsigned char> img;
  append(img, u32_be(0x00000803));
  append(img, u32_be(1));  // one image
  append(img, u32_be(2));
  append(img, u32_be(2));
  append(img, {0, 255, 128, 64});
  write_bytes(dir / "one.img", img);

  std::vector<unsigned char> lbl;
  append(lbl, u32_be(0x00000801));
  append(lbl, u32_be(1));
  append(lbl, {7});
  write_bytes(dir / "one.lbl", lbl);

  const Dataset ds = muso::load_idx((dir / "one.img").string(), (dir / "one.lbl").string());
  ASSERT_EQ(ds.size(), 1);
  ASSERT_EQ(ds.dim(), 4);
  EXPECT_DOUBLE_EQ(ds.x(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(ds.x(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(ds.x(2, 0), 128.0 / 255.0);
  EXPECT_DOUBLE_EQ(ds.x(3, 0), 64.0 / 255.0);
  EXPECT_EQ(ds.labels[0], 7);
}

TEST(LoadIdx, FixtureHeaderMatchesIndependentRead) {
  // Header-read oracle: parse the raw big-endian header by hand and compare
  // with what load_idx reports.
  const std::string img_path = std::string(MUSO_DATA_DIR) + "/mnist/train-images-idx3-ubyte";
  const std::string lbl_path = std::string(MUSO_DATA_DIR) + "/mnist/train-labels-idx1-ubyte";
  std::ifstream raw(img_path, std::ios::binary);
  ASSERT_TRUE(raw.good()) << "missing fixture " << img_path;
  unsigned char header[16];
  raw.read(reinterpret_cast<char*>(header), 16);
  const auto be = [&](int off) {
    return (std::uint32_t(header[off]) << 24) | (std::uint32_t(header[off + 1]) << 16) |
           (std::uint32_t(header[off + 2]) << 8) | std::uint32_t(header[off + 3]);
  };
  ASSERT_EQ(be(0), 0x00000803u);
  const std::uint32_t n = be(4);
  const std::uint32_t rows = be(8);
  const std::uint32_t cols = be(12);

  const Dataset ds = muso::load_idx(img_path, lbl_path);
  EXPECT_EQ(static_cast<std::uint32_t>(ds.size()), n);
  EXPECT_EQ(ds.dim(), static_cast<Index>(rows * cols));
  EXPECT_EQ(ds.dim(), 784);
  EXPECT_EQ(ds.num_classes, 10);
}

TEST(LoadIdx, CountMismatchThrows) {
  const fs::path dir = temp_dir();
  std::vector<unsigned char> img;
  append(img, u32_be(0x00000803));
  append(img, u32_be(2));
  append(img, u32_be(1));
  append(img, u32_be(1));
  append(img, {10, 20});
  write_bytes(dir / "mismatch.img", img);
  std::vector<unsigned char> lbl;
  append(lbl, u32_be(0x00000801));
  append(lbl, u32_be(1));
  append(lbl, {0});
  write_bytes(dir / "mismatch.lbl", lbl);
  try {
    muso::load_idx((dir / "mismatch.img").string(), (dir / "mismatch.lbl").string());
    FAIL() << "expected count mismatch";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("count mismatch"), std::string::npos);
  }
}

TEST(LoadIdx, BadMagicAndTruncationThrow) {
  const fs::path dir = temp_dir();
  std::vector<unsigned char> img;
  append(img, u32_be(0xdeadbeef));
  write_bytes(dir / "bad.img", img);
  EXPECT_THROW(muso::load_idx((dir / "bad.img").string(), (dir / "bad.img").string()),
               std::runtime_error);

  std::vector<unsigned char> trunc;
  append(trunc, u32_be(0x00000803));
  append(trunc, u32_be(5));
  append(trunc, u32_be(2));
  append(trunc, u32_be(2));
  append(trunc, {1, 2, 3});  // far fewer than 5*4 pixels
  write_bytes(dir / "trunc.img", trunc);
  std::vector<unsigned char> lbl;
  append(lbl, u32_be(0x00000801));
  append(lbl, u32_be(5));
  append(lbl, {0, 1, 2, 3, 4});
  write_bytes(dir / "trunc.lbl", lbl);
  EXPECT_THROW(muso::load_idx((dir / "trunc.img").string(), (dir / "trunc.lbl").string()),
               std::runtime_error);
}

TEST(SaveIdx, RoundTripsBitExactly) {
  const fs::path dir = temp_dir();
  // Synthetic random IDX pair.
  std::mt19937_64 rng(77);
  std::vector<unsigned char> img;
  append(img, u32_be(0x00000803));
  append(img, u32_be(9));
  append(img, u32_be(3));
  append(img, u32_be(2));
  for (int i = 0; i < 9 * 6; ++i) img.push_back(static_cast<unsigned char>(rng() % 256));
  write_bytes(dir / "a.img", img);
  std::vector<unsigned char> lbl;
  append(lbl, u32_be(0x00000801));
  append(lbl, u32_be(9));
  for (int i = 0; i < 9; ++i) lbl.push_back(static_cast<unsigned char>(rng() % 10));
  write_bytes(dir / "a.lbl", lbl);

  const Dataset ds = muso::load_idx((dir / "a.img").string(), (dir / "a.lbl").string());
  muso::save_idx(ds.x, ds.labels, 3, 2, (dir / "b.img").string(), (dir / "b.lbl").string());

  const auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  EXPECT_EQ(slurp(dir / "a.img"), slurp(dir / "b.img"));
  EXPECT_EQ(slurp(dir / "a.lbl"), slurp(dir / "b.lbl"));
}

TEST(Csv, RoundTrip) {
  const fs::path dir = temp_dir();
  const Dataset ds = muso::synth_gaussian(4, 3, 5, 1.5, 99);
  muso::save_csv(ds, (dir / "ds.csv").string());
  const Dataset back = muso::load_csv((dir / "ds.csv").string());
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_LT((back.x - ds.x).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(FilterClasses, MnistDigits37) {
  const std::string base = std::string(MUSO_DATA_DIR) + "/mnist/";
  const Dataset full = muso::load_idx(base + "train-images-idx3-ubyte",
                                      base + "train-labels-idx1-ubyte");
  const Dataset ds = muso::filter_classes(full, {3, 7}, 300, 1);
  EXPECT_EQ(ds.size(), 600);
  EXPECT_EQ(ds.num_classes, 2);
  int class0 = 0;
  for (int label : ds.labels) class0 += label == 0;
  EXPECT_EQ(class0, 300);
  // Deterministic per seed.
  const Dataset again = muso::filter_classes(full, {3, 7}, 300, 1);
  EXPECT_EQ(again.labels, ds.labels);
  EXPECT_EQ((again.x - ds.x).norm(), 0.0);
  const Dataset other = muso::filter_classes(full, {3, 7}, 300, 2);
  EXPECT_GT((other.x - ds.x).norm(), 0.0);
}

TEST(FilterClasses, KeepAllIsIdentity) {
  const Dataset ds = muso::synth_gaussian(3, 3, 4, 1.0, 5);
  const Dataset same = muso::filter_classes(ds, {0, 1, 2}, std::nullopt, 0);
  EXPECT_EQ(same.labels, ds.labels);
  EXPECT_EQ((same.x - ds.x).norm(), 0.0);
}

TEST(FilterClasses, CapSaturation) {
  const Dataset ds = muso::synth_gaussian(3, 3, 4, 1.0, 5);
  const Dataset one = muso::filter_classes(ds, {1}, 100, 0);
  EXPECT_EQ(one.size(), 4);  // all class-1 samples, no error
  EXPECT_EQ(one.num_classes, 1);
}

TEST(SynthGaussian, ZeroSeparationIsExchangeable) {
  const Dataset ds = muso::synth_gaussian(2, 2, 2000, 0.0, 3);
  Matrix mean0 = Matrix::Zero(2, 1), mean1 = Matrix::Zero(2, 1);
  for (Index i = 0; i < ds.size(); ++i)
    (ds.labels[i] == 0 ? mean0 : mean1) += ds.x.col(i);
  mean0 /= 2000.0;
  mean1 /= 2000.0;
  // Both class means near the common zero mean (wide statistical band).
  EXPECT_LT(mean0.norm(), 8.0 / std::sqrt(2000.0));
  EXPECT_LT(mean1.norm(), 8.0 / std::sqrt(2000.0));
}

TEST(SynthGaussian, LargeSeparationNearestMeanOracle) {
  const Dataset ds = muso::synth_gaussian(5, 3, 50, 10.0, 11);
  // Nearest-mean oracle computed from the generated sample.
  Matrix means = Matrix::Zero(5, 3);
  std::vector<int> counts(3, 0);
  for (Index i = 0; i < ds.size(); ++i) {
    means.col(ds.labels[i]) += ds.x.col(i);
    counts[ds.labels[i]]++;
  }
  for (int c = 0; c < 3; ++c) means.col(c) /= counts[c];
  int correct = 0;
  for (Index i = 0; i < ds.size(); ++i) {
    int best = 0;
    double best_dist = (ds.x.col(i) - means.col(0)).squaredNorm();
    for (int c = 1; c < 3; ++c) {
      const double dist = (ds.x.col(i) - means.col(c)).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    correct += best == ds.labels[i];
  }
  EXPECT_EQ(correct, ds.size());
}

TEST(SynthGaussian, SameSeedBitIdentical) {
  const Dataset a = muso::synth_gaussian(4, 2, 10, 1.0, 42);
  const Dataset b = muso::synth_gaussian(4, 2, 10, 1.0, 42);
  EXPECT_EQ((a.x - b.x).norm(), 0.0);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(SplitScenario, FullClassBalanced) {
  const Dataset ds = muso::synth_gaussian(4, 2, 300, 2.0, 7);
  ScenarioSpec spec;
  spec.kind = ScenarioKind::full_class;
  spec.target = 1;
  const auto split = muso::split_scenario(ds, spec);
  EXPECT_EQ(split.n_forget(), 300);
  EXPECT_EQ(split.n_retain(), 300);
  for (Index i : split.forget_indices) EXPECT_EQ(ds.labels[i], 1);
}

TEST(SplitScenario, RandomFractionFloorAndDeterminism) {
  const Dataset ds = muso::synth_gaussian(4, 2, 300, 2.0, 7);
  ScenarioSpec spec;
  spec.kind = ScenarioKind::random_subset;
  spec.fraction = 0.1;
  spec.seed = 5;
  const auto split = muso::split_scenario(ds, spec);
  EXPECT_EQ(split.n_forget(), 60);
  const auto again = muso::split_scenario(ds, spec);
  EXPECT_EQ(again.forget_indices, split.forget_indices);
}

TEST(SplitScenario, SubClassCarvedFromDigitSeven) {
  const std::string base = std::string(MUSO_DATA_DIR) + "/mnist/";
  const Dataset full = muso::load_idx(base + "train-images-idx3-ubyte",
                                      base + "train-labels-idx1-ubyte");
  const Dataset ds = muso::filter_classes(full, {3, 7}, 300, 1);
  const Dataset carved = muso::carve_fine_class(ds, 1, 200, 9);
  EXPECT_EQ(carved.num_classes, 3);
  EXPECT_EQ(carved.num_effective_classes(), 2);
  ScenarioSpec spec;
  spec.kind = ScenarioKind::sub_class;
  spec.target = 2;
  const auto split = muso::split_scenario(carved, spec);
  EXPECT_EQ(split.n_forget(), 200);
  EXPECT_EQ(split.n_retain(), 400);
  // Forgotten samples are all (superclass) digit-7 samples.
  const auto effective = carved.effective_labels();
  for (Index i : split.forget_indices) EXPECT_EQ(effective[i], 1);
}

TEST(SplitScenario, SubClassWithoutMapThrows) {
  const Dataset ds = muso::synth_gaussian(4, 2, 10, 2.0, 7);
  ScenarioSpec spec;
  spec.kind = ScenarioKind::sub_class;
  spec.target = 1;
  EXPECT_THROW(muso::split_scenario(ds, spec), std::invalid_argument);
}

TEST(SplitScenario, PartitionPropertyAcrossSeedsAndKinds) {
  const Dataset ds = muso::synth_gaussian(4, 3, 40, 2.0, 13);
  const Dataset carved = muso::carve_fine_class(ds, 2, 15, 3);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (int kind = 0; kind < 3; ++kind) {
      ScenarioSpec spec;
      spec.seed = seed;
      const Dataset* which = &ds;
      if (kind == 0) {
        spec.kind = ScenarioKind::full_class;
        spec.target = static_cast<int>(seed % 3);
      } else if (kind == 1) {
        spec.kind = ScenarioKind::sub_class;
        spec.target = 3;
        which = &carved;
      } else {
        spec.kind = ScenarioKind::random_subset;
        spec.fraction = 0.05 + 0.9 * (static_cast<double>(seed) / 50.0);
      }
      const auto split = muso::split_scenario(*which, spec);
      EXPECT_GE(split.n_forget(), 1);
      std::set<Index> all(split.retain_indices.begin(), split.retain_indices.end());
      EXPECT_EQ(all.size(), split.retain_indices.size());
      for (Index i : split.forget_indices) {
        EXPECT_EQ(all.count(i), 0u);
        all.insert(i);
      }
      EXPECT_EQ(static_cast<Index>(all.size()), which->size());
    }
  }
}

TEST(EncodeTargets, OneHotAndPmOne) {
  const auto one_hot = muso::encode_targets({0, 1}, 2, TargetEncoding::one_hot);
  EXPECT_DOUBLE_EQ(one_hot.y(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(one_hot.y(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(one_hot.y(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(one_hot.y(1, 1), 1.0);
  for (Index i = 0; i < one_hot.y.rows(); ++i) EXPECT_DOUBLE_EQ(one_hot.y.row(i).sum(), 1.0);

  const auto pm = muso::encode_targets({0, 1}, 2, TargetEncoding::pm_one_binary);
  EXPECT_DOUBLE_EQ(pm.y(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(pm.y(1, 0), 1.0);
}

TEST(EncodeTargets, PmOneRequiresTwoClasses) {
  EXPECT_THROW(muso::encode_targets({0, 1, 2}, 3, TargetEncoding::pm_one_binary),
               std::invalid_argument);
}

}  // namespace
