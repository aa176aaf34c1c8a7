#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <unistd.h>

#include "sparsenet/data.hpp"

namespace sparsenet {
namespace {

namespace fs = std::filesystem;

// Record with the given label whose pixel bytes follow (seed + p) % 256.
std::string record10(unsigned char label, unsigned seed) {
  std::string r(1, static_cast<char>(label));
  for (std::size_t p = 0; p < kImageValues; ++p) r.push_back(static_cast<char>((seed + p) % 256));
  return r;
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("sparsenet_data_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  void write(const std::string& name, const std::string& bytes) const {
    fs::create_directories((path_ / name).parent_path());
    std::ofstream(path_ / name, std::ios::binary) << bytes;
  }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

DataError::Kind load_error(const fs::path& dir, CifarVariant v, Split s) {
  try {
    load_cifar(dir, v, s);
  } catch (const DataError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected a DataError";
  return DataError::Kind::io;
}

// ------------------------------------------------------------------ loader

TEST(LoadCifar, TwoRecordFixture) {
  const auto d = parse_cifar(record10(3, 0) + record10(7, 100), CifarVariant::cifar10, Split::test);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{3, 7}));
  // byte 1 of record 0 is R(0,0) = 0; R plane, then G, then B, row-major
  EXPECT_EQ(d.image(0)[0], 0.0f);
  EXPECT_EQ(d.image(0)[1], 1.0f / 255.0f);
  EXPECT_EQ(d.image(0)[kImageSide], static_cast<float>(kImageSide % 256) / 255.0f);
  EXPECT_EQ(d.image(0)[kImagePlane], static_cast<float>(kImagePlane % 256) / 255.0f);
  EXPECT_EQ(d.image(1)[0], 100.0f / 255.0f);
  EXPECT_EQ(d.image(1)[kImageValues - 1], static_cast<float>((100 + kImageValues - 1) % 256) / 255.0f);
  for (float p : d.images) {
    EXPECT_GE(p, 0.0f);
    EXPECT_LE(p, 1.0f);
  }
}

TEST(LoadCifar, Cifar100UsesFineLabel) {
  std::string rec{static_cast<char>(4), static_cast<char>(87)};
  rec += std::string(kImageValues, static_cast<char>(255));
  const auto d = parse_cifar(rec, CifarVariant::cifar100, Split::train);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.labels[0], 87u);
  EXPECT_EQ(d.classes, 100u);
  EXPECT_EQ(d.image(0)[0], 1.0f);
}

TEST(LoadCifar, DistinctDiagnostics) {
  TempDir dir;
  EXPECT_EQ(load_error(dir.path(), CifarVariant::cifar10, Split::test), DataError::Kind::missing_file);
  dir.write("test_batch.bin", record10(1, 0).substr(0, 3000));
  EXPECT_EQ(load_error(dir.path(), CifarVariant::cifar10, Split::test), DataError::Kind::bad_size);
  dir.write("test_batch.bin", record10(1, 0) + record10(10, 0));
  EXPECT_EQ(load_error(dir.path(), CifarVariant::cifar10, Split::test), DataError::Kind::bad_label);
  dir.write("test_batch.bin", "");
  EXPECT_EQ(load_error(dir.path(), CifarVariant::cifar10, Split::test), DataError::Kind::bad_size);
}

TEST(LoadCifar, TrainConcatenatesFiveBatchesInOrder) {
  TempDir dir;
  for (int b = 1; b <= 5; ++b) {
    dir.write("cifar-10-batches-bin/data_batch_" + std::to_string(b) + ".bin",
              record10(static_cast<unsigned char>(b), b) + record10(static_cast<unsigned char>(b), b + 1));
  }
  const auto d = load_cifar(dir.path(), CifarVariant::cifar10, Split::train);
  ASSERT_EQ(d.size(), 10u);
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{1, 1, 2, 2, 3, 3, 4, 4, 5, 5}));
  EXPECT_EQ(d.image(9)[0], 6.0f / 255.0f);

  const auto limited = load_cifar(dir.path(), CifarVariant::cifar10, Split::train, 3);
  ASSERT_EQ(limited.size(), 3u);
  EXPECT_EQ(limited.labels, (std::vector<std::size_t>{1, 1, 2}));
  EXPECT_TRUE(std::equal(limited.images.begin(), limited.images.end(), d.images.begin()));

  fs::remove(dir.path() / "cifar-10-batches-bin/data_batch_4.bin");
  EXPECT_EQ(load_error(dir.path(), CifarVariant::cifar10, Split::train), DataError::Kind::missing_file);
}

TEST(LoadCifar, EncodeParseRoundTrip) {
  auto d = synthetic_cifar(7, 10, 3);
  for (auto& p : d.images) p = std::round(p * 255.0f) / 255.0f;
  const auto back = parse_cifar(encode_cifar(d, CifarVariant::cifar10), CifarVariant::cifar10, Split::train);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.images, d.images);
}

// Real files, only when the caller points us at them.
TEST(LoadCifar, FullFilesWhenAvailable) {
  const char* dir = std::getenv("SPARSENET_DATA_DIR");
  if (!dir) GTEST_SKIP() << "SPARSENET_DATA_DIR not set";
  const auto train = load_cifar(dir, CifarVariant::cifar10, Split::train);
  const auto test = load_cifar(dir, CifarVariant::cifar10, Split::test);
  EXPECT_EQ(train.size(), 50000u);
  EXPECT_EQ(test.size(), 10000u);
  const auto s = channel_stats(train);
  const double mean[3] = {0.491, 0.482, 0.447}, sd[3] = {0.247, 0.243, 0.262};
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(s.mean[c], mean[c], 0.005);
    EXPECT_NEAR(s.std[c], sd[c], 0.005);
  }
}

// ------------------------------------------------------------ augmentation

std::vector<float> ramp_image() {
  std::vector<float> img(kImageValues);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = 1.0f + static_cast<float>(i);
  return img;
}

TEST(Augment, CentreCropWithoutFlipIsIdentity) {
  const auto img = ramp_image();
  std::vector<float> out(kImageValues);
  apply_crop_flip(img, out, {4, 4, false});
  EXPECT_EQ(out, img);
}

TEST(Augment, DoubleFlipIsIdentity) {
  const auto img = ramp_image();
  std::vector<float> once(kImageValues), twice(kImageValues);
  apply_crop_flip(img, once, {4, 4, true});
  EXPECT_NE(once, img);
  apply_crop_flip(once, twice, {4, 4, true});
  EXPECT_EQ(twice, img);
  EXPECT_EQ(once[0], img[kImageSide - 1]);
}

// Oracle: materialize the 40x40 zero-padded image and slice the window.
TEST(Augment, AllOffsetsMatchExplicitPaddedWindow) {
  const auto img = ramp_image();
  constexpr std::size_t P = kImageSide + 2 * kCropPad;
  std::vector<float> padded(3 * P * P, 0.0f);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < kImageSide; ++y)
      for (std::size_t x = 0; x < kImageSide; ++x)
        padded[c * P * P + (y + kCropPad) * P + x + kCropPad] = img[c * kImagePlane + y * kImageSide + x];
  std::vector<float> out(kImageValues);
  for (std::size_t dy = 0; dy <= 2 * kCropPad; ++dy) {
    for (std::size_t dx = 0; dx <= 2 * kCropPad; ++dx) {
      apply_crop_flip(img, out, {dy, dx, false});
      std::vector<float> window;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < kImageSide; ++y)
          for (std::size_t x = 0; x < kImageSide; ++x) window.push_back(padded[c * P * P + (y + dy) * P + x + dx]);
      EXPECT_EQ(out, window) << dy << "," << dx;
      std::vector<float> flipped(kImageValues);
      apply_crop_flip(img, flipped, {dy, dx, true});
      auto a = flipped, b = window;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      EXPECT_EQ(a, b) << "flip changes the multiset at " << dy << "," << dx;
    }
  }
}

TEST(Augment, DrawsCoverAllOffsetsAndBothFlips) {
  Rng rng(5);
  std::map<std::pair<std::size_t, std::size_t>, int> seen;
  int flips = 0;
  for (int i = 0; i < 4000; ++i) {
    const auto a = draw_crop_flip(rng);
    ASSERT_LE(a.dy, 8u);
    ASSERT_LE(a.dx, 8u);
    ++seen[{a.dy, a.dx}];
    flips += a.flip;
  }
  EXPECT_EQ(seen.size(), 81u);
  EXPECT_NEAR(flips / 4000.0, 0.5, 0.05);
}

TEST(Augment, DeterministicGivenRngState) {
  const auto img = ramp_image();
  std::vector<float> a(kImageValues), b(kImageValues);
  Rng r1(77), r2(77);
  augment(img, a, r1);
  augment(img, b, r2);
  EXPECT_EQ(a, b);
}

// ----------------------------------------------------------- normalization

TEST(Normalize, IdentityForZeroMeanUnitStd) {
  auto d = synthetic_cifar(5, 10, 1);
  const auto before = d.images;
  normalize(d, ChannelStats{});
  EXPECT_EQ(d.images, before);
}

TEST(Normalize, ZeroStdRejected) {
  auto d = synthetic_cifar(2, 10, 1);
  ChannelStats s;
  s.std[1] = 0;
  EXPECT_THROW(normalize(d, s), std::invalid_argument);
}

TEST(Normalize, StatsMatchTwoPassOracleAndCentreTheSet) {
  auto d = synthetic_cifar(64, 10, 2);
  const auto s = channel_stats(d);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> v;
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t k = 0; k < kImagePlane; ++k) v.push_back(d.image(i)[c * kImagePlane + k]);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    EXPECT_NEAR(s.mean[c], mean, 1e-9);
    EXPECT_NEAR(s.std[c], std::sqrt(var / v.size()), 1e-9);
  }
  normalize(d, s);
  const auto after = channel_stats(d);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_LT(std::abs(after.mean[c]), 1e-3);
    EXPECT_NEAR(after.std[c], 1.0, 1e-3);
  }
}

// ---------------------------------------------------------------- batching

std::vector<std::size_t> sizes_of(const Dataset& d, const BatchPlan& plan) {
  BatchStream s(d, plan);
  std::vector<std::size_t> out;
  while (auto b = s.next()) out.push_back(b->labels.size());
  return out;
}

TEST(Batches, PartialLastBatchKept) {
  const auto d = synthetic_cifar(10, 10, 1);
  BatchPlan plan;
  plan.batch_size = 4;
  EXPECT_EQ(sizes_of(d, plan), (std::vector<std::size_t>{4, 4, 2}));
}

TEST(Batches, SingleLeftoverJoinsPreviousBatch) {
  EXPECT_EQ(batch_bounds(9, 4), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 4}, {4, 9}}));
  EXPECT_EQ(batch_bounds(1, 4), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}}));
  EXPECT_EQ(batch_bounds(8, 4).size(), 2u);
  EXPECT_THROW(batch_bounds(8, 0), std::invalid_argument);
}

TEST(Batches, SameSeedAndEpochSameOrder) {
  EXPECT_EQ(epoch_order(500, 3, 7), epoch_order(500, 3, 7));
  EXPECT_NE(epoch_order(1000, 3, 0), epoch_order(1000, 3, 1));
  EXPECT_NE(epoch_order(1000, 3, 0), epoch_order(1000, 4, 0));
}

TEST(Batches, EverySampleOncePerEpoch) {
  const auto d = synthetic_cifar(203, 10, 1);
  BatchPlan plan;
  plan.batch_size = 64;
  plan.seed = 9;
  for (std::size_t epoch : {0u, 1u, 5u}) {
    plan.epoch = epoch;
    BatchStream s(d, plan);
    std::vector<std::size_t> rows;
    while (auto b = s.next()) rows.insert(rows.end(), b->indices.begin(), b->indices.end());
    std::sort(rows.begin(), rows.end());
    std::vector<std::size_t> all(203);
    std::iota(all.begin(), all.end(), 0);
    EXPECT_EQ(rows, all);
  }
}

TEST(Batches, EvaluationPlanNoShuffleNoAugmentation) {
  const auto d = synthetic_cifar(20, 10, 1, Split::test);
  BatchStream s(d, BatchPlan::evaluation(8));
  std::size_t row = 0;
  while (auto b = s.next()) {
    for (std::size_t k = 0; k < b->labels.size(); ++k, ++row) {
      EXPECT_EQ(b->indices[k], row);
      EXPECT_TRUE(std::equal(d.image(row).begin(), d.image(row).end(), b->images.data() + k * kImageValues));
    }
  }
  EXPECT_EQ(row, 20u);
}

Tensor<float> epoch_tensor(const Dataset& d, const BatchPlan& plan, std::size_t workers) {
  BatchStream s(d, plan, workers);
  std::vector<float> all;
  std::vector<std::size_t> labels;
  while (auto b = s.next()) {
    all.insert(all.end(), b->images.values().begin(), b->images.values().end());
    labels.insert(labels.end(), b->labels.begin(), b->labels.end());
  }
  for (auto l : labels) all.push_back(static_cast<float>(l));
  const std::size_t n = all.size();
  return Tensor<float>({n}, std::move(all));
}

TEST(Batches, BitwiseIdenticalAcrossWorkerCounts) {
  auto d = synthetic_cifar(150, 10, 4);
  normalize(d, channel_stats(d));
  BatchPlan plan;
  plan.batch_size = 32;
  plan.seed = 11;
  plan.epoch = 2;
  const auto ref = epoch_tensor(d, plan, 0);
  for (std::size_t w : {1u, 2u, 5u}) EXPECT_EQ(epoch_tensor(d, plan, w), ref) << w << " workers";
  plan.epoch = 3;
  EXPECT_FALSE(epoch_tensor(d, plan, 2) == ref);
}

TEST(Batches, AugmentationFollowsRowNotPosition) {
  const auto d = synthetic_cifar(12, 10, 4);
  BatchPlan plan;
  plan.seed = 5;
  plan.epoch = 1;
  const std::vector<std::size_t> forward{3, 7, 9}, backward{9, 7, 3};
  const auto a = assemble_batch(d, plan, forward);
  const auto b = assemble_batch(d, plan, backward);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_TRUE(std::equal(a.images.data() + k * kImageValues, a.images.data() + (k + 1) * kImageValues,
                           b.images.data() + (2 - k) * kImageValues));
  }
}

TEST(UniformIndex, StaysInRangeAndCoversIt) {
  Rng rng(1);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) ++hits[uniform_index(rng, 7)];
  for (int h : hits) EXPECT_NEAR(h, 1000, 150);
}

}  // namespace
}  // namespace sparsenet
