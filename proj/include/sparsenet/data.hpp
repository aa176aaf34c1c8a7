#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sparsenet/init.hpp"
#include "sparsenet/tensor.hpp"

namespace sparsenet {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImagePlane = kImageSide * kImageSide;
inline constexpr std::size_t kImageValues = 3 * kImagePlane;
inline constexpr std::size_t kCropPad = 4;

enum class CifarVariant { cifar10, cifar100 };
enum class Split { train, test };

inline std::size_t class_count(CifarVariant v) { return v == CifarVariant::cifar10 ? 10 : 100; }
inline std::size_t record_bytes(CifarVariant v) { return v == CifarVariant::cifar10 ? 3073 : 3074; }

class DataError : public std::runtime_error {
 public:
  enum class Kind { missing_file, bad_size, bad_label, io };
  DataError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct Dataset {
  std::vector<float> images;  // N x 3 x 32 x 32
  std::vector<std::size_t> labels;
  std::size_t classes = 10;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  std::span<const float> image(std::size_t i) const { return {images.data() + i * kImageValues, kImageValues}; }
  std::span<float> image(std::size_t i) { return {images.data() + i * kImageValues, kImageValues}; }
};

// File names for one split, relative to the data directory.
inline std::vector<std::string> cifar_files(CifarVariant v, Split split) {
  if (v == CifarVariant::cifar100) return {split == Split::train ? "train.bin" : "test.bin"};
  if (split == Split::test) return {"test_batch.bin"};
  return {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"};
}

// Appends the records in `bytes` (one file's worth) to `out`.
inline void parse_cifar_records(std::string_view bytes, CifarVariant v, Dataset& out, const std::string& source) {
  const std::size_t rec = record_bytes(v);
  if (bytes.empty() || bytes.size() % rec != 0) {
    throw DataError(DataError::Kind::bad_size, source + ": size " + std::to_string(bytes.size()) +
                                                   " is not a positive multiple of the " + std::to_string(rec) +
                                                   "-byte record");
  }
  const std::size_t n = bytes.size() / rec, label_offset = v == CifarVariant::cifar10 ? 0 : 1;
  const std::size_t pixel_offset = rec - kImageValues;
  const std::size_t base = out.size();
  out.images.resize((base + n) * kImageValues);
  out.labels.resize(base + n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* r = reinterpret_cast<const unsigned char*>(bytes.data() + i * rec);
    const std::size_t label = r[label_offset];
    if (label >= out.classes) {
      throw DataError(DataError::Kind::bad_label, source + ": record " + std::to_string(i) + " has label " +
                                                      std::to_string(label) + " >= " + std::to_string(out.classes));
    }
    out.labels[base + i] = label;
    float* dst = out.images.data() + (base + i) * kImageValues;
    for (std::size_t p = 0; p < kImageValues; ++p) dst[p] = static_cast<float>(r[pixel_offset + p]) / 255.0f;
  }
}

inline Dataset parse_cifar(std::string_view bytes, CifarVariant v, Split split, const std::string& source = "<memory>") {
  Dataset d;
  d.classes = class_count(v);
  d.split = split;
  parse_cifar_records(bytes, v, d, source);
  return d;
}

// Looks in `dir` and in the directory names the official archives unpack to.
inline std::filesystem::path resolve_cifar_dir(const std::filesystem::path& dir, CifarVariant v, Split split) {
  const auto probe = cifar_files(v, split).front();
  const char* sub = v == CifarVariant::cifar10 ? "cifar-10-batches-bin" : "cifar-100-binary";
  if (!std::filesystem::exists(dir / probe) && std::filesystem::exists(dir / sub / probe)) return dir / sub;
  return dir;
}

// Pixels scaled to [0,1], records in file order. `limit` > 0 keeps the
// first `limit` records.
inline Dataset load_cifar(const std::filesystem::path& dir, CifarVariant v, Split split, std::size_t limit = 0) {
  const auto root = resolve_cifar_dir(dir, v, split);
  Dataset d;
  d.classes = class_count(v);
  d.split = split;
  for (const auto& name : cifar_files(v, split)) {
    if (limit && d.size() >= limit) break;
    const auto path = root / name;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataError::Kind::missing_file, "missing data file " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    parse_cifar_records(bytes, v, d, path.string());
  }
  if (limit && d.size() > limit) {
    d.labels.resize(limit);
    d.images.resize(limit * kImageValues);
  }
  return d;
}

// ---------------------------------------------------------- normalization

struct ChannelStats {
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> std{1, 1, 1};
};

// One pass, double accumulation; population standard deviation.
inline ChannelStats channel_stats(const Dataset& d) {
  ChannelStats s;
  if (d.size() == 0) return s;
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const float* p = d.images.data() + i * kImageValues + c * kImagePlane;
      for (std::size_t k = 0; k < kImagePlane; ++k) {
        sum += p[k];
        sq += static_cast<double>(p[k]) * p[k];
      }
    }
    const double n = static_cast<double>(d.size() * kImagePlane);
    s.mean[c] = sum / n;
    s.std[c] = std::sqrt(std::max(0.0, sq / n - s.mean[c] * s.mean[c]));
  }
  return s;
}

inline void normalize(Dataset& d, const ChannelStats& s) {
  for (std::size_t c = 0; c < 3; ++c) {
    if (!(s.std[c] > 0)) throw std::invalid_argument("normalize: std of channel " + std::to_string(c) + " must be > 0");
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      float* p = d.images.data() + i * kImageValues + c * kImagePlane;
      const float m = static_cast<float>(s.mean[c]), inv = static_cast<float>(1.0 / s.std[c]);
      for (std::size_t k = 0; k < kImagePlane; ++k) p[k] = (p[k] - m) * inv;
    }
  }
}

// ------------------------------------------------------------ augmentation

// Unbiased draw from [0, n) by rejection; same sequence on every standard
// library, unlike std::uniform_int_distribution.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = Rng::max() - Rng::max() % n;
  std::uint64_t x;
  do x = rng();
  while (x >= limit);
  return x % n;
}

struct CropFlip {
  std::size_t dy = kCropPad;  // window offset inside the 40x40 padded image
  std::size_t dx = kCropPad;
  bool flip = false;
};

inline CropFlip draw_crop_flip(Rng& rng) {
  CropFlip a;
  a.dy = uniform_index(rng, 2 * kCropPad + 1);
  a.dx = uniform_index(rng, 2 * kCropPad + 1);
  a.flip = uniform_index(rng, 2) == 1;
  return a;
}

// Zero-pad by 4, take the 32x32 window at (dy, dx), optionally mirror.
inline void apply_crop_flip(std::span<const float> src, std::span<float> dst, const CropFlip& a) {
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < kImageSide; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + a.dy) - static_cast<std::ptrdiff_t>(kCropPad);
      for (std::size_t x = 0; x < kImageSide; ++x) {
        const std::size_t ox = a.flip ? kImageSide - 1 - x : x;
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ox + a.dx) - static_cast<std::ptrdiff_t>(kCropPad);
        const bool inside = sy >= 0 && sy < static_cast<std::ptrdiff_t>(kImageSide) && sx >= 0 &&
                            sx < static_cast<std::ptrdiff_t>(kImageSide);
        dst[c * kImagePlane + y * kImageSide + x] =
            inside ? src[c * kImagePlane + static_cast<std::size_t>(sy) * kImageSide + static_cast<std::size_t>(sx)] : 0.0f;
      }
    }
  }
}

inline void augment(std::span<const float> src, std::span<float> dst, Rng& rng) {
  apply_crop_flip(src, dst, draw_crop_flip(rng));
}

// ---------------------------------------------------------------- batching

struct BatchPlan {
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  bool shuffle = true;
  bool augment = true;

  static BatchPlan evaluation(std::size_t batch_size) { return {batch_size, 0, 0, false, false}; }
};

// Fisher-Yates permutation seeded by (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return order;
}

// [begin, end) ranges of consecutive batches. The partial last batch is
// kept, except that a single leftover sample joins the batch before it:
// training-mode batch norm over 1x1 attention maps needs two samples.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size) out.emplace_back(b, std::min(n, b + batch_size));
  if (out.size() >= 2 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

struct Batch {
  Tensor<float> images;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> indices;  // dataset rows
};

// Augmentation for dataset row r in a given epoch draws from its own
// stream derive_seed(seed, epoch, r), so assembly order is irrelevant.
inline Batch assemble_batch(const Dataset& d, const BatchPlan& plan, std::span<const std::size_t> rows) {
  Batch b;
  b.images = Tensor<float>({rows.size(), 3, kImageSide, kImageSide});
  b.labels.reserve(rows.size());
  b.indices.assign(rows.begin(), rows.end());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t r = rows[k];
    b.labels.push_back(d.labels[r]);
    std::span<float> dst(b.images.data() + k * kImageValues, kImageValues);
    if (plan.augment) {
      Rng rng(derive_seed(plan.seed, plan.epoch, r));
      augment(d.image(r), dst, rng);
    } else {
      std::copy(d.image(r).begin(), d.image(r).end(), dst.begin());
    }
  }
  return b;
}

// Yields the batches of one epoch in order. With workers > 0, up to
// `workers` upcoming batches are assembled on background threads; content
// and order do not depend on the worker count.
class BatchStream {
 public:
  BatchStream(const Dataset& d, BatchPlan plan, std::size_t workers = 0)
      : data_(d), plan_(plan), workers_(workers), bounds_(batch_bounds(d.size(), plan.batch_size)) {
    if (plan_.shuffle) {
      order_ = epoch_order(d.size(), plan_.seed, plan_.epoch);
    } else {
      order_.resize(d.size());
      for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    }
  }
  BatchStream(const BatchStream&) = delete;
  BatchStream& operator=(const BatchStream&) = delete;
  ~BatchStream() {
    for (auto& f : pending_) f.wait();
  }

  std::size_t batch_count() const { return bounds_.size(); }
  const std::vector<std::size_t>& order() const { return order_; }

  std::optional<Batch> next() {
    if (workers_ == 0) {
      if (next_ >= bounds_.size()) return std::nullopt;
      return build(next_++);
    }
    while (scheduled_ < bounds_.size() && pending_.size() < workers_) {
      pending_.push_back(std::async(std::launch::async, [this, i = scheduled_] { return build(i); }));
      ++scheduled_;
    }
    if (pending_.empty()) return std::nullopt;
    Batch b = pending_.front().get();
    pending_.pop_front();
    if (scheduled_ < bounds_.size()) {
      pending_.push_back(std::async(std::launch::async, [this, i = scheduled_] { return build(i); }));
      ++scheduled_;
    }
    return b;
  }

 private:
  Batch build(std::size_t i) const {
    const auto [begin, end] = bounds_[i];
    return assemble_batch(data_, plan_, std::span<const std::size_t>(order_).subspan(begin, end - begin));
  }

  const Dataset& data_;
  BatchPlan plan_;
  std::size_t workers_;
  std::vector<std::pair<std::size_t, std::size_t>> bounds_;
  std::vector<std::size_t> order_;
  std::size_t next_ = 0;
  std::size_t scheduled_ = 0;
  std::deque<std::future<Batch>> pending_;
};

// ------------------------------------------------------------- fixtures

// Encodes images in [0,1] (rounded to bytes) and labels as CIFAR records.
inline std::string encode_cifar(const Dataset& d, CifarVariant v) {
  std::string out;
  out.reserve(d.size() * record_bytes(v));
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (v == CifarVariant::cifar100) out.push_back(static_cast<char>(d.labels[i] / 5));  // coarse label slot
    out.push_back(static_cast<char>(d.labels[i]));
    for (float p : d.image(i)) {
      const long q = std::lround(std::clamp(p, 0.0f, 1.0f) * 255.0f);
      out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
    }
  }
  return out;
}

// Small learnable stand-in for CIFAR: each class has its own tint and
// stripe period, plus per-pixel noise. Used by tests and demos when the
// real files are absent.
inline Dataset synthetic_cifar(std::size_t n, std::size_t classes, std::uint64_t seed, Split split = Split::train) {
  Dataset d;
  d.classes = classes;
  d.split = split;
  d.images.resize(n * kImageValues);
  d.labels.resize(n);
  Rng rng(derive_seed(seed, split == Split::train ? 1 : 2));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = uniform_index(rng, classes);
    d.labels[i] = label;
    const std::size_t period = 2 + label % 5;
    for (std::size_t c = 0; c < 3; ++c) {
      const float tint = static_cast<float>((label * 37 + c * 11) % 10) / 10.0f;
      for (std::size_t y = 0; y < kImageSide; ++y)
        for (std::size_t x = 0; x < kImageSide; ++x) {
          const bool stripe = ((label % 2 ? x : y) / period) % 2 == 0;
          const float noise = static_cast<float>(uniform_index(rng, 1000)) / 1000.0f - 0.5f;
          const float v = 0.6f * tint + (stripe ? 0.3f : 0.0f) + 0.2f * noise;
          d.images[i * kImageValues + c * kImagePlane + y * kImageSide + x] = std::clamp(v, 0.0f, 1.0f);
        }
    }
  }
  return d;
}

}  // namespace sparsenet
