#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sparsenet/config.hpp"
#include "sparsenet/model.hpp"
#include "sparsenet/optim.hpp"

// Layout (little-endian):
//   "SPNF" | u32 version | u32 epoch | u32 spec_len | spec text ([model] config)
//   | u32 tensor_count | tensor*
// tensor: u32 name_len | name | u32 rank | u32 dims[rank] | f32 values
// Optimizer velocity is stored as extra tensors named "velocity/<param>".

namespace sparsenet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'N', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline const std::string kVelocityPrefix = "velocity/";

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, bad_version, truncated, trailing_bytes, missing_tensor, unexpected_tensor, shape_mismatch, bad_spec };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct CheckpointTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t epoch = 0;
  std::string spec_text;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  const char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::truncated, path_ + ": truncated while reading " + what + " at byte " +
                                                                  std::to_string(pos_));
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    std::memcpy(&v, take(4, what), 4);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, ck.epoch);
  detail::put_u32(out, static_cast<std::uint32_t>(ck.spec_text.size()));
  out += ck.spec_text;
  detail::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) detail::put_u32(out, d);
    out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(float));
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& path = "<memory>") {
  detail::Reader r(bytes, path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(CheckpointError::Kind::bad_magic, path + ": not a checkpoint (magic bytes are not SPNF)");
  }
  r.take(4, "magic");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::bad_version, path + ": unsupported format version " +
                                                                  std::to_string(version) + " (expected " +
                                                                  std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.epoch = r.u32("epoch");
  const auto spec_len = r.u32("spec length");
  ck.spec_text.assign(r.take(spec_len, "spec text"), spec_len);
  const auto count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto name_len = r.u32("name length");
    t.name.assign(r.take(name_len, "tensor name"), name_len);
    const auto rank = r.u32("rank");
    std::uint64_t n = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      t.dims.push_back(r.u32("dims"));
      n *= t.dims.back();
    }
    if (n > (bytes.size() - r.pos()) / sizeof(float)) {
      throw CheckpointError(CheckpointError::Kind::truncated, path + ": truncated in values of '" + t.name + "'");
    }
    t.values.resize(static_cast<std::size_t>(n));
    std::memcpy(t.values.data(), r.take(t.values.size() * sizeof(float), "values"), t.values.size() * sizeof(float));
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) {
    throw CheckpointError(CheckpointError::Kind::trailing_bytes,
                          path + ": " + std::to_string(bytes.size() - r.pos()) + " unexpected bytes after the last tensor");
  }
  return ck;
}

// Writes to `<path>.tmp` then renames over `path`.
inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string bytes = encode_checkpoint(ck);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + tmp + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw CheckpointError(CheckpointError::Kind::io, "write to '" + tmp + "' failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw CheckpointError(CheckpointError::Kind::io, "cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
  }
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

template <typename T>
CheckpointTensor to_checkpoint_tensor(std::string name, const Shape& shape, std::span<const T> values) {
  CheckpointTensor t;
  t.name = std::move(name);
  for (auto d : shape) t.dims.push_back(static_cast<std::uint32_t>(d));
  t.values.assign(values.begin(), values.end());
  return t;
}

// Parameters, then BN running statistics, then (if given and started)
// optimizer velocity, each in registry order.
template <typename T>
Checkpoint capture_checkpoint(const SparseNet<T>& model, std::uint32_t epoch, const SgdNesterov<T>* opt = nullptr) {
  Checkpoint ck;
  ck.epoch = epoch;
  ck.spec_text = spec_to_config(model.spec());
  const auto params = model.parameters();
  for (const auto& p : params) {
    ck.tensors.push_back(to_checkpoint_tensor<T>(p.name, p.tensor->shape(), p.tensor->values()));
  }
  for (const auto& b : model.registry().buffers()) {
    ck.tensors.push_back(to_checkpoint_tensor<T>(b.name, {b.values->size()}, *b.values));
  }
  if (opt && !opt->velocity().empty()) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      ck.tensors.push_back(
          to_checkpoint_tensor<T>(kVelocityPrefix + params[k].name, params[k].tensor->shape(), opt->velocity()[k]));
    }
  }
  return ck;
}

// Validates names and shapes against the model before touching any weights.
template <typename T>
void restore_checkpoint(const Checkpoint& ck, SparseNet<T>& model, SgdNesterov<T>* opt = nullptr) {
  std::vector<std::pair<std::string, Shape>> expected;
  for (const auto& p : model.parameters()) expected.emplace_back(p.name, p.tensor->shape());
  for (const auto& b : model.registry().buffers()) expected.emplace_back(b.name, Shape{b.values->size()});

  std::set<std::string> known;
  for (const auto& [name, shape] : expected) {
    known.insert(name);
    const auto* t = ck.find(name);
    if (!t) throw CheckpointError(CheckpointError::Kind::missing_tensor, "checkpoint lacks tensor '" + name + "'");
    Shape got(t->dims.begin(), t->dims.end());
    if (got != shape) {
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            "tensor '" + name + "': checkpoint has " + to_string(got) + ", model expects " + to_string(shape));
    }
  }
  bool has_velocity = false;
  for (const auto& t : ck.tensors) {
    if (t.name.starts_with(kVelocityPrefix)) {
      const std::string base = t.name.substr(kVelocityPrefix.size());
      auto param = model.registry().find(base);
      if (!param) throw CheckpointError(CheckpointError::Kind::unexpected_tensor, "velocity for unknown parameter '" + base + "'");
      if (Shape(t.dims.begin(), t.dims.end()) != param->shape()) {
        throw CheckpointError(CheckpointError::Kind::shape_mismatch, "tensor '" + t.name + "' does not match its parameter");
      }
      has_velocity = true;
    } else if (!known.count(t.name)) {
      throw CheckpointError(CheckpointError::Kind::unexpected_tensor, "checkpoint has unexpected tensor '" + t.name + "'");
    }
  }

  for (const auto& p : model.parameters()) {
    const auto* t = ck.find(p.name);
    std::copy(t->values.begin(), t->values.end(), p.tensor->values().begin());
  }
  for (const auto& b : model.registry().buffers()) {
    const auto* t = ck.find(b.name);
    std::copy(t->values.begin(), t->values.end(), b.values->begin());
  }
  if (opt) {
    opt->velocity().clear();
    if (has_velocity) {
      for (const auto& p : model.parameters()) {
        const auto* t = ck.find(kVelocityPrefix + p.name);
        if (!t) throw CheckpointError(CheckpointError::Kind::missing_tensor, "checkpoint lacks velocity for '" + p.name + "'");
        opt->velocity().emplace_back(t->values.begin(), t->values.end());
      }
    }
  }
}

template <typename T>
void save_checkpoint(const SparseNet<T>& model, const std::string& path, std::uint32_t epoch = 0,
                     const SgdNesterov<T>* opt = nullptr) {
  write_checkpoint(path, capture_checkpoint(model, epoch, opt));
}

// Rebuilds the model from the embedded spec, then restores its state.
template <typename T = float>
SparseNet<T> load_checkpoint(const std::string& path, std::uint32_t* epoch = nullptr, SgdNesterov<T>* opt = nullptr) {
  const Checkpoint ck = read_checkpoint(path);
  NetworkSpec spec;
  try {
    spec = spec_from_config(parse_config(ck.spec_text));
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointError::Kind::bad_spec, path + ": embedded model spec is invalid: " + e.what());
  }
  SparseNet<T> model(spec, 0);
  restore_checkpoint(ck, model, opt);
  if (epoch) *epoch = ck.epoch;
  return model;
}

// Restores into an existing model; the embedded spec is not consulted, so a
// mismatched model surfaces as a named missing/extra/shape error.
template <typename T>
std::uint32_t load_checkpoint_into(const std::string& path, SparseNet<T>& model, SgdNesterov<T>* opt = nullptr) {
  const Checkpoint ck = read_checkpoint(path);
  restore_checkpoint(ck, model, opt);
  return ck.epoch;
}

}  // namespace sparsenet
