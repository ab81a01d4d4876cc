#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "aupipe/model/config.hpp"
#include "aupipe/model/parameters.hpp"
#include "aupipe/train/adam.hpp"

namespace aupipe {

/// Everything needed to resume training or run inference.
///
/// File layout, all integers little-endian:
///   "AUPCKPT\0"  u32 version  u64 model digest  u64 train digest
///   u32 len + model config JSON   u32 len + head tag
///   u64 adam step  u64 epochs completed  u32 record count
///   per record, sorted by path:
///     u32 len + path  u32 rank  u64 extents...  f64 values...
///   u8 has moments; if 1, per record in the same order: f64 m..., f64 v...
struct Checkpoint {
  ModelConfig model;
  ParameterSet params;
  std::uint64_t train_digest = 0;
  std::uint64_t epochs_done = 0;
  AdamState adam;
  bool has_moments = false;
};

inline constexpr char kCheckpointMagic[8] = {'A', 'U', 'P', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<std::uint8_t>& data() const { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> in) : in_(std::move(in)) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw ValidationError("checkpoint: truncated file");
  }
  template <typename U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string str() {
    const auto n = uint<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == in_.size(); }
  const std::uint8_t* peek(std::size_t n) {
    need(n);
    const auto* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  std::vector<std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  check_parameters(ck.params, ck.model);
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.uint(kCheckpointVersion);
  w.uint(ck.model.digest());
  w.uint(ck.train_digest);
  w.str(nlohmann::json(ck.model).dump());
  w.str(ck.params.head_tag);
  w.uint(ck.adam.step);
  w.uint(ck.epochs_done);
  w.uint(static_cast<std::uint32_t>(ck.params.tensors.size()));
  for (const auto& [path, t] : ck.params.tensors) {
    w.str(path);
    w.uint(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.uint(static_cast<std::uint64_t>(e));
    for (double v : t.values()) w.f64(v);
  }
  w.uint(static_cast<std::uint8_t>(ck.has_moments ? 1 : 0));
  if (ck.has_moments) {
    for (const auto& [path, t] : ck.params.tensors) {
      for (const auto* buf : {&ck.adam.m, &ck.adam.v}) {
        auto it = buf->find(path);
        for (std::size_t i = 0; i < t.size(); ++i) w.f64(it == buf->end() || it->second.empty() ? 0.0 : it->second[i]);
      }
    }
  }
  return w.data();
}

/// Decodes and validates a checkpoint. When `expected_model` is given, its
/// digest must equal the stored one.
inline Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes, const ModelConfig* expected_model = nullptr) {
  detail::ByteReader r(std::move(bytes));
  if (std::memcmp(r.peek(sizeof kCheckpointMagic), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw ValidationError("checkpoint: bad magic");
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw ValidationError("checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  const auto model_digest = r.uint<std::uint64_t>();
  ck.train_digest = r.uint<std::uint64_t>();
  try {
    ck.model = nlohmann::json::parse(r.str()).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint: bad model config: ") + e.what());
  }
  if (ck.model.digest() != model_digest) throw ValidationError("checkpoint: model digest does not match its config");
  if (expected_model && expected_model->digest() != model_digest)
    throw ValidationError("checkpoint: model config digest " + hex64(model_digest) + " differs from expected " +
                          hex64(expected_model->digest()));
  ck.params.head_tag = r.str();
  ck.adam.step = r.uint<std::uint64_t>();
  ck.epochs_done = r.uint<std::uint64_t>();
  const auto count = r.uint<std::uint32_t>();
  std::string previous;
  for (std::uint32_t k = 0; k < count; ++k) {
    auto path = r.str();
    if (k > 0 && !(previous < path)) throw ValidationError("checkpoint: records not sorted by path");
    previous = path;
    const auto rank = r.uint<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.uint<std::uint64_t>());
    const std::size_t n = shape_numel(shape);
    r.need(n * 8);
    std::vector<double> v(n);
    for (auto& x : v) x = r.f64();
    ck.params.tensors.emplace(path, Tensor(std::move(shape), std::move(v)));
  }
  ck.has_moments = r.uint<std::uint8_t>() != 0;
  if (ck.has_moments) {
    for (const auto& [path, t] : ck.params.tensors) {
      for (auto* buf : {&ck.adam.m, &ck.adam.v}) {
        auto& dst = (*buf)[path];
        dst.resize(t.size());
        for (auto& x : dst) x = r.f64();
      }
    }
  }
  if (!r.at_end()) throw ValidationError("checkpoint: trailing bytes");
  check_parameters(ck.params, ck.model);
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected_model = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  return decode_checkpoint(std::move(bytes), expected_model);
}

}  // namespace aupipe
