#pragma once

#include <atomic>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>

#include "aupipe/align.hpp"

namespace aupipe {

/// frame_id -> alignment transform, with hit/miss accounting. Readers run
/// concurrently; writes are serialized. When a persistence path is given,
/// every put is appended to it as (u32 id length, id bytes, 6 x f64 matrix),
/// little-endian, and the file is replayed on construction.
class AlignmentCache {
 public:
  AlignmentCache() = default;

  explicit AlignmentCache(std::filesystem::path persist_path) : path_(std::move(persist_path)) {
    if (std::filesystem::exists(path_)) replay();
  }

  AlignmentCache(const AlignmentCache&) = delete;
  AlignmentCache& operator=(const AlignmentCache&) = delete;

  std::optional<SimilarityTransform> get(const std::string& frame_id) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(frame_id);
    if (it == entries_.end()) {
      misses_.fetch_add(1, std::memory_order_relaxed);
      return std::nullopt;
    }
    hits_.fetch_add(1, std::memory_order_relaxed);
    return it->second;
  }

  void put(const std::string& frame_id, const SimilarityTransform& t) {
    std::unique_lock lock(mutex_);
    entries_[frame_id] = t;
    if (!path_.empty()) append(frame_id, t);
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }
  std::uint64_t hits() const { return hits_.load(); }
  std::uint64_t misses() const { return misses_.load(); }
  std::uint64_t lookups() const { return hits() + misses(); }
  std::uint64_t estimations() const { return estimations_.load(); }
  void reset_counters() {
    hits_ = 0;
    misses_ = 0;
    estimations_ = 0;
  }

 private:
  friend SimilarityTransform cached_transform(AlignmentCache&, const LandmarkSet&, const CanonicalTemplate&);

  static void put_u64(std::ofstream& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  static std::uint64_t get_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in.get())) << (8 * i);
    return v;
  }

  void append(const std::string& id, const SimilarityTransform& t) {
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) throw Error("cannot append to cache file " + path_.string());
    const auto len = static_cast<std::uint32_t>(id.size());
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xff));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    for (double v : t.matrix()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }

  void replay() {
    std::ifstream in(path_, std::ios::binary);
    while (in.peek() != std::char_traits<char>::eof()) {
      std::uint32_t len = 0;
      for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(in.get())) << (8 * i);
      std::string id(len, '\0');
      in.read(id.data(), len);
      std::array<double, 6> m{};
      for (auto& v : m) v = std::bit_cast<double>(get_u64(in));
      if (!in) throw ValidationError("cache file " + path_.string() + " is truncated");
      entries_[id] = SimilarityTransform::from_matrix(m);
    }
  }

  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, SimilarityTransform> entries_;
  mutable std::atomic<std::uint64_t> hits_{0};
  mutable std::atomic<std::uint64_t> misses_{0};
  std::atomic<std::uint64_t> estimations_{0};
};

/// Cache-through estimation: a hit returns the stored transform, a miss
/// estimates, stores and returns it.
inline SimilarityTransform cached_transform(AlignmentCache& cache, const LandmarkSet& landmarks,
                                            const CanonicalTemplate& tmpl) {
  if (auto hit = cache.get(landmarks.frame_id)) return *hit;
  auto t = estimate_similarity(landmarks, tmpl);
  cache.estimations_.fetch_add(1, std::memory_order_relaxed);
  cache.put(landmarks.frame_id, t);
  return t;
}

}  // namespace aupipe
