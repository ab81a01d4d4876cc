#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "aupipe/data/annotations.hpp"
#include "aupipe/data/records.hpp"
#include "aupipe/digest.hpp"
#include "aupipe/random.hpp"

namespace aupipe {

struct UpsertResult {
  bool created = false;
  AnnotationDoc doc;
};

struct Progress {
  std::map<std::string, std::size_t> per_annotator;
  std::size_t total_frames = 0;
  std::size_t consolidated_frames = 0;  // frames with at least one document
};

inline void to_json(nlohmann::json& j, const Progress& p) {
  j = {{"per_annotator", p.per_annotator},
       {"total_frames", p.total_frames},
       {"consolidated_frames", p.consolidated_frames}};
}

/// Consolidated labels for a list of frames. Row i belongs to frame_ids[i];
/// rows of unannotated frames have mask[i] == false and hold NaN.
struct LabelQuery {
  std::vector<std::string> frame_ids;
  std::vector<int> au_ids;
  std::vector<double> values;  // row-major [frames x aus]
  std::vector<bool> mask;

  double at(std::size_t row, std::size_t au) const { return values[row * au_ids.size() + au]; }
  std::vector<double> row(std::size_t r) const {
    return {values.begin() + static_cast<std::ptrdiff_t>(r * au_ids.size()),
            values.begin() + static_cast<std::ptrdiff_t>((r + 1) * au_ids.size())};
  }
};

/// Annotation documents over a fixed frame catalogue, backed by a JSON-lines
/// journal (one document per line, later lines win). Readers share a lock;
/// writers take it exclusively and append to the journal before the index
/// changes, so a reader sees a document either before or after an upsert.
class AnnotationStore {
 public:
  /// An empty journal path keeps everything in memory.
  explicit AnnotationStore(std::vector<FrameRecord> frames, std::filesystem::path journal = {})
      : journal_(std::move(journal)) {
    for (auto& f : frames) {
      const std::string id = f.frame_id;
      if (!frames_.emplace(id, std::move(f)).second)
        throw ValidationError("annotation store: duplicate frame '" + id + "'");
    }
    if (!journal_.empty() && std::filesystem::exists(journal_)) replay();
  }

  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  /// Inserts or replaces the (frame_id, annotator_id) document. Resubmitting
  /// an identical document changes nothing, journal included.
  UpsertResult upsert(const AnnotationDoc& doc) {
    validate_doc(doc);
    std::unique_lock lock(mutex_);
    if (!frames_.count(doc.frame_id)) throw NotFoundError("unknown frame '" + doc.frame_id + "'");
    const auto key = std::make_pair(doc.frame_id, doc.annotator_id);
    auto it = docs_.find(key);
    const bool created = it == docs_.end();
    if (!created && it->second == doc) return {false, doc};
    append(doc);
    docs_[key] = doc;
    return {created, doc};
  }

  std::optional<AnnotationDoc> get(const std::string& frame_id, const std::string& annotator_id) const {
    std::shared_lock lock(mutex_);
    auto it = docs_.find({frame_id, annotator_id});
    if (it == docs_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<AnnotationDoc> docs_for(const std::string& frame_id) const {
    std::shared_lock lock(mutex_);
    return docs_for_locked(frame_id);
  }

  /// Every document, ordered by (frame_id, annotator_id).
  std::vector<AnnotationDoc> all_docs() const {
    std::shared_lock lock(mutex_);
    std::vector<AnnotationDoc> out;
    for (const auto& [_, d] : docs_) out.push_back(d);
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return docs_.size();
  }

  bool has_frame(const std::string& frame_id) const { return frames_.count(frame_id) > 0; }

  const FrameRecord& frame(const std::string& frame_id) const {
    auto it = frames_.find(frame_id);
    if (it == frames_.end()) throw NotFoundError("unknown frame '" + frame_id + "'");
    return it->second;
  }

  /// Frame catalogue in frame_id order.
  std::vector<FrameRecord> frames() const {
    std::vector<FrameRecord> out;
    for (const auto& [_, f] : frames_) out.push_back(f);
    return out;
  }

  /// Lowest frame_id this annotator has not labelled yet. With a seed, the
  /// catalogue is walked in a per-annotator shuffled order instead.
  std::optional<FrameRecord> next_for(const std::string& annotator_id,
                                      std::optional<std::uint64_t> shuffle_seed = std::nullopt) const {
    std::shared_lock lock(mutex_);
    if (!shuffle_seed) {
      for (const auto& [id, f] : frames_)
        if (!docs_.count({id, annotator_id})) return f;
      return std::nullopt;
    }
    std::vector<const FrameRecord*> order;
    for (const auto& [id, f] : frames_) order.push_back(&f);
    std::mt19937_64 rng(*shuffle_seed ^ fnv1a64(annotator_id));
    stable_shuffle(order, rng);
    for (const auto* f : order)
      if (!docs_.count({f->frame_id, annotator_id})) return *f;
    return std::nullopt;
  }

  Progress progress() const {
    std::shared_lock lock(mutex_);
    Progress p;
    p.total_frames = frames_.size();
    std::string last;
    for (const auto& [key, _] : docs_) {
      if (!frames_.count(key.first)) continue;
      ++p.per_annotator[key.second];
      if (key.first != last) ++p.consolidated_frames;
      last = key.first;
    }
    return p;
  }

  std::optional<std::map<int, bool>> consolidated(const std::string& frame_id) const {
    std::shared_lock lock(mutex_);
    if (!frames_.count(frame_id)) throw NotFoundError("unknown frame '" + frame_id + "'");
    auto docs = docs_for_locked(frame_id);
    if (docs.empty()) return std::nullopt;
    return consolidate_labels(docs);
  }

  /// Consolidated presence for `frame_ids` (in that order) over `au_ids`.
  LabelQuery query_labels(const std::vector<std::string>& frame_ids, const std::vector<int>& au_ids) const {
    for (int au : au_ids)
      if (!is_pain_icu_au(au)) throw ValidationError("query_labels: AU " + std::to_string(au) + " is not annotated");
    LabelQuery q;
    q.frame_ids = frame_ids;
    q.au_ids = au_ids;
    for (const auto& id : frame_ids) {
      auto labels = consolidated(id);
      q.mask.push_back(labels.has_value());
      for (int au : au_ids)
        q.values.push_back(labels ? (labels->at(au) ? 1.0 : 0.0) : std::numeric_limits<double>::quiet_NaN());
    }
    return q;
  }

  /// Rewrites the journal with one line per live document.
  void compact() {
    std::unique_lock lock(mutex_);
    if (journal_.empty()) return;
    auto tmp = journal_;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw Error("cannot write " + tmp.string());
      for (const auto& [_, d] : docs_) out << nlohmann::json(d).dump() << '\n';
      if (!out) throw Error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, journal_);
  }

 private:
  std::vector<AnnotationDoc> docs_for_locked(const std::string& frame_id) const {
    std::vector<AnnotationDoc> out;
    for (auto it = docs_.lower_bound({frame_id, ""}); it != docs_.end() && it->first.first == frame_id; ++it)
      out.push_back(it->second);
    return out;
  }

  void append(const AnnotationDoc& doc) {
    if (journal_.empty()) return;
    std::ofstream out(journal_, std::ios::app);
    if (!out) throw Error("cannot append to " + journal_.string());
    out << nlohmann::json(doc).dump() << '\n' << std::flush;
    if (!out) throw Error("short write to " + journal_.string());
  }

  void replay() {
    std::ifstream in(journal_);
    if (!in) throw NotFoundError("cannot open " + journal_.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        auto doc = nlohmann::json::parse(line).get<AnnotationDoc>();
        validate_doc(doc);
        docs_[{doc.frame_id, doc.annotator_id}] = std::move(doc);
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(journal_.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  std::filesystem::path journal_;
  std::map<std::string, FrameRecord> frames_;
  mutable std::shared_mutex mutex_;
  std::map<std::pair<std::string, std::string>, AnnotationDoc> docs_;
};

}  // namespace aupipe
