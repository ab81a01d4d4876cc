#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "aupipe/data/time.hpp"
#include "aupipe/model/au_sets.hpp"

namespace aupipe {

struct AuLabel {
  bool present = false;
  std::optional<int> intensity;  // 0..5, AU43 0..1; only with present

  bool operator==(const AuLabel&) const = default;
};

/// One annotator's labels for one frame. An AU missing from `labels` was
/// judged absent.
struct AnnotationDoc {
  std::string frame_id;
  std::string annotator_id;
  std::map<int, AuLabel> labels;
  Timestamp submitted_at;

  bool operator==(const AnnotationDoc&) const = default;
};

/// Schema check; throws ValidationError naming the offending AU.
inline void validate_doc(const AnnotationDoc& d) {
  if (d.frame_id.empty()) throw ValidationError("annotation: empty frame_id");
  if (d.annotator_id.empty()) throw ValidationError("annotation: empty annotator_id");
  for (const auto& [au, l] : d.labels) {
    if (!is_pain_icu_au(au)) throw ValidationError("annotation: AU " + std::to_string(au) + " is not in the schema");
    if (!l.intensity) continue;
    if (!l.present) throw ValidationError("annotation: AU " + std::to_string(au) + " has an intensity but is absent");
    const int hi = au == 43 ? 1 : 5;
    if (*l.intensity < 0 || *l.intensity > hi)
      throw ValidationError("annotation: AU " + std::to_string(au) + " intensity " + std::to_string(*l.intensity) +
                            " outside 0.." + std::to_string(hi));
  }
}

inline void to_json(nlohmann::json& j, const AnnotationDoc& d) {
  nlohmann::json labels = nlohmann::json::object();
  for (const auto& [au, l] : d.labels) {
    nlohmann::json e{{"present", l.present}};
    if (l.intensity) e["intensity"] = *l.intensity;
    labels[std::to_string(au)] = e;
  }
  j = {{"frame_id", d.frame_id},
       {"annotator_id", d.annotator_id},
       {"labels", labels},
       {"submitted_at", format_time(d.submitted_at)}};
}

/// Structural decode; wrong types raise nlohmann's type_error. Range checks
/// are left to validate_doc.
inline void from_json(const nlohmann::json& j, AnnotationDoc& d) {
  d.frame_id = j.at("frame_id").get<std::string>();
  d.annotator_id = j.at("annotator_id").get<std::string>();
  d.labels.clear();
  for (const auto& [key, e] : j.at("labels").items()) {
    std::size_t used = 0;
    int au = 0;
    try {
      au = std::stoi(key, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != key.size()) throw ValidationError("annotation: label key '" + key + "' is not an AU id");
    AuLabel l;
    l.present = e.at("present").get<bool>();
    if (e.contains("intensity") && !e.at("intensity").is_null()) l.intensity = e.at("intensity").get<int>();
    d.labels[au] = l;
  }
  d.submitted_at = parse_time(j.at("submitted_at").get<std::string>());
}

/// Per-AU majority over the frame's annotators: present when strictly more
/// than half mark it present, so an exact tie is absent. Covers every AU of
/// the annotation schema.
inline std::map<int, bool> consolidate_labels(const std::vector<AnnotationDoc>& docs) {
  if (docs.empty()) throw ValidationError("consolidate_labels: no documents");
  std::map<int, bool> out;
  for (int au : pain_icu_aus()) {
    std::size_t yes = 0;
    for (const auto& d : docs) {
      auto it = d.labels.find(au);
      yes += it != d.labels.end() && it->second.present;
    }
    out[au] = 2 * yes > docs.size();
  }
  return out;
}

}  // namespace aupipe
