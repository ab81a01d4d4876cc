#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "aupipe/data/schedule.hpp"
#include "aupipe/data/store.hpp"

namespace aupipe {

/// AUs entering the PSPI score.
inline constexpr std::array<int, 6> kPspiAus{4, 6, 7, 9, 10, 43};

/// AU id -> intensity; AUs 4-10 on 0..5, AU43 on 0..1.
using IntensityVector = std::map<int, int>;

inline void validate_intensities(const IntensityVector& v) {
  for (int au : kPspiAus) {
    auto it = v.find(au);
    if (it == v.end()) throw ValidationError("PSPI: missing intensity for AU " + std::to_string(au));
    const int hi = au == 43 ? 1 : 5;
    if (it->second < 0 || it->second > hi)
      throw ValidationError("PSPI: AU " + std::to_string(au) + " intensity " + std::to_string(it->second) +
                            " outside 0.." + std::to_string(hi));
  }
  for (const auto& [au, _] : v)
    if (std::find(kPspiAus.begin(), kPspiAus.end(), au) == kPspiAus.end())
      throw ValidationError("PSPI: AU " + std::to_string(au) + " is not a PSPI component");
}

/// AU4 + max(AU6, AU7) + max(AU9, AU10) + AU43, in 0..16.
inline int pspi(const IntensityVector& v) {
  validate_intensities(v);
  return v.at(4) + std::max(v.at(6), v.at(7)) + std::max(v.at(9), v.at(10)) + v.at(43);
}

enum class PainCategory { mild, moderate, high };

inline constexpr std::array<PainCategory, 3> kPainCategories{PainCategory::mild, PainCategory::moderate,
                                                             PainCategory::high};

inline std::string to_string(PainCategory c) {
  switch (c) {
    case PainCategory::mild: return "mild";
    case PainCategory::moderate: return "moderate";
    case PainCategory::high: return "high";
  }
  throw ValidationError("bad pain category");
}

/// mild 0-4, moderate 5-6, high 7-10.
inline PainCategory dvprs_category(int score) {
  if (score < 0 || score > 10) throw ValidationError("DVPRS score " + std::to_string(score) + " outside 0..10");
  if (score <= 4) return PainCategory::mild;
  if (score <= 6) return PainCategory::moderate;
  return PainCategory::high;
}

/// A frame with its consolidated AU presence.
struct LabeledFrame {
  FrameRecord frame;
  std::map<int, bool> labels;
};

struct AssociationRow {
  int au_id = 0;
  PainCategory category = PainCategory::mild;
  std::size_t present_count = 0;
  std::size_t denominator = 0;

  /// 100 * present / denominator; empty when the category has no frames.
  std::optional<double> percentage() const {
    if (denominator == 0) return std::nullopt;
    return 100.0 * static_cast<double>(present_count) / static_cast<double>(denominator);
  }
};

struct AssociationTable {
  std::vector<AssociationRow> rows;  // by AU id, then mild, moderate, high

  const AssociationRow& at(int au, PainCategory c) const {
    for (const auto& r : rows)
      if (r.au_id == au && r.category == c) return r;
    throw NotFoundError("no association row for AU " + std::to_string(au) + " / " + to_string(c));
  }
};

struct AssociationOptions {
  Duration radius = std::chrono::minutes(60);
  /// A frame near several reports of one category counts once per report by
  /// default; set to count it once per category instead.
  bool once_per_category = false;
};

/// Share of frames with each AU present, per DVPRS category of the report
/// they lie near. Only labelled frames enter the counts.
inline AssociationTable association_table(const std::vector<LabeledFrame>& frames,
                                          const std::vector<PainReport>& reports, const std::vector<int>& au_ids,
                                          const AssociationOptions& opt = {}) {
  std::vector<FrameRecord> records;
  std::map<std::string, const LabeledFrame*> by_id;
  for (const auto& f : frames) {
    records.push_back(f.frame);
    by_id[f.frame.frame_id] = &f;
  }
  std::map<PainCategory, std::vector<const LabeledFrame*>> members;
  std::map<PainCategory, std::set<std::string>> seen;
  for (const auto& r : reports) {
    validate_report(r);
    const auto cat = dvprs_category(r.dvprs);
    for (const auto& f : frames_near_report(records, r, opt.radius)) {
      if (opt.once_per_category && !seen[cat].insert(f.frame_id).second) continue;
      members[cat].push_back(by_id.at(f.frame_id));
    }
  }
  AssociationTable t;
  for (int au : au_ids)
    for (auto cat : kPainCategories) {
      AssociationRow row{au, cat, 0, 0};
      for (const auto* f : members[cat]) {
        ++row.denominator;
        auto it = f->labels.find(au);
        row.present_count += it != f->labels.end() && it->second;
      }
      t.rows.push_back(row);
    }
  return t;
}

/// Rounded half away from zero to one decimal.
inline double round1(double p) { return std::round(p * 10.0) / 10.0; }

/// Catalogue frames that have at least one annotation, with consolidated labels.
inline std::vector<LabeledFrame> labeled_frames(const AnnotationStore& store) {
  std::vector<LabeledFrame> out;
  for (const auto& f : store.frames())
    if (auto labels = store.consolidated(f.frame_id)) out.push_back({f, std::move(*labels)});
  return out;
}

/// One decimal place, e.g. "37.5"; empty for an undefined percentage.
inline std::string format_percentage(const std::optional<double>& p) {
  if (!p) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", round1(*p));
  return buf;
}

inline std::string association_csv(const AssociationTable& t) {
  std::string out = "au_id,category,present_count,denominator,percentage\n";
  for (const auto& r : t.rows)
    out += std::to_string(r.au_id) + "," + to_string(r.category) + "," + std::to_string(r.present_count) + "," +
           std::to_string(r.denominator) + "," + format_percentage(r.percentage()) + "\n";
  return out;
}

inline void to_json(nlohmann::json& j, const AssociationTable& t) {
  j = nlohmann::json::array();
  for (const auto& r : t.rows) {
    nlohmann::json row{{"au_id", r.au_id},
                       {"category", to_string(r.category)},
                       {"present_count", r.present_count},
                       {"denominator", r.denominator}};
    const auto p = r.percentage();
    row["percentage"] = p ? nlohmann::json(round1(*p)) : nlohmann::json(nullptr);
    j.push_back(row);
  }
}

}  // namespace aupipe
