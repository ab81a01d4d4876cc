#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "aupipe/errors.hpp"

namespace aupipe {

struct AuInfo {
  int id;
  std::string_view description;
};

// FACS action units appearing in any supported dataset.
inline constexpr std::array<AuInfo, 19> kAuCatalog = {{
    {1, "Inner Brow Raiser"},
    {2, "Outer Brow Raiser"},
    {4, "Brow Lowerer"},
    {5, "Upper Lid Raiser"},
    {6, "Cheek Raiser"},
    {7, "Lid Tightener"},
    {9, "Nose wrinkler"},
    {10, "Upper Lip Raiser"},
    {12, "Lip Corner Puller"},
    {14, "Dimpler"},
    {15, "Lip Corner Depressor"},
    {17, "Chin Raiser"},
    {20, "Lip Stretcher"},
    {23, "Lip Funneler"},
    {24, "Lip Pressor"},
    {25, "Lips part"},
    {26, "Jaw Drop"},
    {27, "Mouth Stretch"},
    {43, "Eyes Closed"},
}};

inline std::string_view au_description(int id) {
  for (const auto& au : kAuCatalog)
    if (au.id == id) return au.description;
  throw ValidationError("unknown AU " + std::to_string(id));
}

/// Annotation schema of the ICU dataset.
inline const std::vector<int>& pain_icu_aus() {
  static const std::vector<int> ids{4, 6, 7, 9, 10, 12, 20, 24, 25, 26, 27, 43};
  return ids;
}

inline bool is_pain_icu_au(int id) {
  const auto& ids = pain_icu_aus();
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

/// AU ids predicted by the head for a dataset tag:
///   "BP4D"      12 AUs
///   "DISFAPlus" 12 AUs
///   "PainICU"   the full 12-AU annotation schema
///   "PainICU3"  AUs 25, 26, 43 (the subset with usable prevalence)
inline const std::vector<int>& head_aus(std::string_view tag) {
  static const std::vector<int> bp4d{1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24};
  static const std::vector<int> disfa{1, 2, 4, 5, 6, 9, 12, 15, 17, 20, 25, 26};
  static const std::vector<int> icu3{25, 26, 43};
  if (tag == "BP4D") return bp4d;
  if (tag == "DISFAPlus") return disfa;
  if (tag == "PainICU") return pain_icu_aus();
  if (tag == "PainICU3") return icu3;
  throw ValidationError("unknown dataset tag '" + std::string(tag) + "'");
}

}  // namespace aupipe
