#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "aupipe/data/records.hpp"
#include "aupipe/random.hpp"

namespace aupipe {

struct DatasetSplit {
  std::vector<std::string> train;  // sorted
  std::vector<std::string> test;   // sorted
  std::uint64_t seed = 0;
  double ratio = 0.7;

  bool in_train(const std::string& patient) const { return std::binary_search(train.begin(), train.end(), patient); }
  bool in_test(const std::string& patient) const { return std::binary_search(test.begin(), test.end(), patient); }
};

/// Number of training patients: ratio * n rounded half up, kept within
/// [1, n - 1]. The small epsilon absorbs binary representation error so
/// that e.g. 0.7 * 5 = 3.5 rounds to 4.
inline std::size_t train_count(std::size_t n, double ratio) {
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5 + 1e-9));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

/// Patient-wise split: the distinct ids are sorted, shuffled by `seed`, and
/// the first train_count(n, ratio) go to training.
inline DatasetSplit split_by_patient(std::vector<std::string> patient_ids, double ratio = 0.7, std::uint64_t seed = 0) {
  std::sort(patient_ids.begin(), patient_ids.end());
  patient_ids.erase(std::unique(patient_ids.begin(), patient_ids.end()), patient_ids.end());
  if (patient_ids.size() < 2) throw ValidationError("split_by_patient: need at least 2 patients");
  if (!(ratio > 0 && ratio < 1)) throw ValidationError("split_by_patient: ratio must lie in (0, 1)");
  std::mt19937_64 rng(seed);
  stable_shuffle(patient_ids, rng);
  const auto k = train_count(patient_ids.size(), ratio);
  DatasetSplit s;
  s.seed = seed;
  s.ratio = ratio;
  s.train.assign(patient_ids.begin(), patient_ids.begin() + static_cast<std::ptrdiff_t>(k));
  s.test.assign(patient_ids.begin() + static_cast<std::ptrdiff_t>(k), patient_ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

inline std::vector<std::string> patients_of(const std::vector<FrameRecord>& frames) {
  std::set<std::string> ids;
  for (const auto& f : frames) ids.insert(f.patient_id);
  return {ids.begin(), ids.end()};
}

/// Frames whose patient is in the requested side of the split.
inline std::vector<FrameRecord> frames_for(const std::vector<FrameRecord>& frames, const DatasetSplit& split,
                                           bool train_side) {
  std::vector<FrameRecord> out;
  for (const auto& f : frames)
    if (train_side ? split.in_train(f.patient_id) : split.in_test(f.patient_id)) out.push_back(f);
  return out;
}

/// Throws unless the split is a partition of the frames' patients and no
/// patient contributes frames to both sides.
inline void check_no_leakage(const DatasetSplit& split, const std::vector<FrameRecord>& frames) {
  std::set<std::string> train_patients, test_patients;
  for (const auto& f : frames) {
    const bool a = split.in_train(f.patient_id), b = split.in_test(f.patient_id);
    if (a == b)
      throw ValidationError("patient '" + f.patient_id + (a ? "' is on both sides of the split" : "' is in neither split"));
    (a ? train_patients : test_patients).insert(f.patient_id);
  }
  for (const auto& p : train_patients)
    if (test_patients.count(p)) throw ValidationError("patient '" + p + "' leaks between train and test frames");
}

inline void to_json(nlohmann::json& j, const DatasetSplit& s) {
  j = {{"train", s.train}, {"test", s.test}, {"seed", s.seed}, {"ratio", s.ratio}};
}

}  // namespace aupipe
