#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "aupipe/csv.hpp"
#include "aupipe/data/time.hpp"

namespace aupipe {

enum class LandmarkStatus { unknown, ok, missing };

struct FrameRecord {
  std::string frame_id;
  std::string patient_id;
  Timestamp captured_at;
  std::filesystem::path image_path;
  LandmarkStatus landmarks = LandmarkStatus::unknown;

  bool operator==(const FrameRecord&) const = default;
};

struct PainReport {
  std::string patient_id;
  Timestamp reported_at;
  int dvprs = 0;

  bool operator==(const PainReport&) const = default;
};

/// Manifest CSV: frame_id,patient_id,captured_at,image_path. Relative image
/// paths resolve against the manifest's directory. Frame ids must be unique.
inline std::vector<FrameRecord> read_manifest(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  const auto c_id = t.column("frame_id"), c_patient = t.column("patient_id"), c_time = t.column("captured_at"),
             c_image = t.column("image_path");
  std::vector<FrameRecord> out;
  std::set<std::string> seen;
  for (const auto& row : t.rows) {
    FrameRecord f;
    f.frame_id = row[c_id];
    f.patient_id = row[c_patient];
    if (f.frame_id.empty() || f.patient_id.empty()) throw ValidationError(path.string() + ": empty frame or patient id");
    if (!seen.insert(f.frame_id).second) throw ValidationError(path.string() + ": duplicate frame_id '" + f.frame_id + "'");
    f.captured_at = parse_time(row[c_time]);
    f.image_path = row[c_image];
    if (f.image_path.is_relative()) f.image_path = path.parent_path() / f.image_path;
    out.push_back(std::move(f));
  }
  return out;
}

/// Image paths are written relative to the manifest's directory, so that
/// reading the file back yields the same locations.
inline void write_manifest(const std::filesystem::path& path, const std::vector<FrameRecord>& frames) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const auto base = std::filesystem::absolute(path).parent_path();
  out << "frame_id,patient_id,captured_at,image_path\n";
  for (const auto& f : frames) {
    auto image = f.image_path;
    if (!image.empty()) image = std::filesystem::absolute(image).lexically_normal().lexically_relative(base);
    out << csv::quote(f.frame_id) << ',' << csv::quote(f.patient_id) << ',' << format_time(f.captured_at) << ','
        << csv::quote(image.generic_string()) << '\n';
  }
}

inline void validate_report(const PainReport& r) {
  if (r.dvprs < 0 || r.dvprs > 10)
    throw ValidationError("DVPRS score " + std::to_string(r.dvprs) + " outside 0..10 for patient " + r.patient_id);
}

/// Pain report CSV: patient_id,reported_at,dvprs.
inline std::vector<PainReport> read_reports(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  const auto c_patient = t.column("patient_id"), c_time = t.column("reported_at"), c_score = t.column("dvprs");
  std::vector<PainReport> out;
  for (const auto& row : t.rows) {
    PainReport r{row[c_patient], parse_time(row[c_time]), static_cast<int>(csv::to_long(row[c_score], "dvprs"))};
    validate_report(r);
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_reports(const std::filesystem::path& path, const std::vector<PainReport>& reports) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "patient_id,reported_at,dvprs\n";
  for (const auto& r : reports) out << csv::quote(r.patient_id) << ',' << format_time(r.reported_at) << ',' << r.dvprs << '\n';
}

}  // namespace aupipe
