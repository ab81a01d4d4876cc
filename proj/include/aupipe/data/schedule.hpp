#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <string>
#include <vector>

#include "aupipe/data/records.hpp"

namespace aupipe {

struct TimeSpan {
  Timestamp start;
  Timestamp end;
};

/// A recording interval to extract. `reports` indexes the input reports the
/// segment serves; a segment swallowed by an earlier one hands its reports over.
struct Segment {
  std::string patient_id;
  Timestamp start;
  Timestamp end;
  std::vector<std::size_t> reports;

  Duration length() const { return end - start; }
  bool operator==(const Segment&) const = default;
};

struct ScheduleOptions {
  Duration length = std::chrono::minutes(15);
  Duration offset{0};  // segment centre relative to the report time
  Duration radius = std::chrono::minutes(60);
};

/// One segment per report of a single recording, centred on reported_at +
/// offset and clipped to the recording and to the report's +-radius window.
/// Segments are then taken in start order and overlaps trimmed: a segment
/// starts where the previous one ends, and one that is fully covered is
/// dropped, its reports joining the covering segment. Reports whose clipped
/// segment is empty get none.
inline std::vector<Segment> schedule_segments(const std::vector<PainReport>& reports, const TimeSpan& recording,
                                              const ScheduleOptions& opt = {}) {
  if (recording.end < recording.start) throw ValidationError("schedule_segments: recording ends before it starts");
  if (opt.length <= Duration{0} || opt.radius < Duration{0})
    throw ValidationError("schedule_segments: length must be positive and radius non-negative");
  std::vector<Segment> raw;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const auto first = r.reported_at + opt.offset - opt.length / 2;
    const auto start = std::max({first, recording.start, r.reported_at - opt.radius});
    const auto end = std::min({first + opt.length, recording.end, r.reported_at + opt.radius});
    if (end <= start) continue;
    raw.push_back({r.patient_id, start, end, {i}});
  }
  std::stable_sort(raw.begin(), raw.end(), [](const Segment& a, const Segment& b) { return a.start < b.start; });
  std::vector<Segment> out;
  for (auto& s : raw) {
    if (!out.empty() && s.start < out.back().end) {
      if (s.end <= out.back().end) {
        out.back().reports.insert(out.back().reports.end(), s.reports.begin(), s.reports.end());
        continue;
      }
      s.start = out.back().end;
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Frames of the report's patient with |captured_at - reported_at| <= radius,
/// ordered by time then frame id.
inline std::vector<FrameRecord> frames_near_report(const std::vector<FrameRecord>& frames, const PainReport& report,
                                                   Duration radius = std::chrono::minutes(60)) {
  std::vector<FrameRecord> out;
  for (const auto& f : frames) {
    if (f.patient_id != report.patient_id) continue;
    const auto gap = f.captured_at - report.reported_at;
    if (gap <= radius && -gap <= radius) out.push_back(f);
  }
  std::sort(out.begin(), out.end(), [](const FrameRecord& a, const FrameRecord& b) {
    return a.captured_at != b.captured_at ? a.captured_at < b.captured_at : a.frame_id < b.frame_id;
  });
  return out;
}

/// Frames falling inside any of the segments of their patient, in time order.
inline std::vector<FrameRecord> frames_in_segments(const std::vector<FrameRecord>& frames,
                                                   const std::vector<Segment>& segments) {
  std::vector<FrameRecord> out;
  for (const auto& f : frames)
    for (const auto& s : segments)
      if (s.patient_id == f.patient_id && f.captured_at >= s.start && f.captured_at <= s.end) {
        out.push_back(f);
        break;
      }
  std::sort(out.begin(), out.end(), [](const FrameRecord& a, const FrameRecord& b) {
    return a.captured_at != b.captured_at ? a.captured_at < b.captured_at : a.frame_id < b.frame_id;
  });
  return out;
}

/// Recording span of each patient, from the first to the last frame.
inline std::map<std::string, TimeSpan> recording_spans(const std::vector<FrameRecord>& frames) {
  std::map<std::string, TimeSpan> out;
  for (const auto& f : frames) {
    auto [it, fresh] = out.try_emplace(f.patient_id, TimeSpan{f.captured_at, f.captured_at});
    if (!fresh) {
      it->second.start = std::min(it->second.start, f.captured_at);
      it->second.end = std::max(it->second.end, f.captured_at);
    }
  }
  return out;
}

/// Schedules every patient's reports against that patient's recording span;
/// reports of patients without frames are skipped. Report indices refer to
/// the input list.
inline std::vector<Segment> schedule_all(const std::vector<PainReport>& reports,
                                         const std::map<std::string, TimeSpan>& spans, const ScheduleOptions& opt = {}) {
  std::map<std::string, std::vector<std::size_t>> by_patient;
  for (std::size_t i = 0; i < reports.size(); ++i) by_patient[reports[i].patient_id].push_back(i);
  std::vector<Segment> out;
  for (const auto& [patient, idx] : by_patient) {
    auto span = spans.find(patient);
    if (span == spans.end()) continue;
    std::vector<PainReport> mine;
    for (auto i : idx) mine.push_back(reports[i]);
    for (auto s : schedule_segments(mine, span->second, opt)) {
      for (auto& r : s.reports) r = idx[r];
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace aupipe
