#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "json.hpp"

#include "aupipe/errors.hpp"

namespace aupipe {

/// Binary confusion tallies for one AU.
struct ConfusionCounter {
  int au_id = 0;
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }

  /// Predicted present iff prob > threshold.
  void update(double prob, int truth, double threshold = 0.5) {
    if (!(prob >= 0.0 && prob <= 1.0)) throw ValidationError("probability out of [0, 1]");
    if (truth != 0 && truth != 1) throw ValidationError("truth must be 0 or 1");
    const bool predicted = prob > threshold;
    if (predicted) {
      truth ? ++tp : ++fp;
    } else {
      truth ? ++fn : ++tn;
    }
  }

  bool operator==(const ConfusionCounter&) const = default;
};

inline ConfusionCounter merge(const ConfusionCounter& a, const ConfusionCounter& b) {
  if (a.au_id != b.au_id)
    throw ValidationError("cannot merge counters of AU " + std::to_string(a.au_id) + " and AU " +
                          std::to_string(b.au_id));
  return {a.au_id, a.tp + b.tp, a.fp + b.fp, a.fn + b.fn, a.tn + b.tn};
}

/// Elementwise merge of two per-AU counter lists with matching AU order.
inline std::vector<ConfusionCounter> merge(const std::vector<ConfusionCounter>& a,
                                           const std::vector<ConfusionCounter>& b) {
  if (a.size() != b.size()) throw ValidationError("counter lists differ in length");
  std::vector<ConfusionCounter> out;
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(merge(a[i], b[i]));
  return out;
}

inline std::vector<ConfusionCounter> make_counters(const std::vector<int>& au_ids) {
  std::vector<ConfusionCounter> out;
  for (int id : au_ids) out.push_back({id});
  return out;
}

/// 2tp / (2tp + fp + fn); 0 when nothing was predicted or present.
inline double f1(const ConfusionCounter& c) {
  const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 0.0 : static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

inline double accuracy(const ConfusionCounter& c) {
  if (c.total() == 0) throw ValidationError("accuracy of AU " + std::to_string(c.au_id) + ": no samples");
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

struct AuScore {
  int au_id = 0;
  double f1 = 0;
  double accuracy = 0;
  ConfusionCounter counts;
};

struct EvalReport {
  std::vector<AuScore> rows;
  double macro_f1 = 0;
  double macro_accuracy = 0;
  double threshold = 0.5;
  std::uint64_t samples = 0;
};

/// Macro averages are taken over unrounded per-AU values.
inline EvalReport make_report(const std::vector<ConfusionCounter>& counters, double threshold = 0.5) {
  if (counters.empty()) throw ValidationError("report needs at least one AU");
  EvalReport r;
  r.threshold = threshold;
  for (const auto& c : counters) {
    r.rows.push_back({c.au_id, f1(c), accuracy(c), c});
    r.macro_f1 += r.rows.back().f1;
    r.macro_accuracy += r.rows.back().accuracy;
    r.samples = std::max(r.samples, c.total());
  }
  r.macro_f1 /= static_cast<double>(counters.size());
  r.macro_accuracy /= static_cast<double>(counters.size());
  return r;
}

/// Report from already-computed per-AU scores (e.g. published tables).
inline EvalReport make_report(const std::vector<int>& au_ids, const std::vector<double>& f1s,
                              const std::vector<double>& accuracies) {
  if (au_ids.empty() || f1s.size() != au_ids.size() || accuracies.size() != au_ids.size())
    throw ValidationError("score lists must be non-empty and of equal length");
  EvalReport r;
  for (std::size_t i = 0; i < au_ids.size(); ++i) {
    r.rows.push_back({au_ids[i], f1s[i], accuracies[i], {au_ids[i]}});
    r.macro_f1 += f1s[i];
    r.macro_accuracy += accuracies[i];
  }
  r.macro_f1 /= static_cast<double>(au_ids.size());
  r.macro_accuracy /= static_cast<double>(au_ids.size());
  return r;
}

inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

/// Plain-text table: one row per AU, then the average row.
///   AU    F1    Accuracy
///   25    0.91  0.88
inline std::string render_table(const EvalReport& r) {
  std::string out = "AU    F1    Accuracy\n";
  char line[64];
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof line, "%-5d %-5s %s\n", row.au_id, fixed2(row.f1).c_str(),
                  fixed2(row.accuracy).c_str());
    out += line;
  }
  std::snprintf(line, sizeof line, "%-5s %-5s %s\n", "Avg", fixed2(r.macro_f1).c_str(),
                fixed2(r.macro_accuracy).c_str());
  return out + line;
}

inline void to_json(nlohmann::json& j, const ConfusionCounter& c) {
  j = {{"au_id", c.au_id}, {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

inline void from_json(const nlohmann::json& j, ConfusionCounter& c) {
  c.au_id = j.at("au_id").get<int>();
  c.tp = j.at("tp").get<std::uint64_t>();
  c.fp = j.at("fp").get<std::uint64_t>();
  c.fn = j.at("fn").get<std::uint64_t>();
  c.tn = j.at("tn").get<std::uint64_t>();
}

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json::object();
  j["threshold"] = r.threshold;
  j["samples"] = r.samples;
  j["macro_f1"] = r.macro_f1;
  j["macro_accuracy"] = r.macro_accuracy;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows)
    j["rows"].push_back({{"au_id", row.au_id}, {"f1", row.f1}, {"accuracy", row.accuracy}, {"counts", row.counts}});
}

inline void from_json(const nlohmann::json& j, EvalReport& r) {
  r.threshold = j.at("threshold").get<double>();
  r.samples = j.at("samples").get<std::uint64_t>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.macro_accuracy = j.at("macro_accuracy").get<double>();
  r.rows.clear();
  for (const auto& row : j.at("rows"))
    r.rows.push_back({row.at("au_id").get<int>(), row.at("f1").get<double>(), row.at("accuracy").get<double>(),
                      row.at("counts").get<ConfusionCounter>()});
}

}  // namespace aupipe
