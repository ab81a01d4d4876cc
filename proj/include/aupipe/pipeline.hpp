#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "toml.hpp"

#include "aupipe/alignment_cache.hpp"
#include "aupipe/analytics/pain.hpp"
#include "aupipe/csv.hpp"
#include "aupipe/data/schedule.hpp"
#include "aupipe/data/split.hpp"
#include "aupipe/data/store.hpp"
#include "aupipe/synthetic.hpp"
#include "aupipe/train/checkpoint.hpp"
#include "aupipe/train/trainer.hpp"

namespace aupipe {

namespace fs = std::filesystem;

struct PathsConfig {
  fs::path manifest, landmarks, annotations, reports, checkpoints, output;
};

struct DataConfig {
  double split_ratio = 0.7;
  std::uint64_t split_seed = 0;
  std::uint64_t init_seed = 0;
};

struct ScheduleConfig {
  std::int64_t length_minutes = 15;
  std::int64_t offset_minutes = 0;
  std::int64_t radius_minutes = 60;

  ScheduleOptions options() const {
    if (length_minutes <= 0 || radius_minutes <= 0)
      throw ValidationError("schedule: length_minutes and radius_minutes must be positive");
    ScheduleOptions o;
    o.length = std::chrono::minutes(length_minutes);
    o.offset = std::chrono::minutes(offset_minutes);
    o.radius = std::chrono::minutes(radius_minutes);
    return o;
  }
};

struct CacheConfig {
  bool enabled = true;
  fs::path path;  // empty: <output>/alignment.cache
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  bool cors = true;
  fs::path static_dir;
  std::string assignment = "id";  // or "random"
  std::uint64_t assignment_seed = 0;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  PathsConfig paths;
  DataConfig data;
  ScheduleConfig schedule;
  CacheConfig cache;
  ServerConfig server;

  fs::path cache_path() const { return cache.path.empty() ? paths.output / "alignment.cache" : cache.path; }
  fs::path log_path() const { return paths.output / "train_log.jsonl"; }
  fs::path metrics_path() const { return paths.output / "eval_report.json"; }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& section) {
  if (!j.is_object()) throw ValidationError("config: [" + section + "] must be a table");
  for (const auto& [k, _] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ValidationError("config: unknown key '" + section + "." + k + "'");
}

inline fs::path path_value(const nlohmann::json& j, const char* key, const fs::path& fallback) {
  return j.contains(key) ? fs::path(j.at(key).get<std::string>()) : fallback;
}

inline nlohmann::json toml_to_json(const toml::node& node) {
  if (auto* t = node.as_table()) {
    auto out = nlohmann::json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = toml_to_json(v);
    return out;
  }
  if (auto* a = node.as_array()) {
    auto out = nlohmann::json::array();
    for (const auto& v : *a) out.push_back(toml_to_json(v));
    return out;
  }
  if (auto v = node.value<bool>(); v && node.is_boolean()) return *v;
  if (node.is_integer()) return *node.value<std::int64_t>();
  if (node.is_floating_point()) return *node.value<double>();
  if (node.is_string()) return *node.value<std::string>();
  throw ValidationError("config: dates and times are not supported as values");
}

// Parses the right-hand side of --set with TOML value syntax; anything that
// is not a valid TOML value is taken as a bare string.
inline nlohmann::json override_value(const std::string& text) {
  try {
    auto doc = toml::parse("v = " + text);
    return toml_to_json(*doc.get("v"));
  } catch (const toml::parse_error&) {
    return text;
  }
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{
      {"model", c.model},
      {"train", c.train},
      {"paths",
       {{"manifest", c.paths.manifest.string()},
        {"landmarks", c.paths.landmarks.string()},
        {"annotations", c.paths.annotations.string()},
        {"reports", c.paths.reports.string()},
        {"checkpoints", c.paths.checkpoints.string()},
        {"output", c.paths.output.string()}}},
      {"data", {{"split_ratio", c.data.split_ratio}, {"split_seed", c.data.split_seed}, {"init_seed", c.data.init_seed}}},
      {"schedule",
       {{"length_minutes", c.schedule.length_minutes},
        {"offset_minutes", c.schedule.offset_minutes},
        {"radius_minutes", c.schedule.radius_minutes}}},
      {"cache", {{"enabled", c.cache.enabled}, {"path", c.cache.path.string()}}},
      {"server",
       {{"host", c.server.host},
        {"port", c.server.port},
        {"cors", c.server.cors},
        {"static_dir", c.server.static_dir.string()},
        {"assignment", c.server.assignment},
        {"assignment_seed", c.server.assignment_seed}}}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  using detail::path_value;
  detail::reject_unknown(j, {"model", "train", "paths", "data", "schedule", "cache", "server"}, "config");
  const auto section = [&](const char* name) { return j.contains(name) ? j.at(name) : nlohmann::json::object(); };
  c = RunConfig{};
  c.model = section("model").get<ModelConfig>();
  c.train = section("train").get<TrainConfig>();

  const auto p = section("paths");
  detail::reject_unknown(p, {"manifest", "landmarks", "annotations", "reports", "checkpoints", "output"}, "paths");
  c.paths.manifest = path_value(p, "manifest", {});
  c.paths.landmarks = path_value(p, "landmarks", {});
  c.paths.annotations = path_value(p, "annotations", {});
  c.paths.reports = path_value(p, "reports", {});
  c.paths.checkpoints = path_value(p, "checkpoints", "checkpoints");
  c.paths.output = path_value(p, "output", "out");

  const auto d = section("data");
  detail::reject_unknown(d, {"split_ratio", "split_seed", "init_seed"}, "data");
  c.data.split_ratio = d.value("split_ratio", c.data.split_ratio);
  c.data.split_seed = d.value("split_seed", c.data.split_seed);
  c.data.init_seed = d.value("init_seed", c.data.init_seed);

  const auto s = section("schedule");
  detail::reject_unknown(s, {"length_minutes", "offset_minutes", "radius_minutes"}, "schedule");
  c.schedule.length_minutes = s.value("length_minutes", c.schedule.length_minutes);
  c.schedule.offset_minutes = s.value("offset_minutes", c.schedule.offset_minutes);
  c.schedule.radius_minutes = s.value("radius_minutes", c.schedule.radius_minutes);

  const auto k = section("cache");
  detail::reject_unknown(k, {"enabled", "path"}, "cache");
  c.cache.enabled = k.value("enabled", c.cache.enabled);
  c.cache.path = path_value(k, "path", {});

  const auto v = section("server");
  detail::reject_unknown(v, {"host", "port", "cors", "static_dir", "assignment", "assignment_seed"}, "server");
  c.server.host = v.value("host", c.server.host);
  c.server.port = v.value("port", c.server.port);
  c.server.cors = v.value("cors", c.server.cors);
  c.server.static_dir = path_value(v, "static_dir", {});
  c.server.assignment = v.value("assignment", c.server.assignment);
  c.server.assignment_seed = v.value("assignment_seed", c.server.assignment_seed);

  c.model.validate();
  c.train.validate();
  if (!(c.data.split_ratio > 0 && c.data.split_ratio < 1)) throw ValidationError("config: data.split_ratio must lie in (0, 1)");
  if (c.server.port < 0 || c.server.port > 65535) throw ValidationError("config: server.port out of range");
  if (c.server.assignment != "id" && c.server.assignment != "random")
    throw ValidationError("config: server.assignment must be \"id\" or \"random\"");
}

/// Applies "section.key=value" overrides to a config document.
inline void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq || dot == 0 || dot + 1 == eq)
      throw ValidationError("override '" + o + "' is not of the form section.key=value");
    doc[o.substr(0, dot)][o.substr(dot + 1, eq - dot - 1)] = detail::override_value(o.substr(eq + 1));
  }
}

/// Defaults, then the TOML file (relative paths resolve against its
/// directory), then overrides (relative paths resolve against the working
/// directory).
inline RunConfig load_run_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides = {}) {
  nlohmann::json doc = nlohmann::json::object();
  if (file) {
    if (!fs::exists(*file)) throw NotFoundError("config file " + file->string() + " does not exist");
    try {
      doc = detail::toml_to_json(toml::parse_file(file->string()));
    } catch (const toml::parse_error& e) {
      std::ostringstream msg;
      msg << file->string() << ":" << e.source().begin.line << ": " << e.description();
      throw ValidationError(msg.str());
    }
    const auto base = fs::absolute(*file).parent_path();
    const auto anchor = [&](const char* section, const char* key) {
      if (doc.contains(section) && doc[section].is_object() && doc[section].contains(key) &&
          doc[section][key].is_string()) {
        fs::path p = doc[section][key].get<std::string>();
        if (!p.empty() && p.is_relative()) doc[section][key] = (base / p).lexically_normal().string();
      }
    };
    for (const char* key : {"manifest", "landmarks", "annotations", "reports", "checkpoints", "output"})
      anchor("paths", key);
    anchor("cache", "path");
    anchor("server", "static_dir");
    if (!doc.contains("paths") || !doc["paths"].contains("checkpoints")) doc["paths"]["checkpoints"] = (base / "checkpoints").string();
    if (!doc["paths"].contains("output")) doc["paths"]["output"] = (base / "out").string();
  }
  apply_overrides(doc, overrides);
  try {
    return doc.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

/// Fails before any work when a required input is unset or missing.
inline void require_inputs(const std::vector<std::pair<std::string, fs::path>>& inputs) {
  for (const auto& [name, p] : inputs) {
    if (p.empty()) throw ValidationError(name + " is not set");
    if (!fs::exists(p)) throw NotFoundError(name + " " + p.string() + " does not exist");
  }
}

// ---------------------------------------------------------------- sample

struct SampleResult {
  std::vector<Segment> segments;
  std::vector<FrameRecord> frames;
};

inline SampleResult run_sample(const std::vector<FrameRecord>& frames, const std::vector<PainReport>& reports,
                               const ScheduleOptions& opt) {
  SampleResult r;
  r.segments = schedule_all(reports, recording_spans(frames), opt);
  r.frames = frames_in_segments(frames, r.segments);
  return r;
}

inline void write_segments(const fs::path& path, const std::vector<Segment>& segments,
                           const std::vector<PainReport>& reports) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "patient_id,start,end,reported_at,dvprs\n";
  for (const auto& s : segments) {
    std::string at, scores;
    for (auto i : s.reports) {
      at += (at.empty() ? "" : ";") + format_time(reports[i].reported_at);
      scores += (scores.empty() ? "" : ";") + std::to_string(reports[i].dvprs);
    }
    out << csv::quote(s.patient_id) << ',' << format_time(s.start) << ',' << format_time(s.end) << ',' << at << ','
        << scores << '\n';
  }
}

// ----------------------------------------------------------------- align

inline std::map<std::string, LandmarkSet> landmark_index(const std::vector<LandmarkSet>& sets) {
  std::map<std::string, LandmarkSet> out;
  for (const auto& s : sets)
    if (!out.emplace(s.frame_id, s).second) throw ValidationError("duplicate landmarks for frame '" + s.frame_id + "'");
  return out;
}

/// Aligned out_size crop of a frame, or nothing when the frame has no
/// landmarks. Cache entries are only valid for one crop size.
inline std::optional<Image> aligned_crop(const FrameRecord& frame, const std::map<std::string, LandmarkSet>& landmarks,
                                         std::size_t out_size, AlignmentCache* cache) {
  auto it = landmarks.find(frame.frame_id);
  if (it == landmarks.end()) return std::nullopt;
  const auto tmpl = CanonicalTemplate::standard().scaled_to(out_size);
  const auto t = cache ? cached_transform(*cache, it->second, tmpl) : estimate_similarity(it->second, tmpl);
  return warp_crop(read_image(frame.image_path), t, out_size);
}

struct AlignResult {
  std::vector<FrameRecord> aligned;  // rewritten to point at the crops
  std::vector<std::string> missing;  // frames without landmarks
};

/// Writes <out_dir>/<frame_id>.png per frame with landmarks, plus
/// <out_dir>/manifest.csv over the crops.
inline AlignResult run_align(const std::vector<FrameRecord>& frames, const std::map<std::string, LandmarkSet>& landmarks,
                             std::size_t out_size, AlignmentCache* cache, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  AlignResult r;
  for (const auto& f : frames) {
    auto crop = aligned_crop(f, landmarks, out_size, cache);
    if (!crop) {
      r.missing.push_back(f.frame_id);
      continue;
    }
    auto rec = f;
    rec.image_path = out_dir / (f.frame_id + ".png");
    rec.landmarks = LandmarkStatus::ok;
    write_image(rec.image_path, *crop);
    r.aligned.push_back(std::move(rec));
  }
  write_manifest(out_dir / "manifest.csv", r.aligned);
  return r;
}

// ------------------------------------------------------------ train/eval

/// Bilinear resize to size x size with pixel-centre alignment and edge
/// clamping; returns the image untouched when it already fits.
inline Image fit_square(const Image& img, std::size_t size) {
  if (img.width == size && img.height == size) return img;
  if (img.width != img.height)
    throw ShapeError("image is not square: " + std::to_string(img.width) + "x" + std::to_string(img.height));
  if (img.width == 0 || size == 0) throw ShapeError("fit_square: empty image");
  const double k = static_cast<double>(img.width) / static_cast<double>(size);
  const double max = static_cast<double>(img.width - 1);
  Image out(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double sx = std::clamp((static_cast<double>(x) + 0.5) * k - 0.5, 0.0, max);
      const double sy = std::clamp((static_cast<double>(y) + 0.5) * k - 0.5, 0.0, max);
      const auto x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
      const auto x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = img.at(x0, y0, c) * (1 - fx) + img.at(x1, y0, c) * fx;
        const double bot = img.at(x0, y1, c) * (1 - fx) + img.at(x1, y1, c) * fx;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(top * (1 - fy) + bot * fy + 0.5), 0.0, 255.0));
      }
    }
  return out;
}

struct Dataset {
  std::vector<FrameRecord> frames;  // frames with landmarks
  std::map<std::string, Sample> samples;
  std::vector<std::string> skipped;  // no landmarks
};

/// Aligned, normalized frames with consolidated labels over the head AUs.
inline Dataset build_dataset(const std::vector<FrameRecord>& frames, const std::map<std::string, LandmarkSet>& landmarks,
                             const AnnotationStore& store, const ModelConfig& cfg, AlignmentCache* cache) {
  Dataset d;
  std::vector<std::string> ids;
  std::vector<Image> crops;
  for (const auto& f : frames) {
    auto crop = aligned_crop(f, landmarks, cfg.input_size, cache);
    if (!crop) {
      d.skipped.push_back(f.frame_id);
      continue;
    }
    d.frames.push_back(f);
    ids.push_back(f.frame_id);
    crops.push_back(std::move(*crop));
  }
  const auto labels = store.query_labels(ids, head_aus(cfg.head));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Sample s{ids[i], normalize(crops[i]), {}, labels.mask[i]};
    if (s.annotated) s.labels = labels.row(i);
    d.samples.emplace(ids[i], std::move(s));
  }
  return d;
}

inline std::vector<Sample> samples_for(const Dataset& d, const std::vector<FrameRecord>& frames) {
  std::vector<Sample> out;
  for (const auto& f : frames) out.push_back(d.samples.at(f.frame_id));
  return out;
}

struct PreparedData {
  Dataset dataset;
  DatasetSplit split;
  std::vector<Sample> train, test;
};

inline PreparedData prepare_data(const RunConfig& rc) {
  require_inputs({{"paths.manifest", rc.paths.manifest}, {"paths.landmarks", rc.paths.landmarks}});
  if (rc.paths.annotations.empty()) throw ValidationError("paths.annotations is not set");
  const auto frames = read_manifest(rc.paths.manifest);
  const auto landmarks = landmark_index(read_landmarks(rc.paths.landmarks));
  AnnotationStore store(frames, rc.paths.annotations);
  std::optional<AlignmentCache> cache;
  if (rc.cache.enabled) {
    fs::create_directories(rc.cache_path().parent_path());
    cache.emplace(rc.cache_path());
  }
  PreparedData p;
  p.dataset = build_dataset(frames, landmarks, store, rc.model, cache ? &*cache : nullptr);
  p.split = split_by_patient(patients_of(p.dataset.frames), rc.data.split_ratio, rc.data.split_seed);
  check_no_leakage(p.split, p.dataset.frames);
  p.train = samples_for(p.dataset, frames_for(p.dataset.frames, p.split, true));
  p.test = samples_for(p.dataset, frames_for(p.dataset.frames, p.split, false));
  return p;
}

inline std::string epoch_file(std::uint64_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03llu.ckpt", static_cast<unsigned long long>(epoch));
  return buf;
}

struct TrainRun {
  std::vector<EpochMetrics> epochs;
  DatasetSplit split;
  std::size_t train_frames = 0, test_frames = 0, skipped_frames = 0;
};

/// Trains from the run config. Writes <checkpoints>/epoch_NNN.ckpt and
/// latest.ckpt after every epoch, the JSON-lines log to <output>, and the
/// patient split to <output>/split.json. With `resume`, continues from
/// latest.ckpt when it exists.
inline TrainRun run_train(const RunConfig& rc, bool resume = false) {
  auto data = prepare_data(rc);
  if (data.train.empty()) throw ValidationError("no training frames");
  fs::create_directories(rc.paths.checkpoints);
  fs::create_directories(rc.paths.output);
  std::ofstream(rc.paths.output / "split.json") << nlohmann::json(data.split).dump(2) << '\n';

  TrainState st;
  const auto latest = rc.paths.checkpoints / "latest.ckpt";
  if (resume && fs::exists(latest)) {
    auto ck = load_checkpoint(latest, &rc.model);
    st.params = std::move(ck.params);
    st.adam = std::move(ck.adam);
    st.epochs_done = ck.epochs_done;
  } else {
    st.params = init_parameters(rc.model, rc.data.init_seed);
  }
  std::ofstream log(rc.log_path(), resume ? std::ios::app : std::ios::trunc);
  if (!log) throw Error("cannot write " + rc.log_path().string());
  const auto save = [&](const TrainState& s, const EpochMetrics&) {
    Checkpoint ck{rc.model, s.params, rc.train.digest(), s.epochs_done, s.adam, true};
    save_checkpoint(rc.paths.checkpoints / epoch_file(s.epochs_done), ck);
    save_checkpoint(latest, ck);
  };
  TrainRun r;
  r.epochs = train(st, rc.model, rc.train, data.train, &data.test, &log, save);
  r.split = data.split;
  r.train_frames = data.train.size();
  r.test_frames = data.test.size();
  r.skipped_frames = data.dataset.skipped.size();
  return r;
}

/// Writes <output>/eval_report.json and eval_report.txt.
inline void write_eval_report(const fs::path& out_dir, const EvalReport& report) {
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "eval_report.json") << nlohmann::json(report).dump(2) << '\n';
  std::ofstream(out_dir / "eval_report.txt") << render_table(report);
}

/// Evaluates a checkpoint on one side of the configured patient split
/// ("train", "test" or "all").
inline EvalReport run_eval(const RunConfig& rc, const fs::path& checkpoint, const std::string& side) {
  if (side != "train" && side != "test" && side != "all")
    throw ValidationError("split must be train, test or all, not '" + side + "'");
  require_inputs({{"checkpoint", checkpoint}});
  auto ck = load_checkpoint(checkpoint);
  auto rc2 = rc;
  rc2.model = ck.model;
  auto data = prepare_data(rc2);
  std::vector<Sample> samples = side == "train" ? data.train : data.test;
  if (side == "all") samples.insert(samples.end(), data.train.begin(), data.train.end());
  return evaluate(ck.params, ck.model, samples, rc.train.threshold);
}

/// Evaluation over stored predictions. One JSON object per line:
/// {"frame_id": ..., "probabilities": {"25": p, ...}, "labels": {"25": 0|1, ...}}.
/// The AU set is taken from the first line and every line must match it.
inline EvalReport eval_predictions(std::istream& in, double threshold = 0.5) {
  std::vector<ConfusionCounter> counters;
  std::vector<int> aus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto where = "predictions line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("probabilities") || !j.contains("labels") || !j["probabilities"].is_object() ||
        !j["labels"].is_object())
      throw ValidationError(where + ": needs probabilities and labels objects");
    std::vector<int> here;
    for (const auto& [k, _] : j["probabilities"].items()) here.push_back(std::stoi(k));
    std::sort(here.begin(), here.end());
    if (counters.empty()) {
      aus = here;
      counters = make_counters(aus);
    }
    if (here != aus) throw ValidationError(where + ": AU set differs from the first line");
    for (std::size_t i = 0; i < aus.size(); ++i) {
      const auto key = std::to_string(aus[i]);
      if (!j["labels"].contains(key)) throw ValidationError(where + ": missing label for AU " + key);
      const auto& p = j["probabilities"][key];
      const auto& t = j["labels"][key];
      if (!p.is_number() || !(t.is_number_integer() || t.is_boolean()))
        throw ValidationError(where + ": AU " + key + " has a non-numeric value");
      const int truth = t.is_boolean() ? t.get<bool>() : t.get<int>();
      if (truth != 0 && truth != 1) throw ValidationError(where + ": label for AU " + key + " must be 0 or 1");
      counters[i].update(p.get<double>(), truth, threshold);
    }
  }
  if (counters.empty()) throw ValidationError("predictions: no rows");
  return make_report(counters, threshold);
}

// ----------------------------------------------------------------- infer

/// Intensity CSV: frame_id,au4,au6,au7,au9,au10,au43.
inline std::map<std::string, IntensityVector> read_intensities(const fs::path& path) {
  auto t = csv::read(path);
  const std::vector<std::string> cols{"au4", "au6", "au7", "au9", "au10", "au43"};
  const auto id_col = t.column("frame_id");
  std::map<std::string, IntensityVector> out;
  for (const auto& row : t.rows) {
    IntensityVector v;
    for (std::size_t k = 0; k < cols.size(); ++k)
      v[kPspiAus[k]] = static_cast<int>(csv::to_long(row[t.column(cols[k])], cols[k]));
    validate_intensities(v);
    if (!out.emplace(row[id_col], v).second) throw ValidationError("duplicate intensities for frame '" + row[id_col] + "'");
  }
  return out;
}

/// Image files (.png, .ppm) of a directory, by file name.
inline std::vector<fs::path> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw NotFoundError("frames directory " + dir.string() + " does not exist");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".png" || ext == ".ppm")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// One JSON line per frame of `dir` (already aligned crops, resized to the
/// model input): {"frame_id", "probabilities": {"<au>": p}, "pspi"?}.
inline std::size_t run_infer(const Checkpoint& ck, const fs::path& dir,
                             const std::map<std::string, IntensityVector>* intensities, std::ostream& out) {
  const auto& aus = head_aus(ck.model.head);
  std::size_t n = 0;
  for (const auto& path : list_frames(dir)) {
    const auto id = path.stem().string();
    const auto probs = predict_probabilities(normalize(fit_square(read_image(path), ck.model.input_size)), ck.params, ck.model);
    nlohmann::json p = nlohmann::json::object();
    for (std::size_t i = 0; i < aus.size(); ++i) {
      if (!std::isfinite(probs[i])) throw NumericError("non-finite probability for frame '" + id + "'");
      p[std::to_string(aus[i])] = probs[i];
    }
    nlohmann::json row{{"frame_id", id}, {"probabilities", p}};
    if (intensities) {
      auto it = intensities->find(id);
      row["pspi"] = it == intensities->end() ? nlohmann::json(nullptr) : nlohmann::json(pspi(it->second));
    }
    out << row.dump() << '\n';
    ++n;
  }
  return n;
}

// --------------------------------------------------------------- analyze

inline AssociationTable run_analyze(const fs::path& manifest, const fs::path& journal, const fs::path& reports,
                                    const AssociationOptions& opt = {}) {
  require_inputs({{"manifest", manifest}, {"annotations", journal}, {"reports", reports}});
  AnnotationStore store(read_manifest(manifest), journal);
  return association_table(labeled_frames(store), read_reports(reports), pain_icu_aus(), opt);
}

// ----------------------------------------------------------------- bench

/// Per-block Q K^T multiply-accumulates on growing token grids at the
/// stage-0 width and window of `cfg`, then per-stage totals of `cfg`.
inline std::string bench_table(const ModelConfig& cfg) {
  const std::uint64_t c = cfg.dims.at(0), m = cfg.window;
  std::ostringstream out;
  out << "attention MACs per block (Q K^T), width " << c << ", window " << m << "\n";
  out << "grid     tokens  windowed    full        full/windowed\n";
  char buf[128];
  for (auto [h, w] : std::vector<std::pair<std::uint64_t, std::uint64_t>>{
           {4, 4}, {4, 8}, {8, 8}, {8, 16}, {16, 16}, {16, 32}, {32, 32}, {32, 64}, {64, 64}}) {
    const auto win = attention_block_macs(h, w, c, m, AttentionMode::windowed);
    const auto full = attention_block_macs(h, w, c, m, AttentionMode::full);
    std::snprintf(buf, sizeof buf, "%-8s %-7llu %-11llu %-11llu %.2f\n",
                  (std::to_string(h) + "x" + std::to_string(w)).c_str(), static_cast<unsigned long long>(h * w),
                  static_cast<unsigned long long>(win), static_cast<unsigned long long>(full),
                  static_cast<double>(full) / static_cast<double>(win));
    out << buf;
  }
  auto windowed = cfg, full = cfg;
  windowed.mode = AttentionMode::windowed;
  full.mode = AttentionMode::full;
  const auto wm = attention_macs(windowed), fm = attention_macs(full);
  out << "\nconfigured model, per image\n";
  out << "stage  grid   blocks  windowed    full\n";
  for (std::size_t s = 0; s < cfg.stages(); ++s) {
    std::snprintf(buf, sizeof buf, "%-6zu %-6s %-7zu %-11llu %llu\n", s,
                  (std::to_string(cfg.grid(s)) + "x" + std::to_string(cfg.grid(s))).c_str(), cfg.depths[s],
                  static_cast<unsigned long long>(wm[s].qk + wm[s].av), static_cast<unsigned long long>(fm[s].qk + fm[s].av));
    out << buf;
  }
  return out.str();
}

// ----------------------------------------------------------------- synth

struct SynthOptions {
  std::size_t patients = 6;
  std::size_t frames_per_patient = 10;
  std::size_t frame_size = 64;
  std::size_t annotators = 3;
  double label_noise = 0.05;  // chance an annotator flips a label
  std::uint64_t seed = 1;
};

/// Writes a synthetic cohort under `dir`: frames/*.png, manifest.csv,
/// landmarks.csv, reports.csv, intensities.csv and annotations.jsonl. Faces
/// sit at a random pose inside each frame; AU25/26/43 follow the face's
/// actions, and each annotator flips a label with probability label_noise.
inline void write_synthetic_dataset(const fs::path& dir, const SynthOptions& opt) {
  if (opt.patients == 0 || opt.frames_per_patient == 0 || opt.frame_size < 16 || opt.annotators == 0)
    throw ValidationError("synth: need patients, frames and annotators, and frame_size >= 16");
  fs::create_directories(dir / "frames");
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> score(0, 10);
  std::bernoulli_distribution flip(opt.label_noise);
  const auto t0 = parse_time("2024-03-01T08:00:00Z");
  const double size = static_cast<double>(opt.frame_size);

  std::vector<FrameRecord> frames;
  std::vector<LandmarkSet> landmarks;
  std::vector<PainReport> reports;
  std::vector<std::pair<std::string, SyntheticFace>> faces;
  std::ofstream intens(dir / "intensities.csv");
  intens << "frame_id,au4,au6,au7,au9,au10,au43\n";
  char id[32];
  for (std::size_t p = 0; p < opt.patients; ++p) {
    std::snprintf(id, sizeof id, "P%02zu", p + 1);
    const std::string patient = id;
    const auto start = t0 + std::chrono::hours(24 * static_cast<int>(p));
    for (std::size_t i = 0; i < opt.frames_per_patient; ++i) {
      std::snprintf(id, sizeof id, "P%02zu_F%03zu", p + 1, i + 1);
      const auto face = random_face(rng);
      const double k = size * (0.75 + 0.1 * u(rng)) / 224.0, th = 0.2 * u(rng);
      SimilarityTransform pose{k * std::cos(th), k * std::sin(th), 0, 0};
      pose.tx = size / 2 - (pose.a * 112 - pose.b * 112) + 0.05 * size * u(rng);
      pose.ty = size / 2 - (pose.b * 112 + pose.a * 112) + 0.05 * size * u(rng);
      const auto path = dir / "frames" / (std::string(id) + ".png");
      write_image(path, render_face(face, pose, opt.frame_size, opt.frame_size, rng));
      frames.push_back({id, patient, start + std::chrono::minutes(3 * static_cast<int>(i)), path, LandmarkStatus::ok});
      landmarks.push_back(synthetic_landmarks(id, pose));
      faces.emplace_back(id, face);
      intens << id << ",0,0,0,0,0," << (face.eyes_closed ? 1 : 0) << '\n';
    }
    const auto span = std::chrono::minutes(3 * static_cast<int>(opt.frames_per_patient));
    reports.push_back({patient, start + span / 4, score(rng)});
    reports.push_back({patient, start + 3 * span / 4, score(rng)});
  }
  write_manifest(dir / "manifest.csv", frames);
  write_landmarks(dir / "landmarks.csv", landmarks);
  write_reports(dir / "reports.csv", reports);

  const auto journal = dir / "annotations.jsonl";
  fs::remove(journal);
  AnnotationStore store(frames, journal);
  for (const auto& [fid, face] : faces)
    for (std::size_t a = 0; a < opt.annotators; ++a) {
      AnnotationDoc doc{fid, "annotator" + std::to_string(a + 1), {}, t0};
      const auto truth = face.labels();
      const int aus[3] = {25, 26, 43};
      for (std::size_t j = 0; j < 3; ++j) doc.labels[aus[j]] = {(truth[j] > 0.5) != flip(rng), std::nullopt};
      store.upsert(doc);
    }
}

}  // namespace aupipe
