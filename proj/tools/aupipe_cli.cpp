#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "aupipe/api/service.hpp"
#include "aupipe/pipeline.hpp"

namespace fs = std::filesystem;
using namespace aupipe;

namespace {

struct Globals {
  std::string config;
  std::vector<std::string> overrides;

  RunConfig load() const {
    return load_run_config(config.empty() ? std::nullopt : std::optional<fs::path>(config), overrides);
  }
  // Flag values take precedence over the file, like --set.
  void flag(const std::string& key, const std::string& value) {
    if (!value.empty()) overrides.push_back(key + "=\"" + value + "\"");
  }
};

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Facial action unit pipeline: sampling, alignment, training, evaluation, inference, analysis"};
  app.name("aupipe");
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("-c,--config", g.config, "TOML run configuration");
  app.add_option("--set", g.overrides, "Override a config value, section.key=value (repeatable)");

  auto* sample = app.add_subcommand("sample", "Schedule report segments and select their frames");
  std::string s_reports, s_manifest, s_out;
  sample->add_option("--reports", s_reports, "Pain report CSV");
  sample->add_option("--manifest", s_manifest, "Frame manifest CSV");
  sample->add_option("--out", s_out, "Directory for segments.csv and frames.csv (default: output path)");

  auto* align = app.add_subcommand("align", "Write landmark-aligned crops and fill the alignment cache");
  std::string a_manifest, a_landmarks, a_out;
  std::size_t a_size = 0;
  bool a_no_cache = false;
  align->add_option("--manifest", a_manifest, "Frame manifest CSV");
  align->add_option("--landmarks", a_landmarks, "Landmark CSV");
  align->add_option("--out", a_out, "Output directory for crops and manifest.csv")->required();
  align->add_option("--size", a_size, "Crop size in pixels (default: model.input_size)");
  align->add_flag("--no-cache", a_no_cache, "Estimate every transform without the cache");

  auto* trn = app.add_subcommand("train", "Train on the configured cohort");
  bool t_resume = false;
  trn->add_flag("--resume", t_resume, "Continue from the latest checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint, or stored predictions");
  std::string e_ckpt, e_split = "test", e_pred, e_out;
  eval->add_option("--checkpoint", e_ckpt, "Checkpoint file");
  eval->add_option("--split", e_split, "Patient split to score: train, test or all")->capture_default_str();
  eval->add_option("--predictions", e_pred, "JSON-lines predictions to score instead of a checkpoint");
  eval->add_option("--out", e_out, "Directory for eval_report.json/.txt (default: output path)");

  auto* infer = app.add_subcommand("infer", "Per-frame AU probabilities as JSON lines");
  std::string i_ckpt, i_frames, i_int, i_out;
  infer->add_option("--checkpoint", i_ckpt, "Checkpoint file")->required();
  infer->add_option("--frames", i_frames, "Directory of aligned crops (.png, .ppm)")->required();
  infer->add_option("--intensities", i_int, "Intensity CSV; adds PSPI per frame");
  infer->add_option("--out", i_out, "Output file (default: stdout)");

  auto* analyze = app.add_subcommand("analyze", "AU presence per pain category");
  std::string n_ann, n_reports, n_manifest, n_out;
  bool n_once = false;
  analyze->add_option("--annotations", n_ann, "Annotation journal (JSON lines)");
  analyze->add_option("--reports", n_reports, "Pain report CSV");
  analyze->add_option("--manifest", n_manifest, "Frame manifest CSV");
  analyze->add_option("--out", n_out, "Directory for association.csv and association.json (default: CSV to stdout)");
  analyze->add_flag("--once-per-category", n_once, "Count a frame once per category even when several reports cover it");

  auto* bench = app.add_subcommand("bench", "Attention multiply-accumulate table, windowed vs full");

  auto* serve = app.add_subcommand("serve", "Run the annotation HTTP API");
  std::string v_host, v_static;
  int v_port = -1;
  bool v_no_cors = false;
  serve->add_option("--host", v_host, "Listen address");
  serve->add_option("--port", v_port, "Listen port");
  serve->add_option("--static", v_static, "Directory served at /");
  serve->add_flag("--no-cors", v_no_cors, "Do not send CORS headers");

  auto* synth = app.add_subcommand("synth", "Write a synthetic cohort for trying the pipeline");
  SynthOptions so;
  std::string y_out;
  synth->add_option("--out", y_out, "Output directory")->required();
  synth->add_option("--patients", so.patients, "Number of patients")->capture_default_str();
  synth->add_option("--frames-per-patient", so.frames_per_patient, "Frames per patient")->capture_default_str();
  synth->add_option("--frame-size", so.frame_size, "Frame width and height")->capture_default_str();
  synth->add_option("--annotators", so.annotators, "Annotators per frame")->capture_default_str();
  synth->add_option("--label-noise", so.label_noise, "Chance an annotator flips a label")->capture_default_str();
  synth->add_option("--seed", so.seed, "Random seed")->capture_default_str();

  for (auto* sub : app.get_subcommands({}))
    sub->footer("Global options -c,--config FILE and --set section.key=value apply here too.");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (*sample) {
    g.flag("paths.reports", s_reports);
    g.flag("paths.manifest", s_manifest);
    const auto rc = g.load();
    require_inputs({{"manifest", rc.paths.manifest}, {"reports", rc.paths.reports}});
    const auto reports = read_reports(rc.paths.reports);
    const auto r = run_sample(read_manifest(rc.paths.manifest), reports, rc.schedule.options());
    const fs::path out = s_out.empty() ? rc.paths.output : fs::path(s_out);
    fs::create_directories(out);
    write_segments(out / "segments.csv", r.segments, reports);
    write_manifest(out / "frames.csv", r.frames);
    std::cout << r.segments.size() << " segments, " << r.frames.size() << " frames -> " << out.string() << '\n';
  } else if (*align) {
    g.flag("paths.manifest", a_manifest);
    g.flag("paths.landmarks", a_landmarks);
    if (a_no_cache) g.overrides.push_back("cache.enabled=false");
    const auto rc = g.load();
    require_inputs({{"manifest", rc.paths.manifest}, {"landmarks", rc.paths.landmarks}});
    const std::size_t size = a_size ? a_size : rc.model.input_size;
    std::optional<AlignmentCache> cache;
    if (rc.cache.enabled) {
      const fs::path p = rc.cache.path.empty() ? fs::path(a_out) / ("alignment_" + std::to_string(size) + ".cache")
                                               : rc.cache.path;
      fs::create_directories(p.parent_path());
      cache.emplace(p);
    }
    const auto r = run_align(read_manifest(rc.paths.manifest), landmark_index(read_landmarks(rc.paths.landmarks)), size,
                             cache ? &*cache : nullptr, a_out);
    std::cout << r.aligned.size() << " aligned, " << r.missing.size() << " without landmarks";
    if (cache) std::cout << "; cache hits " << cache->hits() << ", misses " << cache->misses();
    std::cout << '\n';
  } else if (*trn) {
    const auto r = run_train(g.load(), t_resume);
    std::cout << "trained " << r.epochs.size() << " epochs on " << r.train_frames << " frames (" << r.test_frames
              << " held out, " << r.skipped_frames << " without landmarks)\n";
    if (!r.epochs.empty()) std::cout << epoch_record(r.epochs.back()).dump() << '\n';
  } else if (*eval) {
    const auto rc = g.load();
    EvalReport report;
    if (!e_pred.empty()) {
      std::ifstream in(e_pred);
      if (!in) throw NotFoundError("predictions " + e_pred + " do not exist");
      report = eval_predictions(in, rc.train.threshold);
    } else {
      if (e_ckpt.empty()) throw ValidationError("eval needs --checkpoint or --predictions");
      report = run_eval(rc, e_ckpt, e_split);
    }
    write_eval_report(e_out.empty() ? rc.paths.output : fs::path(e_out), report);
    std::cout << render_table(report);
  } else if (*infer) {
    require_inputs({{"checkpoint", i_ckpt}});
    const auto ck = load_checkpoint(i_ckpt);
    std::optional<std::map<std::string, IntensityVector>> intensities;
    if (!i_int.empty()) {
      require_inputs({{"intensities", i_int}});
      intensities = read_intensities(i_int);
    }
    const auto* iv = intensities ? &*intensities : nullptr;
    if (i_out.empty()) {
      run_infer(ck, i_frames, iv, std::cout);
    } else {
      list_frames(i_frames);
      auto out = open_out(i_out);
      run_infer(ck, i_frames, iv, out);
    }
  } else if (*analyze) {
    g.flag("paths.annotations", n_ann);
    g.flag("paths.reports", n_reports);
    g.flag("paths.manifest", n_manifest);
    const auto rc = g.load();
    AssociationOptions opt;
    opt.radius = rc.schedule.options().radius;
    opt.once_per_category = n_once;
    const auto table = run_analyze(rc.paths.manifest, rc.paths.annotations, rc.paths.reports, opt);
    if (n_out.empty()) {
      std::cout << association_csv(table);
    } else {
      open_out(fs::path(n_out) / "association.csv") << association_csv(table);
      open_out(fs::path(n_out) / "association.json") << nlohmann::json(table).dump(2) << '\n';
    }
  } else if (*bench) {
    std::cout << bench_table(g.load().model);
  } else if (*serve) {
    g.flag("server.host", v_host);
    g.flag("server.static_dir", v_static);
    if (v_port >= 0) g.overrides.push_back("server.port=" + std::to_string(v_port));
    if (v_no_cors) g.overrides.push_back("server.cors=false");
    const auto rc = g.load();
    require_inputs({{"paths.manifest", rc.paths.manifest}});
    if (rc.paths.annotations.empty()) throw ValidationError("paths.annotations is not set");
    if (!rc.server.static_dir.empty()) require_inputs({{"server.static_dir", rc.server.static_dir}});
    AnnotationStore store(read_manifest(rc.paths.manifest), rc.paths.annotations);
    ServiceOptions opt;
    if (!rc.paths.reports.empty()) {
      require_inputs({{"paths.reports", rc.paths.reports}});
      opt.reports = read_reports(rc.paths.reports);
    }
    opt.association.radius = rc.schedule.options().radius;
    opt.metrics_path = rc.metrics_path();
    opt.static_dir = rc.server.static_dir;
    opt.cors = rc.server.cors;
    if (rc.server.assignment == "random") opt.shuffle_seed = rc.server.assignment_seed;
    AnnotationService service(store, opt);
    httplib::Server server;
    service.install(server);
    if (!server.bind_to_port(rc.server.host, rc.server.port))
      throw Error("cannot listen on " + rc.server.host + ":" + std::to_string(rc.server.port));
    std::cout << "listening on http://" << rc.server.host << ":" << rc.server.port << std::endl;
    server.listen_after_bind();
  } else if (*synth) {
    write_synthetic_dataset(y_out, so);
    std::cout << so.patients * so.frames_per_patient << " frames for " << so.patients << " patients -> " << y_out << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
