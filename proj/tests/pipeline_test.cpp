#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "aupipe/pipeline.hpp"

using namespace aupipe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("aupipe_pipe_" + std::to_string(::getpid()) + "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& s) const { return path / s; }
};

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST(RunConfig, DefaultsFileThenOverrides) {
  TempDir dir;
  write(dir / "run.toml", R"(
[model]
window = 2
shift = 1
[train]
epochs = 4
learning_rate = 1e-3
[paths]
manifest = "data/manifest.csv"
[server]
port = 9000
)");
  const auto defaults = load_run_config(std::nullopt);
  EXPECT_EQ(defaults.model.window, 4u);
  EXPECT_EQ(defaults.server.port, 8080);
  EXPECT_EQ(defaults.data.split_ratio, 0.7);

  const auto file = load_run_config(dir / "run.toml");
  EXPECT_EQ(file.model.window, 2u);
  EXPECT_EQ(file.model.shift, 1u);
  EXPECT_EQ(file.model.mlp_ratio, 4.0);  // untouched default
  EXPECT_EQ(file.train.epochs, 4u);
  EXPECT_EQ(file.train.learning_rate, 1e-3);
  EXPECT_EQ(file.server.port, 9000);
  EXPECT_EQ(file.paths.manifest, fs::absolute(dir / "data/manifest.csv").lexically_normal());
  EXPECT_EQ(file.paths.checkpoints, fs::absolute(dir.path) / "checkpoints");

  const auto flags = load_run_config(dir / "run.toml", {"train.epochs=7", "server.port=9100", "paths.manifest=m.csv",
                                                        "server.host=0.0.0.0", "server.cors=false"});
  EXPECT_EQ(flags.train.epochs, 7u);
  EXPECT_EQ(flags.server.port, 9100);
  EXPECT_EQ(flags.paths.manifest, fs::path("m.csv"));
  EXPECT_EQ(flags.server.host, "0.0.0.0");
  EXPECT_FALSE(flags.server.cors);
  EXPECT_EQ(flags.model.window, 2u);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  TempDir dir;
  write(dir / "a.toml", "[paths]\nmanfest = \"x\"\n");
  EXPECT_THROW(load_run_config(dir / "a.toml"), ValidationError);
  write(dir / "b.toml", "[extra]\nx = 1\n");
  EXPECT_THROW(load_run_config(dir / "b.toml"), ValidationError);
  write(dir / "c.toml", "[train]\nepochs = \"ten\"\n");
  EXPECT_THROW(load_run_config(dir / "c.toml"), ValidationError);
  write(dir / "d.toml", "[model\n");
  EXPECT_THROW(load_run_config(dir / "d.toml"), ValidationError);
  EXPECT_THROW(load_run_config(dir / "missing.toml"), NotFoundError);
  EXPECT_THROW(load_run_config(std::nullopt, {"model.wndow=3"}), ValidationError);
  EXPECT_THROW(load_run_config(std::nullopt, {"nodot=3"}), ValidationError);
  EXPECT_THROW(load_run_config(std::nullopt, {"data.split_ratio=1.5"}), ValidationError);
  EXPECT_THROW(load_run_config(std::nullopt, {"server.assignment=sideways"}), ValidationError);
}

TEST(RunConfig, JsonRoundTrip) {
  auto rc = load_run_config(std::nullopt, {"model.depths=[2, 2]", "train.pos_weight=[1.0, 2.0, 3.0]", "cache.enabled=false"});
  EXPECT_EQ(rc.train.pos_weight, (std::vector<double>{1, 2, 3}));
  EXPECT_FALSE(rc.cache.enabled);
  nlohmann::json j = rc;
  EXPECT_EQ(nlohmann::json(j.get<RunConfig>()), j);
}

TEST(RunConfig, RequireInputsNamesTheMissingPath) {
  TempDir dir;
  write(dir / "here.csv", "x\n");
  EXPECT_NO_THROW(require_inputs({{"manifest", dir / "here.csv"}}));
  try {
    require_inputs({{"manifest", dir / "here.csv"}, {"landmarks", dir / "gone.csv"}});
    FAIL();
  } catch (const NotFoundError& e) {
    EXPECT_NE(std::string(e.what()).find("landmarks"), std::string::npos);
  }
  EXPECT_THROW(require_inputs({{"reports", {}}}), ValidationError);
}

TEST(Bench, ToyTableShowsTheQuadraticGap) {
  const auto table = bench_table(ModelConfig{});
  EXPECT_NE(table.find("8x8      64      16384       65536"), std::string::npos) << table;
  EXPECT_NE(table.find("8x16     128     32768       262144"), std::string::npos) << table;
}

TEST(EvalPredictions, MatchesTheCounterReport) {
  // Per AU: tp, fp, fn, tn.
  const std::vector<ConfusionCounter> counts{{25, 8, 2, 2, 88}, {26, 3, 0, 1, 96}, {43, 0, 5, 0, 95}};
  std::stringstream lines;
  for (std::size_t i = 0; i < 100; ++i) {
    nlohmann::json p, t;
    for (const auto& c : counts) {
      const auto key = std::to_string(c.au_id);
      const std::size_t k = i;
      const bool tp = k < c.tp, fp = !tp && k < c.tp + c.fp, fn = !tp && !fp && k < c.tp + c.fp + c.fn;
      p[key] = tp || fp ? 0.75 : 0.25;
      t[key] = tp || fn ? 1 : 0;
    }
    lines << nlohmann::json{{"frame_id", "f" + std::to_string(i)}, {"probabilities", p}, {"labels", t}}.dump() << '\n';
  }
  const auto report = eval_predictions(lines);
  EXPECT_EQ(nlohmann::json(report), nlohmann::json(make_report(counts)));
  EXPECT_DOUBLE_EQ(report.rows[0].f1, 0.8);
  EXPECT_DOUBLE_EQ(report.rows[0].accuracy, 0.96);

  std::stringstream mismatched(R"({"probabilities":{"25":0.9},"labels":{"25":1}}
{"probabilities":{"26":0.9},"labels":{"26":1}}
)");
  EXPECT_THROW(eval_predictions(mismatched), ValidationError);
  std::stringstream bad_label(R"({"probabilities":{"25":0.9},"labels":{"25":2}})");
  EXPECT_THROW(eval_predictions(bad_label), ValidationError);
  std::stringstream empty;
  EXPECT_THROW(eval_predictions(empty), ValidationError);
}

TEST(FitSquare, IdentityAtSizeAndUniformImage) {
  Image img(8, 8);
  for (auto& v : img.pixels) v = 77;
  EXPECT_EQ(fit_square(img, 8).pixels, img.pixels);
  const auto up = fit_square(img, 16);
  EXPECT_EQ(up.width, 16u);
  for (auto v : up.pixels) EXPECT_EQ(v, 77);
  EXPECT_THROW(fit_square(Image(8, 4), 16), ShapeError);
}

TEST(Synthetic, CohortFeedsTheWholeDataPath) {
  TempDir dir;
  SynthOptions opt;
  opt.patients = 4;
  opt.frames_per_patient = 5;
  write_synthetic_dataset(dir.path, opt);
  const auto frames = read_manifest(dir / "manifest.csv");
  ASSERT_EQ(frames.size(), 20u);
  for (const auto& f : frames) EXPECT_TRUE(fs::exists(f.image_path));
  const auto lm = landmark_index(read_landmarks(dir / "landmarks.csv"));
  AlignmentCache cache;
  const auto r = run_align(frames, lm, 32, &cache, dir / "crops");
  EXPECT_EQ(r.aligned.size(), 20u);
  const auto crops = read_manifest(dir / "crops/manifest.csv");
  ASSERT_EQ(crops.size(), r.aligned.size());
  for (std::size_t i = 0; i < crops.size(); ++i) {
    EXPECT_EQ(crops[i].frame_id, r.aligned[i].frame_id);
    EXPECT_EQ(crops[i].image_path, r.aligned[i].image_path);
    EXPECT_EQ(read_image(crops[i].image_path).width, 32u);
  }
  AnnotationStore store(frames, dir / "annotations.jsonl");
  EXPECT_EQ(store.progress().consolidated_frames, 20u);
  EXPECT_EQ(read_intensities(dir / "intensities.csv").size(), 20u);

  RunConfig rc;
  rc.paths = {dir / "manifest.csv", dir / "landmarks.csv", dir / "annotations.jsonl", dir / "reports.csv",
              dir / "ckpt", dir / "out"};
  const auto data = prepare_data(rc);
  EXPECT_EQ(data.train.size() + data.test.size(), 20u);
  EXPECT_EQ(data.split.train.size(), 3u);
  for (const auto& s : data.train) {
    EXPECT_TRUE(s.annotated);
    EXPECT_EQ(s.image.shape(), (Shape{3, 32, 32}));
  }

  // The sample step keeps only frames inside scheduled segments.
  const auto sampled = run_sample(frames, read_reports(dir / "reports.csv"), rc.schedule.options());
  EXPECT_FALSE(sampled.segments.empty());
  for (const auto& f : sampled.frames) {
    bool inside = false;
    for (const auto& s : sampled.segments)
      inside |= s.patient_id == f.patient_id && f.captured_at >= s.start && f.captured_at <= s.end;
    EXPECT_TRUE(inside) << f.frame_id;
  }
}
