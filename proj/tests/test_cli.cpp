#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "v2v/cli.hpp"
#include "v2v/error.hpp"
#include "v2v/synthetic_face.hpp"
#include "v2v/video_io.hpp"

using namespace v2v;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int code;
  std::string out, err;
  json report() const { return json::parse(out); }
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Fresh working directory with a tiny-model config.
class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("v2v_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_ / "corpus");
    json cfg = {{"model",
                 {{"resolution", 32},
                  {"codebook_size", 32},
                  {"embed_dim", 8},
                  {"channels", 16},
                  {"residual_channels", 8},
                  {"residual_blocks", 1},
                  {"clip_length", 4}}},
                {"training", {{"perceptual", "gradient"}, {"learning_rate", 1e-3}}},
                {"paths",
                 {{"corpus", (dir_ / "corpus").string()},
                  {"cache", (dir_ / "cache").string()},
                  {"checkpoints", (dir_ / "ckpt").string()}}},
                {"seed", 7}};
    std::ofstream(config()) << cfg.dump(2);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string config() const { return (dir_ / "tool.json").string(); }
  fs::path path(const std::string& name) const { return dir_ / name; }

  fs::path add_video(const std::string& name, std::uint64_t seed, int frames = 6) const {
    const auto th = render_talking_head(random_identity(seed), {.width = 96, .height = 96, .frames = frames, .seed = seed});
    const fs::path p = dir_ / "corpus" / name;
    write_video(th.video, p);
    return p;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, PreprocessEmptyDirIsConfigError) {
  const CliRun r = cli({"preprocess", (dir_ / "corpus").string(), "--config", config()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(json::parse(r.err)["error"], "config");
}

TEST_F(CliTest, PreprocessSkipsUnchangedVideos) {
  add_video("a.mp4", 1);
  add_video("b.mp4", 2);
  const CliRun first = cli({"preprocess", (dir_ / "corpus").string(), "--config", config()});
  ASSERT_EQ(first.code, 0) << first.err;
  EXPECT_EQ(first.report()["processed"].size(), 2u);
  EXPECT_TRUE(fs::exists(path("cache/a.lmk")));
  const json manifest = json::parse(std::ifstream(path("cache/a.json")));
  EXPECT_EQ(manifest["frames"], 6);
  EXPECT_EQ(manifest["crop_boxes"].size(), 6u);
  EXPECT_EQ(manifest["tool_config"]["seed"], 7);
  const auto stamp = fs::last_write_time(path("cache/a.lmk"));

  const CliRun second = cli({"preprocess", (dir_ / "corpus").string(), "--config", config()});
  ASSERT_EQ(second.code, 0);
  EXPECT_EQ(second.report()["processed"].size(), 0u);
  EXPECT_EQ(second.report()["skipped"].size(), 2u);
  EXPECT_EQ(fs::last_write_time(path("cache/a.lmk")), stamp);
}

TEST_F(CliTest, CorruptVideoFailsButOthersSucceed) {
  add_video("a.mp4", 1);
  std::ofstream(dir_ / "corpus" / "broken.mp4") << "this is not a video";
  add_video("c.mp4", 3);
  const CliRun r = cli({"preprocess", (dir_ / "corpus").string(), "--config", config()});
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(r.report()["processed"].size(), 2u);
  EXPECT_EQ(r.report()["failed"].size(), 1u);
  EXPECT_NE(r.err.find("broken.mp4"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("cache/c.lmk")));
}

TEST_F(CliTest, TrainWithoutCorpusIsConfigError) {
  const CliRun r = cli({"train", "--config", config(), "--corpus", path("missing").string(), "--steps", "2"});
  EXPECT_EQ(r.code, 1);
}

TEST_F(CliTest, TrainSmokeAndResume) {
  add_video("a.mp4", 1);
  add_video("b.mp4", 2, 5);
  ASSERT_EQ(cli({"preprocess", (dir_ / "corpus").string(), "--config", config()}).code, 0);
  const CliRun r = cli({"train", "--config", config(), "--steps", "10"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::vector<fs::path> ckpts;
  for (const auto& e : fs::directory_iterator(path("ckpt")))
    if (e.path().extension() == ".ckpt") ckpts.push_back(e.path());
  ASSERT_EQ(ckpts.size(), 1u);
  const CheckpointMeta meta = read_checkpoint_meta(ckpts[0]);
  EXPECT_EQ(meta.step, 10);
  EXPECT_EQ(meta.tool_config["seed"], 7);
  EXPECT_EQ(meta.tool_config["training"]["steps"], 10);

  const CliRun resumed = cli({"train", "--config", config(), "--steps", "12", "--resume", ckpts[0].string()});
  ASSERT_EQ(resumed.code, 0) << resumed.err;
  EXPECT_EQ(resumed.report()["first_step"], 10);
  std::ifstream log(path("ckpt/train.jsonl"));
  bool saw_resume = false;
  for (std::string line; std::getline(log, line);) {
    const json j = json::parse(line);
    if (j.value("event", "") == "resume") saw_resume = j["step"] == 10;
  }
  EXPECT_TRUE(saw_resume);
}

TEST_F(CliTest, ConfigPrecedence) {
  const fs::path file = path("prec.json");
  std::ofstream(file) << R"({"training": {"steps": 5, "learning_rate": 0.001}, "seed": 3})";
  ToolConfig c = load_tool_config(file, {});
  EXPECT_EQ(c.training.steps, 5);
  EXPECT_EQ(c.training.checkpoint_every, 1000);  // default survives
  EXPECT_EQ(c.training.seed, 3u);
  EXPECT_EQ(c.corruption.seed, 3u);
  // --set beats the file; later assignments (flags) beat earlier ones
  c = load_tool_config(file, {"training.steps=7"});
  EXPECT_EQ(c.training.steps, 7);
  EXPECT_DOUBLE_EQ(c.training.learning_rate, 0.001);
  c = load_tool_config(file, {"training.steps=7", "training.steps=9", "paths.corpus=some dir"});
  EXPECT_EQ(c.training.steps, 9);
  EXPECT_EQ(c.paths.corpus, "some dir");
  // the serialized form reloads to the same tree
  EXPECT_EQ(to_json(tool_config_from_json(to_json(c))), to_json(c));
}

TEST_F(CliTest, ConfigRejectsUnknownAndInvalid) {
  auto kind = [](auto f) {
    try {
      f();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Numerical;
  };
  std::ofstream(path("bad.json")) << R"({"training": {"stpes": 5}})";
  EXPECT_EQ(kind([&] { load_tool_config(path("bad.json"), {}); }), ErrorKind::Config);
  EXPECT_EQ(kind([&] { load_tool_config(std::nullopt, {"modle.resolution=64"}); }), ErrorKind::Config);
  EXPECT_EQ(kind([&] { load_tool_config(std::nullopt, {"training.seed=4"}); }), ErrorKind::Config);
  EXPECT_EQ(kind([&] { load_tool_config(std::nullopt, {"model.resolution=30"}); }), ErrorKind::Config);
  EXPECT_EQ(kind([&] { load_tool_config(std::nullopt, {"metrics.identity=arcface"}); }), ErrorKind::Config);
  EXPECT_EQ(kind([&] { load_tool_config(std::nullopt, {"novalue"}); }), ErrorKind::Config);
  EXPECT_EQ(cli({"train", "--set", "training.steps=abc"}).code, 1);
  EXPECT_EQ(cli({"frobnicate"}).code, 1);
}

TEST_F(CliTest, SwapEvaluateAndPreview) {
  add_video("a.mp4", 1);
  add_video("b.mp4", 2);
  ASSERT_EQ(cli({"preprocess", (dir_ / "corpus").string(), "--config", config()}).code, 0);
  ASSERT_EQ(cli({"train", "--config", config(), "--steps", "2"}).code, 0);
  const std::string ckpt = (path("ckpt") / checkpoint_name(2)).string();
  const std::string a = (dir_ / "corpus/a.mp4").string(), b = (dir_ / "corpus/b.mp4").string();
  const std::string out = path("swapped.mp4").string();

  const CliRun s = cli({"swap", "--config", config(), "--source", a, "--target", b, "--output", out, "--checkpoint", ckpt});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_EQ(s.report()["frames"], 6);
  EXPECT_EQ(load_video(out).size(), 6u);

  const CliRun e = cli({"evaluate", "--config", config(), "--source", a, "--target", b, "--output", b, "--report",
                     path("report.json").string(), "--set", "metrics.fvd_window=3", "--set", "metrics.fvd_stride=1"});
  ASSERT_EQ(e.code, 0) << e.err;
  const json rep = e.report();
  EXPECT_DOUBLE_EQ(rep["tg_id"].get<double>(), 1.0);
  EXPECT_NEAR(rep["fvd"].get<double>(), 0.0, 1e-6);
  EXPECT_GT(rep["spidis"].get<double>(), 0.0);
  EXPECT_EQ(rep["config"]["seed"], 7);
  EXPECT_EQ(rep["input_hashes"]["target"], rep["input_hashes"]["output"]);
  EXPECT_EQ(json::parse(std::ifstream(path("report.json"))), rep);

  const CliRun p = cli({"corrupt-preview", "--config", config(), "--input", a, "--output", path("prev.mp4").string()});
  ASSERT_EQ(p.code, 0) << p.err;
  const FrameSequence preview = load_video(path("prev.mp4"));
  EXPECT_EQ(preview.width(), 3 * 32);
  EXPECT_EQ(preview.size(), 6u);

  // mismatched lengths without --resample is a config-class error
  add_video("short.mp4", 4, 5);
  const CliRun bad = cli({"swap", "--config", config(), "--source", (dir_ / "corpus/short.mp4").string(), "--target", b,
                       "--output", path("x.mp4").string(), "--checkpoint", ckpt});
  EXPECT_EQ(bad.code, 1);
}

TEST_F(CliTest, AblateReportsBothVariants) {
  add_video("a.mp4", 1);
  add_video("b.mp4", 2);
  ASSERT_EQ(cli({"preprocess", (dir_ / "corpus").string(), "--config", config()}).code, 0);
  const CliRun r = cli({"ablate", "--compare", "--config", config(), "--set", "training.steps=3", "--set",
                     "metrics.fvd_window=3", "--set", "metrics.fvd_stride=1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = r.report();
  ASSERT_TRUE(rep.contains("full") && rep.contains("no_temporal"));
  EXPECT_EQ(rep["full"]["per_clip_wobble"].size(), 2u);
  EXPECT_DOUBLE_EQ(rep["wobble_difference"].get<double>(),
                   rep["no_temporal"]["wobble"].get<double>() - rep["full"]["wobble"].get<double>());
  EXPECT_FALSE(read_checkpoint_meta(rep["no_temporal"]["checkpoint"].get<std::string>()).model.temporal);
  EXPECT_TRUE(read_checkpoint_meta(rep["full"]["checkpoint"].get<std::string>()).model.temporal);
}

TEST(Wobble, ConstantMotionAndJitter) {
  // target translates 1 px/frame; output adds alternating +-0.5 px in x
  LandmarkTrack target, output;
  Shape68 base{};
  for (int k = 0; k < kLandmarkCount; ++k) base[k] = {10.0 + k, 20.0 + k % 7};
  for (int t = 0; t < 5; ++t) {
    Shape68 s = base, o = base;
    for (int k = 0; k < kLandmarkCount; ++k) {
      s[k].y += t;
      o[k].y += t;
      o[k].x += (t % 2 ? 0.5 : -0.5);
    }
    target.points.push_back(s);
    output.points.push_back(o);
    target.confidence.push_back(1);
    output.confidence.push_back(1);
  }
  EXPECT_NEAR(mean_frame_displacement(target), 1.0, 1e-12);
  EXPECT_NEAR(wobble_statistic(output, target), std::sqrt(2.0) - 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(wobble_statistic(target, target), 0.0);
}
