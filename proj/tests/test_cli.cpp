#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "iassd/data_io.hpp"
#include "iassd/detector.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace iassd;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("iassd_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  /// Runs the binary; stdout and stderr land in `out` and `err`.
  int run(const std::string& args) {
    const std::string cmd = std::string(IASSD_CLI_PATH) + " " + args + " > " + (dir / "stdout").string() + " 2> " +
                            (dir / "stderr").string();
    const int status = std::system(cmd.c_str());
    out = slurp(dir / "stdout");
    err = slurp(dir / "stderr");
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  /// A small synthetic experiment with a fast detector.
  fs::path write_config(nlohmann::json extra = nlohmann::json::object()) {
    DetectorConfig d = DetectorConfig::toy();
    d.encoder = {
        {Strategy::kDFps, 256, {{{0.8, 8, {16}}}, 16}, {}},
        {Strategy::kCtrAware, 64, {{{1.6, 8, {16}}}, 16}, {16}},
    };
    d.vote = {Strategy::kCtrAware, 32, {16}, {16}};
    d.aggregation = {{{1.6, 8, {16}}, {3.2, 8, {16}}}, 16};
    d.cls_hidden = {16};
    d.reg_hidden = {16};
    nlohmann::json j = {
        {"schema", "iassd.experiment/v1"},
        {"seed", 5},
        {"scenes", {{"count", 2}, {"generator", {{"extent", 10.0}, {"total_points", 2048}}}}},
        {"schedule", {{{"strategy", "dfps"}, {"k", 512}}, {{"strategy", "ctr_aware"}, {"k", 128}}}},
        {"strategies", {"random", "dfps", "ctr_aware"}},
        {"sample", {{"k", 128}, {"runs", 2}, {"warmup", 0}}},
        {"detector", to_json(d)},
        {"train", {{"steps", 3}, {"lr", 0.01}}},
        {"bench", {{"n", 2048}, {"k", 64}, {"runs", 10}, {"warmup", 0}}},
        {"output", {{"dir", (dir / "out").string()}}},
    };
    j.update(extra);
    const fs::path p = dir / "config.json";
    spit(p, j.dump(2));
    return p;
  }

  fs::path dir;
  std::string out, err;
};

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("--help"), 0);
  EXPECT_NE(out.find("sample"), std::string::npos);
  EXPECT_EQ(run("--format xml bench"), 1);
  EXPECT_EQ(run("eval"), 1);  // --detections is required
  EXPECT_EQ(run("sample /nonexistent/file.bin"), 1);
}

TEST_F(Cli, ConfigErrors) {
  EXPECT_EQ(run("-c /nonexistent/config.json recall"), 2);
  spit(dir / "bad.json", "{\"seed\": 1}");
  EXPECT_EQ(run("-c " + (dir / "bad.json").string() + " recall"), 2);
  EXPECT_NE(err.find("schema"), std::string::npos);
  spit(dir / "typo.json", "{\"schema\": \"iassd.experiment/v1\", \"sheduel\": []}");
  EXPECT_EQ(run("-c " + (dir / "typo.json").string() + " recall"), 2);
  EXPECT_NE(err.find("sheduel"), std::string::npos);
  spit(dir / "broken.json", "{");
  EXPECT_EQ(run("-c " + (dir / "broken.json").string() + " recall"), 2);
  EXPECT_EQ(run("-c " + write_config().string() + " --threads 0 recall"), 2);
  EXPECT_EQ(run("-c " + write_config({{"bench", {{"runs", 3}}}}).string() + " bench"), 2);
}

TEST_F(Cli, DataErrors) {
  const auto cfg = write_config();
  spit(dir / "short.bin", std::string(20, '\0'));
  EXPECT_EQ(run("-c " + cfg.string() + " sample " + (dir / "short.bin").string()), 3);
  EXPECT_NE(err.find("truncated"), std::string::npos);
  const auto missing = write_config({{"scenes", {{"source", "directory"}, {"dir", (dir / "nothing").string()}}}});
  EXPECT_EQ(run("-c " + missing.string() + " recall"), 3);
}

TEST_F(Cli, SampleWritesIndicesAndTable) {
  const auto cfg = write_config();
  ASSERT_EQ(run("-c " + cfg.string() + " sample"), 0) << err;
  EXPECT_TRUE(fs::exists(dir / "out" / "sample.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "sample.json"));
  std::size_t idx_files = 0;
  for (const auto& e : fs::directory_iterator(dir / "out" / "samples")) {
    ++idx_files;
    EXPECT_EQ(count_lines(slurp(e.path())), 128u) << e.path();
  }
  EXPECT_EQ(idx_files, 2u * 3u);  // scenes x strategies
  EXPECT_EQ(out, slurp(dir / "out" / "sample.csv"));
}

TEST_F(Cli, RecallJsonOnStdout) {
  ASSERT_EQ(run("-c " + write_config().string() + " --format json recall"), 0) << err;
  const auto j = nlohmann::json::parse(out);
  EXPECT_EQ(j["rows"].size(), 3u);
  EXPECT_EQ(j["columns"][0], "512/Car");
  // Pooled recall values lie in [0, 1].
  for (const auto& r : j["rows"])
    for (const auto& [k, v] : r["values"].items())
      if (!v.is_null()) {
        EXPECT_GE(v.get<double>(), 0.0);
        EXPECT_LE(v.get<double>(), 1.0);
      }
}

TEST_F(Cli, DirectoryScenes) {
  for (std::uint64_t seed : {1u, 2u}) {
    SceneGenSpec s;
    s.seed = seed;
    s.total_points = 2048;
    const LabeledScene scene = generate_scene(s);
    fs::create_directories(dir / "data" / "points");
    fs::create_directories(dir / "data" / "labels");
    write_point_bin((dir / "data" / "points" / ("f" + std::to_string(seed) + ".bin")).string(), scene.cloud);
    write_scene_labels((dir / "data" / "labels" / ("f" + std::to_string(seed) + ".txt")).string(), scene.boxes);
  }
  const auto cfg = write_config({{"scenes", {{"source", "directory"}, {"dir", (dir / "data").string()}}}});
  ASSERT_EQ(run("-c " + cfg.string() + " recall"), 0) << err;
  EXPECT_EQ(count_lines(out), 4u);
}

TEST_F(Cli, TrainResumeDetectEval) {
  const auto cfg = write_config();
  const std::string c = "-c " + cfg.string() + " ";
  ASSERT_EQ(run(c + "train"), 0) << err;
  const fs::path ckpt = dir / "out" / "model.ckpt";
  ASSERT_TRUE(fs::exists(ckpt));
  EXPECT_EQ(count_lines(slurp(dir / "out" / "train_log.jsonl")), 3u);
  const std::string log = slurp(dir / "out" / "train_log.jsonl");
  const auto first_line = nlohmann::json::parse(log.substr(0, log.find('\n')));
  EXPECT_TRUE(first_line.contains("corner"));

  ASSERT_EQ(run(c + "train --steps 5 --resume " + ckpt.string()), 0) << err;
  EXPECT_EQ(count_lines(slurp(dir / "out" / "train_log.jsonl")), 5u);

  ASSERT_EQ(run(c + "detect --checkpoint " + ckpt.string()), 0) << err;
  const std::string dets = slurp(dir / "out" / "detections.txt");
  ASSERT_EQ(run(c + "detect --checkpoint " + ckpt.string()), 0);
  EXPECT_EQ(slurp(dir / "out" / "detections.txt"), dets);  // reload is deterministic

  // A detections file always evaluates, even when empty.
  ASSERT_EQ(run(c + "eval --detections " + (dir / "out" / "detections.txt").string()), 0) << err;
  EXPECT_NE(out.find("mean"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "out" / "eval.csv"));

  spit(dir / "stray.txt", "nosuchframe Car 0.9 0 0 0 4 2 1.5 0\n");
  EXPECT_EQ(run(c + "eval --detections " + (dir / "stray.txt").string()), 3);
  EXPECT_NE(err.find("nosuchframe"), std::string::npos);

  // Detector settings that disagree with the checkpoint are rejected.
  auto other = nlohmann::json::parse(slurp(cfg));
  other["detector"]["angle_bins"] = 6;
  spit(dir / "other.json", other.dump());
  EXPECT_EQ(run("-c " + (dir / "other.json").string() + " detect --checkpoint " + ckpt.string()), 2);

  fs::resize_file(ckpt, fs::file_size(ckpt) / 2);
  EXPECT_EQ(run(c + "detect --checkpoint " + ckpt.string()), 3);
}

TEST_F(Cli, BenchJson) {
  ASSERT_EQ(run("-c " + write_config().string() + " --format json bench"), 0) << err;
  const auto j = nlohmann::json::parse(out);
  bool saw_speedup = false;
  for (const auto& r : j["rows"]) {
    if (r["kernel"] == "topk_speedup_vs_dfps") saw_speedup = r["values"]["value"].get<double>() > 0.0;
    if (r["kernel"] == "dfps") {
      EXPECT_EQ(r["values"]["runs"], 10);
    }
  }
  EXPECT_TRUE(saw_speedup) << out;
}

TEST_F(Cli, ConvertKitti) {
  spit(dir / "kitti" / "label_2" / "000001.txt",
       "Car 0.00 0 -1.5 100 100 200 200 1.50 1.60 3.90 1.00 1.50 10.00 0.00\n"
       "DontCare -1 -1 -10 0 0 0 0 -1 -1 -1 -1000 -1000 -1000 -10\n");
  spit(dir / "kitti" / "calib" / "000001.txt",
       "R0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 0 -1 0 0 0 0 -1 0 1 0 0 0\n");
  const std::string args = "-c " + write_config().string() + " convert --labels " + (dir / "kitti" / "label_2").string() +
                           " --calib " + (dir / "kitti" / "calib").string();
  ASSERT_EQ(run(args), 0) << err;
  const auto boxes = read_scene_labels((dir / "out" / "labels" / "000001.txt").string());
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_NEAR(boxes[0].center.x, 10.0, 1e-9);
  fs::remove(dir / "kitti" / "calib" / "000001.txt");
  EXPECT_EQ(run(args), 3);
}
