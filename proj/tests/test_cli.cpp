#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "v2x/openlabel.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Output {
  int code = -1;
  std::string text;
};

Output v2x_run(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli.log";
  const std::string cmd = "V2X_LOG_LEVEL=warn '" V2X_CLI "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Output out;
  out.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream buf;
  buf << in.rdbuf();
  out.text = buf.str();
  return out;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override { dir_ = v2x::test::temp_dir(::testing::UnitTest::GetInstance()->current_test_info()->name()); }
  void TearDown() override { fs::remove_all(dir_); }

  Output run(const std::string& args) { return v2x_run(args, dir_); }
  std::string path(const std::string& rel) const { return "'" + (dir_ / rel).string() + "'"; }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, EndToEndPipeline) {
  ASSERT_EQ(run("synth --seed 7 --frames 10 --out " + path("scene")).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "scene/sequence.json"));
  EXPECT_TRUE(fs::exists(dir_ / "scene/gnss.json"));
  EXPECT_TRUE(fs::exists(dir_ / "scene/manifest.json"));

  const Output reg = run("register --scene " + path("scene"));
  ASSERT_EQ(reg.code, 0) << reg.text;
  const json r = read_json(dir_ / "scene/registration.json");
  ASSERT_EQ(r["frames"].size(), 10u);
  EXPECT_TRUE(r["frames"][0]["anchor"].get<bool>());
  EXPECT_TRUE(r["frames"][9]["anchor"].get<bool>());

  ASSERT_EQ(run("detect --scene " + path("scene")).code, 0);
  ASSERT_EQ(run("eval-detection --pred " + path("scene/detections_cooperative.json") + " --gt " + path("scene/sequence.json") +
                " --out " + path("det.json"))
                .code,
            0);
  const json det = read_json(dir_ / "det.json");
  EXPECT_GT(det["mAP"].get<double>(), 0.8);

  ASSERT_EQ(run("track --detections " + path("scene/detections_cooperative.json") + " --out " + path("tracks.json")).code, 0);
  ASSERT_EQ(run("eval-tracking --pred " + path("tracks.json") + " --gt " + path("scene/sequence.json") + " --out " +
                path("trk.json"))
                .code,
            0);
  const json trk = read_json(dir_ / "trk.json");
  EXPECT_GT(trk["MOTA"].get<double>(), 0.5);

  const json m = read_json(dir_ / "trk.json.manifest.json");
  EXPECT_EQ(m["subcommand"], "eval-tracking");
  EXPECT_EQ(m["inputs"].size(), 2u);
  EXPECT_EQ(m["inputs"][0]["fnv1a64"].get<std::string>().size(), 16u);
  EXPECT_TRUE(m["options"].contains("match-dist"));
  EXPECT_FALSE(m["options"].contains("help"));

  ASSERT_EQ(run("detect --scene " + path("scene") + " --mode infra --render " + path("bev.png")).code, 0);
  EXPECT_GT(fs::file_size(dir_ / "bev.png"), 100u);
  ASSERT_EQ(run("stats --in " + path("scene/sequence.json") + " --out " + path("stats.json") + " --csv " + path("stats.csv")).code,
            0);
  ASSERT_EQ(run("split --in " + path("scene/sequence.json") + " --out " + path("split.json")).code, 0);
  EXPECT_EQ(read_json(dir_ / "split.json")["level"], "frame");
}

TEST_F(CliTest, UsageErrorsExitWithOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("synth --out " + path("x") + " --bogus").code, 1);
  EXPECT_EQ(run("synth").code, 1);
  EXPECT_EQ(run("synth --out " + path("x") + " --frames 0").code, 1);
  EXPECT_EQ(run("eval-detection --pred " + path("nope.json") + " --gt " + path("nope.json") + " --out " + path("o")).code, 1);
  EXPECT_EQ(run("--version").code, 0);
}

TEST_F(CliTest, DataErrorsExitWithTwo) {
  std::ofstream(dir_ / "broken.json") << "{\"openlabel\": {\"frames\": [";
  const Output o = run("stats --in " + path("broken.json") + " --out " + path("s.json"));
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.text.find("error"), std::string::npos);
  std::ofstream(dir_ / "bad_box.json")
      << R"({"openlabel": {"frames": {"0": {"objects": {"a": {"object_data": {"cuboid": [{"val": [0, 0, 0, 0, 0, 0, 1, -1, 1, 1]}]}}}}}}})";
  EXPECT_EQ(run("stats --in " + path("bad_box.json") + " --out " + path("s.json")).code, 2);
}

TEST_F(CliTest, ConvertRoundTrip) {
  const std::string fixture = "'" + std::string(V2X_FIXTURE_DIR) + "/intersection.json'";
  const Output to = run("convert --in " + fixture + " --to kitti --out " + path("kitti"));
  ASSERT_EQ(to.code, 0) << to.text;
  EXPECT_NE(to.text.find("KITTI export drops track ids and attributes"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "kitti/000000.txt"));
  ASSERT_EQ(run("convert --in " + path("kitti") + " --to openlabel --out " + path("back.json")).code, 0);
  const v2x::Sequence a = v2x::load_openlabel(std::string(V2X_FIXTURE_DIR) + "/intersection.json");
  const v2x::Sequence b = v2x::load_openlabel((dir_ / "back.json").string());
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t f = 0; f < a.frames.size(); ++f) {
    ASSERT_EQ(a.frames[f].labels.size(), b.frames[f].labels.size());
    for (std::size_t k = 0; k < a.frames[f].labels.size(); ++k) {
      const v2x::Box3D& x = a.frames[f].labels[k];
      const v2x::Box3D& y = b.frames[f].labels[k];
      EXPECT_LE((x.center - y.center).norm(), 1e-6);
      EXPECT_LE((x.dimensions - y.dimensions).norm(), 1e-6);
      EXPECT_LE(std::abs(v2x::angle_difference(x.yaw, y.yaw)), 1e-6);
      EXPECT_EQ(x.category, y.category);
    }
  }
}

TEST_F(CliTest, ConfigFileAndFlagPrecedence) {
  std::ofstream(dir_ / "run.toml") << "[synth]\nframes = 2\nseed = 3\nobjects = 4\n";
  ASSERT_EQ(run("--config " + path("run.toml") + " synth --out " + path("a")).code, 0);
  EXPECT_EQ(v2x::load_openlabel((dir_ / "a/sequence.json").string()).frames.size(), 2u);
  const json ma = read_json(dir_ / "a/manifest.json");
  EXPECT_EQ(ma["options"]["seed"], "3");

  ASSERT_EQ(run("--config " + path("run.toml") + " synth --out " + path("b") + " --frames 3").code, 0);
  EXPECT_EQ(v2x::load_openlabel((dir_ / "b/sequence.json").string()).frames.size(), 3u);
  EXPECT_EQ(read_json(dir_ / "b/manifest.json")["options"]["frames"], "3");
}

TEST_F(CliTest, ManifestsReproducible) {
  const std::string fixture = "'" + std::string(V2X_FIXTURE_DIR) + "/intersection.json'";
  v2x::Sequence pred = v2x::load_openlabel(std::string(V2X_FIXTURE_DIR) + "/intersection.json");
  for (v2x::Frame& f : pred.frames) {
    for (v2x::Box3D& b : f.labels) b.score = 0.9;
  }
  v2x::save_openlabel((dir_ / "pred.json").string(), pred);
  const std::string args = "eval-detection --pred " + path("pred.json") + " --gt " + fixture + " --out " + path("r.json");
  ASSERT_EQ(run(args).code, 0);
  json first = read_json(dir_ / "r.json.manifest.json");
  const std::string report = read_json(dir_ / "r.json").dump();
  ASSERT_EQ(run(args).code, 0);
  json second = read_json(dir_ / "r.json.manifest.json");
  EXPECT_TRUE(first.contains("wall_time_s"));
  first.erase("wall_time_s");
  second.erase("wall_time_s");
  EXPECT_EQ(first, second);
  EXPECT_EQ(read_json(dir_ / "r.json").dump(), report);
  EXPECT_EQ(first["version"], "0.3.0");
}
