#include <sstream>

#include <gtest/gtest.h>

#include "test_util.h"
#include "vector/cli.h"
#include "vector/json_convert.h"

namespace vec {
namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult Vector(std::vector<std::string> args) {
  args.insert(args.begin(), "vector");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = RunCli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

Json ReadJson(const std::string& path) { return Json::parse(ReadFile(path)); }

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(Vector({}).code, 1);
  EXPECT_EQ(Vector({"frobnicate"}).code, 1);
  EXPECT_EQ(Vector({"synth"}).code, 1);
  EXPECT_EQ(Vector({"ba", "--cameras", "a.xml"}).code, 1);
  EXPECT_EQ(Vector({"serve", "--session", "s.json", "--port", "0"}).code, 1);
  EXPECT_EQ(Vector({"--help"}).code, 0);
}

TEST(Cli, DataErrorsExitWithTwo) {
  testing::TempDir dir("cli_errors");
  const CliResult missing =
      Vector({"ba", "--cameras", dir.File("none.xml"), "--tracks", dir.File("none2.xml"), "--out",
           dir.File("out")});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("none.xml"), std::string::npos);

  WriteFile(dir.File("bad.json"), "{\"n_cameras\": 1}");
  EXPECT_EQ(Vector({"synth", "--config", dir.File("bad.json"), "--out", dir.File("s")}).code, 2);
  WriteFile(dir.File("broken.json"), "{");
  EXPECT_EQ(Vector({"synth", "--config", dir.File("broken.json"), "--out", dir.File("s")}).code, 2);
}

TEST(Cli, ZeroNoiseAdjustmentReachesZeroCost) {
  testing::TempDir dir("cli_zero");
  WriteFile(dir.File("synth.json"), R"({"n_cameras": 8, "n_points": 120, "seed": 3})");
  ASSERT_EQ(Vector({"synth", "--config", dir.File("synth.json"), "--out", dir.File("data")}).code, 0);
  const CliResult ba = Vector({"ba", "--cameras", dir.File("data/cameras.xml"), "--tracks",
                            dir.File("data/tracks.xml"), "--out", dir.File("ba")});
  ASSERT_EQ(ba.code, 0) << ba.err;
  const Json result = ReadJson(dir.File("ba/ba_result.json"));
  EXPECT_LT(result["final_cost"].get<double>(), 1e-12);
  EXPECT_TRUE(result["converged"].get<bool>());
  const Dataset adjusted = LoadDataset(dir.File("ba/cameras.xml"), dir.File("ba/tracks.xml"));
  for (const auto& c : adjusted.cameras) EXPECT_TRUE(c.pose_final);
  for (const auto& t : adjusted.tracks) EXPECT_TRUE(t.point_final);
}

TEST(Cli, SynthIsDeterministicAndSeedOverrides) {
  testing::TempDir dir("cli_seed");
  WriteFile(dir.File("synth.json"),
            R"({"n_cameras": 6, "n_points": 60, "pixel_noise_sigma": 1.0, "seed": 1})");
  Vector({"synth", "--config", dir.File("synth.json"), "--out", dir.File("a")});
  Vector({"synth", "--config", dir.File("synth.json"), "--out", dir.File("b")});
  Vector({"synth", "--config", dir.File("synth.json"), "--seed", "2", "--out", dir.File("c")});
  EXPECT_EQ(ReadFile(dir.File("a/tracks.xml")), ReadFile(dir.File("b/tracks.xml")));
  EXPECT_NE(ReadFile(dir.File("a/tracks.xml")), ReadFile(dir.File("c/tracks.xml")));
  const Json truth = ReadJson(dir.File("a/ground_truth.json"));
  EXPECT_EQ(truth["poses"].size(), 6u);
  EXPECT_EQ(truth["points"].size(), 60u);
}

// synth -> ba -> report -> edit -> ba -> report.
TEST(Cli, OutlierDeletionPipeline) {
  testing::TempDir dir("cli_pipeline");
  WriteFile(dir.File("synth.json"), R"({"n_cameras": 10, "n_points": 300,
      "pixel_noise_sigma": 0.5, "n_outlier_tracks": 10, "outlier_magnitude": 50,
      "pose_perturbation": {"rotation_deg": 1.0, "translation_frac": 0.02}, "seed": 11})");
  ASSERT_EQ(Vector({"synth", "--config", dir.File("synth.json"), "--out", dir.File("data")}).code, 0);
  ASSERT_EQ(Vector({"ba", "--cameras", dir.File("data/cameras.xml"), "--tracks",
                 dir.File("data/tracks.xml"), "--out", dir.File("run")})
                .code,
            0);
  const std::string session = dir.File("run/session.json");
  ASSERT_EQ(Vector({"report", "--session", session, "--out", dir.File("r0.json")}).code, 0);
  const Json r0 = ReadJson(dir.File("r0.json"));

  std::string ids;
  for (size_t i = 0; i < 10; ++i) {
    ids += r0["latest"]["top_tracks"]["max_final_length"][i]["track_id"].get<std::string>() + "\n";
  }
  WriteFile(dir.File("delete.txt"), "# worst tracks\n" + ids);
  const CliResult edit = Vector({"edit", "--session", session, "--delete-tracks", dir.File("delete.txt")});
  ASSERT_EQ(edit.code, 0) << edit.err;
  EXPECT_EQ(Json::parse(edit.out)["applied"].get<int>(), 10);
  EXPECT_EQ(Vector({"edit", "--session", session, "--delete-tracks", dir.File("delete.txt")}).code, 2);

  const CliResult rerun = Vector({"ba", "--session", session});
  ASSERT_EQ(rerun.code, 0) << rerun.err;
  EXPECT_TRUE(std::filesystem::exists(dir.File("run/run_1_ba_result.json")));
  ASSERT_EQ(Vector({"report", "--session", session, "--out", dir.File("r1.json")}).code, 0);
  const Json r1 = ReadJson(dir.File("r1.json"));
  EXPECT_EQ(r1["edit_count"].get<int>(), 10);
  EXPECT_EQ(r1["runs"].size(), 2u);
  const double before = r1["comparison"]["rms_a"].get<double>();
  const double after = r1["comparison"]["rms_b"].get<double>();
  EXPECT_GE(before / after, 2.0);
  EXPECT_EQ(r1["comparison"]["removed_track_ids"].size(), 10u);
}

}  // namespace
}  // namespace vec
