#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "evpan/commands.hpp"

using namespace evpan;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    base_ = std::filesystem::temp_directory_path() /
            ("evpan_cli_" + std::to_string(::getpid()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::remove_all(base_);
    std::filesystem::create_directories(base_);
  }
  void TearDown() override { std::filesystem::remove_all(base_); }

  std::string path(const std::string& name) const { return (base_ / name).string(); }

  int run(const std::vector<std::string>& args) {
    out_.str("");
    err_.str("");
    return run_cli(args, out_, err_);
  }

  std::filesystem::path base_;
  std::ostringstream out_;
  std::ostringstream err_;
};

}  // namespace

TEST_F(CliTest, HelpExitsZeroAndUnknownsExitOne) {
  EXPECT_EQ(run({"--help"}), 0);
  EXPECT_NE(out_.str().find("Subcommands"), std::string::npos);
  EXPECT_EQ(run({"frobnicate"}), 1);
  EXPECT_EQ(run({}), 1);  // a subcommand is required
  EXPECT_EQ(run({"synth", "--no-such-flag"}), 1);
}

TEST_F(CliTest, SynthFuseEvaluateRoundTrip) {
  ASSERT_EQ(run({"synth", "--out", path("data"), "--count", "2", "--seed", "5",
                 "--target-confidence", "0.97"}),
            0);
  ASSERT_TRUE(std::filesystem::is_regular_file(path("data/manifest.json")));
  ASSERT_TRUE(std::filesystem::is_regular_file(path("data/gt/scene_001_panoptic.upst")));

  std::filesystem::create_directories(path("fused"));
  for (const char* id : {"scene_000", "scene_001"}) {
    ASSERT_EQ(run({"fuse", path("data/pred/") + id + "_logits.upst",
                   path("data/pred/") + id + "_instances.json", "--stuff", "0,1,2", "--thing",
                   "3,4", "--out", path("fused/") + id}),
              0)
        << err_.str();
  }

  ASSERT_EQ(run({"evaluate", path("fused"), path("data/gt"), "--classes",
                 path("data/manifest.json"), "--report", path("report.json"), "--per-image"}),
            0)
      << err_.str();
  EXPECT_NE(out_.str().find("images evaluated: 2"), std::string::npos);

  nlohmann::json report;
  std::ifstream(path("report.json")) >> report;
  EXPECT_EQ(report.at("image_count"), 2);
  EXPECT_EQ(report.at("per_image").size(), 2u);
  const double pq = report.at("overall").at("pq").get<double>();
  const double pece = report.at("overall").at("pece").get<double>();
  const double upq_value = report.at("overall").at("upq").get<double>();
  EXPECT_GT(pq, 0.9);
  EXPECT_LT(pece, 0.1);
  EXPECT_NEAR(upq_value, (1.0 - pece) * pq, 1e-12);
}

TEST_F(CliTest, FuseOutputsAreByteIdenticalAcrossRuns) {
  ASSERT_EQ(run({"synth", "--out", path("d"), "--count", "1", "--seed", "33"}), 0);
  const std::vector<std::string> fuse_args{
      "fuse", path("d/pred/scene_000_logits.upst"), path("d/pred/scene_000_instances.json"),
      "--stuff", "0,1,2", "--thing", "3,4", "--out", path("a")};
  ASSERT_EQ(run(fuse_args), 0);
  std::vector<std::string> again = fuse_args;
  again.back() = path("b");
  ASSERT_EQ(run(again), 0);
  auto slurp = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  EXPECT_EQ(slurp(path("a_panoptic.upst")), slurp(path("b_panoptic.upst")));
  EXPECT_EQ(slurp(path("a_uncertainty.upst")), slurp(path("b_uncertainty.upst")));
}

TEST_F(CliTest, EvaluateErrorsUseContractExitCodes) {
  ASSERT_EQ(run({"synth", "--out", path("d"), "--count", "1", "--seed", "2"}), 0);

  // missing prediction pair -> I/O error -> 2
  std::filesystem::create_directories(path("empty"));
  EXPECT_EQ(run({"evaluate", path("empty"), path("d/gt"), "--classes",
                 path("d/manifest.json")}),
            2);

  // no gt at all -> validation error -> 1
  std::filesystem::create_directories(path("nogt"));
  EXPECT_EQ(run({"evaluate", path("empty"), path("nogt"), "--classes",
                 path("d/manifest.json")}),
            1);

  // malformed class config -> validation error -> 1
  std::ofstream(path("classes.json")) << R"({"stuff": [0]})";
  EXPECT_EQ(run({"evaluate", path("empty"), path("d/gt"), "--classes", path("classes.json")}),
            1);

  // corrupt tensor -> I/O error -> 2
  std::filesystem::create_directories(path("bad"));
  std::ofstream(path("bad/scene_000_panoptic.upst")) << "nonsense";
  std::ofstream(path("bad/scene_000_uncertainty.upst")) << "nonsense";
  EXPECT_EQ(run({"evaluate", path("bad"), path("d/gt"), "--classes",
                 path("d/manifest.json")}),
            2);
}

TEST_F(CliTest, EvaluateRequiresLogitsForAllOrNone) {
  ASSERT_EQ(run({"synth", "--out", path("d"), "--count", "2", "--seed", "8"}), 0);
  std::filesystem::create_directories(path("fused"));
  for (const char* id : {"scene_000", "scene_001"}) {
    ASSERT_EQ(run({"fuse", path("d/pred/") + id + "_logits.upst",
                   path("d/pred/") + id + "_instances.json", "--stuff", "0,1,2", "--thing",
                   "3,4", "--out", path("fused/") + id}),
              0);
  }
  // copy logits for only one of the two stems
  std::filesystem::copy_file(path("d/pred/scene_000_logits.upst"),
                             path("fused/scene_000_logits.upst"));
  EXPECT_EQ(run({"evaluate", path("fused"), path("d/gt"), "--classes",
                 path("d/manifest.json")}),
            1);
  EXPECT_NE(err_.str().find("all images or none"), std::string::npos);

  // with both present the report gains an ECE column
  std::filesystem::copy_file(path("d/pred/scene_001_logits.upst"),
                             path("fused/scene_001_logits.upst"));
  ASSERT_EQ(run({"evaluate", path("fused"), path("d/gt"), "--classes",
                 path("d/manifest.json"), "--report", path("r.json")}),
            0);
  nlohmann::json report;
  std::ifstream(path("r.json")) >> report;
  EXPECT_TRUE(report.at("overall").contains("ece"));
  EXPECT_FALSE(report.at("overall").at("ece").is_null());
}

TEST_F(CliTest, GradcheckHonorsToleranceContract) {
  EXPECT_EQ(run({"gradcheck", "--loss", "mse", "--seed", "3", "--shape", "3x3x4"}), 0);
  EXPECT_NE(out_.str().find("PASS"), std::string::npos);
  EXPECT_EQ(run({"gradcheck", "--loss", "mse", "--tol", "0"}), 1);
  EXPECT_EQ(run({"gradcheck", "--loss", "unknown"}), 1);
  EXPECT_EQ(run({"gradcheck", "--shape", "5x5"}), 1);
  EXPECT_EQ(run({"gradcheck", "--shape", "4x4x1"}), 1);
}

TEST_F(CliTest, SynthCountZeroWritesLayoutOnly) {
  ASSERT_EQ(run({"synth", "--out", path("zero"), "--count", "0"}), 0);
  EXPECT_TRUE(std::filesystem::is_regular_file(path("zero/manifest.json")));
  EXPECT_TRUE(std::filesystem::is_directory(path("zero/gt")));
  EXPECT_TRUE(std::filesystem::is_directory(path("zero/pred")));
  EXPECT_TRUE(std::filesystem::is_empty(path("zero/gt")));
  nlohmann::json manifest;
  std::ifstream(path("zero/manifest.json")) >> manifest;
  EXPECT_EQ(manifest.at("scenes").size(), 0u);
  EXPECT_EQ(manifest.at("tool"), "evpan");
}

TEST_F(CliTest, SynthSeedsScenesSequentially) {
  ASSERT_EQ(run({"synth", "--out", path("s"), "--count", "3", "--seed", "9"}), 0);
  nlohmann::json manifest;
  std::ifstream(path("s/manifest.json")) >> manifest;
  ASSERT_EQ(manifest.at("scenes").size(), 3u);
  EXPECT_EQ(manifest.at("scenes")[0].at("seed"), 9);
  EXPECT_EQ(manifest.at("scenes")[1].at("seed"), 10);
  EXPECT_EQ(manifest.at("scenes")[2].at("seed"), 11);

  // scene j of this run equals scene 0 of a run based at seed 11
  ASSERT_EQ(run({"synth", "--out", path("t"), "--count", "1", "--seed", "11"}), 0);
  auto slurp = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  EXPECT_EQ(slurp(path("s/gt/scene_002_panoptic.upst")),
            slurp(path("t/gt/scene_000_panoptic.upst")));
  EXPECT_EQ(slurp(path("s/pred/scene_002_logits.upst")),
            slurp(path("t/pred/scene_000_logits.upst")));
}

TEST_F(CliTest, FuseMissingInputIsIoError) {
  EXPECT_EQ(run({"fuse", path("none.upst"), path("none.json"), "--stuff", "0", "--thing", "1",
                 "--out", path("x")}),
            2);
  // overlapping stuff/thing ids -> validation error
  ASSERT_EQ(run({"synth", "--out", path("d"), "--count", "1", "--seed", "4"}), 0);
  EXPECT_EQ(run({"fuse", path("d/pred/scene_000_logits.upst"),
                 path("d/pred/scene_000_instances.json"), "--stuff", "0,1,2", "--thing", "2,3,4",
                 "--out", path("x")}),
            1);
}
