#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "iscf/data.hpp"
#include "iscf/model.hpp"

using namespace iscf;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "iscf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("iscf_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Small synthetic dataset and a one-epoch checkpoint trained on it.
  std::string tiny_checkpoint() {
    EXPECT_EQ(run({"synth-data", "--out", path("data"), "--count", "6", "--hw", "32"}).code, cli::kOk);
    const auto r = run({"train", "--data", path("data"), "--out", path("run"), "--epochs", "1", "--hw", "32",
                        "--base-width", "8", "--val-fraction", "0.5"});
    EXPECT_EQ(r.code, cli::kOk) << r.err;
    return path("run/best.ckpt");
  }

  fs::path dir_;
};

TEST_F(CliTest, HelpExitsCleanly) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, cli::kOk);
  EXPECT_NE(r.out.find("train"), std::string::npos);
}

TEST_F(CliTest, UnknownFlagIsConfigError) {
  EXPECT_EQ(run({"train", "--synth", "--out", path("x"), "--no-such-flag"}).code, cli::kConfigError);
  EXPECT_EQ(run({}).code, cli::kConfigError);
}

TEST_F(CliTest, ConfigFileRejectsUnknownKeys) {
  std::ofstream(path("bad.json")) << R"({"train": {"epochs": 1, "learning_rate": 3}})";
  const auto r = run({"train", "--config", path("bad.json"), "--synth", "--out", path("x")});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos);
}

TEST_F(CliTest, InvalidValueIsConfigError) {
  EXPECT_EQ(run({"train", "--synth", "--out", path("x"), "--hw", "50"}).code, cli::kConfigError);
  EXPECT_EQ(run({"train", "--synth", "--out", path("x"), "--lr", "-1"}).code, cli::kConfigError);
}

TEST_F(CliTest, MissingDataDirIsDataError) {
  const auto r = run({"train", "--data", path("absent"), "--out", path("x")});
  EXPECT_EQ(r.code, cli::kDataError);
  EXPECT_NE(r.err.find("absent"), std::string::npos);
}

TEST_F(CliTest, SynthDataWritesPairs) {
  ASSERT_EQ(run({"synth-data", "--out", path("d"), "--count", "3", "--hw", "32", "--seed", "4"}).code, cli::kOk);
  const auto samples = load_dataset(path("d"), 32, 32);
  ASSERT_EQ(samples.size(), 3u);
  EXPECT_EQ(samples[0].id, "synth_00000");
  EXPECT_TRUE(fs::exists(path("d/effective-config.json")));
}

TEST_F(CliTest, TrainWritesArtifactsAndEffectiveConfig) {
  tiny_checkpoint();
  for (const char* f : {"history.csv", "best.ckpt", "final.ckpt", "effective-config.json"}) {
    EXPECT_TRUE(fs::exists(path(std::string("run/") + f))) << f;
  }
  const Checkpoint ck = load_checkpoint(path("run/best.ckpt"));
  EXPECT_EQ(ck.config.input_h, 32);
  EXPECT_EQ(ck.config.base_width, 8);
  std::ifstream cfg(path("run/effective-config.json"));
  std::string text((std::istreambuf_iterator<char>(cfg)), {});
  EXPECT_NE(text.find("\"epochs\": 1"), std::string::npos);
}

TEST_F(CliTest, SynthSmokeRun) {
  const auto r = run({"train", "--synth", "--synth-count", "4", "--epochs", "1", "--out", path("smoke")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  for (const char* f : {"history.csv", "best.ckpt", "effective-config.json"}) {
    EXPECT_TRUE(fs::exists(path(std::string("smoke/") + f))) << f;
  }
  EXPECT_NE(r.out.find("effective configuration"), std::string::npos);
}

TEST_F(CliTest, SameSeedReproducesHistory) {
  auto read = [&](const std::string& f) {
    std::ifstream in(path(f), std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  for (const char* out : {"a", "b"}) {
    ASSERT_EQ(run({"train", "--synth", "--synth-count", "12", "--hw", "32", "--base-width", "8", "--epochs", "2",
                   "--batch-size", "4", "--seed", "3", "--out", path(out)})
                  .code,
              cli::kOk);
  }
  EXPECT_FALSE(read("a/history.csv").empty());
  EXPECT_EQ(read("a/history.csv"), read("b/history.csv"));
}

TEST_F(CliTest, EvalWritesMetricsAndOverlays) {
  const auto ckpt = tiny_checkpoint();
  const auto r = run({"eval", "--ckpt", ckpt, "--data", path("data"), "--out", path("eval"), "--overlays"});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_TRUE(fs::exists(path("eval/metrics.json")));
  EXPECT_TRUE(fs::exists(path("eval/overlays/synth_00005.ppm")));
}

TEST_F(CliTest, CorruptCheckpointIsDataError) {
  std::ofstream(path("bad.ckpt")) << "not a checkpoint";
  const auto r = run({"eval", "--ckpt", path("bad.ckpt"), "--synth", "--out", path("e")});
  EXPECT_EQ(r.code, cli::kDataError);
  EXPECT_NE(r.err.find("FormatError"), std::string::npos);
}

TEST_F(CliTest, InferWritesBinaryMaskAtSourceExtent) {
  const auto ckpt = tiny_checkpoint();
  Image8 img{45, 37, 3, std::vector<std::uint8_t>(45 * 37 * 3, 90)};
  write_pnm(path("in.ppm"), img);
  const auto r = run({"infer", "--ckpt", ckpt, "--image", path("in.ppm"), "--out", path("m.pgm"), "--overlay",
                      path("o.ppm")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const Image8 mask = read_pnm(path("m.pgm"));
  EXPECT_EQ(mask.channels, 1);
  EXPECT_EQ(mask.width, 45);
  EXPECT_EQ(mask.height, 37);
  for (auto v : mask.pixels) EXPECT_TRUE(v == 0 || v == 255);
  EXPECT_TRUE(fs::exists(path("o.ppm")));
}

TEST_F(CliTest, InferMissingImageIsDataError) {
  const auto ckpt = tiny_checkpoint();
  EXPECT_EQ(run({"infer", "--ckpt", ckpt, "--image", path("none.ppm"), "--out", path("m.pgm")}).code,
            cli::kDataError);
}

TEST_F(CliTest, GradcheckPassesAndCatchesCorruptedOp) {
  EXPECT_EQ(run({"gradcheck", "--scope", "primitives"}).code, cli::kOk);
  const auto r = run({"gradcheck", "--scope", "primitives", "--corrupt-op", "gelu"});
  EXPECT_EQ(r.code, cli::kCheckFailed);
  EXPECT_NE(r.err.find("gelu"), std::string::npos);
  EXPECT_EQ(run({"gradcheck", "--scope", "nonsense"}).code, cli::kConfigError);
}

TEST_F(CliTest, BenchWritesCsv) {
  const auto r = run({"bench-attn", "--n-list", "64,128", "--d", "8", "--repeats", "1", "--out", path("b.csv")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  std::ifstream csv(path("b.csv"));
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "n,d,variant,wall_ns,bytes_allocated");
  EXPECT_NE(r.out.find("log-log slope efficient"), std::string::npos);
}

TEST_F(CliTest, AblateWritesOneRowPerSetting) {
  const auto r = run({"ablate", "--synth", "--synth-count", "10", "--hw", "32", "--base-width", "8", "--epochs", "1",
                      "--scales", "1,123", "--out", path("abl")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  std::ifstream csv(path("abl/ablation.csv"));
  std::vector<std::string> lines;
  for (std::string l; std::getline(csv, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[1].substr(0, 2), "1,");
  EXPECT_EQ(lines[2].substr(0, 4), "123,");
  EXPECT_EQ(run({"ablate", "--synth", "--scales", "14", "--out", path("abl2")}).code, cli::kConfigError);
}

TEST_F(CliTest, AblateAtLargerInput) {
  const auto r = run({"ablate", "--synth", "--synth-count", "4", "--hw", "384", "--base-width", "8", "--blocks", "1",
                      "--epochs", "1", "--scales", "123", "--out", path("abl384")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_NE(r.out.find("@384"), std::string::npos);
}

}  // namespace
