#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mrcn/metrics.hpp"
#include "mrcn/raster_io.hpp"

namespace fs = std::filesystem;
using namespace mrcn;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(MRCN_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int st = ::pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir() { return fs::temp_directory_path() / "mrcn_cli_test"; }

  static void SetUpTestSuite() {
    fs::remove_all(dir());
    fs::create_directories(dir());
    std::ofstream(dir() / "tiny.cfg") << R"([arch]
variant = fusenet_low
patch_size = 4
bottleneck_hw = 1
num_classes = 4
[train]
batch_size = 8
max_epochs = 2
train_patches = 16
validation_patches = 8
seed = 7
[data]
tile_size = 64
train_tiles = 1
validation_tiles = 1
test_tiles = 1
label_fraction = 0.2
)";
    std::ofstream(dir() / "reuse.cfg") << R"([arch]
variant = fusenet_low
patch_size = 4
bottleneck_hw = 1
num_classes = 4
[reuse]
instances = 2
[train]
batch_size = 8
max_epochs = 1
train_patches = 8
validation_patches = 8
)";
  }

  std::string cfg(const char* name = "tiny.cfg") const { return "--config " + (dir() / name).string(); }
};

}  // namespace

TEST_F(Cli, SynthIsDeterministic) {
  const auto a = dir() / "synth_a", b = dir() / "synth_b", c = dir() / "synth_c";
  ASSERT_EQ(run("synth " + cfg() + " --out-dir " + a.string()).code, 0);
  ASSERT_EQ(run("synth " + cfg() + " --out-dir " + b.string()).code, 0);
  const auto r = run("synth " + cfg() + " --seed 99 --out-dir " + c.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("tile1"), std::string::npos);
  EXPECT_NE(r.out.find("0.2000"), std::string::npos);
  for (const char* f : {"tile1_pan.mras", "tile2_lbl.mras", "tile3_ms.mras", "manifest.txt"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_NE(slurp(a / "tile1_pan.mras"), slurp(c / "tile1_pan.mras"));
}

TEST_F(Cli, TrainPredictEvaluate) {
  const auto data = dir() / "data";
  ASSERT_EQ(run("synth " + cfg() + " --out-dir " + data.string()).code, 0);
  const auto o1 = dir() / "run1", o2 = dir() / "run2";
  const auto t1 = run("train " + cfg() + " --data " + data.string() + " --out " + o1.string());
  ASSERT_EQ(t1.code, 0) << t1.out;
  ASSERT_EQ(run("train " + cfg() + " --data " + data.string() + " --out " + o2.string()).code, 0);
  EXPECT_EQ(slurp(o1 / "model.mckp"), slurp(o2 / "model.mckp"));
  EXPECT_EQ(slurp(o1 / "history.csv"), slurp(o2 / "history.csv"));
  EXPECT_TRUE(fs::exists(o1 / "effective.cfg"));

  const auto scores = dir() / "scores.mras", labels = dir() / "labels.mras";
  const auto p = run("predict --checkpoint " + (o1 / "model.mckp").string() + " --pan " + (data / "tile3_pan.mras").string() +
                     " --ms " + (data / "tile3_ms.mras").string() + " --out-scores " + scores.string() +
                     " --out-labels " + labels.string());
  ASSERT_EQ(p.code, 0) << p.out;
  EXPECT_EQ(read_raster_f32(scores).dims(), (Dims{1, 4, 64, 64}));
  const auto lbl = read_raster_as<std::uint8_t>(labels);
  EXPECT_EQ(lbl.dims(), (Dims{1, 1, 64, 64}));

  const auto report = dir() / "report.csv";
  const auto e = run("evaluate --classes 4 --pred " + labels.string() + " --ref " + (data / "tile3_lbl.mras").string() +
                     " --report " + report.string());
  ASSERT_EQ(e.code, 0) << e.out;
  ConfusionMatrix cm(4);
  accumulate(cm, lbl, read_raster_as<std::uint8_t>(data / "tile3_lbl.mras"));
  std::ostringstream want;
  want << "OA," << std::setprecision(8) << overall_accuracy(cm);
  EXPECT_NE(slurp(report).find(want.str()), std::string::npos) << slurp(report);

  // per-instance output needs a ReuseNet
  const auto bad = run("predict --checkpoint " + (o1 / "model.mckp").string() + " --pan " +
                       (data / "tile3_pan.mras").string() + " --ms " + (data / "tile3_ms.mras").string() +
                       " --out-scores " + scores.string() + " --per-instance");
  EXPECT_EQ(bad.code, 2) << bad.out;
}

TEST_F(Cli, ReuseNetPerInstanceOutputs) {
  const auto data = dir() / "data_r";
  ASSERT_EQ(run("synth " + cfg() + " --out-dir " + data.string()).code, 0);
  const auto o = dir() / "run_r";
  const auto t = run("train " + cfg("reuse.cfg") + " --data " + data.string() + " --out " + o.string());
  ASSERT_EQ(t.code, 0) << t.out;
  const auto scores = dir() / "r_scores.mras";
  const auto p = run("predict --checkpoint " + (o / "model.mckp").string() + " --pan " + (data / "tile3_pan.mras").string() +
                     " --ms " + (data / "tile3_ms.mras").string() + " --out-scores " + scores.string() + " --per-instance");
  ASSERT_EQ(p.code, 0) << p.out;
  EXPECT_TRUE(fs::exists(dir() / "r_scores_inst1.mras"));
  EXPECT_TRUE(fs::exists(dir() / "r_scores_inst2.mras"));
  EXPECT_FALSE(fs::exists(dir() / "r_scores_inst3.mras"));
  EXPECT_EQ(slurp(dir() / "r_scores_inst2.mras"), slurp(scores));
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train --data x").code, 2);
  {
    std::ofstream(dir() / "bad.cfg") << "[arch]\nvariant = nope\n";
    const auto r = run("synth " + cfg("bad.cfg") + " --out-dir " + (dir() / "never").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("bad.cfg:2:"), std::string::npos) << r.out;
  }
  {
    const auto r = run("train " + cfg() + " --data " + (dir() / "missing").string() + " --out " + (dir() / "o").string());
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.out.find("manifest.txt"), std::string::npos) << r.out;
  }
  {
    // empty evaluation: reference without labeled pixels
    write_raster(dir() / "empty_ref.mras", Tensor<std::uint8_t>(Dims{1, 1, 4, 4}, kUnlabeled));
    write_raster(dir() / "empty_pred.mras", Tensor<std::uint8_t>(Dims{1, 1, 4, 4}, 0));
    const auto r = run("evaluate --classes 2 --pred " + (dir() / "empty_pred.mras").string() + " --ref " +
                       (dir() / "empty_ref.mras").string());
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.out.find("empty evaluation"), std::string::npos) << r.out;
  }
  EXPECT_EQ(run("gradcheck --ops-only").code, 0);
  const auto g = run("gradcheck --ops-only --corrupt");
  EXPECT_EQ(g.code, 5);
  EXPECT_NE(g.out.find("conv2d"), std::string::npos);
}
