#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "qpress/bitstream.h"
#include "qpress/image.h"
#include "test_util.h"

namespace qpress {
namespace {

using testing::SyntheticImage;

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string Slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("cli");
    std::filesystem::create_directories(Path("data"));
    SavePng(SyntheticImage(40, 70), Path("data/a.png"));
    SavePng(SyntheticImage(32, 32, 0.6), Path("data/b.png"));
    std::ofstream(Path("c.ini")) << "[model]\n"
                                    "tile_size = 32\n"
                                    "patch_size = 8\n"
                                    "num_queries = 4\n"
                                    "dim = 8\n"
                                    "depth = 2\n"
                                    "heads = 2\n"
                                    "[train]\n"
                                    "crop = 32\n"
                                    "lr = 0.001\n"
                                    "checkpoint_every = 0\n";
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static std::filesystem::path Path(const std::string& name) { return dir_->path() / name; }

  static RunResult Run(const std::string& args) {
    const std::string cmd = std::string(QPF_PATH) + " " + args + " > " +
                            Path("stdout").string() + " 2> " + Path("stderr").string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = Slurp(Path("stdout"));
    r.err = Slurp(Path("stderr"));
    return r;
  }

  static void Train() {
    if (std::filesystem::exists(Path("run/final.qpck"))) return;
    const RunResult r = Run("train --config " + Path("c.ini").string() + " --dataset " +
                            Path("data").string() + " --out " + Path("run").string() +
                            " --steps 3");
    ASSERT_EQ(r.exit_code, 0) << r.err;
  }

  static std::string Ckpt() { return " --checkpoint " + Path("run/final.qpck").string(); }

  static testing::TempDir* dir_;
};

testing::TempDir* CliTest::dir_ = nullptr;

TEST_F(CliTest, TrainWritesACheckpointAndMetrics) {
  Train();
  EXPECT_TRUE(std::filesystem::exists(Path("run/final.qpck")));
  EXPECT_EQ(Slurp(Path("run/metrics.csv")).substr(0, 30), "step,loss,rate_bpp,distortion\n");
}

TEST_F(CliTest, CompressDecompressRoundTrip) {
  Train();
  RunResult r = Run("compress " + Path("data/a.png").string() + " -o " +
                    Path("a.qpf").string() + Ckpt());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("bpp"), std::string::npos);
  const Bitstream stream = ParseBitstream(ReadFile(Path("a.qpf")));
  EXPECT_EQ(stream.tile_cols, 2);
  r = Run("decompress " + Path("a.qpf").string() + " -o " + Path("a_rec.png").string() +
          Ckpt());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const Image rec = LoadImage(Path("a_rec.png"));
  EXPECT_EQ(rec.height(), 32);
  EXPECT_EQ(rec.width(), 64);

  r = Run("compress " + Path("data/a.png").string() + " --side-info -o " +
          Path("a_side.qpf").string() + Ckpt());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_GT(std::filesystem::file_size(Path("a_side.qpf")),
            std::filesystem::file_size(Path("a.qpf")));
}

TEST_F(CliTest, EvalWritesCsv) {
  Train();
  const RunResult r = Run("eval --dataset " + Path("data").string() + " --csv " +
                          Path("eval.csv").string() + Ckpt());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const std::string csv = Slurp(Path("eval.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "image,height,width,tiles,psnr,ms_ssim,perceptual,file_bpp,payload_bpp");
  EXPECT_NE(csv.find("a.png,40,70,2,"), std::string::npos);
  EXPECT_NE(csv.find("b.png,32,32,1,"), std::string::npos);
}

TEST_F(CliTest, VisualizationsProduceImages) {
  Train();
  RunResult r = Run("viz-attn " + Path("data/a.png").string() + " -o " +
                    Path("attn.png").string() + " --mode mean --query 1" + Ckpt());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(LoadImage(Path("attn.png")).width(), 64);

  r = Run("viz-ablate --dataset " + Path("data").string() + " --all -o " +
          Path("ablate").string() + Ckpt());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  for (int q = 0; q < 4; ++q) {
    EXPECT_TRUE(std::filesystem::exists(Path("ablate/query_" + std::to_string(q) + ".png")));
  }

  r = Run("viz-pca " + Path("data/a.png").string() + " --layer 2 -o " +
          Path("pca.png").string() + Ckpt());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("explained variance"), std::string::npos);
  r = Run("viz-pca " + Path("data/a.png").string() + " --layer 3 -o " +
          Path("pca.png").string() + Ckpt());
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("error: input:"), std::string::npos);
}

TEST_F(CliTest, ErrorsAreReportedWithKindAndExitCode) {
  Train();
  RunResult r = Run("compress");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("error: usage:"), std::string::npos);
  r = Run("frobnicate");
  EXPECT_EQ(r.exit_code, 2);
  r = Run("decompress " + Path("missing.qpf").string() + " -o x.png" + Ckpt());
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("error: io:"), std::string::npos);
  std::ofstream(Path("bad.qpf")) << "garbage";
  r = Run("decompress " + Path("bad.qpf").string() + " -o x.png" + Ckpt());
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("error: format:"), std::string::npos);
}

}  // namespace
}  // namespace qpress
