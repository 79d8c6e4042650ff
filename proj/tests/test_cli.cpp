#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ffdnet/eval.hpp"
#include "ffdnet/image_io.hpp"
#include "ffdnet/map_io.hpp"
#include "ffdnet/model_io.hpp"

using namespace ffdnet;
namespace fs = std::filesystem;

namespace {

const std::string kCli = FFDNET_CLI;
const std::string kData = FFDNET_DATA_DIR;

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr
};

Run run(const std::string& args) {
  Run r;
  FILE* p = popen((kCli + " " + args + " 2>&1").c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("ffdnet_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Tiny manifest of two bundled images and a fast training command.
  std::string manifest() const {
    const std::string m = path("manifest.txt");
    std::ofstream(m) << kData << "/images/camera.png\n" << kData << "/images/coins.png gray\n";
    return m;
  }
  std::string train_args(const std::string& out) const {
    return "train --manifest " + manifest() + " --layers 3 --channels 4 --epochs 5 --patch-size 16 --batch-size 4 "
           "--patches 8 --seed 7 --out " + out;
  }

  fs::path dir_;
};

std::string slurp(const std::string& p) {
  const Bytes b = read_file(p);
  return {b.begin(), b.end()};
}

const std::string kToy = kData + "/models/toy.model";
// Measured 32.80 dB when the toy model was frozen.
constexpr double kGoldenSigmaZeroFloor = 32.5;
const std::string kChelsea = kData + "/images/chelsea.png";

}  // namespace

TEST_F(Cli, HelpOnEverySubcommand) {
  const std::vector<std::pair<std::string, std::vector<std::string>>> cmds{
      {"", {"train", "denoise", "noise", "eval", "serve"}},
      {"train", {"--manifest", "--layers", "--channels", "--epochs", "--finetune-epochs", "--patch-size", "--batch-size",
                 "--patches", "--sigma-min", "--sigma-max", "--seed", "--out", "--log", "--clipped", "--no-augment"}},
      {"denoise", {"--model", "--input", "--output", "--sigma", "--map", "--anchors"}},
      {"noise", {"--input", "--output", "--sigma", "--map", "--anchors", "--clipped", "--seed"}},
      {"eval", {"psnr", "sweep", "variant"}},
      {"eval psnr", {"--quantize"}},
      {"eval sweep", {"--model", "--image", "--true-sigma", "--inputs", "--input-sigma", "--trues", "--seed", "--quantize"}},
      {"eval variant", {"--model", "--image", "--map", "--gradient", "--seed"}},
      {"serve", {"--port", "--model", "--max-pixels", "--host"}}};
  for (const auto& [cmd, flags] : cmds) {
    const auto r = run(cmd + " --help");
    EXPECT_EQ(r.code, 0) << cmd;
    for (const auto& f : flags) EXPECT_NE(r.output.find(f), std::string::npos) << cmd << " lacks " << f;
  }
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("bogus").code, 2);
  EXPECT_EQ(run("denoise --model m --input a.png --output b.png --sigma 80").code, 2);
  EXPECT_EQ(run("denoise --model m --input a.png --output b.png --frobnicate").code, 2);
  EXPECT_EQ(run("eval sweep --model m --image i.png --true-sigma 25").code, 2);
}

TEST_F(Cli, TrainWritesModelAndLog) {
  const auto r = run(train_args(path("toy.model")) + " --log " + path("loss.log"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto p = load_model<double>(path("toy.model"));
  EXPECT_EQ(p.config.num_layers, 3u);
  EXPECT_EQ(p.config.num_channels, 4u);
  EXPECT_TRUE(p.bn_merged);
  std::ifstream log(path("loss.log"));
  std::string line;
  int n = 0;
  while (std::getline(log, line)) {
    ++n;
    EXPECT_EQ(line.rfind("epoch " + std::to_string(n) + " loss ", 0), 0u) << line;
    EXPECT_NE(line.find(" phase "), std::string::npos);
  }
  EXPECT_EQ(n, 5);
}

TEST_F(Cli, TrainIsDeterministic) {
  ASSERT_EQ(run(train_args(path("a.model"))).code, 0);
  ASSERT_EQ(run(train_args(path("b.model"))).code, 0);
  EXPECT_EQ(slurp(path("a.model")), slurp(path("b.model")));
}

TEST_F(Cli, TrainMissingManifestNamesPath) {
  const auto r = run("train --manifest " + path("absent.txt") + " --out " + path("x.model"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find(path("absent.txt")), std::string::npos) << r.output;
}

TEST_F(Cli, DenoiseMapFlagsAreExclusive) {
  const std::string base = "denoise --model " + kToy + " --input " + kChelsea + " --output " + path("o.png");
  EXPECT_EQ(run(base).code, 2);
  EXPECT_EQ(run(base + " --sigma 25 --anchors 0,0,25").code, 2);
  EXPECT_EQ(run(base + " --sigma 25 --map m.nlm").code, 2);
  EXPECT_EQ(run(base + " --anchors 1,2").code, 2);
}

TEST_F(Cli, DenoiseWrongMapSizeFails) {
  save_map(path("small.nlm"), uniform_map(8, 8, 20));
  const auto r = run("denoise --model " + kToy + " --input " + kChelsea + " --output " + path("o.png") + " --map " +
                     path("small.nlm"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("small.nlm"), std::string::npos) << r.output;
}

TEST_F(Cli, SingleAnchorEqualsUniformBitwise) {
  const std::string base = "denoise --model " + kToy + " --input " + kChelsea;
  ASSERT_EQ(run(base + " --output " + path("a.png") + " --anchors 0,0,25").code, 0);
  ASSERT_EQ(run(base + " --output " + path("s.png") + " --sigma 25").code, 0);
  EXPECT_EQ(slurp(path("a.png")), slurp(path("s.png")));
}

TEST_F(Cli, DenoiseMapFileAndOddSizes) {
  Image8 img{33, 21, 1, std::vector<std::uint8_t>(33 * 21)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = std::uint8_t((i * 37) % 256);
  write_image8(path("odd.pgm"), img);
  save_map(path("odd.nlm"), gradient_map(21, 33, 5, 40));
  const auto r = run("denoise --model " + kToy + " --input " + path("odd.pgm") + " --output " + path("odd_out.pgm") +
                     " --map " + path("odd.nlm"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto out = read_image8(path("odd_out.pgm"));
  EXPECT_EQ(out.width, 33u);
  EXPECT_EQ(out.height, 21u);
}

TEST_F(Cli, GoldenSigmaZeroRegression) {
  ASSERT_EQ(run("denoise --model " + kToy + " --input " + kChelsea + " --output " + path("z.png") + " --sigma 0").code, 0);
  const auto out = load_image<double>(path("z.png"));
  EXPECT_EQ(read_image8(path("z.png")), read_image8(std::string(FFDNET_FIXTURE_DIR) + "/toy_chelsea_sigma0.png"));
  const double p = psnr(load_image<double>(kChelsea), out);
  std::printf("toy model, sigma 0, PSNR vs input: %.2f dB\n", p);
  EXPECT_GE(p, kGoldenSigmaZeroFloor);
}

TEST_F(Cli, NoiseIsSeeded) {
  const std::string base = "noise --input " + kChelsea + " --sigma 25";
  ASSERT_EQ(run(base + " --seed 1 --output " + path("n1.png")).code, 0);
  ASSERT_EQ(run(base + " --seed 1 --output " + path("n2.png")).code, 0);
  ASSERT_EQ(run(base + " --seed 2 --output " + path("n3.png")).code, 0);
  EXPECT_EQ(slurp(path("n1.png")), slurp(path("n2.png")));
  EXPECT_NE(slurp(path("n1.png")), slurp(path("n3.png")));
  ASSERT_EQ(run(base + " --clipped --seed 1 --output " + path("c.pgm")).code, 0);
  const double p = psnr(load_image<double>(kChelsea), load_image<double>(path("n1.png")));
  EXPECT_NEAR(p, 20 * std::log10(255.0 / 25), 0.5);
}

TEST_F(Cli, EvalPsnrOfIdenticalImagesIsInf) {
  const auto r = run("eval psnr " + kChelsea + " " + kChelsea);
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.output, "inf\n");
}

TEST_F(Cli, EvalSweepPrintsCsvRows) {
  const auto r = run("eval sweep --model " + kToy + " --image " + kChelsea + " --true-sigma 25 --inputs 5,15,25,50 --seed 3");
  ASSERT_EQ(r.code, 0) << r.output;
  std::istringstream in(r.output);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "input_sigma,psnr");
  EXPECT_EQ(lines[1].rfind("5,", 0), 0u);
  EXPECT_EQ(lines[4].rfind("50,", 0), 0u);
  EXPECT_EQ(run("eval sweep --model " + kToy + " --image " + kChelsea + " --true-sigma 25 --inputs 5,15,25,50 --seed 3").output,
            r.output);
}

TEST_F(Cli, EvalVariantReport) {
  const auto r = run("eval variant --model " + kToy + " --image " + kChelsea + " --gradient 5,50 --seed 4");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("noisy "), std::string::npos);
  EXPECT_NE(r.output.find("matched "), std::string::npos);
  EXPECT_NE(r.output.find("uniform_mean "), std::string::npos);
}
