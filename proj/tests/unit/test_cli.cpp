#include "dtld/checkpoint.hpp"
#include "dtld/cli.hpp"
#include "dtld/dataset_io.hpp"
#include "dtld/gradcheck.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace dtld {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dtld_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  /// Runs with the tiny config and a short schedule.
  int run(std::vector<std::string> args) {
    if (args.front() != "predict") {
      args.insert(args.begin() + 1, {"-c", (fs::path(DTLD_SOURCE_DIR) / "configs" / "tiny.ini").string(), "--set",
                                     "train.epochs=3", "--set", "train.lr_drop_epoch=3"});
    }
    out_.str("");
    err_.str("");
    return run_cli(args, out_, err_);
  }
  std::string p(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
  std::ostringstream out_, err_;
};

TEST_F(Cli, GenDataIsByteIdentical) {
  ASSERT_EQ(run({"gen-data", "--out", p("a"), "--count", "3"}), 0) << err_.str();
  ASSERT_EQ(run({"gen-data", "--out", p("b"), "--count", "3"}), 0) << err_.str();
  for (const auto& entry : fs::recursive_directory_iterator(dir_ / "a")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir_ / "a");
    EXPECT_EQ(slurp(entry.path()), slurp(dir_ / "b" / rel)) << rel;
  }
  int entries = 0;
  for (const auto& line : lines(slurp(dir_ / "a" / kManifestName)))
    if (!line.empty() && line[0] != '#') ++entries;
  EXPECT_EQ(entries, 3);
}

TEST_F(Cli, GenDataZeroCountFails) {
  EXPECT_EQ(run({"gen-data", "--out", p("a"), "--count", "0"}), 1);
  EXPECT_FALSE(err_.str().empty());
}

TEST_F(Cli, MissingDatasetIsValidationError) {
  EXPECT_EQ(run({"train", "-d", p("absent"), "-o", p("run")}), 1);
  EXPECT_NE(err_.str().find("dataset not found: " + p("absent")), std::string::npos) << err_.str();
}

TEST_F(Cli, UnknownConfigKeyIsValidationError) {
  EXPECT_EQ(run({"params", "--set", "model.colour=3"}), 1);
  EXPECT_NE(err_.str().find("model.colour"), std::string::npos) << err_.str();
}

TEST_F(Cli, UnknownSubcommandFails) {
  std::ostringstream out, err;
  EXPECT_NE(run_cli({"launch"}, out, err), 0);
}

TEST_F(Cli, HelpExitsZero) {
  std::ostringstream out, err;
  EXPECT_EQ(run_cli({"--help"}, out, err), 0);
  EXPECT_NE(out.str().find("gen-data"), std::string::npos);
}

TEST_F(Cli, GroundTruthAsPredictionsScoresPerfectly) {
  ASSERT_EQ(run({"gen-data", "--out", p("d"), "--count", "4"}), 0);
  ASSERT_EQ(run({"eval", "-p", p("d"), "-d", p("d"), "-o", p("ev")}), 0) << err_.str();
  const auto rows = lines(slurp(dir_ / "ev" / "report.tsv"));
  std::map<std::string, double> values;
  for (size_t i = 1; i < rows.size(); ++i) {
    std::istringstream row(rows[i]);
    std::string name;
    double v;
    row >> name >> v;
    values[name] = v;
  }
  EXPECT_EQ(values.at("samples"), 4.0);
  EXPECT_EQ(values.at("nme"), 0.0);
  EXPECT_EQ(values.at("fr@0.08"), 0.0);
  EXPECT_EQ(values.at("fr@0.1"), 0.0);
  EXPECT_EQ(values.at("auc@0.07"), 1.0);
}

TEST_F(Cli, EvalNeedsExactlyOneSource) {
  ASSERT_EQ(run({"gen-data", "--out", p("d"), "--count", "1"}), 0);
  EXPECT_EQ(run({"eval", "-d", p("d"), "-o", p("ev")}), 1);
}

TEST_F(Cli, TrainEvalPredictPipeline) {
  ASSERT_EQ(run({"gen-data", "--out", p("d"), "--count", "4"}), 0);
  ASSERT_EQ(run({"train", "-d", p("d"), "-o", p("run")}), 0) << err_.str();
  ASSERT_TRUE(fs::exists(dir_ / "run" / "model.ckpt"));
  EXPECT_EQ(lines(slurp(dir_ / "run" / "loss.tsv")).size(), 2u + 3u);

  ASSERT_EQ(run({"eval", "-k", p("run/model.ckpt"), "-d", p("d"), "-o", p("ev")}), 0) << err_.str();
  const auto layer_rows = lines(slurp(dir_ / "ev" / "layers.tsv"));
  ASSERT_EQ(layer_rows.size(), 1u + 3u);  // header + Y0..Y2
  EXPECT_EQ(layer_rows[1].rfind("Y0\t", 0), 0u);
  EXPECT_EQ(layer_rows[3].rfind("Y2\t", 0), 0u);

  ASSERT_EQ(run({"predict", "-k", p("run/model.ckpt"), "-i", p("d/images/000000.ppm"), "-g", p("d/labels/000000.pts"),
                 "-o", p("pred")}),
            0)
      << err_.str();
  const LandmarkSet pred = read_landmarks(p("pred.pts"), 32, 32);
  EXPECT_EQ(pred.size(), 5);
  const Image overlay = read_ppm(p("pred.overlay.ppm"));
  EXPECT_EQ(overlay.width, 32);
  EXPECT_EQ(overlay.height, 32);

  // The written file holds the model output to six decimals.
  const Checkpoint ck = load_checkpoint(p("run/model.ckpt"));
  const Model model(ck.config, ck.params);
  const LandmarkSet direct = model.forward(read_ppm(p("d/images/000000.ppm"))).back();
  EXPECT_LE((pred.coords - direct.coords).cwiseAbs().maxCoeff() * 32, 5e-7 + 1e-12);
}

TEST_F(Cli, TrainingIsReproducible) {
  ASSERT_EQ(run({"gen-data", "--out", p("d"), "--count", "2"}), 0);
  ASSERT_EQ(run({"train", "-d", p("d"), "-o", p("r1")}), 0);
  ASSERT_EQ(run({"train", "-d", p("d"), "-o", p("r2")}), 0);
  EXPECT_EQ(slurp(dir_ / "r1" / "model.ckpt"), slurp(dir_ / "r2" / "model.ckpt"));
  EXPECT_EQ(slurp(dir_ / "r1" / "loss.tsv"), slurp(dir_ / "r2" / "loss.tsv"));
}

TEST_F(Cli, GradCheckPassesAndListsEveryPath) {
  ASSERT_EQ(run({"gradcheck", "-o", p("gc.tsv"), "--set", "gradcheck.samples_per_path=2"}), 0) << out_.str();
  const auto rows = lines(slurp(dir_ / "gc.tsv"));
  Model basic(tiny_config(DecoderMode::basic)), parallel(tiny_config(DecoderMode::parallel));
  EXPECT_EQ(rows.size(), 2u + basic.params().refs().size() + parallel.params().refs().size());
  for (size_t i = 2; i < rows.size(); ++i) EXPECT_NE(rows[i].find("\tpass"), std::string::npos) << rows[i];
}

TEST_F(Cli, GradCheckFlagsInjectedFault) {
  const std::string path = "decoder.layer0.ffn.fc1.weight";
  EXPECT_EQ(run({"gradcheck", "-o", p("gc.tsv"), "--set", "gradcheck.mode=basic", "--set",
                 "gradcheck.samples_per_path=2", "--inject-fault", path}),
            2);
  EXPECT_NE(out_.str().find("failed: " + path), std::string::npos) << out_.str();
}

TEST_F(Cli, ParamsPrintsTotal) {
  ASSERT_EQ(run({"params"}), 0);
  Model model(tiny_config(DecoderMode::basic));
  EXPECT_NE(out_.str().find("total"), std::string::npos);
  EXPECT_NE(out_.str().find(std::to_string(count_parameters(model.params()).total)), std::string::npos) << out_.str();
}

TEST_F(Cli, SelfTrainWritesRounds) {
  ASSERT_EQ(run({"gen-data", "--out", p("lab"), "--count", "2"}), 0);
  ASSERT_EQ(run({"gen-data", "--out", p("unl"), "--count", "2", "--seed", "99"}), 0);
  ASSERT_EQ(run({"train", "-d", p("lab"), "-o", p("run")}), 0);
  ASSERT_EQ(run({"self-train", "-k", p("run/model.ckpt"), "--labeled", p("lab"), "--unlabeled", p("unl"), "--eval",
                 p("unl"), "--rounds", "2", "-o", p("st")}),
            0)
      << err_.str();
  const auto rows = lines(slurp(dir_ / "st" / "rounds.tsv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].rfind("1\t4\t", 0), 0u) << rows[1];
  EXPECT_TRUE(fs::exists(dir_ / "st" / "model.ckpt"));
}

}  // namespace
}  // namespace dtld
