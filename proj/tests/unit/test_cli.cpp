#include "covae/dataset_io.hpp"
#include "covae/scm.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("covae_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::string& args) {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && COVAE_THREADS=1 '" + COVAE_CLI_PATH + "' " + args + " > '" +
                            out.string() + "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = covae::io::read_text_file(out);
    r.err = covae::io::read_text_file(err);
    return r;
  }

  std::string slurp(const fs::path& p) { return covae::io::read_text_file(dir_ / p); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenWritesDatasetDeterministically) {
  ASSERT_EQ(run("gen --family syn --k 3 --n 200 --seed 4 --out a").code, 0);
  ASSERT_EQ(run("gen --family syn --k 3 --n 200 --seed 4 --out b").code, 0);
  EXPECT_EQ(slurp("a/data.csv"), slurp("b/data.csv"));
  EXPECT_EQ(slurp("a/manifest.json"), slurp("b/manifest.json"));
  const auto loaded = covae::io::load_dataset(dir_ / "a");
  EXPECT_EQ(loaded.d(), 3u);
  EXPECT_EQ(loaded.o(), 6u);
  EXPECT_EQ(loaded.n(), 200u);
}

TEST_F(Cli, MorphoManifest) {
  ASSERT_EQ(run("gen --family morpho --variant TSWI --n 100 --out m").code, 0);
  const auto manifest = json::parse(slurp("m/manifest.json"));
  EXPECT_EQ(manifest.at("d"), 4);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  auto r = run("gen --family nope --out x");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("covae-error: ", 0), 0u) << r.err;
  r = run("gen --family morpho --variant XY --out x");
  EXPECT_EQ(r.code, 2);
  r = run("train --dataset does-not-exist --steps 1 --seeds 0");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("covae-error: input"), std::string::npos) << r.err;
  r = run("train --dataset syn-2 --steps 1 --seeds 1,1");
  EXPECT_EQ(r.code, 2);
  r = run("eval --checkpoints nowhere --dataset syn-2");
  EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, VaeForcesAlphaAndComponents) {
  ASSERT_EQ(run("gen --family syn --k 2 --n 300 --out d").code, 0);
  ASSERT_EQ(run("train --method vae --dataset d --alpha 3 --J 7 --steps 2 --seeds 0 --out runs").code, 0);
  const auto cfg = json::parse(slurp("runs/config.json"));
  EXPECT_EQ(cfg.at("alpha"), 0.0);
  EXPECT_EQ(cfg.at("J"), 1);
  EXPECT_TRUE(fs::exists(dir_ / "runs/seed_0/checkpoint.bin"));
  EXPECT_TRUE(fs::exists(dir_ / "runs/seed_0/trace.csv"));
}

TEST_F(Cli, SingleCheckpointHasNullMccR) {
  ASSERT_EQ(run("gen --family syn --k 2 --n 300 --out d").code, 0);
  ASSERT_EQ(run("train --dataset d --steps 2 --seeds 0 --out runs").code, 0);
  ASSERT_EQ(run("eval --checkpoints runs --dataset d --out rep.json").code, 0);
  const auto rep = json::parse(slurp("rep.json"));
  EXPECT_TRUE(rep.at("mcc_r").is_null());
  EXPECT_TRUE(fs::exists(dir_ / "rep.txt"));
}

TEST_F(Cli, OrderSingleColumn) {
  std::ofstream(dir_ / "one.csv") << "a\n0.3\n1.2\n-0.5\n0.8\n2.0\n-1.1\n0.1\n0.4\n-0.3\n0.9\n1.5\n-2.0\n0.7\n0.2\n-0.8\n1.1\n";
  ASSERT_EQ(run("order --data one.csv --out g.json").code, 0);
  const auto g = json::parse(slurp("g.json"));
  EXPECT_EQ(g.at("order"), json::array({0}));
  EXPECT_EQ(g.at("adjacency"), json::array({json::array({0})}));
}

TEST_F(Cli, OrderRecoversShuffledGroundTruth) {
  const auto ds = covae::scm::make_syn(2, 2000, 1);
  std::string csv = "b,a\n";  // stored column 0 (the leaf) is written second
  for (Eigen::Index i = 0; i < ds.Z.rows(); ++i) {
    covae::io::append_double(csv, ds.Z(i, 1));
    csv += ',';
    covae::io::append_double(csv, ds.Z(i, 0));
    csv += '\n';
  }
  covae::io::write_text_file(dir_ / "z.csv", csv);
  ASSERT_EQ(run("order --data z.csv --out g.json").code, 0);
  const auto g = json::parse(slurp("g.json"));
  EXPECT_EQ(g.at("order_names"), json::array({"a", "b"}));
  EXPECT_EQ(g.at("adjacency"), json::array({json::array({0, 1}), json::array({0, 0})}));
}

TEST_F(Cli, OrderRejectsTinyInput) {
  std::ofstream(dir_ / "tiny.csv") << "a,b\n1,2\n3,4\n";
  const auto r = run("order --data tiny.csv");
  EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, ReportRejectsDuplicateSeeds) {
  ASSERT_EQ(run("gen --family syn --k 2 --n 300 --out d").code, 0);
  ASSERT_EQ(run("train --dataset d --steps 2 --seeds 0 --out runs").code, 0);
  ASSERT_EQ(run("eval --checkpoints runs --dataset d --out r1.json").code, 0);
  ASSERT_EQ(run("eval --checkpoints runs --dataset d --out r2.json").code, 0);
  EXPECT_EQ(slurp("r1.json"), slurp("r2.json"));
  const auto r = run("report --runs r1.json r2.json");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("covae-error: schema"), std::string::npos) << r.err;
}
