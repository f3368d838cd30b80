#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

class Cli : public ::testing::Test {
protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("s2sr_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ASSERT_EQ(run("synth --out ratings.tsv --users 60 --items 100 --mean 20 --seed 3").code, 0);
    write("base.json", R"({"data": {"path": "ratings.tsv", "min_interactions": 5},
                           "model": {"dim": 8}, "train": {"epochs": 3, "lr": 0.01},
                           "eval": {"cutoffs": [5, 10]}})");
  }

  Outcome run(const std::string& args) const {
    std::string cmd = "cd '" + dir_.string() + "' && '" S2SR_BIN "' " + args + " > out.txt 2> err.txt";
    int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(dir_ / "out.txt");
    r.err = slurp(dir_ / "err.txt");
    return r;
  }

  void write(const std::string& name, const std::string& text) const { std::ofstream(dir_ / name) << text; }
  fs::path path(const std::string& rel) const { return dir_ / rel; }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, PrepareWritesDatasetAndIsReproducible) {
  auto a = run("prepare -c base.json --out a/ds.bin");
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("users:"), std::string::npos);
  EXPECT_NE(a.out.find("density:"), std::string::npos);
  ASSERT_EQ(run("prepare -c base.json --out b/ds.bin").code, 0);
  EXPECT_EQ(slurp(path("a/ds.bin")), slurp(path("b/ds.bin")));
  EXPECT_EQ(slurp(path("a/ds.bin.json")), slurp(path("b/ds.bin.json")));
}

TEST_F(Cli, PrepareMissingInput) {
  auto r = run("prepare --set data.path=absent.tsv --out ds.bin");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("absent.tsv"), std::string::npos);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("train -c missing.json").code, 2);
  write("bad.json", "{ not json");
  EXPECT_EQ(run("train -c bad.json").code, 2);
}

TEST_F(Cli, InvalidObjectiveListsChoices) {
  auto r = run("train -c base.json --set train.objective=listwise --run-dir r");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bpr, set2set, set2set_easy"), std::string::npos);
}

TEST_F(Cli, TrainPresetsAndArtifacts) {
  for (std::string p : {"paper-default", "paper-adaptive", "bpr"}) {
    auto r = run("train --preset " + p + " -c base.json --run-dir " + p);
    ASSERT_EQ(r.code, 0) << p << ": " << r.err;
    for (auto f : {"config.json", "train_log.jsonl", "model.ck", "model.ck.json", "report_test.json",
                   "report_test.txt"})
      EXPECT_TRUE(fs::exists(path(p + "/" + f))) << p << "/" << f;
  }
  auto cfg = json::parse(slurp(path("paper-adaptive/config.json")));
  EXPECT_EQ(cfg["train"]["beta"], 0.2);
  EXPECT_EQ(cfg["train"]["mask_enabled"], true);
  std::ifstream log(path("paper-default/train_log.jsonl"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    auto j = json::parse(line);
    EXPECT_TRUE(j.contains("objective"));
    EXPECT_TRUE(j.contains("seconds"));
    ++lines;
  }
  EXPECT_EQ(lines, 3u);
  auto side = json::parse(slurp(path("paper-default/model.ck.json")));
  auto rep = json::parse(slurp(path("paper-default/report_test.json")));
  EXPECT_EQ(side["config_hash"], rep["config_hash"]);
}

TEST_F(Cli, GeneratedRunDirectory) {
  ASSERT_EQ(run("train -c base.json --runs-root runs").code, 0);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(path("runs"))) {
    EXPECT_EQ(e.path().filename().string().size(), 15u + 1u + 8u);
    ++n;
  }
  EXPECT_EQ(n, 1u);
}

TEST_F(Cli, EvaluateMissingCheckpoint) {
  EXPECT_EQ(run("evaluate -c base.json --checkpoint nothing.ck").code, 2);
  EXPECT_EQ(run("evaluate -c base.json").code, 2);
}

TEST_F(Cli, EvaluateReportsAgree) {
  ASSERT_EQ(run("prepare -c base.json --out ds.bin").code, 0);
  ASSERT_EQ(run("train -c base.json --dataset ds.bin --run-dir t").code, 0);
  auto r = run("evaluate --checkpoint t/model.ck --dataset ds.bin --cutoffs 5,10 --run-dir e");
  ASSERT_EQ(r.code, 0) << r.err;
  auto rep = json::parse(slurp(path("e/report_test.json")));
  auto train_rep = json::parse(slurp(path("t/report_test.json")));
  EXPECT_EQ(rep["hr"], train_rep["hr"]);
  EXPECT_EQ(rep["ndcg"], train_rep["ndcg"]);
  auto text = slurp(path("e/report_test.txt"));
  for (const auto& key : {"hr", "ndcg"})
    for (const auto& v : rep[key]) EXPECT_NE(text.find(v.dump()), std::string::npos) << v.dump();

  ASSERT_EQ(run("evaluate --checkpoint t/model.ck --dataset ds.bin --split val").code, 0);
  EXPECT_TRUE(fs::exists(path("t/report_val.json")));
  EXPECT_EQ(run("evaluate --checkpoint t/model.ck --dataset ds.bin --split train").code, 2);
  EXPECT_EQ(run("evaluate --checkpoint t/model.ck --dataset ds.bin --cutoffs 0").code, 2);
}

TEST_F(Cli, EvaluateWarnsOnConfigHashMismatch) {
  ASSERT_EQ(run("train -c base.json --run-dir t").code, 0);
  auto r = run("evaluate -c base.json --set train.beta=0.9 --checkpoint t/model.ck");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("hash"), std::string::npos);
}

TEST_F(Cli, CompareErrors) {
  EXPECT_EQ(run("compare -c base.json --run-dir c").code, 2);
  EXPECT_EQ(run("compare -c base.json --set grid={} --run-dir c").code, 2);
  EXPECT_EQ(run("compare -c base.json --set grid.L=[] --run-dir c").code, 2);
  EXPECT_EQ(run("compare -c base.json --set grid.L=[2] --no-item-to-set --no-set-to-set --run-dir c").code, 2);
}

TEST_F(Cli, OneCellGridMatchesTrainEvaluate) {
  ASSERT_EQ(run("prepare -c base.json --out ds.bin").code, 0);
  ASSERT_EQ(run("train -c base.json --dataset ds.bin --run-dir t").code, 0);
  auto r = run("compare -c base.json --set grid.L=[2] --dataset ds.bin --run-dir c");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("grid: 1 cells"), std::string::npos);
  auto cmp = json::parse(slurp(path("c/compare.json")));
  ASSERT_EQ(cmp["rows"].size(), 1u);
  auto train_rep = json::parse(slurp(path("t/report_test.json")));
  EXPECT_EQ(cmp["rows"][0]["median"]["hr"], train_rep["hr"]);
  EXPECT_EQ(cmp["rows"][0]["median"]["ndcg"], train_rep["ndcg"]);
}

TEST_F(Cli, ConfigFilesMergeInOrder) {
  write("grid.json", R"({"train": {"epochs": 2}, "grid": {"K": [3, 4]}})");
  auto r = run("compare -c base.json -c grid.json --run-dir c");
  ASSERT_EQ(r.code, 0) << r.err;
  auto cfg = json::parse(slurp(path("c/config.json")));
  EXPECT_EQ(cfg["train"]["epochs"], 2);
  EXPECT_EQ(cfg["model"]["dim"], 8);
  EXPECT_EQ(json::parse(slurp(path("c/compare.json")))["rows"].size(), 2u);
}

TEST_F(Cli, CompareAblationFlags) {
  auto r = run("compare -c base.json --set grid.L=[2,3] --no-set-to-set --run-dir c");
  ASSERT_EQ(r.code, 0) << r.err;
  auto cmp = json::parse(slurp(path("c/compare.json")));
  ASSERT_EQ(cmp["rows"].size(), 2u);
  for (const auto& row : cmp["rows"]) {
    EXPECT_EQ(row["variant"], "no-set-to-set");
    EXPECT_EQ(row["train"]["lambda"], 0.0);
  }
  EXPECT_NE(slurp(path("c/compare.txt")).find("N=10"), std::string::npos);
}

TEST_F(Cli, DeterministicReruns) {
  for (std::string d : {"a", "b"})
    ASSERT_EQ(run("train -c base.json --deterministic --seed 5 --run-dir " + d).code, 0);
  EXPECT_EQ(slurp(path("a/report_test.json")), slurp(path("b/report_test.json")));
  EXPECT_EQ(slurp(path("a/report_test.txt")), slurp(path("b/report_test.txt")));
  EXPECT_EQ(slurp(path("a/model.ck")), slurp(path("b/model.ck")));
}

TEST_F(Cli, ProbeComplexity) {
  auto r = run("probe-complexity --synthetic-users 100 --k 5,10 --epochs 1 --set model.dim=8 --run-dir p");
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = json::parse(slurp(path("p/probe.json")));
  EXPECT_EQ(j["points"].size(), 2u);
  EXPECT_TRUE(j.contains("r2"));
}
