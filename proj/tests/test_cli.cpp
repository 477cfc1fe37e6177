#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "cli.hpp"

namespace fs = std::filesystem;
using thlm::cli::cli_run;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "thlm");
  args.insert(args.begin() + 1, "--quiet");
  return cli_run(args);
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "thlm_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    ASSERT_EQ(run({"synth", "--seed", "0", "--out", (root_ / "data").string(), "--set", "num_rich=60", "--set",
                   "num_a=30", "--set", "num_b=20", "--set", "p_in=0.15"}),
              0);
    std::ofstream(root_ / "tiny.json") << R"({"total_steps": 4, "warmup_steps": 1, "batch_size": 8, "d_tok": 16,
      "d": 8, "ffn_dim": 32, "lm_layers": 1, "max_len": 32})";
    std::ofstream(root_ / "header.json") << R"({"hidden": 8, "max_steps": 40, "patience": 2})";
  }
  static fs::path root_;
  fs::path data() const { return root_ / "data"; }
};

fs::path CliTest::root_;

}  // namespace

TEST_F(CliTest, IngestWritesArtifacts) {
  ASSERT_EQ(run({"ingest", data().string()}), 0);
  EXPECT_TRUE(fs::exists(data() / "vocab.txt"));
  const auto rep = nlohmann::json::parse(slurp(data() / "validation.json"));
  EXPECT_TRUE(rep.at("ok").get<bool>());
  EXPECT_EQ(rep.at("num_nodes"), 110);
}

TEST_F(CliTest, DeterministicPretrainAndEval) {
  ASSERT_EQ(run({"ingest", data().string()}), 0);
  const std::string cfg = (root_ / "tiny.json").string();
  for (const char* out : {"p1", "p2"}) {
    ASSERT_EQ(run({"pretrain", "--data", data().string(), "--out", (root_ / out).string(), "--config", cfg, "--seed",
                   "3", "--deterministic"}),
              0);
  }
  EXPECT_EQ(slurp(root_ / "p1" / "checkpoint.bin"), slurp(root_ / "p2" / "checkpoint.bin"));
  EXPECT_EQ(slurp(root_ / "p1" / "trace.jsonl").size(), slurp(root_ / "p2" / "trace.jsonl").size());
  ASSERT_EQ(run({"embed", "--data", data().string(), "--ckpt", (root_ / "p1" / "checkpoint.bin").string(), "--out",
                 (root_ / "e.bin").string()}),
            0);
  const std::string hc = (root_ / "header.json").string();
  for (const char* out : {"l1", "l2"}) {
    ASSERT_EQ(run({"eval-link", "--data", data().string(), "--emb", (root_ / "e.bin").string(), "--out",
                   (root_ / out).string(), "--header-config", hc, "--seeds", "0,1", "--deterministic"}),
              0);
  }
  EXPECT_EQ(slurp(root_ / "l1" / "link_mlp_mean.json"), slurp(root_ / "l2" / "link_mlp_mean.json"));
  EXPECT_TRUE(fs::exists(root_ / "l1" / "link_mlp_seed1.json"));
  ASSERT_EQ(run({"eval-class", "--data", data().string(), "--emb", (root_ / "e.bin").string(), "--out",
                 (root_ / "c1").string(), "--header", "rgcn", "--header-config", hc}),
            0);
  const auto rep = nlohmann::json::parse(slurp(root_ / "c1" / "class_rgcn_seed0.json"));
  EXPECT_EQ(rep.at("task"), "classification");
  EXPECT_EQ(rep.at("header"), "rgcn");
  EXPECT_EQ(rep.at("metrics").at("micro_precision@1"), rep.at("metrics").at("micro_recall@1"));
}

TEST_F(CliTest, AblateWritesOneReportPerValue) {
  const std::string cfg = (root_ / "tiny.json").string();
  ASSERT_EQ(run({"ablate", "--data", data().string(), "--out", (root_ / "ab").string(), "--config", cfg, "--sweep",
                 "neg-ratio", "--values", "1,3,5,7", "--deterministic"}),
            0);
  const auto summary = nlohmann::json::parse(slurp(root_ / "ab" / "summary.json"));
  ASSERT_EQ(summary.size(), 4u);
  for (const char* v : {"1", "3", "5", "7"}) {
    EXPECT_TRUE(fs::exists(root_ / "ab" / ("neg-ratio=" + std::string(v)) / "link_mlp_mean.json"));
    EXPECT_TRUE(fs::exists(root_ / "ab" / ("neg-ratio=" + std::string(v)) / "class_mlp_mean.json"));
  }
  const auto saved = nlohmann::json::parse(slurp(root_ / "ab" / "neg-ratio=7" / "pretrain" / "config.json"));
  EXPECT_EQ(saved.at("negative_ratio"), 7);
}

TEST_F(CliTest, AblateOrderSweep) {
  const std::string cfg = (root_ / "tiny.json").string();
  ASSERT_EQ(run({"ablate", "--data", data().string(), "--out", (root_ / "abK").string(), "--config", cfg, "--sweep",
                 "K", "--values", "1,2,3,4"}),
            0);
  EXPECT_EQ(nlohmann::json::parse(slurp(root_ / "abK" / "summary.json")).size(), 4u);
}

TEST_F(CliTest, ConfigErrorsExitTwo) {
  EXPECT_EQ(run({}), 2);
  EXPECT_EQ(run({"frobnicate"}), 2);
  EXPECT_EQ(run({"pretrain", "--data", data().string()}), 2);
  EXPECT_EQ(run({"pretrain", "--data", data().string(), "--out", (root_ / "x").string(), "--set", "bogus=1"}), 2);
  EXPECT_EQ(run({"pretrain", "--data", data().string(), "--out", (root_ / "x").string(), "--set", "K=9"}), 2);
  EXPECT_EQ(run({"ablate", "--data", data().string(), "--out", (root_ / "x").string(), "--sweep", "depth", "--values",
                 "1"}),
            2);
  EXPECT_EQ(run({"ablate", "--data", data().string(), "--out", (root_ / "x").string(), "--sweep", "K", "--values",
                 "9"}),
            2);
  EXPECT_EQ(run({"pretrain", "--data", (root_ / "missing").string(), "--out", (root_ / "x").string()}), 2);
  EXPECT_EQ(run({"synth", "--out", (root_ / "y").string(), "--set", "p_in=0.001"}), 2);
}

TEST_F(CliTest, RuntimeErrorsExitOne) {
  std::ofstream(root_ / "junk.bin") << "junk";
  EXPECT_EQ(run({"embed", "--data", data().string(), "--ckpt", (root_ / "junk.bin").string(), "--out",
                 (root_ / "e2.bin").string()}),
            1);
  EXPECT_EQ(run({"eval-link", "--data", data().string(), "--emb", (root_ / "nothing.bin").string(), "--out",
                 (root_ / "z").string()}),
            1);
}
