#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args, const std::string& stdin_text = "") {
  std::string cmd = std::string(UNIMC_CLI) + " " + args + " 2>&1";
  if (!stdin_text.empty()) {
    std::ofstream("stdin.txt") << stdin_text;
    cmd += " < stdin.txt";
  }
  FILE* p = popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

double field(const std::string& out, const std::string& name) {
  std::smatch m;
  if (!std::regex_search(out, m, std::regex(name + "=([0-9.]+)"))) return -1;
  return std::stod(m[1]);
}

const char* kTiny = "--d-model 16 --heads 2 --enc-layers 1 --dec-layers 1 --max-new-tokens 6";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("unimc_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
    old_ = fs::current_path();
    fs::current_path(dir_);
  }
  void TearDown() override {
    fs::current_path(old_);
    fs::remove_all(dir_);
  }
  fs::path dir_, old_;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train --no-such-flag").code, 2);
  EXPECT_EQ(run("eval --corpus missing.tsv --checkpoint missing.ckpt").code, 2);
  EXPECT_EQ(run("train --corpus missing.tsv --out m.ckpt").code, 2);
  EXPECT_EQ(run("chat --checkpoint missing.ckpt").code, 2);
  EXPECT_EQ(run("eval --fusion sideways").code, 2);
  std::ofstream("bad.cfg") << "not_an_option=1\n";
  EXPECT_EQ(run("--config bad.cfg gen-corpus --out c.tsv").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, RuntimeFailureExitsWithOne) {
  std::ofstream("broken.tsv") << "d0\t0\tuser\thello\n";
  EXPECT_EQ(run(std::string("train --corpus broken.tsv --out m.ckpt ") + kTiny).code, 1);
}

TEST_F(Cli, UntrainedEvalReportsChanceRetrieval) {
  ASSERT_EQ(run("gen-corpus --dialogues 30 --seed 5 --out c.tsv").code, 0);
  ASSERT_EQ(run("train --corpus c.tsv --out m.ckpt --epochs 0").code, 0);
  const auto r = run("eval --corpus c.tsv --checkpoint m.ckpt --tasks cs,mag --max-samples 20 "
                     "--max-new-tokens 6 --report r.txt");
  ASSERT_EQ(r.code, 0) << r.out;
  // every retrieval sample, so the estimate is not dominated by a handful of pairs
  const auto mr = run("eval --corpus c.tsv --checkpoint m.ckpt --tasks mr");
  ASSERT_EQ(mr.code, 0) << mr.out;
  EXPECT_NE(r.out.find("summarization bf1="), std::string::npos);
  EXPECT_NE(r.out.find("rouge_l="), std::string::npos);
  EXPECT_NE(r.out.find("generation ppl="), std::string::npos);
  EXPECT_NE(r.out.find("distinct_2="), std::string::npos);
  EXPECT_NEAR(field(mr.out, "auc"), 0.5, 0.1) << mr.out;
  EXPECT_EQ(slurp("r.txt"), r.out);
  EXPECT_TRUE(fs::exists("r.txt.run"));
}

TEST_F(Cli, RunManifestReproducesTheCheckpoint) {
  ASSERT_EQ(run("gen-corpus --dialogues 3 --seed 9 --out c.tsv").code, 0);
  ASSERT_EQ(run(std::string("train --corpus c.tsv --out a.ckpt --max-steps 3 --lr 1e-3 ") + kTiny).code, 0);
  const auto manifest = slurp("a.ckpt.run");
  EXPECT_NE(manifest.find("seed=2022"), std::string::npos);
  EXPECT_NE(manifest.find("recorded-command=\"train\""), std::string::npos);
  EXPECT_EQ(manifest.find("recorded-checkpoint-hash=\"\""), std::string::npos);
  ASSERT_EQ(run("--config a.ckpt.run train --out b.ckpt").code, 0);
  EXPECT_EQ(slurp("a.ckpt"), slurp("b.ckpt"));
  // a flag on the command line beats the file
  ASSERT_EQ(run("--config a.ckpt.run train --out c.ckpt --seed 1").code, 0);
  EXPECT_NE(slurp("a.ckpt"), slurp("c.ckpt"));
}

TEST_F(Cli, TrainWithoutRelevanceHeadCompletes) {
  ASSERT_EQ(run("gen-corpus --dialogues 3 --out c.tsv").code, 0);
  for (const char* fusion : {"fid", "fie"}) {
    const auto r = run(std::string("train --corpus c.tsv --out m.ckpt --max-steps 2 --relevance none --fusion ") +
                       fusion + " " + kTiny);
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(run("eval --corpus c.tsv --checkpoint m.ckpt --max-samples 3 --eg on --beam 2 --max-new-tokens 4").code,
              0);
  }
}

TEST_F(Cli, SelfChatWritesTracedTranscript) {
  ASSERT_EQ(run("gen-corpus --dialogues 2 --out c.tsv").code, 0);
  ASSERT_EQ(run(std::string("train --corpus c.tsv --out m.ckpt --epochs 0 ") + kTiny).code, 0);
  const auto r = run("self-chat --checkpoint m.ckpt --sessions 2 --rounds 2 --max-new-tokens 5 --out t.tsv");
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream is("t.tsv");
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) {
    ++lines;
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 2) << line;
  }
  EXPECT_EQ(lines, 2 * (1 + 2 * 2));
}

TEST_F(Cli, ChatReplPersistsPoolAndShowsTraces) {
  ASSERT_EQ(run("gen-corpus --dialogues 2 --out c.tsv").code, 0);
  ASSERT_EQ(run(std::string("train --corpus c.tsv --out m.ckpt --epochs 0 ") + kTiny).code, 0);
  std::ofstream("pool.tsv") << "user\ti have a cat.\nbot\ti am a chef.\n";
  const auto r = run("chat --checkpoint m.ckpt --pool pool.tsv -v --max-new-tokens 5",
                     "hello there.\n/pool\n/new\nwhat do you do?\n/quit\n");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("[retrieved "), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("user:0 i have a cat."), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("(new session)"), std::string::npos);
  EXPECT_NE(slurp("pool.tsv").find("i am a chef."), std::string::npos);
}
