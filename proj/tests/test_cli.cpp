// SPDX-License-Identifier: Apache-2.0
//
// Runs the built CLI and checks exit codes and output.

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(MCF_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch() {
  auto p = fs::temp_directory_path() / ("mcf_cli_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

fs::path write_toy_config(const fs::path& dir) {
  const auto path = dir / "toy.json";
  std::ofstream(path) << R"({
  "encoder": {"num_layers": 1, "d_model": 16, "heads": 2, "d_inter": 48, "kernels": [3, 7],
              "feature_dim": 16, "vocab_size": 4},
  "train": {"batch_size": 4, "steps": 4, "eval_interval": 2},
  "data": {"vocab_size": 4, "template_frames": 6, "feature_dim": 16,
           "train_size": 12, "dev_size": 4, "test_size": 4, "seed": 1}
})";
  return path;
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  const auto unknown = run("param-count --bogus");
  EXPECT_EQ(unknown.code, 1);
  EXPECT_NE(unknown.out.find("--fusion"), std::string::npos) << unknown.out;  // help text
  EXPECT_EQ(run("param-count --kernels 8,16").code, 1);
  EXPECT_EQ(run("param-count --fusion mean").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, ParamCountPrintsTotalAndBlocks) {
  const auto dir = scratch();
  const auto r = run("param-count --config " + write_toy_config(dir).string() + " --fusion weighted");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("fusion=weighted"), std::string::npos);
  EXPECT_NE(r.out.find("layers.0.conv"), std::string::npos);
  EXPECT_NE(r.out.find("total"), std::string::npos);
  const auto cmp = run("param-count --config " + (dir / "toy.json").string() + " --compare");
  EXPECT_EQ(cmp.code, 0) << cmp.out;
  EXPECT_NE(cmp.out.find("closed form"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, GradCheckPasses) {
  const auto r = run("grad-check --seed 7");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
}

TEST(Cli, EndToEndRun) {
  const auto dir = scratch();
  const auto cfg = write_toy_config(dir).string();
  const auto data = (dir / "data").string(), runs = (dir / "run").string();
  EXPECT_EQ(run("gen-data --config " + cfg + " --out " + data).code, 0);
  EXPECT_EQ(run("gen-data --config " + cfg + " --out " + data).code, 2);  // refuses to overwrite
  EXPECT_EQ(run("gen-data --config " + cfg + " --out " + data + " --force").code, 0);
  const auto tr = run("train --config " + cfg + " --data " + data + " --out " + runs + " --fusion weighted --quiet");
  EXPECT_EQ(tr.code, 0) << tr.out;
  const auto ckpt = (fs::path(runs) / "best.ckpt").string();
  const auto ev = run("eval --checkpoint " + ckpt + " --data " + data + " --split test --out " +
                      (dir / "eval.csv").string());
  EXPECT_EQ(ev.code, 0) << ev.out;
  EXPECT_NE(ev.out.find("TER"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "eval.csv"));
  const auto diag = run("analyze diagonality --checkpoint " + ckpt + " --data " + data);
  EXPECT_EQ(diag.code, 0) << diag.out;
  EXPECT_NE(diag.out.find("layer,value"), std::string::npos);
  const auto gate = run("analyze gate-importance --checkpoint " + ckpt + " --data " + data);
  EXPECT_EQ(gate.code, 0) << gate.out;
  EXPECT_NE(gate.out.find("layer,k3,k7"), std::string::npos);
  EXPECT_EQ(run("eval --checkpoint " + ckpt + " --data " + (dir / "missing").string()).code, 1);
  fs::remove_all(dir);
}

TEST(Cli, RuntimeFailuresExitTwo) {
  const auto dir = scratch();
  const auto cfg = write_toy_config(dir).string();
  const auto data = (dir / "data").string(), runs = (dir / "run").string();
  ASSERT_EQ(run("gen-data --config " + cfg + " --out " + data).code, 0);
  ASSERT_EQ(run("train --config " + cfg + " --data " + data + " --out " + runs + " --quiet").code, 0);
  // Gate importance needs weighted fusion; the default is depth.
  const auto gate = run("analyze gate-importance --checkpoint " + (fs::path(runs) / "best.ckpt").string() +
                        " --data " + data);
  EXPECT_EQ(gate.code, 2) << gate.out;
  fs::remove_all(dir);
}
