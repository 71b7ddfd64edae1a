// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "temf/cli.hpp"
#include "temf/model.hpp"

using namespace temf;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "temf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("temf_cli_" + std::to_string(std::rand()))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

const std::vector<std::string> kTiny = {"--dim", "4", "--heads", "1", "--ffn-dim", "4", "--head-hidden", "3",
                                        "--attention-dim", "3", "--sentence-layers", "1", "--doc-layers", "1",
                                        "--max-sentences", "3", "--epochs", "1", "--lr", "1e-3"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::string small_corpus(const TempDir& dir, const std::string& notes = "32") {
  const std::string path = dir / "c.jsonl";
  const Result r = run({"gen-corpus", "--notes", notes, "--mean-note-length", "2", "--seed", "3", "--out", path});
  REQUIRE(r.code == 0);
  return path;
}

std::size_t count_rows(const std::string& text, const std::string& task) {
  std::istringstream in(text);
  std::size_t n = 0;
  bool summary = false;
  for (std::string line; std::getline(in, line);) {
    if (line == "# summary") summary = true;
    if (!summary && line.find("," + task + ",") != std::string::npos) ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("cli: help and usage errors") {
  CHECK(run({"--help"}).code == kExitOk);
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"bogus"}).code == kExitUsage);
  CHECK(run({"train", "--corpus", "/nonexistent/c.jsonl"}).code == kExitUsage);
  CHECK(run({"train", "--corpus", "/nonexistent/c.jsonl"}).err.find("--corpus") != std::string::npos);
  CHECK(run({"train", "--dim", "-3"}).code == kExitUsage);
}

TEST_CASE("cli: gen-corpus") {
  TempDir dir;
  const Result r = run({"gen-corpus", "--out", dir / "d.jsonl"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("wrote 364 notes") != std::string::npos);

  CHECK(run({"gen-corpus", "--seed", "7", "--out", dir / "a.jsonl"}).code == 0);
  CHECK(run({"gen-corpus", "--seed", "7", "--out", dir / "b.jsonl"}).code == 0);
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));

  const Result zero = run({"gen-corpus", "--notes", "0", "--out", dir / "z.jsonl"});
  CHECK(zero.code == kExitUsage);
  CHECK_FALSE(fs::exists(dir / "z.jsonl"));
}

TEST_CASE("cli: config file") {
  TempDir dir;
  std::ofstream(dir / "ok.toml") << "notes = 12\nseed = 5\n";
  const Result ok = run({"gen-corpus", "--config", dir / "ok.toml", "--out", dir / "c.jsonl"});
  CHECK(ok.code == kExitOk);
  CHECK(ok.out.find("wrote 12 notes") != std::string::npos);
  std::ofstream(dir / "bad.toml") << "colour = 3\n";
  CHECK(run({"gen-corpus", "--config", dir / "bad.toml", "--out", dir / "d.jsonl"}).code == kExitUsage);
}

TEST_CASE("cli: train records the ablation in the checkpoint") {
  TempDir dir;
  const std::string corpus = small_corpus(dir, "16");
  const Result r = run(with({"train", "--corpus", corpus, "--ablation", "no_emotion", "--epochs", "2", "--checkpoint",
                             dir / "m.ckpt"},
                            std::vector<std::string>(kTiny.begin(), kTiny.end() - 4)));
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("L_diff") != std::string::npos);
  const std::string header = slurp(dir / "m.ckpt").substr(0, 4096);
  CHECK(header.find(R"("ablation":"no_emotion")") != std::string::npos);
  CHECK(load_checkpoint(dir / "m.ckpt").config().ablation == Ablation::no_emotion);

  const Result ev = run({"eval", "--corpus", corpus, "--checkpoint", dir / "m.ckpt", "--results", dir / "r.csv"});
  CHECK(ev.code == kExitOk);
  CHECK(slurp(dir / "r.csv").find("\"checkpoint\":") != std::string::npos);
  CHECK(run({"train", "--corpus", corpus, "--ablation", "none"}).code == kExitUsage);
}

TEST_CASE("cli: eval emits one row per run, fold and task") {
  TempDir dir;
  const std::string corpus = small_corpus(dir, "40");
  const Result r = run(with({"eval", "--corpus", corpus, "--cv", "10", "--runs", "5", "--results", dir / "r.csv"}, kTiny));
  REQUIRE(r.code == kExitOk);
  const std::string text = slurp(dir / "r.csv");
  CHECK(count_rows(text, "pb") == 50);
  CHECK(count_rows(text, "tb") == 50);
  CHECK(text.find("pb,") != std::string::npos);

  const Result again =
      run(with({"eval", "--corpus", corpus, "--cv", "10", "--runs", "5", "--results", dir / "r2.csv"}, kTiny));
  REQUIRE(again.code == kExitOk);
  CHECK(slurp(dir / "r2.csv") == text);

  const Result smoke = run(with({"eval", "--corpus", small_corpus(dir), "--cv", "2", "--runs", "1", "--results",
                                 dir / "s.csv"},
                                kTiny));
  CHECK(smoke.code == kExitOk);
  CHECK(count_rows(slurp(dir / "s.csv"), "pb") == 2);
}

TEST_CASE("cli: sweep and ablation comparison") {
  TempDir dir;
  const std::string corpus = small_corpus(dir, "24");
  const Result sw = run(with({"eval", "--corpus", corpus, "--cv", "2", "--runs", "1", "--sweep", "1,2", "--results",
                              dir / "s.csv"},
                             kTiny));
  REQUIRE(sw.code == kExitOk);
  const std::string text = slurp(dir / "s.csv");
  CHECK(text.find("length,task,mean,stddev,count") != std::string::npos);
  CHECK(text.find("\n1,pb,") != std::string::npos);
  CHECK(text.find("\n2,tb,") != std::string::npos);

  const Result ab = run(with({"eval", "--corpus", corpus, "--cv", "2", "--runs", "1", "--ablation-compare",
                              "--results", dir / "a.csv"},
                             kTiny));
  REQUIRE(ab.code == kExitOk);
  CHECK(slurp(dir / "a.csv").find("\nno_temporal,pb,") != std::string::npos);
  CHECK(run({"eval", "--corpus", corpus, "--sweep", "1", "--ablation-compare"}).code == kExitUsage);
}

TEST_CASE("cli: kappa fixtures") {
  TempDir dir;
  std::ofstream(dir / "u.csv") << "r=3\n3,0\n0,3\n";
  std::ofstream(dir / "h.csv") << "r=3\n2,1\n1,2\n";
  std::ofstream(dir / "s.csv") << "r=3\n3,0\n3,0\n";
  std::ofstream(dir / "b.csv") << "r=3\n3,0\n2,0\n";
  CHECK(run({"kappa", dir / "u.csv"}).out == "1.0000\n");
  CHECK(run({"kappa", dir / "h.csv"}).out == "-0.3333\n");
  CHECK(run({"kappa", dir / "s.csv"}).out.find("undefined (Pe=1)") != std::string::npos);
  const Result bad = run({"kappa", dir / "b.csv"});
  CHECK(bad.code != kExitOk);
  CHECK(bad.err.find("line 3") != std::string::npos);
}

TEST_CASE("cli: gradcheck rejects bad settings") {
  CHECK(run({"gradcheck", "--eps", "1e-2"}).code == kExitUsage);
  CHECK(run({"gradcheck", "--stencil", "forward"}).code == kExitUsage);
}
