#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gilt/cli.hpp"
#include "gilt/keyvalue.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "gilt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = gilt::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("gilt_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// One toy corpus and one tiny model shared by the whole suite.
class CliModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = scratch("shared");
    CliRun toy = cli({"toy-corpus", "--out", (dir_ / "toy.jsonl").string(), "--pairs",
                   (dir_ / "pairs.jsonl").string(), "--count", "20"});
    ASSERT_EQ(toy.code, 0) << toy.err;
    CliRun tr = cli({"train", "--corpus", (dir_ / "toy.jsonl").string(), "--out", (dir_ / "m").string(),
                  "--preset", "tiny", "--steps", "30", "--seed", "5"});
    ASSERT_EQ(tr.code, 0) << tr.err;
  }
  static std::string corpus() { return (dir_ / "toy.jsonl").string(); }
  static std::string model() { return (dir_ / "m").string(); }
  static fs::path dir_;
};
fs::path CliModel::dir_;

double ppl(const CliRun& r) { return nlohmann::json::parse(r.out).at("perplexity_upper_bound").get<double>(); }

}  // namespace

TEST(Cli, UnknownFlagFailsWithUsage) {
  CliRun r = cli({"train", "--frobnicate"});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("--corpus"), std::string::npos);
  EXPECT_NE(cli({}).code, 0);
  EXPECT_NE(cli({"eval-ppl", "--model", "/nonexistent", "--corpus", "/nonexistent"}).code, 0);
}

TEST(Cli, TapeMatchesGoldenWalkthrough) {
  for (std::string name : {"three_word", "two_word"}) {
    fs::path base = fs::path(GILT_GOLDEN_DIR) / name;
    CliRun r = cli({"tape", "--corpus", base.string() + ".jsonl"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, slurp(base.string() + ".tape.txt")) << name;
  }
}

TEST(Cli, TapeLookupErrors) {
  std::string c = (fs::path(GILT_GOLDEN_DIR) / "three_word.jsonl").string();
  EXPECT_NE(cli({"tape", "--corpus", c, "--id", "missing"}).code, 0);
  EXPECT_NE(cli({"tape", "--corpus", c, "--index", "3"}).code, 0);
  EXPECT_EQ(cli({"tape", "--corpus", c, "--id", "three"}).code, 0);
}

TEST_F(CliModel, TrainWritesBundleAndMetrics) {
  for (const char* f : {"model.cfg", "train.cfg", "vocab.json", "params.bin", "metrics.jsonl"}) {
    EXPECT_TRUE(fs::exists(fs::path(model()) / f)) << f;
  }
  std::ifstream in(fs::path(model()) / "metrics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("step"));
    ++lines;
  }
  EXPECT_GT(lines, 0);
}

TEST_F(CliModel, WiderBeamNeverRaisesPerplexityBound) {
  CliRun b1 = cli({"eval-ppl", "--model", model(), "--corpus", corpus(), "--beam", "1"});
  CliRun b8 = cli({"eval-ppl", "--model", model(), "--corpus", corpus(), "--beam", "8"});
  ASSERT_EQ(b1.code, 0) << b1.err;
  ASSERT_EQ(b8.code, 0) << b8.err;
  EXPECT_LE(ppl(b8), ppl(b1) * (1 + 1e-12));
}

TEST_F(CliModel, ParseGenerateMinpairBench) {
  CliRun p = cli({"parse", "--model", model(), "--corpus", corpus()});
  ASSERT_EQ(p.code, 0) << p.err;
  std::istringstream lines(p.out);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.at("edges").is_array());
    ++n;
  }
  EXPECT_EQ(n, 20);

  CliRun t = cli({"parse", "--model", model(), "--text", "the dog sleeps"});
  EXPECT_EQ(t.code, 0) << t.err;

  CliRun g = cli({"generate", "--model", model(), "--max-tokens", "6"});
  EXPECT_EQ(g.code, 0) << g.err;
  EXPECT_FALSE(g.out.empty());

  CliRun m = cli({"eval-minpair", "--model", model(), "--pairs", (dir_ / "pairs.jsonl").string()});
  ASSERT_EQ(m.code, 0) << m.err;
  double acc = nlohmann::json::parse(m.out).at("accuracy").get<double>();
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);

  CliRun b = cli({"bench", "--model", model(), "--beams", "1,2", "--tokens", "4"});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_NE(b.out.find("ms/token"), std::string::npos);
}

TEST_F(CliModel, AblationIsRecordedAndShowsInTapes) {
  fs::path d = scratch("ablate");
  CliRun tr = cli({"train", "--corpus", corpus(), "--out", (d / "m").string(), "--preset", "tiny",
                "--steps", "2", "--no-distance"});
  ASSERT_EQ(tr.code, 0) << tr.err;
  auto kv = gilt::KeyValueFile::load(d / "m" / "model.cfg");
  EXPECT_TRUE(kv.get_bool("no_distance", false));
  EXPECT_FALSE(kv.get_bool("no_degree", true));

  CliRun tape = cli({"tape", "--corpus", corpus(), "--model", (d / "m").string()});
  ASSERT_EQ(tape.code, 0) << tape.err;
  std::istringstream in(tape.out);
  std::string line;
  int rows = 0;
  bool degree_nonzero = false;
  while (std::getline(in, line)) {
    std::istringstream cells(line);
    std::string label;
    cells >> label;
    int v;
    if (label == "distance") {
      ++rows;
      while (cells >> v) EXPECT_EQ(v, 0) << line;
    } else if (label == "degree") {
      while (cells >> v) degree_nonzero = degree_nonzero || v != 0;
    }
  }
  EXPECT_GT(rows, 0);
  EXPECT_TRUE(degree_nonzero);

  CliRun ev = cli({"eval-ppl", "--model", (d / "m").string(), "--corpus", corpus(), "--beam", "2"});
  EXPECT_EQ(ev.code, 0) << ev.err;
}

TEST_F(CliModel, FixedSeedRunsAreBitIdentical) {
  std::vector<std::string> outs;
  for (const char* run : {"a", "b"}) {
    fs::path d = scratch(std::string("repro_") + run);
    CliRun tr = cli({"train", "--corpus", corpus(), "--out", (d / "m").string(), "--preset", "tiny",
                  "--steps", "5", "--seed", "11"});
    ASSERT_EQ(tr.code, 0) << tr.err;
    outs.push_back(slurp(d / "m" / "params.bin") + slurp(d / "m" / "metrics.jsonl"));
  }
  EXPECT_EQ(outs[0], outs[1]);
  EXPECT_FALSE(outs[0].empty());
}
