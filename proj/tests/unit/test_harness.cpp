#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <smallcap/harness.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace smallcap;
namespace hs = smallcap::harness;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string output;
};

CliResult cli(const std::string& args) {
  CliResult r;
  std::string cmd = std::string(SMALLCAP_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[512];
  while (fgets(buf, sizeof buf, p)) r.output += buf;
  int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

class Scratch : public ::testing::Test {
 protected:
  fs::path dir;
  void SetUp() override {
    auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / ("smallcap_" + std::to_string(getpid()) + "_" + info->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string file(const std::string& name, const std::string& body) {
    auto p = dir / name;
    std::ofstream(p) << body;
    return p.string();
  }
  std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  std::string out(const std::string& name) { return (dir / name).string(); }
};

}  // namespace

TEST(Config, UnknownKeyReportsLine) {
  try {
    hs::parse_config("{\n  \"seed\": 3,\n  \"colour\": 1\n}", hs::Subcommand::Moments);
    FAIL();
  } catch (const hs::ConfigError& e) {
    EXPECT_EQ(e.line, 3);
    EXPECT_NE(std::string(e.what()).find("colour"), std::string::npos);
  }
}

TEST(Config, MalformedJsonReportsLine) {
  try {
    hs::parse_config("{\n \"params\": {\n  \"N\": [4,\n }\n}", hs::Subcommand::Moments);
    FAIL();
  } catch (const hs::ConfigError& e) {
    EXPECT_GE(e.line, 3);
  }
}

TEST(Config, SubcommandMustMatch) {
  EXPECT_THROW(hs::parse_config(R"({"subcommand": "vdc"})", hs::Subcommand::Energy), hs::ConfigError);
  auto c = hs::parse_config(R"({"subcommand": "oracle-check", "seed": 9, "out": "x"})", hs::Subcommand::OracleCheck);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.out, "x");
}

TEST(Config, ParamsAreRangeChecked) {
  auto run_with = [](const std::string& text) { return hs::run(hs::parse_config(text, hs::Subcommand::Moments)); };
  EXPECT_THROW(run_with(R"({"params": {"N": []}})"), hs::ConfigError);
  EXPECT_THROW(run_with(R"({"params": {"N": [4], "n": 9}})"), hs::ConfigError);
  EXPECT_THROW(run_with(R"({"params": {"N": [4], "method": "guess"}})"), hs::ConfigError);
  try {
    run_with("{\"params\": {\n\"N\": [4, 8],\n\"bogus\": 1}}");
    FAIL();
  } catch (const hs::ConfigError& e) {
    EXPECT_EQ(e.line, 3);
  }
}

TEST(Config, EffectiveParamsRecorded) {
  auto c = hs::parse_config(R"({"params": {"N": [2, 3, 4]}})", hs::Subcommand::Moments);
  auto o = hs::run(c);
  auto doc = hs::results_document(c, o);
  EXPECT_EQ(doc["config"]["n"], 3);
  EXPECT_EQ(doc["config"]["p"], 12.0);
  EXPECT_EQ(doc["config"]["method"], "exact");
  EXPECT_FALSE(doc.contains("timing"));
}

TEST_F(Scratch, MomentsEndToEnd) {
  auto cfg = file("m.json", R"({"seed": 2, "params": {"n": 2, "N": [4, 8, 16], "p": 6, "slope_max": 5}})");
  auto r = cli("moments --config " + cfg + " --out " + out("run"));
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("PASS"), std::string::npos);
  for (auto f : {"results.json", "results.dat", "timing.json"}) EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  auto doc = nlohmann::json::parse(slurp(dir / "run" / "results.json"));
  EXPECT_EQ(doc["subcommand"], "moments");
  EXPECT_EQ(doc["seed"], 2);
  EXPECT_TRUE(doc["pass"].get<bool>());
  EXPECT_EQ(slurp(dir / "run" / "results.dat").substr(0, 1), "#");
}

TEST_F(Scratch, ThresholdFailureExitsOne) {
  auto cfg = file("m.json", R"({"params": {"n": 2, "N": [4, 8, 16], "p": 6, "slope_max": 0.5}})");
  auto r = cli("moments --config " + cfg + " --out " + out("run"));
  EXPECT_EQ(r.code, 1) << r.output;
  EXPECT_NE(r.output.find("FAIL"), std::string::npos);
}

TEST_F(Scratch, UsageAndConfigErrorsExitTwo) {
  EXPECT_EQ(cli("moments --config " + file("a.json", R"({"params": {"N": [], "p": 4}})") + " --out " + out("a")).code, 2);
  auto r = cli("moments --config " + file("b.json", "{\n \"params\": {\n  \"N\": [4],\n  \"bogus\": 4\n }\n}") + " --out " + out("b"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("line 4"), std::string::npos) << r.output;
  EXPECT_EQ(cli("moments --config " + file("c.json", "{\n \"params\": {\n  \"N\": [4,\n }\n}") + " --out " + out("c")).code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("moments --workers 0").code, 2);
  EXPECT_EQ(cli("reproduce " + file("d.json", R"({"seed": 1})")).code, 2);
}

TEST_F(Scratch, OracleCheckPasses) {
  auto r = cli("oracle-check --config " + file("o.json", R"({"params": {"cases": 3}})") + " --out " + out("o"));
  EXPECT_EQ(r.code, 0) << r.output;
}

TEST_F(Scratch, ReproduceExactScan) {
  auto cfg = file("m.json", R"({"params": {"n": 3, "N": [4, 6, 8], "p": 4}})");
  ASSERT_EQ(cli("moments --config " + cfg + " --out " + out("run")).code, 0);
  auto r = cli("reproduce " + out("run") + "/results.json --out " + out("rep"));
  EXPECT_EQ(r.code, 0) << r.output;
  auto rep = nlohmann::json::parse(slurp(dir / "rep" / "reproduce.json"));
  EXPECT_EQ(rep["max_relative_deviation"], 0.0);
  EXPECT_GT(rep["compared"].get<int>(), 0);
}

TEST_F(Scratch, ReproduceMonteCarloScan) {
  auto cfg = file("m.json", R"({"seed": 5, "params": {"n": 2, "N": [8, 16, 32], "p": 4, "method": "mc", "samples": 20000}})");
  ASSERT_EQ(cli("moments --config " + cfg + " --out " + out("run")).code, 0);
  auto same = cli("reproduce " + out("run") + "/results.json --out " + out("same"));
  EXPECT_EQ(same.code, 0) << same.output;
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "same" / "reproduce.json"))["max_relative_deviation"], 0.0);
  auto other = cli("reproduce " + out("run") + "/results.json --seed 6 --out " + out("other"));
  EXPECT_EQ(other.code, 0) << other.output;
  auto rep = nlohmann::json::parse(slurp(dir / "other" / "reproduce.json"));
  EXPECT_FALSE(rep["same_seed"].get<bool>());
  EXPECT_GT(rep["max_relative_deviation"].get<double>(), 0);
  EXPECT_LE(rep["max_sigma"].get<double>(), 3);
}

TEST_F(Scratch, ResultsIndependentOfWorkers) {
  const std::vector<std::pair<std::string, std::string>> runs{
      {"moments", R"({"params": {"n": 2, "N": [8, 16, 32], "p": 4, "method": "mc", "samples": 20000}})"},
      {"energy", R"({"params": {"delta": [0.125, 0.0625, 0.03125]}})"},
      {"kakeya", R"({"params": {"mode": "linear", "directions": 16, "m": [1, 2], "seeds": 3, "raster_seeds": 1}})"},
      {"decouple", R"({"params": {"mode": "refined", "L": [4], "seeds": 2}})"}};
  for (auto& [sub, body] : runs) {
    auto cfg = file(sub + ".json", body);
    ASSERT_LE(cli(sub + " --config " + cfg + " --workers 1 --out " + out(sub + "1")).code, 1) << sub;
    ASSERT_LE(cli(sub + " --config " + cfg + " --workers 3 --out " + out(sub + "3")).code, 1) << sub;
    EXPECT_EQ(slurp(dir / (sub + "1") / "results.json"), slurp(dir / (sub + "3") / "results.json")) << sub;
  }
}

TEST(Reproduce, SchemaMismatch) {
  EXPECT_THROW(hs::reproduce(nlohmann::json{{"seed", 1}}), hs::ConfigError);
}

TEST(Checks, Lines) {
  EXPECT_EQ(hs::check_line(hs::check_le("slope", 2.5, 3)), "PASS slope: 2.5 <= 3");
  EXPECT_EQ(hs::check_line(hs::check_ge("gain", 1, 2, "why")), "FAIL gain: 1 >= 2 (why)");
}
