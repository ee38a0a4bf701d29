#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qfb/config.hpp"

using namespace qfb;
namespace fs = std::filesystem;

TEST(Quantity, Units) {
  EXPECT_DOUBLE_EQ(parse_quantity("6.148 GHz", Dimension::kFrequency), 6.148e9);
  EXPECT_DOUBLE_EQ(parse_quantity("25MHz", Dimension::kFrequency), 25e6);
  EXPECT_DOUBLE_EQ(parse_quantity("1.4 us", Dimension::kTime), 1.4e-6);
  EXPECT_DOUBLE_EQ(parse_quantity("360 ns", Dimension::kTime), 360e-9);
  EXPECT_DOUBLE_EQ(parse_quantity("16 mV", Dimension::kVoltage), 0.016);
  EXPECT_DOUBLE_EQ(parse_quantity("114 mK", Dimension::kTemperature), 0.114);
  EXPECT_DOUBLE_EQ(parse_quantity("7 %", Dimension::kFraction), 0.07);
  EXPECT_DOUBLE_EQ(parse_quantity("0.07", Dimension::kFraction), 0.07);
  EXPECT_TRUE(std::isinf(parse_quantity("inf", Dimension::kTime)));
}

TEST(Quantity, RejectsMissingOrWrongUnits) {
  EXPECT_THROW(parse_quantity("100", Dimension::kTime), ConfigError);
  EXPECT_THROW(parse_quantity("16", Dimension::kVoltage), ConfigError);
  EXPECT_THROW(parse_quantity("16 ns", Dimension::kVoltage), ConfigError);
  EXPECT_THROW(parse_quantity("abc", Dimension::kTime), ConfigError);
  EXPECT_THROW(parse_quantity("", Dimension::kTime), ConfigError);
}

TEST(Integer, Strict) {
  EXPECT_EQ(parse_integer("10"), 10);
  EXPECT_EQ(parse_integer(" 0x10 "), 16);
  EXPECT_THROW(parse_integer("10 ns"), ConfigError);
  EXPECT_THROW(parse_integer("1.5"), ConfigError);
}

TEST(Parser, AppliesValues) {
  const RunConfig rc = load_config_string(
      "# comment\n"
      "device.t1 = 2 us\n"
      "device.noise_sigma = 50 mV   # trailing comment\n"
      "pipeline.delay = 11\n"
      "pipeline.lut1 = 1000\n"
      "experiment.scenario = thermal\n"
      "experiment.feedback = on\n"
      "experiment.threshold = 12 mV\n");
  EXPECT_DOUBLE_EQ(rc.experiment.device.t1, 2e-6);
  EXPECT_DOUBLE_EQ(rc.experiment.device.noise_sigma, 0.05);
  EXPECT_FALSE(rc.noise_auto);
  EXPECT_EQ(rc.experiment.pipeline.delay, 11);
  EXPECT_EQ(rc.experiment.pipeline.lut1.str(), "1000");
  EXPECT_EQ(rc.experiment.scenario, Scenario::kThermalInit);
  EXPECT_EQ(rc.experiment.feedback, FeedbackMode::kOn);
  EXPECT_DOUBLE_EQ(rc.experiment.threshold_volts, 0.012);
  EXPECT_EQ(rc.entries.at("pipeline.delay"), "11");
}

TEST(Parser, KappaAndChiAreGivenOverTwoPi) {
  const RunConfig rc = load_config_string("device.kappa = 1 MHz\ndevice.chi = 2 MHz\n");
  EXPECT_DOUBLE_EQ(rc.experiment.device.kappa, kTwoPi * 1e6);
  EXPECT_DOUBLE_EQ(rc.experiment.device.chi, kTwoPi * 2e6);
}

TEST(Parser, EnvironmentTemperatureSetsThermalPopulation) {
  const RunConfig rc = load_config_string("device.t_env = 114 mK\n");
  EXPECT_NEAR(rc.experiment.device.p_therm, 0.07, 0.003);
}

TEST(Parser, UnknownKeyIsAnError) {
  EXPECT_THROW(load_config_string("device.f_qubit = 6 GHz\n"), ConfigError);
  EXPECT_THROW(load_config_string("just some text\n"), ConfigError);
}

TEST(Parser, ReportsEveryProblem) {
  try {
    load_config_string("device.t1 = 5\nfoo.bar = 1\npipeline.window = x\n");
    FAIL() << "expected a ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 1"), std::string::npos);
    EXPECT_NE(msg.find("line 2"), std::string::npos);
    EXPECT_NE(msg.find("line 3"), std::string::npos);
  }
}

TEST(Parser, CrossFieldValidation) {
  EXPECT_THROW(load_config_string("pipeline.window = 6\n"), ConfigError);
  EXPECT_THROW(load_config_string("pipeline.delay = 20\n"), ConfigError);
  EXPECT_THROW(load_config_string("pipeline.shift_i = 9\n"), ConfigError);
  EXPECT_THROW(load_config_string("experiment.repetitions = 0\n"), ConfigError);
}

TEST(Parser, ShippedConfigsParse) {
  for (const char* name : {"paper_table1.cfg", "paper_table2.cfg"}) {
    std::ifstream in(fs::path(QFB_CONFIG_DIR) / name);
    ASSERT_TRUE(in) << name;
    const RunConfig rc = load_config(in);
    EXPECT_TRUE(rc.noise_auto);
    EXPECT_DOUBLE_EQ(rc.overlap_target, 0.03);
    EXPECT_EQ(rc.experiment.feedback, FeedbackMode::kAlternate);
    EXPECT_EQ(rc.experiment.pipeline.delay, 10);
  }
}

namespace {

struct Result {
  int code = -1;
  std::string out;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("qfb_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt";
    const std::string cmd =
        "env -u QFB_SEED '" + std::string(QFB_CLI_PATH) + "' " + args + " > '" + out.string() + "' 2>/dev/null";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_F(Cli, UnknownSubcommandIsUsageError) { EXPECT_EQ(run("frobnicate").code, 1); }

TEST_F(Cli, NoSubcommandIsUsageError) { EXPECT_EQ(run("").code, 1); }

TEST_F(Cli, ZeroRepetitionsIsValidationError) { EXPECT_EQ(run("run-experiment --repetitions 0").code, 1); }

TEST_F(Cli, LatencyReportJson) {
  const Result r = run("latency-report --json");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_DOUBLE_EQ(j["tau_fb_ns"][0].get<double>(), 352.0);
}

TEST_F(Cli, EmptyInputFileIsInputError) {
  std::ofstream(path("empty.csv")).close();
  EXPECT_EQ(run("simulate-pipeline --input '" + path("empty.csv") + "'").code, 1);
}

TEST_F(Cli, MissingConfigFileIsInputError) { EXPECT_EQ(run("-c /nonexistent/x.cfg latency-report").code, 1); }

TEST_F(Cli, SimulatePipelineIsByteIdentical) {
  ASSERT_EQ(run("simulate-pipeline --state e --noisy --dump-stream -o '" + path("stream.csv") + "'").code, 0);
  ASSERT_EQ(run("simulate-pipeline --input '" + path("stream.csv") + "' -o '" + path("a.csv") + "'").code, 0);
  ASSERT_EQ(run("simulate-pipeline --input '" + path("stream.csv") + "' -o '" + path("b.csv") + "'").code, 0);
  const std::string a = slurp(path("a.csv"));
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(path("b.csv")));
}

TEST_F(Cli, SyntheticTracesRaiseFeedbackOnlyForExcited) {
  for (const char* s : {"g", "e"}) {
    ASSERT_EQ(run(std::string("simulate-pipeline --state ") + s + " -o '" + path(std::string(s) + ".csv") + "'").code, 0);
  }
  auto fb_count = [](const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    int col = 0, fb_col = -1;
    std::istringstream hs(line);
    for (std::string cell; std::getline(hs, cell, ','); ++col) {
      if (cell == "fb") fb_col = col;
    }
    int count = 0;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string cell;
      for (int k = 0; k <= fb_col; ++k) std::getline(ls, cell, ',');
      count += cell == "1";
    }
    return count;
  };
  EXPECT_EQ(fb_count(slurp(path("g.csv"))), 0);
  EXPECT_EQ(fb_count(slurp(path("e.csv"))), 1);
}

TEST_F(Cli, RunExperimentWritesOutputsAndHonorsSeed) {
  const std::string args = "--seed 7 -j 2 run-experiment -n 512 --json -o '";
  ASSERT_EQ(run(args + path("a") + "'").code, 0);
  ASSERT_EQ(run(args + path("b") + "'").code, 0);
  for (const char* f : {"report.json", "histogram.bin", "quadrants_seg0.csv", "marginals_seg0.csv"}) {
    EXPECT_TRUE(fs::exists(path("a") + "/" + f)) << f;
  }
  EXPECT_EQ(slurp(path("a") + "/report.json"), slurp(path("b") + "/report.json"));
  EXPECT_EQ(slurp(path("a") + "/histogram.bin"), slurp(path("b") + "/histogram.bin"));
  const auto j = nlohmann::json::parse(slurp(path("a") + "/report.json"));
  EXPECT_EQ(j["config"]["experiment"]["master_seed"], 7);
}
