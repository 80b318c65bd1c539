#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "casceq/erasure.hpp"
#include "casceq/signal.hpp"
#include "casceq/tensor_container.hpp"
#include "toy_model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace casceq;
namespace toy = casceq::testing;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("casceq_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs the CLI with stdout captured; returns the exit status.
  int run(const std::string& args) {
    const auto out = dir_ / "stdout.txt";
    const std::string cmd = std::string(CASCEQ_CLI_PATH) + " " + args + " > " + out.string() + " 2> " +
                            (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    std::ifstream in(out);
    std::ostringstream ss;
    ss << in.rdbuf();
    stdout_ = ss.str();
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  json stdout_json() const { return json::parse(stdout_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write_log(const std::string& name, const std::vector<std::pair<std::string, std::string>>& gold_pred) {
    std::ofstream out(path(name));
    for (std::size_t i = 0; i < gold_pred.size(); ++i)
      out << json{{"id", std::to_string(i)}, {"task", "t"}, {"gold", gold_pred[i].first},
                  {"pred", gold_pred[i].second}}
                 .dump()
          << "\n";
  }

  fs::path dir_;
  std::string stdout_;
};

}  // namespace

TEST_F(Cli, FdrFromList) {
  ASSERT_EQ(run("fdr --p 0.01,0.02,0.03,0.04"), 0);
  const auto j = stdout_json();
  for (const auto& a : j.at("adjusted")) EXPECT_DOUBLE_EQ(a.get<double>(), 0.04);
}

TEST_F(Cli, AgreeOverlapMcnemar) {
  write_log("a.jsonl", {{"A", "A"}, {"A", "B"}, {"B", "B"}, {"C", "A"}, {"C", "C"}});
  write_log("b.jsonl", {{"A", "A"}, {"A", "B"}, {"B", "C"}, {"C", "B"}, {"C", "C"}});
  const std::string pair = "--a " + path("a.jsonl").string() + " --b " + path("b.jsonl").string() + " --labels A,B,C";
  ASSERT_EQ(run("agree " + pair + " --resamples 50"), 0);
  auto j = stdout_json();
  EXPECT_TRUE(j.contains("kappa"));
  ASSERT_EQ(run("overlap " + pair), 0);
  j = stdout_json();
  EXPECT_EQ(j.dump().find("both_wrong") != std::string::npos, true);
  ASSERT_EQ(run("mcnemar " + pair + " --out " + path("m.json").string()), 0);
  std::ifstream in(path("m.json"));
  const auto m = json::parse(in);
  EXPECT_EQ(m.dump().find("p_value") != std::string::npos, true);
}

TEST_F(Cli, InputErrorsExitTwo) {
  EXPECT_EQ(run("agree --a " + path("none.jsonl").string() + " --b x --labels A,B"), 2);
  EXPECT_EQ(run("no-such-command"), 2);
  EXPECT_EQ(run("fdr --p 0.2,abc"), 2);
  {
    std::ofstream(path("bad.jsonl")) << "{oops\n";
  }
  EXPECT_EQ(run("agree --a " + path("bad.jsonl").string() + " --b " + path("bad.jsonl").string() + " --labels A,B"),
            2);
}

TEST_F(Cli, NumericalFailureExitsThree) {
  // One-hot frames leave most coordinates constant, so the covariance is
  // singular without shrinkage.
  write_tensor_container(toy::one_hot_dump(6, 64, 1).to_container(), path("oh.hsd"));
  EXPECT_EQ(run("leace fit --dump " + path("oh.hsd").string() + " --concept boc --shrinkage 0 --out " +
                path("e.hsd").string()),
            3);
}

TEST_F(Cli, MixNoiseHitsTarget) {
  Waveform s, n;
  for (int i = 0; i < 16000; ++i) s.samples.push_back(0.3 * std::sin(i * 0.05));
  for (int i = 0; i < 5000; ++i) n.samples.push_back(0.2 * std::sin(i * 1.3) * std::cos(i * 0.7));
  write_wav(s, path("s.wav"));
  write_wav(n, path("n.wav"));
  ASSERT_EQ(run("mix-noise --signal " + path("s.wav").string() + " --noise " + path("n.wav").string() +
                " --snr-db 5 --out " + path("mix.wav").string() + " --seed 3"),
            0);
  EXPECT_TRUE(fs::exists(path("mix.wav")));
  const auto j = stdout_json();
  EXPECT_NEAR(j.at("achieved_snr_db").get<double>(), 5.0, 1e-6);
}

TEST_F(Cli, ProbeCurveOnToyDump) {
  toy::ToyConfig c;
  c.utterances = 20;
  write_tensor_container(toy::make_toy_model(c).states.to_container(), path("d.hsd"));
  ASSERT_EQ(run("probe curve --dump " + path("d.hsd").string() + " --target energy"), 0);
  const auto j = stdout_json();
  ASSERT_EQ(j.size(), kDefaultLayers.size());
  EXPECT_EQ(j[0].at("layer"), 0);
  ASSERT_EQ(run("probe fit --dump " + path("d.hsd").string() + " --layer 0 --target energy --out " +
                path("p.hsd").string()),
            0);
  ASSERT_EQ(run("probe eval --probe " + path("p.hsd").string() + " --dump " + path("d.hsd").string()), 0);
}

TEST_F(Cli, LensCurveAndDecode) {
  toy::ToyConfig c;
  c.utterances = 8;
  const auto m = toy::make_toy_model(c);
  write_tensor_container(m.states.to_container(), path("d.hsd"));
  write_tensor_container(m.lens.to_container(), path("w.hsd"));
  const std::string io = "--dump " + path("d.hsd").string() + " --weights " + path("w.hsd").string();
  ASSERT_EQ(run("lens " + io + " --layers 0,31"), 0);
  EXPECT_EQ(stdout_json().at("layers").size(), 2u);

  ASSERT_EQ(run("lens decode " + io + " --layer 31 --out " + path("texts.jsonl").string()), 0);
  std::ifstream in(path("texts.jsonl"));
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line); ++lines) {
    const auto j = json::parse(line);
    EXPECT_EQ(j.at("id"), m.states.utterances()[lines].id);
    EXPECT_TRUE(j.at("decoded_text").is_string());
  }
  EXPECT_EQ(lines, 8u);
}

TEST_F(Cli, LeaceFitApplyVerify) {
  toy::ToyConfig c;
  c.utterances = 16;
  c.layers = {16, 31};
  write_tensor_container(toy::make_toy_model(c).states.to_container(), path("d.hsd"));
  ASSERT_EQ(run("leace fit --dump " + path("d.hsd").string() + " --concept acoustic --out " + path("e.hsd").string()),
            0);
  const auto stack = EraserStack::from_container(read_tensor_container(path("e.hsd")));
  EXPECT_EQ(stack.layers(), (std::vector<int>{16, 31}));
  ASSERT_EQ(run("leace apply --stack " + path("e.hsd").string() + " --dump " + path("d.hsd").string() + " --out " +
                path("x.hsd").string()),
            0);
  EXPECT_TRUE(fs::exists(path("x.hsd")));
  ASSERT_EQ(run("leace verify --stack " + path("e.hsd").string() + " --dump " + path("d.hsd").string()), 0);
  EXPECT_FALSE(stdout_.empty());
}

TEST_F(Cli, LeaceRandomDefaultsAndSeedAfterSubcommand) {
  ASSERT_EQ(run("--out-dir " + dir_.string() + " leace random --d 16 --k 4 --seed 9 --layers 0,4"), 0);
  const auto stack = EraserStack::from_container(read_tensor_container(path("random_eraser.hsd")));
  EXPECT_EQ(stack.layers(), (std::vector<int>{0, 4}));
  EXPECT_EQ(stdout_json().at("seed"), 9);
}

TEST_F(Cli, ReportFromPublishedFixtures) {
  const auto manifest = fs::path(CASCEQ_FIXTURE_DIR) / "published_manifest.json";
  ASSERT_EQ(run("report --manifest " + manifest.string() + " --format all --out-dir " + path("r").string()), 0);
  for (const char* f : {"report.md", "report.json", "kappa.csv", "leace.csv", "curves.csv"})
    EXPECT_TRUE(fs::exists(path("r") / f)) << f;
  std::ifstream in(path("r") / "report.md");
  std::ostringstream md;
  md << in.rdbuf();
  EXPECT_NE(md.str().find("7.6-point reversal"), std::string::npos);
}
