#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "casceq/agreement.hpp"
#include "casceq/error.hpp"
#include "casceq/report.hpp"
#include "casceq/rng.hpp"

namespace fs = std::filesystem;
using namespace casceq;

namespace {

const std::vector<std::string> kLabels = {"World", "Sports", "Business", "Sci/Tech"};

// Writes a manifest with three systems over one 4-class task and two
// conditions; returns its path.
fs::path write_synthetic_run(const fs::path& dir, bool identical = false) {
  fs::create_directories(dir);
  Rng rng(17);
  const std::size_t n = 120;
  std::vector<std::string> gold;
  for (std::size_t i = 0; i < n; ++i) gold.push_back(kLabels[rng.index(4)]);
  const std::vector<std::string> systems = {"uv", "casc", "gem"};
  const std::vector<std::string> conditions = {"clean", "snr0"};
  nlohmann::json logs = nlohmann::json::array();
  for (std::size_t s = 0; s < systems.size(); ++s) {
    for (std::size_t c = 0; c < conditions.size(); ++c) {
      const double skill = identical ? 0.8 : 0.85 - 0.1 * static_cast<double>(s) - 0.15 * static_cast<double>(c);
      Rng r = identical ? Rng::keyed(5, c) : Rng::keyed(5, s, c);
      const auto path = dir / (systems[s] + "_" + conditions[c] + ".jsonl");
      std::ofstream out(path);
      for (std::size_t i = 0; i < n; ++i) {
        std::string pred = r.uniform() < skill ? gold[i] : kLabels[r.index(4)];
        if (r.uniform() < 0.02) pred = "no idea";
        nlohmann::json j = {{"id", "x" + std::to_string(1000 + i)}, {"task", "ag_news"}, {"gold", gold[i]},
                            {"pred", pred}};
        out << j.dump() << "\n";
      }
      logs.push_back({{"system", systems[s]}, {"task", "ag_news"}, {"condition", conditions[c]},
                      {"path", path.filename().string()}});
    }
  }
  nlohmann::json m = {{"systems", systems},
                      {"pairs", {{{"a", "uv"}, {"b", "casc"}, {"matched", true}},
                                 {{"a", "uv"}, {"b", "gem"}},
                                 {{"a", "casc"}, {"b", "gem"}}}},
                      {"tasks", {"ag_news"}},
                      {"conditions", conditions},
                      {"label_spaces", {{"ag_news", kLabels}}},
                      {"logs", logs}};
  const auto path = dir / "manifest.json";
  std::ofstream(path) << m.dump(2);
  return path;
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("casceq_report_" + name);
  fs::remove_all(d);
  return d;
}

DegradationSeries series(std::string system, std::vector<double> acc) {
  DegradationSeries s;
  s.system = std::move(system);
  s.task = "sst2";
  for (std::size_t i = 0; i < acc.size(); ++i) s.conditions.push_back(i == 0 ? "clean" : "c" + std::to_string(i));
  s.accuracy = std::move(acc);
  return s;
}

}  // namespace

TEST(RunManifest, IdenticalSystemsAgreeCompletely) {
  const auto dir = fresh_dir("identical");
  const auto m = load_manifest(write_synthetic_run(dir, true));
  const auto b = run_manifest(m, {0, 100, 0.05, 1});
  ASSERT_FALSE(b.kappa.empty());
  for (const auto& k : b.kappa) EXPECT_DOUBLE_EQ(k.kappa, 1.0);
  for (const auto& r : b.mcnemar) {
    EXPECT_EQ(r.b_count, 0u);
    EXPECT_EQ(r.c_count, 0u);
    EXPECT_DOUBLE_EQ(r.p_raw, 1.0);
  }
  fs::remove_all(dir);
}

TEST(RunManifest, CellsMatchModuleOracles) {
  const auto dir = fresh_dir("oracle");
  const auto m = load_manifest(write_synthetic_run(dir));
  const auto b = run_manifest(m, {3, 200, 0.05, 2});
  const auto& space = m.label_space("ag_news");

  for (const auto& row : b.kappa) {
    const auto la = load_prediction_log(*m.find_path(row.a, row.task, row.condition), space);
    const auto lb = load_prediction_log(*m.find_path(row.b, row.task, row.condition), space);
    const auto pp = align_logs(la.records, lb.records, space).paired;
    EXPECT_EQ(row.kappa, cohen_kappa(pp).kappa);
    EXPECT_EQ(row.n, pp.n());
    const auto iv = bootstrap_ci(pp, {Metric::Kappa, 200, 3, 0.95, 1});
    EXPECT_EQ(*row.ci_low, iv.low);
    EXPECT_EQ(*row.ci_high, iv.high);
  }
  for (const auto& row : b.mcnemar) {
    const auto la = load_prediction_log(*m.find_path(row.a, row.task, row.condition), space);
    const auto lb = load_prediction_log(*m.find_path(row.b, row.task, row.condition), space);
    const auto r = mcnemar(align_logs(la.records, lb.records, space).paired);
    EXPECT_EQ(row.b_count, r.b);
    EXPECT_EQ(row.c_count, r.c);
    EXPECT_EQ(row.p_raw, r.p_value);
  }
  for (const auto& row : b.overlap) {
    const auto la = load_prediction_log(*m.find_path(row.a, row.task, row.condition), space);
    const auto lb = load_prediction_log(*m.find_path(row.b, row.task, row.condition), space);
    const auto r = conditional_error_overlap(align_logs(la.records, lb.records, space).paired);
    EXPECT_EQ(row.overlap, r.overlap);
    EXPECT_EQ(row.both_wrong, r.both_wrong);
  }
  fs::remove_all(dir);
}

TEST(RunManifest, AccuracyMatchesLineCount) {
  const auto dir = fresh_dir("accuracy");
  const auto m = load_manifest(write_synthetic_run(dir));
  const auto b = run_manifest(m, {0, 50, 0.05, 1});
  ASSERT_EQ(b.accuracy.size(), 6u);
  for (const auto& row : b.accuracy) {
    std::ifstream in(*m.find_path(row.system, row.task, row.condition));
    std::size_t n = 0, correct = 0;
    for (std::string line; std::getline(in, line);) {
      const auto j = nlohmann::json::parse(line);
      ++n;
      correct += j["gold"] == j["pred"];
    }
    EXPECT_EQ(row.n, n);
    EXPECT_EQ(row.correct, correct);
    EXPECT_DOUBLE_EQ(row.accuracy, 100.0 * static_cast<double>(correct) / static_cast<double>(n));
  }
  fs::remove_all(dir);
}

TEST(RunManifest, FdrFamilyCoversCleanGrid) {
  const auto dir = fresh_dir("fdr");
  auto m = load_manifest(write_synthetic_run(dir));
  const auto clean = run_manifest(m, {0, 20, 0.05, 1});
  const auto adjusted = std::count_if(clean.mcnemar.begin(), clean.mcnemar.end(),
                                      [](const McNemarRow& r) { return r.p_adjusted.has_value(); });
  EXPECT_EQ(adjusted, 3);  // 3 pairs x 1 task
  for (const auto& r : clean.mcnemar) EXPECT_EQ(r.p_adjusted.has_value(), r.condition == "clean");

  m.fdr_family = "all";
  const auto all = run_manifest(m, {0, 20, 0.05, 1});
  for (const auto& r : all.mcnemar) EXPECT_TRUE(r.p_adjusted.has_value());
  fs::remove_all(dir);
}

TEST(RunManifest, MissingLogNamesTheCell) {
  const auto dir = fresh_dir("missing");
  const auto path = write_synthetic_run(dir);
  fs::remove(dir / "gem_snr0.jsonl");
  const auto m = load_manifest(path);
  try {
    run_manifest(m, {0, 20, 0.05, 1});
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("gem"), std::string::npos) << what;
    EXPECT_NE(what.find("snr0"), std::string::npos) << what;
  }
  fs::remove_all(dir);
}

TEST(RunManifest, RowsOrderedByMeanKappa) {
  const auto dir = fresh_dir("order");
  const auto m = load_manifest(write_synthetic_run(dir));
  const auto b = run_manifest(m, {0, 20, 0.05, 1});
  const auto order = kappa_row_order(b);
  ASSERT_EQ(order.size(), 3u);
  auto mean = [&](const SystemPair& p) {
    for (const auto& k : b.kappa)
      if (k.a == p.a && k.b == p.b && k.condition == "clean") return k.kappa;
    return -2.0;
  };
  EXPECT_GE(mean(order[0]), mean(order[1]));
  EXPECT_GE(mean(order[1]), mean(order[2]));
  fs::remove_all(dir);
}

TEST(Degradation, ConstantGapNoReversal) {
  const auto r = degradation_reversal(series("a", {80, 80, 80}), series("b", {70, 70, 70}));
  EXPECT_FALSE(r.sign_flip);
  EXPECT_DOUBLE_EQ(r.reversal, 0.0);
}

TEST(Degradation, PublishedSeriesReverses) {
  const auto r = degradation_reversal(series("gemini", {90.4, 88.15, 87.2, 85.5, 80.2}),
                                      series("cascade", {88.4, 88.9, 88.3, 87.8, 85.85}));
  EXPECT_NEAR(r.clean_advantage, 2.0, 1e-9);
  EXPECT_NEAR(r.last_advantage, -5.65, 1e-9);
  EXPECT_NEAR(r.reversal, 7.65, 1e-9);
  EXPECT_TRUE(r.sign_flip);
}

TEST(Degradation, MismatchedConditionsRejected) {
  EXPECT_THROW(degradation_reversal(series("a", {1, 2, 3}), series("b", {1, 2})), InputError);
  EXPECT_THROW(degradation_reversal(series("a", {1}), series("b", {1})), InputError);
}

TEST(Degradation, SeriesEqualsHandCounts) {
  const std::vector<AccuracyRow> rows = {{"a", "t", "clean", 75.0, 4, 3, 0},
                                         {"a", "t", "snr5", 50.0, 4, 2, 1},
                                         {"a", "t", "snr0", 25.0, 4, 1, 0}};
  const auto s = degradation_series(rows, "a", "t", {"clean", "snr5", "snr0"});
  EXPECT_EQ(s.accuracy, (std::vector<double>{75.0, 50.0, 25.0}));
  EXPECT_THROW(degradation_series(rows, "a", "t", {"clean", "snr10"}), InputError);
}

TEST(AccuracyOf, InvalidAlwaysWrong) {
  const LabelSpace space("t", {"A", "B"});
  PredictionLog log;
  log.records = {{"1", "t", "A", "A", {}, {}, {}},
                 {"2", "t", "B", std::string(kInvalidLabel), {}, {}, std::string("b?")},
                 {"3", "t", "B", "A", {}, {}, {}}};
  log.invalid_count = 1;
  const auto r = accuracy_of(log, space, "s", "clean");
  EXPECT_EQ(r.correct, 1u);
  EXPECT_EQ(r.invalid, 1u);
  EXPECT_NEAR(r.accuracy, 100.0 / 3.0, 1e-12);
}

TEST(CurveShape, Classification) {
  CurveSeries s{"x", "r2", {{0, 0.1}, {4, 0.2}, {8, 0.3}}};
  EXPECT_EQ(curve_shape(s), CurveShape::Increasing);
  s.points = {{0, 0.26}, {16, 0.16}, {31, 0.26}};
  EXPECT_EQ(curve_shape(s), CurveShape::NonMonotonic);
  EXPECT_EQ(curve_shape_name(curve_shape(s)), "non-monotonic");
  s.points = {{0, 0.5}, {4, 0.5}};
  EXPECT_EQ(curve_shape(s), CurveShape::Constant);
  s.points = {{0, 0.5}, {4, 0.49}, {8, 0.2}};
  EXPECT_EQ(curve_shape(s), CurveShape::Decreasing);
  s.points = {{0, 0.2}, {4, 0.19}, {8, 0.5}};
  EXPECT_EQ(curve_shape(s, 0.02), CurveShape::Increasing);
}

TEST(Render, EmptyBundleHeadersOnly) {
  const ReportBundle b;
  for (auto f : {RenderFormat::Csv, RenderFormat::Json, RenderFormat::Markdown}) {
    const auto files = render_files(b, f);
    EXPECT_FALSE(files.empty());
    for (const auto& [name, text] : files) EXPECT_FALSE(text.empty()) << name;
  }
  const auto csv = render_files(b, RenderFormat::Csv);
  EXPECT_EQ(csv.at("accuracy.csv"), "system,task,condition,accuracy,n,correct,invalid\n# seed=0 casceq=" +
                                        std::string(toolkit_version()) + "\n");
  const auto dir = fresh_dir("empty");
  const auto written = render(b, RenderFormat::Markdown, dir);
  ASSERT_EQ(written.size(), 1u);
  EXPECT_TRUE(fs::exists(written[0]));
  fs::remove_all(dir);
}

TEST(Render, TwiceIsByteIdentical) {
  const auto dir = fresh_dir("twice");
  const auto m = load_manifest(write_synthetic_run(dir));
  const auto a = run_manifest(m, {9, 100, 0.05, 1});
  const auto b = run_manifest(m, {9, 100, 0.05, 3});
  for (auto f : {RenderFormat::Csv, RenderFormat::Json, RenderFormat::Markdown})
    EXPECT_EQ(render_files(a, f), render_files(b, f));
  fs::remove_all(dir);
}

TEST(Render, LeaceRowsInTableOrder) {
  ReportBundle b;
  merge_fixture(b, nlohmann::json::parse(R"({"leace": {"tasks": ["AG"], "rows": [
      {"model": "Ultravox", "condition": "Random", "d": 159, "values": [78.9]},
      {"model": "Ultravox", "condition": "CTC", "d": 49, "values": [9.0]},
      {"model": "Ultravox", "condition": "Baseline", "values": [82.9]},
      {"model": "Ultravox", "condition": "Acoustic", "d": 2, "values": [70.0]},
      {"model": "Ultravox", "condition": "Text", "d": 159, "values": [0.0]},
      {"model": "Ultravox", "condition": "BoC", "d": 48, "values": [5.9]}]}})"),
                "inline");
  finalize(b);
  std::vector<std::string> order;
  for (const auto& r : b.leace) order.push_back(r.condition);
  EXPECT_EQ(order, (std::vector<std::string>{"Baseline", "Text", "CTC", "BoC", "Acoustic", "Random"}));
  const auto md = render_files(b, RenderFormat::Markdown).at("report.md");
  const auto base = md.find("| Baseline | - | 82.9 |");
  const auto text = md.find("| Text | 159 | 0.0 |");
  const auto rnd = md.find("| Random | 159 | 78.9 |");
  ASSERT_NE(base, std::string::npos) << md;
  ASSERT_NE(text, std::string::npos) << md;
  ASSERT_NE(rnd, std::string::npos) << md;
  EXPECT_LT(base, text);
  EXPECT_LT(text, rnd);
}

TEST(Render, PublishedFixturesMerge) {
  ReportBundle b;
  merge_fixture_file(b, fs::path(CASCEQ_FIXTURE_DIR) / "sst2_degradation.json");
  finalize(b);
  ASSERT_EQ(b.reversals.size(), 1u);
  // The fixture's 0 dB value is 80.25: +2.0 clean, -5.6 at 0 dB.
  EXPECT_NEAR(b.reversals[0].clean_advantage, 2.0, 1e-9);
  EXPECT_NEAR(b.reversals[0].last_advantage, -5.6, 1e-9);
  EXPECT_NEAR(b.reversals[0].reversal, 7.6, 1e-9);
  EXPECT_TRUE(b.reversals[0].sign_flip);
  EXPECT_THROW(merge_fixture_file(b, fs::path(CASCEQ_FIXTURE_DIR) / "absent.json"), InputError);
}

TEST(Render, FormatNames) {
  EXPECT_EQ(parse_render_format("csv"), RenderFormat::Csv);
  EXPECT_EQ(parse_render_format("markdown"), RenderFormat::Markdown);
  EXPECT_THROW(parse_render_format("html"), InputError);
}
