#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "casceq/agreement.hpp"
#include "casceq/data_model.hpp"

namespace casceq {

std::string_view toolkit_version();

struct KappaRow {
  std::string a, b;
  bool matched = false;
  std::string task, condition;
  double kappa = 0.0;
  std::optional<double> ci_low, ci_high;
  std::size_t n = 0;  // 0 for fixture rows
  bool degenerate = false;
};

struct OverlapRow {
  std::string a, b;
  bool matched = false;
  std::string task, condition;
  std::optional<double> overlap;
  std::size_t both_wrong = 0, same_wrong = 0;
  double chance = 0.0;
};

struct McNemarRow {
  std::string a, b;
  std::string task, condition;
  std::size_t b_count = 0, c_count = 0;
  double p_raw = 1.0;
  std::optional<double> p_adjusted;  // set for members of the FDR family
  bool rejected = false;
  std::string method;
};

struct AccuracyRow {
  std::string system, task, condition;
  double accuracy = 0.0;  // percent
  std::size_t n = 0, correct = 0, invalid = 0;
};

struct DegradationSeries {
  std::string system, task;
  std::vector<std::string> conditions;  // clean first
  std::vector<double> accuracy;         // percent, aligned with conditions
};

struct ReversalRow {
  std::string task, a, b;
  std::string last_condition;
  double clean_advantage = 0.0;  // a - b, percentage points
  double last_advantage = 0.0;
  double reversal = 0.0;  // clean_advantage - last_advantage
  bool sign_flip = false;
};

struct CurveSeries {
  std::string name;    // e.g. "whisper/ctc"
  std::string metric;  // "r2", "text_decodability", "bag_precision"
  std::vector<std::pair<int, double>> points;  // (layer, value), layer ascending
};

enum class CurveShape { Constant, Increasing, Decreasing, NonMonotonic };
CurveShape curve_shape(const CurveSeries& s, double tol = 0.0);
std::string_view curve_shape_name(CurveShape shape);

struct LeaceRow {
  std::string model;
  std::string condition;   // Baseline, Text, CTC, BoC, Acoustic, Random
  std::optional<int> dim;  // erased dimensionality; none for Baseline
  std::vector<std::optional<double>> values;  // percent, aligned with ReportBundle::leace_tasks
};

struct ImplicitRow {
  std::string task;
  double kappa_impl = 0.0;
  double kappa_casc = 0.0;
  std::optional<double> acc_impl, acc_reference;
};

struct ReversalRequest {
  std::string task, a, b;
};

struct ReportBundle {
  std::uint64_t seed = 0;
  std::size_t resamples = 1000;
  double alpha = 0.05;
  std::string fdr_family = "clean";
  std::vector<std::string> tasks;
  std::vector<std::string> conditions;

  std::vector<KappaRow> kappa;
  std::vector<OverlapRow> overlap;
  std::vector<McNemarRow> mcnemar;
  std::vector<AccuracyRow> accuracy;
  std::vector<ReversalRequest> reversal_requests;
  std::vector<ReversalRow> reversals;  // filled by finalize()
  std::vector<CurveSeries> curves;
  std::vector<std::string> leace_tasks;
  std::vector<LeaceRow> leace;
  std::vector<ImplicitRow> implicit;
  std::vector<std::string> sources;
  std::vector<std::string> footnotes;
};

struct RunOptions {
  std::uint64_t seed = 0;
  std::size_t resamples = 1000;
  double alpha = 0.05;
  unsigned threads = 1;
};

/// Loads every log of the manifest, computes the per pair x task x condition
/// battery, one BH pass over the configured family, accuracy per condition
/// and reversals, then merges the manifest's fixture files.
ReportBundle run_manifest(const Manifest& manifest, const RunOptions& options);

/// Exact-match accuracy in percent; INVALID is always wrong.
AccuracyRow accuracy_of(const PredictionLog& log, const LabelSpace& space, std::string system,
                        std::string condition);

/// Throws InputError when the two series do not cover the same conditions
/// or have fewer than two.
ReversalRow degradation_reversal(const DegradationSeries& a, const DegradationSeries& b);

/// Series of `system` on `task` over `conditions`; missing cells throw.
DegradationSeries degradation_series(const std::vector<AccuracyRow>& rows, const std::string& system,
                                     const std::string& task, const std::vector<std::string>& conditions);

/// Pair rows ordered by decreasing mean kappa over clean-condition tasks
/// (ties by names). Returns (a, b, matched) keys.
std::vector<SystemPair> kappa_row_order(const ReportBundle& bundle);

/// Canonical LEACE condition rank; unknown conditions sort last.
int leace_condition_rank(std::string_view condition);

/// Merges a fixture document; every key is optional:
///   "conditions": [..], "tasks": [..],
///   "accuracy": [{system, task, condition, accuracy}],
///   "kappa": [{a, b, matched, task, condition?, kappa, ci_low?, ci_high?}],
///   "overlap": [{a, b, matched, task, condition?, overlap, chance}],
///   "implicit": [{task, kappa_impl, kappa_casc, acc_impl?, acc_reference?}],
///   "leace": {"tasks": [..], "rows": [{model, condition, d?, values}]},
///   "curves": [{name, metric, points: [[layer, value], ..]}],
///   "reversals": [{task, a, b}].
void merge_fixture(ReportBundle& bundle, const nlohmann::json& fixture, const std::string& source);
void merge_fixture_file(ReportBundle& bundle, const std::filesystem::path& path);

/// Sorts rows into their rendering order and computes the reversal rows
/// from the requests and accuracy rows.
void finalize(ReportBundle& bundle);

enum class RenderFormat { Csv, Json, Markdown };
RenderFormat parse_render_format(std::string_view name);

/// Writes the bundle to out_dir and returns the written paths. File names
/// are fixed per format.
std::vector<std::filesystem::path> render(const ReportBundle& bundle, RenderFormat format,
                                          const std::filesystem::path& out_dir);

/// In-memory renderings, keyed by file name.
std::map<std::string, std::string> render_files(const ReportBundle& bundle, RenderFormat format);

nlohmann::json to_json(const ReportBundle& bundle);

}  // namespace casceq
