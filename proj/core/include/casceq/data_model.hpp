#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

namespace casceq {

// Reserved label for predictions that do not parse into the label space.
// It is always wrong for accuracy and overlap and a distinct category for kappa.
inline constexpr std::string_view kInvalidLabel = "<INVALID>";

using LabelId = std::int32_t;

/// Ordered, unique set of class labels for one task.
class LabelSpace {
 public:
  LabelSpace(std::string task_id, std::vector<std::string> labels);

  const std::string& task_id() const noexcept { return task_id_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }

  /// Id used for INVALID; one past the last real label.
  LabelId invalid_id() const noexcept { return static_cast<LabelId>(labels_.size()); }

  /// Exact match first, then lowercase/trimmed match. nullopt when neither hits.
  std::optional<LabelId> find(std::string_view label) const;

  /// Like find() but maps misses to invalid_id().
  LabelId resolve(std::string_view label) const;

  const std::string& name(LabelId id) const;

  /// 1/(|C|-1): probability two independent uniform wrong answers coincide.
  double overlap_chance() const noexcept { return 1.0 / static_cast<double>(size() - 1); }

  friend bool operator==(const LabelSpace&, const LabelSpace&) = default;

 private:
  std::string task_id_;
  std::vector<std::string> labels_;
  std::map<std::string, LabelId, std::less<>> normalized_;
};

/// Lowercase + trim, used for the label exact-match convention.
std::string normalize_label(std::string_view label);

struct PredictionRecord {
  std::string example_id;
  std::string task_id;
  std::string gold;
  std::string pred;
  std::optional<std::string> transcript;
  std::optional<std::string> condition;
  // Original prediction text when `pred` was mapped to INVALID.
  std::optional<std::string> raw_pred;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

struct MalformedLine {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct PredictionLog {
  std::vector<PredictionRecord> records;
  std::size_t invalid_count = 0;
  std::size_t lines_in = 0;  // non-blank lines seen
  std::vector<MalformedLine> malformed;
};

enum class LoadMode {
  Strict,   // first malformed line throws InputError
  Lenient,  // malformed lines are collected in PredictionLog::malformed
};

PredictionLog parse_prediction_log(std::istream& in, const LabelSpace& space,
                                   LoadMode mode = LoadMode::Strict,
                                   std::string_view source = "<stream>");

PredictionLog load_prediction_log(const std::filesystem::path& path,
                                  const LabelSpace& space,
                                  LoadMode mode = LoadMode::Strict);

nlohmann::json to_json(const PredictionRecord& record);
void write_prediction_log(std::span<const PredictionRecord> records,
                          const std::filesystem::path& path);

/// Two systems' predictions joined on example id, as label ids.
struct PairedPredictions {
  LabelSpace label_space;
  std::vector<std::string> example_ids;
  std::vector<LabelId> gold;
  std::vector<LabelId> pred_a;
  std::vector<LabelId> pred_b;

  std::size_t n() const noexcept { return gold.size(); }

  /// Builds from label strings; unknown predictions become INVALID, unknown
  /// gold labels throw. Ids are the positional indices.
  static PairedPredictions from_labels(const LabelSpace& space,
                                       std::span<const std::string> gold,
                                       std::span<const std::string> pred_a,
                                       std::span<const std::string> pred_b);

  /// Same data with the roles of the two systems exchanged.
  PairedPredictions swapped() const;
};

struct AlignResult {
  PairedPredictions paired;
  std::size_t dropped_a = 0;
  std::size_t dropped_b = 0;
};

/// Inner join on example_id, ordered by example_id (byte-wise string order).
AlignResult align_logs(std::span<const PredictionRecord> a,
                       std::span<const PredictionRecord> b,
                       const LabelSpace& space);

struct SystemPair {
  std::string a;
  std::string b;
  bool matched = false;
};

struct Manifest {
  std::vector<std::string> systems;
  std::vector<SystemPair> pairs;
  std::vector<std::string> tasks;
  std::vector<std::string> conditions;  // first entry is the clean condition
  std::map<std::string, LabelSpace> label_spaces;
  std::map<std::tuple<std::string, std::string, std::string>, std::filesystem::path> paths;
  // "clean" (default) corrects the clean-condition pair x task grid; "all"
  // adds every noise condition to the same family.
  std::string fdr_family = "clean";
  // Published-number fixture files rendered alongside computed results.
  std::vector<std::filesystem::path> fixtures;

  const std::filesystem::path* find_path(const std::string& system,
                                         const std::string& task,
                                         const std::string& condition) const;
  const LabelSpace& label_space(const std::string& task) const;
};

/// Relative log paths resolve against `base_dir`.
Manifest parse_manifest(const nlohmann::json& doc, const std::filesystem::path& base_dir);
Manifest load_manifest(const std::filesystem::path& path);

}  // namespace casceq
