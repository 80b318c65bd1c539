#include "casceq/data_model.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "casceq/error.hpp"

namespace casceq {

using nlohmann::json;

std::string normalize_label(std::string_view label) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t begin = 0;
  std::size_t end = label.size();
  while (begin < end && is_space(static_cast<unsigned char>(label[begin]))) ++begin;
  while (end > begin && is_space(static_cast<unsigned char>(label[end - 1]))) --end;
  std::string out(label.substr(begin, end - begin));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

LabelSpace::LabelSpace(std::string task_id, std::vector<std::string> labels)
    : task_id_(std::move(task_id)), labels_(std::move(labels)) {
  if (labels_.size() < 2) {
    throw InputError("label space '" + task_id_ + "' needs at least 2 labels");
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == kInvalidLabel) {
      throw InputError("label space '" + task_id_ + "' uses the reserved label " +
                       std::string(kInvalidLabel));
    }
    auto [it, inserted] =
        normalized_.emplace(normalize_label(labels_[i]), static_cast<LabelId>(i));
    if (!inserted) {
      throw InputError("label space '" + task_id_ + "' has duplicate label '" +
                       labels_[i] + "'");
    }
  }
}

std::optional<LabelId> LabelSpace::find(std::string_view label) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == label) return static_cast<LabelId>(i);
  }
  if (auto it = normalized_.find(normalize_label(label)); it != normalized_.end()) {
    return it->second;
  }
  return std::nullopt;
}

LabelId LabelSpace::resolve(std::string_view label) const {
  if (label == kInvalidLabel) return invalid_id();
  return find(label).value_or(invalid_id());
}

const std::string& LabelSpace::name(LabelId id) const {
  static const std::string invalid(kInvalidLabel);
  if (id == invalid_id()) return invalid;
  if (id < 0 || static_cast<std::size_t>(id) >= labels_.size()) {
    throw InputError("label id out of range");
  }
  return labels_[static_cast<std::size_t>(id)];
}

namespace {

std::string id_string(const json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number_integer()) return std::to_string(value.get<long long>());
  if (value.is_number_unsigned()) return std::to_string(value.get<unsigned long long>());
  throw InputError("field 'id' must be a string or integer");
}

std::string required_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw InputError(std::string("missing field '") + key + "'");
  if (!it->is_string()) throw InputError(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

std::optional<std::string> optional_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw InputError(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

// Raised for a record whose task does not match the label space; never
// downgraded to a malformed line.
struct UnknownTask : InputError {
  using InputError::InputError;
};

bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

PredictionLog parse_prediction_log(std::istream& in, const LabelSpace& space,
                                   LoadMode mode, std::string_view source) {
  PredictionLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    ++log.lines_in;
    try {
      json obj;
      try {
        obj = json::parse(line);
      } catch (const json::parse_error& e) {
        throw InputError(std::string("invalid JSON: ") + e.what());
      }
      if (!obj.is_object()) throw InputError("record is not a JSON object");
      auto id_it = obj.find("id");
      if (id_it == obj.end()) throw InputError("missing field 'id'");

      PredictionRecord rec;
      rec.example_id = id_string(*id_it);
      rec.task_id = required_string(obj, "task");
      rec.gold = required_string(obj, "gold");
      rec.pred = required_string(obj, "pred");
      rec.transcript = optional_string(obj, "transcript");
      rec.condition = optional_string(obj, "condition");

      if (rec.task_id != space.task_id()) {
        // An unknown task is a configuration error, not a bad line.
        throw UnknownTask(std::string(source) + ":" + std::to_string(line_no) +
                         ": unknown task_id '" + rec.task_id + "' (expected '" +
                         space.task_id() + "')");
      }
      auto gold = space.find(rec.gold);
      if (!gold) throw InputError("gold label '" + rec.gold + "' not in label space");
      rec.gold = space.name(*gold);

      if (auto pred = space.find(rec.pred); pred && rec.pred != kInvalidLabel) {
        rec.pred = space.name(*pred);
      } else {
        rec.raw_pred = rec.pred;
        rec.pred = std::string(kInvalidLabel);
        ++log.invalid_count;
      }
      log.records.push_back(std::move(rec));
    } catch (const UnknownTask&) {
      throw;
    } catch (const InputError& e) {
      std::string what = e.what();
      if (mode == LoadMode::Strict) {
        throw InputError(std::string(source) + ":" + std::to_string(line_no) + ": " + what);
      }
      log.malformed.push_back({line_no, what});
    }
  }
  return log;
}

PredictionLog load_prediction_log(const std::filesystem::path& path,
                                  const LabelSpace& space, LoadMode mode) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open prediction log: " + path.string());
  return parse_prediction_log(in, space, mode, path.string());
}

json to_json(const PredictionRecord& record) {
  json obj = {{"id", record.example_id},
              {"task", record.task_id},
              {"gold", record.gold},
              {"pred", record.raw_pred.value_or(record.pred)}};
  if (record.transcript) obj["transcript"] = *record.transcript;
  if (record.condition) obj["condition"] = *record.condition;
  return obj;
}

void write_prediction_log(std::span<const PredictionRecord> records,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write prediction log: " + path.string());
  for (const auto& rec : records) out << to_json(rec).dump() << '\n';
  if (!out) throw InputError("write failed: " + path.string());
}

PairedPredictions PairedPredictions::from_labels(const LabelSpace& space,
                                                 std::span<const std::string> gold,
                                                 std::span<const std::string> pred_a,
                                                 std::span<const std::string> pred_b) {
  if (gold.size() != pred_a.size() || gold.size() != pred_b.size()) {
    throw InputError("paired label vectors differ in length");
  }
  PairedPredictions pp{space, {}, {}, {}, {}};
  pp.example_ids.reserve(gold.size());
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto g = space.find(gold[i]);
    if (!g) throw InputError("gold label '" + gold[i] + "' not in label space");
    pp.example_ids.push_back(std::to_string(i));
    pp.gold.push_back(*g);
    pp.pred_a.push_back(space.resolve(pred_a[i]));
    pp.pred_b.push_back(space.resolve(pred_b[i]));
  }
  return pp;
}

PairedPredictions PairedPredictions::swapped() const {
  PairedPredictions out = *this;
  std::swap(out.pred_a, out.pred_b);
  return out;
}

namespace {

std::map<std::string_view, const PredictionRecord*> index_by_id(
    std::span<const PredictionRecord> records, const char* side) {
  std::map<std::string_view, const PredictionRecord*> index;
  for (const auto& rec : records) {
    if (!index.emplace(rec.example_id, &rec).second) {
      throw InputError(std::string("duplicate example_id '") + rec.example_id + "' in log " + side);
    }
  }
  return index;
}

}  // namespace

AlignResult align_logs(std::span<const PredictionRecord> a,
                       std::span<const PredictionRecord> b, const LabelSpace& space) {
  if (a.empty() || b.empty()) throw InputError("cannot align an empty prediction log");
  const auto index_a = index_by_id(a, "a");
  const auto index_b = index_by_id(b, "b");

  AlignResult result{PairedPredictions{space, {}, {}, {}, {}}, 0, 0};
  auto& pp = result.paired;
  for (const auto& [id, rec_a] : index_a) {
    auto it = index_b.find(id);
    if (it == index_b.end()) continue;
    const PredictionRecord& rec_b = *it->second;
    auto gold_a = space.find(rec_a->gold);
    auto gold_b = space.find(rec_b.gold);
    if (!gold_a || !gold_b) throw InputError("gold label outside label space for id '" + std::string(id) + "'");
    if (*gold_a != *gold_b) {
      throw InputError("gold labels disagree between logs for id '" + std::string(id) + "'");
    }
    pp.example_ids.emplace_back(id);
    pp.gold.push_back(*gold_a);
    pp.pred_a.push_back(space.resolve(rec_a->pred));
    pp.pred_b.push_back(space.resolve(rec_b.pred));
  }
  if (pp.n() == 0) throw InputError("prediction logs share no example ids");
  result.dropped_a = index_a.size() - pp.n();
  result.dropped_b = index_b.size() - pp.n();
  return result;
}

const std::filesystem::path* Manifest::find_path(const std::string& system,
                                                 const std::string& task,
                                                 const std::string& condition) const {
  auto it = paths.find({system, task, condition});
  return it == paths.end() ? nullptr : &it->second;
}

const LabelSpace& Manifest::label_space(const std::string& task) const {
  auto it = label_spaces.find(task);
  if (it == label_spaces.end()) throw InputError("no label space for task '" + task + "'");
  return it->second;
}

namespace {

std::vector<std::string> string_list(const json& doc, const char* key, bool required) {
  auto it = doc.find(key);
  if (it == doc.end()) {
    if (required) throw InputError(std::string("manifest: missing '") + key + "'");
    return {};
  }
  if (!it->is_array()) throw InputError(std::string("manifest: '") + key + "' must be an array");
  std::vector<std::string> out;
  for (const auto& v : *it) {
    if (!v.is_string()) throw InputError(std::string("manifest: '") + key + "' entries must be strings");
    out.push_back(v.get<std::string>());
  }
  std::set<std::string> unique(out.begin(), out.end());
  if (unique.size() != out.size()) throw InputError(std::string("manifest: duplicate entry in '") + key + "'");
  return out;
}

}  // namespace

Manifest parse_manifest(const json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw InputError("manifest must be a JSON object");
  Manifest m;
  m.systems = string_list(doc, "systems", false);
  m.tasks = string_list(doc, "tasks", false);
  m.conditions = string_list(doc, "conditions", false);
  if (m.conditions.empty()) m.conditions = {"clean"};
  if (auto it = doc.find("fdr_family"); it != doc.end()) {
    m.fdr_family = it->get<std::string>();
    if (m.fdr_family != "clean" && m.fdr_family != "all") {
      throw InputError("manifest: fdr_family must be 'clean' or 'all'");
    }
  }

  const std::set<std::string> systems(m.systems.begin(), m.systems.end());
  const std::set<std::string> tasks(m.tasks.begin(), m.tasks.end());
  const std::set<std::string> conditions(m.conditions.begin(), m.conditions.end());

  for (const auto& p : doc.value("pairs", json::array())) {
    SystemPair pair{p.at("a").get<std::string>(), p.at("b").get<std::string>(),
                    p.value("matched", false)};
    if (!systems.count(pair.a) || !systems.count(pair.b)) {
      throw InputError("manifest: pair references unknown system '" + pair.a + "'/'" + pair.b + "'");
    }
    if (pair.a == pair.b) throw InputError("manifest: pair compares '" + pair.a + "' with itself");
    m.pairs.push_back(std::move(pair));
  }

  const json spaces = doc.value("label_spaces", json::object());
  for (const auto& task : m.tasks) {
    if (!spaces.contains(task)) throw InputError("manifest: no label space for task '" + task + "'");
    m.label_spaces.emplace(task, LabelSpace(task, spaces.at(task).get<std::vector<std::string>>()));
  }

  for (const auto& entry : doc.value("logs", json::array())) {
    auto system = entry.at("system").get<std::string>();
    auto task = entry.at("task").get<std::string>();
    auto condition = entry.value("condition", m.conditions.front());
    if (!systems.count(system)) throw InputError("manifest: log for unknown system '" + system + "'");
    if (!tasks.count(task)) throw InputError("manifest: log for unknown task '" + task + "'");
    if (!conditions.count(condition)) throw InputError("manifest: log for unknown condition '" + condition + "'");
    std::filesystem::path path = entry.at("path").get<std::string>();
    if (path.is_relative()) path = base_dir / path;
    if (!m.paths.emplace(std::make_tuple(system, task, condition), path).second) {
      throw InputError("manifest: duplicate log for (" + system + ", " + task + ", " + condition + ")");
    }
  }

  for (const auto& f : string_list(doc, "fixtures", false)) {
    std::filesystem::path path = f;
    m.fixtures.push_back(path.is_relative() ? base_dir / path : path);
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("manifest " + path.string() + ": " + e.what());
  }
  try {
    return parse_manifest(doc, path.parent_path());
  } catch (const json::exception& e) {
    throw InputError("manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace casceq
