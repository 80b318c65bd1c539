#include "casceq/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "casceq/error.hpp"

#ifndef CASCEQ_VERSION
#define CASCEQ_VERSION "0.0.0"
#endif

namespace casceq {

using nlohmann::json;

std::string_view toolkit_version() { return CASCEQ_VERSION; }

namespace {

std::string cell_name(const std::string& system, const std::string& task, const std::string& condition) {
  return "(" + system + ", " + task + ", " + condition + ")";
}

}  // namespace

AccuracyRow accuracy_of(const PredictionLog& log, const LabelSpace& space, std::string system,
                        std::string condition) {
  AccuracyRow row;
  row.system = std::move(system);
  row.task = space.task_id();
  row.condition = std::move(condition);
  row.n = log.records.size();
  if (row.n == 0) throw InputError("accuracy: empty log for " + cell_name(row.system, row.task, row.condition));
  for (const auto& r : log.records) {
    const LabelId pred = space.resolve(r.pred);
    if (pred == space.invalid_id()) {
      ++row.invalid;
      continue;
    }
    row.correct += pred == space.resolve(r.gold) ? 1 : 0;
  }
  row.accuracy = 100.0 * static_cast<double>(row.correct) / static_cast<double>(row.n);
  return row;
}

DegradationSeries degradation_series(const std::vector<AccuracyRow>& rows, const std::string& system,
                                     const std::string& task, const std::vector<std::string>& conditions) {
  DegradationSeries s{system, task, conditions, {}};
  for (const auto& c : conditions) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const AccuracyRow& r) {
      return r.system == system && r.task == task && r.condition == c;
    });
    if (it == rows.end()) throw InputError("degradation: missing accuracy for " + cell_name(system, task, c));
    s.accuracy.push_back(it->accuracy);
  }
  return s;
}

ReversalRow degradation_reversal(const DegradationSeries& a, const DegradationSeries& b) {
  if (a.conditions.size() < 2) throw InputError("degradation: need a clean and at least one noisy condition");
  if (a.conditions != b.conditions) throw InputError("degradation: series cover different conditions");
  if (a.accuracy.size() != a.conditions.size() || b.accuracy.size() != b.conditions.size()) {
    throw InputError("degradation: missing condition in series");
  }
  ReversalRow r;
  r.task = a.task;
  r.a = a.system;
  r.b = b.system;
  r.last_condition = a.conditions.back();
  r.clean_advantage = a.accuracy.front() - b.accuracy.front();
  r.last_advantage = a.accuracy.back() - b.accuracy.back();
  r.reversal = r.clean_advantage - r.last_advantage;
  r.sign_flip = (r.clean_advantage > 0.0 && r.last_advantage < 0.0) ||
                (r.clean_advantage < 0.0 && r.last_advantage > 0.0);
  return r;
}

CurveShape curve_shape(const CurveSeries& s, double tol) {
  bool up = false, down = false;
  for (std::size_t i = 1; i < s.points.size(); ++i) {
    const double step = s.points[i].second - s.points[i - 1].second;
    if (step > tol) up = true;
    if (step < -tol) down = true;
  }
  if (up && down) return CurveShape::NonMonotonic;
  if (up) return CurveShape::Increasing;
  if (down) return CurveShape::Decreasing;
  return CurveShape::Constant;
}

std::string_view curve_shape_name(CurveShape shape) {
  switch (shape) {
    case CurveShape::Constant: return "constant";
    case CurveShape::Increasing: return "increasing";
    case CurveShape::Decreasing: return "decreasing";
    case CurveShape::NonMonotonic: return "non-monotonic";
  }
  return "?";
}

int leace_condition_rank(std::string_view condition) {
  static constexpr std::string_view kOrder[] = {"baseline", "text", "ctc", "boc", "acoustic", "random"};
  std::string lower(condition);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (int i = 0; i < 6; ++i) {
    if (lower == kOrder[i]) return i;
  }
  return 6;
}

namespace {

// Position of `value` in `order`, or order.size() when absent.
std::size_t rank_in(const std::vector<std::string>& order, const std::string& value) {
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), value) - order.begin());
}

void append_unique(std::vector<std::string>& order, const std::string& value) {
  if (std::find(order.begin(), order.end(), value) == order.end()) order.push_back(value);
}

}  // namespace

std::vector<SystemPair> kappa_row_order(const ReportBundle& bundle) {
  struct Acc {
    SystemPair pair;
    double sum = 0.0;
    int count = 0;
  };
  std::vector<Acc> rows;
  const std::string clean = bundle.conditions.empty() ? std::string("clean") : bundle.conditions.front();
  for (const auto& k : bundle.kappa) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const Acc& a) { return a.pair.a == k.a && a.pair.b == k.b; });
    if (it == rows.end()) {
      rows.push_back({{k.a, k.b, k.matched}, 0.0, 0});
      it = rows.end() - 1;
    }
    if (k.condition == clean) {
      it->sum += k.kappa;
      ++it->count;
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Acc& x, const Acc& y) {
    const double mx = x.count ? x.sum / x.count : -std::numeric_limits<double>::infinity();
    const double my = y.count ? y.sum / y.count : -std::numeric_limits<double>::infinity();
    if (mx != my) return mx > my;
    return std::tie(x.pair.a, x.pair.b) < std::tie(y.pair.a, y.pair.b);
  });
  std::vector<SystemPair> out;
  for (auto& r : rows) out.push_back(r.pair);
  return out;
}

void finalize(ReportBundle& bundle) {
  // Tasks and conditions seen in rows but not declared go last.
  for (const auto& r : bundle.kappa) append_unique(bundle.tasks, r.task);
  for (const auto& r : bundle.accuracy) append_unique(bundle.tasks, r.task);
  for (const auto& r : bundle.overlap) append_unique(bundle.tasks, r.task);
  for (const auto& r : bundle.accuracy) append_unique(bundle.conditions, r.condition);
  for (const auto& r : bundle.kappa) append_unique(bundle.conditions, r.condition);

  const std::vector<SystemPair> order = kappa_row_order(bundle);
  auto pair_rank = [&](const std::string& a, const std::string& b) {
    auto it = std::find_if(order.begin(), order.end(), [&](const SystemPair& p) { return p.a == a && p.b == b; });
    return static_cast<std::size_t>(it - order.begin());
  };
  auto key = [&](const auto& r) {
    return std::make_tuple(rank_in(bundle.conditions, r.condition), pair_rank(r.a, r.b),
                           rank_in(bundle.tasks, r.task));
  };
  std::stable_sort(bundle.kappa.begin(), bundle.kappa.end(), [&](const auto& x, const auto& y) { return key(x) < key(y); });
  std::stable_sort(bundle.overlap.begin(), bundle.overlap.end(),
                   [&](const auto& x, const auto& y) { return key(x) < key(y); });
  std::stable_sort(bundle.mcnemar.begin(), bundle.mcnemar.end(),
                   [&](const auto& x, const auto& y) { return key(x) < key(y); });

  std::vector<std::string> systems;
  for (const auto& r : bundle.accuracy) append_unique(systems, r.system);
  std::stable_sort(bundle.accuracy.begin(), bundle.accuracy.end(), [&](const auto& x, const auto& y) {
    return std::make_tuple(rank_in(systems, x.system), rank_in(bundle.tasks, x.task), rank_in(bundle.conditions, x.condition)) <
           std::make_tuple(rank_in(systems, y.system), rank_in(bundle.tasks, y.task), rank_in(bundle.conditions, y.condition));
  });

  std::vector<std::string> models;
  for (const auto& r : bundle.leace) append_unique(models, r.model);
  std::stable_sort(bundle.leace.begin(), bundle.leace.end(), [&](const auto& x, const auto& y) {
    return std::make_pair(rank_in(models, x.model), leace_condition_rank(x.condition)) <
           std::make_pair(rank_in(models, y.model), leace_condition_rank(y.condition));
  });
  std::stable_sort(bundle.implicit.begin(), bundle.implicit.end(), [&](const auto& x, const auto& y) {
    return rank_in(bundle.tasks, x.task) < rank_in(bundle.tasks, y.task);
  });
  for (auto& c : bundle.curves) std::sort(c.points.begin(), c.points.end());

  bundle.reversals.clear();
  for (const auto& req : bundle.reversal_requests) {
    bundle.reversals.push_back(degradation_reversal(
        degradation_series(bundle.accuracy, req.a, req.task, bundle.conditions),
        degradation_series(bundle.accuracy, req.b, req.task, bundle.conditions)));
  }
}

ReportBundle run_manifest(const Manifest& manifest, const RunOptions& options) {
  ReportBundle bundle;
  bundle.seed = options.seed;
  bundle.resamples = options.resamples;
  bundle.alpha = options.alpha;
  bundle.fdr_family = manifest.fdr_family;
  bundle.tasks = manifest.tasks;
  bundle.conditions = manifest.conditions;

  std::map<std::tuple<std::string, std::string, std::string>, PredictionLog> logs;
  auto log_for = [&](const std::string& system, const std::string& task,
                     const std::string& condition) -> const PredictionLog& {
    const auto k = std::make_tuple(system, task, condition);
    if (auto it = logs.find(k); it != logs.end()) return it->second;
    const std::filesystem::path* path = manifest.find_path(system, task, condition);
    if (!path) throw InputError("manifest has no log for " + cell_name(system, task, condition));
    try {
      auto log = load_prediction_log(*path, manifest.label_space(task));
      bundle.sources.push_back(path->generic_string());
      return logs.emplace(k, std::move(log)).first->second;
    } catch (const InputError& e) {
      throw InputError(cell_name(system, task, condition) + ": " + e.what());
    }
  };

  for (const auto& condition : manifest.conditions) {
    for (const auto& system : manifest.systems) {
      for (const auto& task : manifest.tasks) {
        bundle.accuracy.push_back(accuracy_of(log_for(system, task, condition), manifest.label_space(task), system, condition));
      }
    }
  }

  std::vector<std::size_t> family;
  for (const auto& condition : manifest.conditions) {
    const bool in_family = manifest.fdr_family == "all" || condition == manifest.conditions.front();
    for (const auto& pair : manifest.pairs) {
      for (const auto& task : manifest.tasks) {
        const LabelSpace& space = manifest.label_space(task);
        const AlignResult aligned = [&] {
          try {
            return align_logs(log_for(pair.a, task, condition).records, log_for(pair.b, task, condition).records, space);
          } catch (const InputError& e) {
            throw InputError("aligning " + pair.a + " and " + pair.b + " on " + task + "/" + condition + ": " + e.what());
          }
        }();
        const PairedPredictions& pp = aligned.paired;

        KappaResult k = cohen_kappa(pp);
        if (pp.n() >= 2 && options.resamples > 0) {
          const Interval ci = bootstrap_ci(pp, {Metric::Kappa, options.resamples, options.seed, 0.95, options.threads});
          k.ci_low = ci.low;
          k.ci_high = ci.high;
        }
        bundle.kappa.push_back({pair.a, pair.b, pair.matched, task, condition, k.kappa, k.ci_low, k.ci_high, k.n,
                                k.degenerate});

        if (space.size() >= 3) {
          const OverlapResult o = conditional_error_overlap(pp);
          bundle.overlap.push_back({pair.a, pair.b, pair.matched, task, condition, o.overlap, o.both_wrong,
                                    o.same_wrong, o.chance});
        }

        const McNemarResult mc = mcnemar(pp);
        if (in_family) family.push_back(bundle.mcnemar.size());
        bundle.mcnemar.push_back({pair.a, pair.b, task, condition, mc.b, mc.c, mc.p_value, std::nullopt, false,
                                  mc.method == McNemarMethod::Exact ? "exact" : "continuity-corrected"});
      }
    }
  }

  if (!family.empty()) {
    std::vector<double> raw;
    for (auto i : family) raw.push_back(bundle.mcnemar[i].p_raw);
    const FdrResult fdr = bh_fdr(raw, options.alpha);
    for (std::size_t j = 0; j < family.size(); ++j) {
      bundle.mcnemar[family[j]].p_adjusted = fdr.adjusted[j];
      bundle.mcnemar[family[j]].rejected = fdr.rejected[j];
    }
  }

  if (manifest.conditions.size() >= 2) {
    for (const auto& task : manifest.tasks) {
      for (const auto& pair : manifest.pairs) bundle.reversal_requests.push_back({task, pair.a, pair.b});
    }
  }

  bundle.footnotes = {
      "Predictions outside the label space are coded <INVALID>: always wrong for accuracy and error overlap, "
      "an ordinary category for kappa.",
      "Kappa intervals are percentile bootstrap intervals over " + std::to_string(options.resamples) +
          " resamples of examples (seed " + std::to_string(options.seed) + ").",
      "McNemar uses the exact two-sided binomial test when b + c <= 25 and the continuity-corrected chi-square "
      "test otherwise.",
      "Benjamini-Hochberg correction over the " +
          std::string(manifest.fdr_family == "all" ? "all-condition" : "clean-condition") + " pair x task grid (" +
          std::to_string(family.size()) + " tests).",
      "Error overlap is reported only for tasks with at least 3 labels; chance is 1/(|C|-1).",
      "Accuracy is exact match after lowercasing and trimming.",
  };

  for (const auto& f : manifest.fixtures) merge_fixture_file(bundle, f);
  finalize(bundle);
  return bundle;
}

// ---- fixtures ----------------------------------------------------------------

namespace {

std::optional<double> opt_number(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

}  // namespace

void merge_fixture(ReportBundle& bundle, const json& fx, const std::string& source) {
  if (!fx.is_object()) throw InputError("fixture " + source + " must be a JSON object");
  try {
    for (const auto& c : fx.value("conditions", std::vector<std::string>{})) append_unique(bundle.conditions, c);
    for (const auto& t : fx.value("tasks", std::vector<std::string>{})) append_unique(bundle.tasks, t);
    const std::string clean = bundle.conditions.empty() ? std::string("clean") : bundle.conditions.front();

    std::set<std::tuple<std::string, std::string, std::string>> seen;
    for (const auto& r : bundle.accuracy) seen.emplace(r.system, r.task, r.condition);
    for (const auto& j : fx.value("accuracy", json::array())) {
      AccuracyRow r;
      r.system = j.at("system").get<std::string>();
      r.task = j.at("task").get<std::string>();
      r.condition = j.value("condition", clean);
      r.accuracy = j.at("accuracy").get<double>();
      if (!seen.emplace(r.system, r.task, r.condition).second) {
        throw InputError("duplicate accuracy cell " + cell_name(r.system, r.task, r.condition));
      }
      bundle.accuracy.push_back(std::move(r));
    }
    for (const auto& j : fx.value("kappa", json::array())) {
      KappaRow r;
      r.a = j.at("a").get<std::string>();
      r.b = j.at("b").get<std::string>();
      r.matched = j.value("matched", false);
      r.task = j.at("task").get<std::string>();
      r.condition = j.value("condition", clean);
      r.kappa = j.at("kappa").get<double>();
      r.ci_low = opt_number(j, "ci_low");
      r.ci_high = opt_number(j, "ci_high");
      bundle.kappa.push_back(std::move(r));
    }
    for (const auto& j : fx.value("overlap", json::array())) {
      OverlapRow r;
      r.a = j.at("a").get<std::string>();
      r.b = j.at("b").get<std::string>();
      r.matched = j.value("matched", false);
      r.task = j.at("task").get<std::string>();
      r.condition = j.value("condition", clean);
      r.overlap = opt_number(j, "overlap");
      r.chance = j.at("chance").get<double>();
      bundle.overlap.push_back(std::move(r));
    }
    for (const auto& j : fx.value("implicit", json::array())) {
      bundle.implicit.push_back({j.at("task").get<std::string>(), j.at("kappa_impl").get<double>(),
                                 j.at("kappa_casc").get<double>(), opt_number(j, "acc_impl"),
                                 opt_number(j, "acc_reference")});
    }
    if (auto it = fx.find("leace"); it != fx.end()) {
      const auto tasks = it->at("tasks").get<std::vector<std::string>>();
      if (!bundle.leace_tasks.empty() && bundle.leace_tasks != tasks) {
        throw InputError("LEACE fixtures disagree on task columns");
      }
      bundle.leace_tasks = tasks;
      for (const auto& j : it->at("rows")) {
        LeaceRow r;
        r.model = j.at("model").get<std::string>();
        r.condition = j.at("condition").get<std::string>();
        if (j.contains("d") && !j["d"].is_null()) r.dim = j["d"].get<int>();
        for (const auto& v : j.at("values")) r.values.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
        if (r.values.size() != tasks.size()) {
          throw InputError("LEACE row " + r.model + "/" + r.condition + " has " + std::to_string(r.values.size()) +
                           " values for " + std::to_string(tasks.size()) + " tasks");
        }
        bundle.leace.push_back(std::move(r));
      }
    }
    for (const auto& j : fx.value("curves", json::array())) {
      CurveSeries s;
      s.name = j.at("name").get<std::string>();
      s.metric = j.at("metric").get<std::string>();
      for (const auto& p : j.at("points")) s.points.emplace_back(p.at(0).get<int>(), p.at(1).get<double>());
      bundle.curves.push_back(std::move(s));
    }
    for (const auto& j : fx.value("reversals", json::array())) {
      bundle.reversal_requests.push_back(
          {j.at("task").get<std::string>(), j.at("a").get<std::string>(), j.at("b").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw InputError("fixture " + source + ": " + e.what());
  }
  bundle.sources.push_back(source);
}

void merge_fixture_file(ReportBundle& bundle, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open fixture: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("fixture " + path.string() + ": " + e.what());
  }
  merge_fixture(bundle, doc, path.generic_string());
}

}  // namespace casceq
