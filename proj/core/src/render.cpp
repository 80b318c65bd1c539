#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "casceq/error.hpp"
#include "casceq/report.hpp"

namespace casceq {

using nlohmann::json;

namespace {

std::string num(double v, int precision) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  std::string s = buf;
  if (s == "-0" || s.find_first_not_of("-0.") == std::string::npos) s.erase(0, s[0] == '-' ? 1 : 0);
  return s;
}

std::string signed_num(double v, int precision) {
  std::string s = num(v, precision);
  return s[0] == '-' ? s : "+" + s;
}

std::string pval(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string opt(const std::optional<double>& v, int precision, std::string_view missing = "") {
  return v ? num(*v, precision) : std::string(missing);
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string md_cell(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += '\\';
    out += c;
  }
  return out;
}

class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}
  void row(std::vector<std::string> cells) { rows_.push_back(std::move(cells)); }

  std::string csv(const std::string& footer) const {
    std::ostringstream out;
    write_csv_line(out, header_);
    for (const auto& r : rows_) write_csv_line(out, r);
    out << "# " << footer << '\n';
    return out.str();
  }

  std::string markdown(const std::string& title, const std::string& footer) const {
    std::ostringstream out;
    out << "## " << title << "\n\n";
    write_md_line(out, header_);
    out << '|';
    for (std::size_t i = 0; i < header_.size(); ++i) out << (i == 0 ? " :--- |" : " ---: |");
    out << '\n';
    for (const auto& r : rows_) write_md_line(out, r);
    out << "\n_" << footer << "_\n\n";
    return out.str();
  }

 private:
  static void write_csv_line(std::ostringstream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << csv_field(cells[i]);
    out << '\n';
  }
  static void write_md_line(std::ostringstream& out, const std::vector<std::string>& cells) {
    out << '|';
    for (const auto& c : cells) out << ' ' << md_cell(c) << " |";
    out << '\n';
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::string footer(const ReportBundle& b) {
  return "seed=" + std::to_string(b.seed) + " casceq=" + std::string(toolkit_version());
}

std::string pair_label(const std::string& a, const std::string& b, bool matched) {
  return a + " vs " + b + (matched ? " (matched)" : "");
}

std::string reversal_annotation(const ReversalRow& r) {
  if (!r.sign_flip) return "no reversal";
  return num(std::abs(r.reversal), 1) + "-point reversal at " + r.last_condition + " (" +
         signed_num(r.clean_advantage, 1) + " clean, " + signed_num(r.last_advantage, 1) + " at " +
         r.last_condition + ")";
}

std::string clean_condition(const ReportBundle& b) {
  return b.conditions.empty() ? std::string("clean") : b.conditions.front();
}

Table kappa_table(const ReportBundle& b) {
  Table t({"system_a", "system_b", "matched", "task", "condition", "kappa", "ci_low", "ci_high", "n"});
  for (const auto& r : b.kappa) {
    t.row({r.a, r.b, r.matched ? "true" : "false", r.task, r.condition, num(r.kappa, 4), opt(r.ci_low, 4),
           opt(r.ci_high, 4), r.n ? std::to_string(r.n) : ""});
  }
  return t;
}

Table kappa_matrix(const ReportBundle& b, bool markdown) {
  std::vector<std::string> header = {"pair"};
  header.insert(header.end(), b.tasks.begin(), b.tasks.end());
  header.push_back("mean");
  Table t(header);
  const std::string clean = clean_condition(b);
  for (const auto& p : kappa_row_order(b)) {
    std::vector<std::string> cells = {pair_label(p.a, p.b, p.matched)};
    double sum = 0.0;
    int count = 0;
    for (const auto& task : b.tasks) {
      auto it = std::find_if(b.kappa.begin(), b.kappa.end(), [&](const KappaRow& r) {
        return r.a == p.a && r.b == p.b && r.task == task && r.condition == clean;
      });
      if (it == b.kappa.end()) {
        cells.push_back(markdown ? "-" : "");
        continue;
      }
      std::string cell = num(it->kappa, 3);
      if (markdown && it->ci_low && it->ci_high) cell += " [" + num(*it->ci_low, 2) + ", " + num(*it->ci_high, 2) + "]";
      cells.push_back(cell);
      sum += it->kappa;
      ++count;
    }
    cells.push_back(count ? num(sum / count, 3) : (markdown ? "-" : ""));
    t.row(std::move(cells));
  }
  return t;
}

Table overlap_table(const ReportBundle& b) {
  Table t({"system_a", "system_b", "matched", "task", "condition", "overlap", "chance", "ratio", "both_wrong",
           "same_wrong"});
  for (const auto& r : b.overlap) {
    const std::string ratio = r.overlap && r.chance > 0.0 ? num(*r.overlap / r.chance, 2) : "";
    t.row({r.a, r.b, r.matched ? "true" : "false", r.task, r.condition, opt(r.overlap, 3, "undefined"),
           num(r.chance, 3), ratio, std::to_string(r.both_wrong), std::to_string(r.same_wrong)});
  }
  return t;
}

Table mcnemar_table(const ReportBundle& b) {
  Table t({"system_a", "system_b", "task", "condition", "b", "c", "method", "p_raw", "p_adjusted", "rejected"});
  for (const auto& r : b.mcnemar) {
    t.row({r.a, r.b, r.task, r.condition, std::to_string(r.b_count), std::to_string(r.c_count), r.method,
           pval(r.p_raw), r.p_adjusted ? pval(*r.p_adjusted) : "", r.p_adjusted ? (r.rejected ? "true" : "false") : ""});
  }
  return t;
}

Table accuracy_table(const ReportBundle& b) {
  Table t({"system", "task", "condition", "accuracy", "n", "correct", "invalid"});
  for (const auto& r : b.accuracy) {
    t.row({r.system, r.task, r.condition, num(r.accuracy, 2), r.n ? std::to_string(r.n) : "",
           r.n ? std::to_string(r.correct) : "", r.n ? std::to_string(r.invalid) : ""});
  }
  return t;
}

// System x task accuracy at one condition.
Table accuracy_grid(const ReportBundle& b, const std::string& condition) {
  std::vector<std::string> header = {"system"};
  header.insert(header.end(), b.tasks.begin(), b.tasks.end());
  Table t(header);
  std::vector<std::string> systems;
  for (const auto& r : b.accuracy) {
    if (std::find(systems.begin(), systems.end(), r.system) == systems.end()) systems.push_back(r.system);
  }
  for (const auto& s : systems) {
    std::vector<std::string> cells = {s};
    for (const auto& task : b.tasks) {
      auto it = std::find_if(b.accuracy.begin(), b.accuracy.end(), [&](const AccuracyRow& r) {
        return r.system == s && r.task == task && r.condition == condition;
      });
      cells.push_back(it == b.accuracy.end() ? "-" : num(it->accuracy, 1));
    }
    t.row(std::move(cells));
  }
  return t;
}

Table degradation_table(const ReportBundle& b) {
  Table t({"task", "system_a", "system_b", "last_condition", "clean_advantage", "last_advantage", "reversal",
           "sign_flip", "annotation"});
  for (const auto& r : b.reversals) {
    t.row({r.task, r.a, r.b, r.last_condition, signed_num(r.clean_advantage, 2), signed_num(r.last_advantage, 2),
           num(r.reversal, 2), r.sign_flip ? "true" : "false", reversal_annotation(r)});
  }
  return t;
}

Table curves_table(const ReportBundle& b) {
  Table t({"series", "metric", "shape", "layer", "value"});
  for (const auto& c : b.curves) {
    const std::string shape(curve_shape_name(curve_shape(c)));
    for (const auto& [layer, value] : c.points) t.row({c.name, c.metric, shape, std::to_string(layer), num(value, 3)});
  }
  return t;
}

Table curve_summary(const ReportBundle& b) {
  Table t({"series", "metric", "shape", "layers", "values"});
  for (const auto& c : b.curves) {
    std::string layers, values;
    for (const auto& [layer, value] : c.points) {
      layers += (layers.empty() ? "" : " ") + std::to_string(layer);
      values += (values.empty() ? "" : " -> ") + num(value, 3);
    }
    t.row({c.name, c.metric, std::string(curve_shape_name(curve_shape(c))), layers, values});
  }
  return t;
}

Table leace_table(const ReportBundle& b, bool markdown) {
  std::vector<std::string> header = markdown ? std::vector<std::string>{"condition", "d"}
                                             : std::vector<std::string>{"model", "condition", "d"};
  header.insert(header.end(), b.leace_tasks.begin(), b.leace_tasks.end());
  Table t(header);
  std::string model;
  for (const auto& r : b.leace) {
    if (markdown && r.model != model) {
      std::vector<std::string> block(header.size(), "");
      block[0] = "*" + r.model + "*";
      t.row(std::move(block));
      model = r.model;
    }
    std::vector<std::string> cells;
    if (!markdown) cells.push_back(r.model);
    cells.push_back(r.condition);
    cells.push_back(r.dim ? std::to_string(*r.dim) : (markdown ? "-" : ""));
    for (const auto& v : r.values) cells.push_back(opt(v, 1, markdown ? "-" : ""));
    t.row(std::move(cells));
  }
  return t;
}

Table implicit_table(const ReportBundle& b, bool markdown) {
  Table t({"task", "kappa_impl", "kappa_casc", "acc_impl", "acc_reference"});
  for (const auto& r : b.implicit) {
    t.row({r.task, num(r.kappa_impl, 3), num(r.kappa_casc, 3), opt(r.acc_impl, 1, markdown ? "-" : ""),
           opt(r.acc_reference, 1, markdown ? "-" : "")});
  }
  return t;
}

}  // namespace

RenderFormat parse_render_format(std::string_view name) {
  if (name == "csv") return RenderFormat::Csv;
  if (name == "json") return RenderFormat::Json;
  if (name == "markdown" || name == "md") return RenderFormat::Markdown;
  throw InputError("format must be csv, json or markdown");
}

json to_json(const ReportBundle& b) {
  auto o = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  auto f = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json j;
  j["version"] = toolkit_version();
  j["seed"] = b.seed;
  j["resamples"] = b.resamples;
  j["alpha"] = b.alpha;
  j["fdr_family"] = b.fdr_family;
  j["tasks"] = b.tasks;
  j["conditions"] = b.conditions;
  j["kappa"] = json::array();
  for (const auto& r : b.kappa) {
    j["kappa"].push_back({{"system_a", r.a}, {"system_b", r.b}, {"matched", r.matched}, {"task", r.task},
                          {"condition", r.condition}, {"kappa", f(r.kappa)}, {"ci_low", o(r.ci_low)},
                          {"ci_high", o(r.ci_high)}, {"n", r.n}, {"degenerate", r.degenerate}});
  }
  j["kappa_row_order"] = json::array();
  for (const auto& p : kappa_row_order(b)) j["kappa_row_order"].push_back({p.a, p.b});
  j["overlap"] = json::array();
  for (const auto& r : b.overlap) {
    j["overlap"].push_back({{"system_a", r.a}, {"system_b", r.b}, {"matched", r.matched}, {"task", r.task},
                            {"condition", r.condition}, {"overlap", o(r.overlap)}, {"chance", r.chance},
                            {"both_wrong", r.both_wrong}, {"same_wrong", r.same_wrong}});
  }
  j["mcnemar"] = json::array();
  for (const auto& r : b.mcnemar) {
    j["mcnemar"].push_back({{"system_a", r.a}, {"system_b", r.b}, {"task", r.task}, {"condition", r.condition},
                            {"b", r.b_count}, {"c", r.c_count}, {"method", r.method}, {"p_raw", r.p_raw},
                            {"p_adjusted", o(r.p_adjusted)}, {"rejected", r.rejected}});
  }
  j["accuracy"] = json::array();
  for (const auto& r : b.accuracy) {
    j["accuracy"].push_back({{"system", r.system}, {"task", r.task}, {"condition", r.condition},
                             {"accuracy", r.accuracy}, {"n", r.n}, {"correct", r.correct}, {"invalid", r.invalid}});
  }
  j["reversals"] = json::array();
  for (const auto& r : b.reversals) {
    j["reversals"].push_back({{"task", r.task}, {"system_a", r.a}, {"system_b", r.b},
                              {"last_condition", r.last_condition}, {"clean_advantage", r.clean_advantage},
                              {"last_advantage", r.last_advantage}, {"reversal", r.reversal},
                              {"sign_flip", r.sign_flip}, {"annotation", reversal_annotation(r)}});
  }
  j["curves"] = json::array();
  for (const auto& c : b.curves) {
    json pts = json::array();
    for (const auto& [layer, value] : c.points) pts.push_back({layer, f(value)});
    j["curves"].push_back({{"name", c.name}, {"metric", c.metric}, {"shape", curve_shape_name(curve_shape(c))},
                           {"points", pts}});
  }
  j["leace"] = {{"tasks", b.leace_tasks}, {"rows", json::array()}};
  for (const auto& r : b.leace) {
    json values = json::array();
    for (const auto& v : r.values) values.push_back(o(v));
    j["leace"]["rows"].push_back({{"model", r.model}, {"condition", r.condition},
                                  {"d", r.dim ? json(*r.dim) : json(nullptr)}, {"values", values}});
  }
  j["implicit"] = json::array();
  for (const auto& r : b.implicit) {
    j["implicit"].push_back({{"task", r.task}, {"kappa_impl", r.kappa_impl}, {"kappa_casc", r.kappa_casc},
                             {"acc_impl", o(r.acc_impl)}, {"acc_reference", o(r.acc_reference)}});
  }
  j["sources"] = b.sources;
  j["footnotes"] = b.footnotes;
  return j;
}

std::map<std::string, std::string> render_files(const ReportBundle& b, RenderFormat format) {
  const std::string foot = footer(b);
  std::map<std::string, std::string> files;
  switch (format) {
    case RenderFormat::Csv:
      files["kappa.csv"] = kappa_table(b).csv(foot);
      files["kappa_matrix.csv"] = kappa_matrix(b, false).csv(foot);
      files["overlap.csv"] = overlap_table(b).csv(foot);
      files["mcnemar.csv"] = mcnemar_table(b).csv(foot);
      files["accuracy.csv"] = accuracy_table(b).csv(foot);
      files["degradation.csv"] = degradation_table(b).csv(foot);
      files["curves.csv"] = curves_table(b).csv(foot);
      files["leace.csv"] = leace_table(b, false).csv(foot);
      files["implicit.csv"] = implicit_table(b, false).csv(foot);
      break;
    case RenderFormat::Json:
      files["report.json"] = to_json(b).dump(2) + "\n";
      break;
    case RenderFormat::Markdown: {
      std::ostringstream md;
      md << "# Cascade-equivalence report\n\n";
      md << kappa_matrix(b, true).markdown("Kappa by pair and task (" + clean_condition(b) + ")", foot);
      md << overlap_table(b).markdown("Conditional error overlap", foot);
      md << mcnemar_table(b).markdown("McNemar tests", foot);
      for (const auto& c : b.conditions) md << accuracy_grid(b, c).markdown("Accuracy (%), " + c, foot);
      if (b.conditions.empty()) md << accuracy_grid(b, "clean").markdown("Accuracy (%), clean", foot);
      md << degradation_table(b).markdown("Degradation reversals", foot);
      md << curve_summary(b).markdown("Layer curves", foot);
      md << implicit_table(b, true).markdown("Implicit cascade agreement", foot);
      md << leace_table(b, true).markdown("LEACE accuracy (%)", foot);
      md << "## Notes\n\n";
      for (const auto& n : b.footnotes) md << "- " << n << '\n';
      md << "\n_" << foot << "_\n";
      files["report.md"] = md.str();
      break;
    }
  }
  return files;
}

std::vector<std::filesystem::path> render(const ReportBundle& bundle, RenderFormat format,
                                          const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw InputError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  for (const auto& [name, content] : render_files(bundle, format)) {
    const auto path = out_dir / name;
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw InputError("cannot write " + path.string());
    written.push_back(path);
  }
  return written;
}

}  // namespace casceq
