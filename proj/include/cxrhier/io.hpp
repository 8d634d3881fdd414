#pragma once

// File formats: predictions / annotations / fold-assignment CSV, cohort-spec
// JSON, and JSON / CSV renderings of the analysis results.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "cxrhier/erroranalysis.hpp"
#include "cxrhier/error.hpp"
#include "cxrhier/folds.hpp"
#include "cxrhier/hierarchy.hpp"
#include "cxrhier/iov.hpp"
#include "cxrhier/metrics.hpp"
#include "cxrhier/records.hpp"
#include "cxrhier/synth.hpp"

namespace cxrhier::io {

using nlohmann::json;

// ---------------------------------------------------------------- CSV ----

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  }

  std::size_t require(std::string_view name) const {
    const auto c = column(name);
    if (!c) throw ValidationError("missing required column '" + std::string(name) + "'");
    return *c;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

/// RFC 4180 style: quoted fields may hold commas, quotes ("") and newlines.
/// Blank lines are skipped. The first record is the header.
inline CsvTable parse_csv(std::istream& in) {
  CsvTable table;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false, any = false;
  std::size_t line = 1, record_line = 1;

  const auto end_record = [&] {
    if (any || !field.empty() || field_started) {
      record.push_back(quoted ? field : detail::trim(field));
      const bool blank = record.size() == 1 && record.front().empty() && !field_started;
      if (!blank) {
        if (table.header.empty()) {
          table.header = std::move(record);
        } else {
          if (record.size() != table.header.size()) {
            throw ValidationError("line " + std::to_string(record_line) + ": expected " +
                                  std::to_string(table.header.size()) + " fields, got " +
                                  std::to_string(record.size()));
          }
          table.rows.push_back(std::move(record));
          table.line_numbers.push_back(record_line);
        }
      }
    }
    record.clear();
    field.clear();
    quoted = field_started = any = false;
  };

  char c;
  bool in_quotes = false;
  while (in.get(c)) {
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = quoted = field_started = true;
        break;
      case ',':
        record.push_back(quoted ? field : detail::trim(field));
        field.clear();
        quoted = false;
        field_started = false;
        any = true;
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        record_line = ++line;
        break;
      default:
        field += c;
    }
  }
  if (in_quotes) throw ValidationError("line " + std::to_string(record_line) + ": unterminated quote");
  end_record();
  if (table.header.empty()) throw ValidationError("empty CSV: header required");
  return table;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, std::size_t line, std::string_view column) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v)) {
    throw ValidationError("line " + std::to_string(line) + ": column '" + std::string(column) +
                          "': invalid number '" + s + "'");
  }
  return v;
}

inline long long parse_integer(const std::string& s, std::size_t line, std::string_view column) {
  long long v = 0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ValidationError("line " + std::to_string(line) + ": column '" + std::string(column) +
                          "': invalid integer '" + s + "'");
  }
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a sibling temporary, then renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write '" + tmp.string() + "'");
    out << content;
    out.close();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw ValidationError("failed writing '" + tmp.string() + "'");
    }
  }
  std::filesystem::rename(tmp, path);
}

// -------------------------------------------------------- predictions ----

inline const std::vector<std::string> kPredictionColumns = {
    "image_id", "patient_id", "fold", "p_normal", "p_classic", "p_indet", "p_other", "label", "view", "pcr"};

template <typename F>
auto with_line(std::size_t line, F&& f) {
  try {
    return f();
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    if (what.rfind("line ", 0) == 0) throw;
    throw ValidationError("line " + std::to_string(line) + ": " + what);
  }
}

inline std::vector<PredictionRecord> parse_predictions(std::istream& in) {
  const CsvTable t = parse_csv(in);
  const std::size_t c_image = t.require("image_id"), c_patient = t.require("patient_id"),
                    c_normal = t.require("p_normal"), c_classic = t.require("p_classic"),
                    c_indet = t.require("p_indet"), c_other = t.require("p_other"),
                    c_label = t.require("label"), c_view = t.require("view"), c_pcr = t.require("pcr");
  const auto c_fold = t.column("fold");

  std::vector<PredictionRecord> out;
  std::map<std::pair<std::string, std::optional<int>>, std::size_t> seen;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::size_t line = t.line_numbers[i];
    PredictionRecord r = with_line(line, [&] {
      PredictionRecord rec;
      rec.image_id = row[c_image];
      rec.patient_id = row[c_patient];
      if (rec.image_id.empty()) throw ValidationError("empty image_id");
      if (rec.patient_id.empty()) throw ValidationError("empty patient_id");
      if (c_fold && !row[*c_fold].empty()) {
        rec.fold = static_cast<int>(parse_integer(row[*c_fold], line, "fold"));
      }
      rec.probs = ClassProbabilities::from({parse_double(row[c_normal], line, "p_normal"),
                                            parse_double(row[c_classic], line, "p_classic"),
                                            parse_double(row[c_indet], line, "p_indet"),
                                            parse_double(row[c_other], line, "p_other")});
      rec.label = parse_label(row[c_label]);
      rec.view = parse_view(row[c_view]);
      rec.pcr = parse_pcr(row[c_pcr]);
      return rec;
    });
    const auto [it, fresh] = seen.emplace(std::pair{r.image_id, r.fold}, line);
    if (!fresh) {
      throw ValidationError("line " + std::to_string(line) + ": duplicate image '" + r.image_id +
                            "' (first on line " + std::to_string(it->second) + ")");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  try {
    return parse_predictions(in);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline std::string predictions_to_csv(std::span<const PredictionRecord> records) {
  std::ostringstream out;
  for (std::size_t i = 0; i < kPredictionColumns.size(); ++i) {
    out << (i ? "," : "") << kPredictionColumns[i];
  }
  out << '\n';
  for (const auto& r : records) {
    const auto& p = r.probs.values();
    out << csv_field(r.image_id) << ',' << csv_field(r.patient_id) << ','
        << (r.fold ? std::to_string(*r.fold) : "") << ',' << format_double(p[0]) << ','
        << format_double(p[1]) << ',' << format_double(p[2]) << ',' << format_double(p[3]) << ','
        << to_string(r.label) << ',' << to_string(r.view) << ',' << to_string(r.pcr) << '\n';
  }
  return out.str();
}

/// Rows of the same image, in fold order.
inline std::map<std::string, std::vector<PredictionRecord>> group_by_image(
    std::span<const PredictionRecord> records) {
  std::map<std::string, std::vector<PredictionRecord>> out;
  for (const auto& r : records) out[r.image_id].push_back(r);
  for (auto& [_, members] : out) {
    std::stable_sort(members.begin(), members.end(),
                     [](const PredictionRecord& a, const PredictionRecord& b) { return a.fold < b.fold; });
  }
  return out;
}

/// One record per image; images with several fold rows get the mean of the
/// fold members. Files with one row per image pass through unchanged.
inline std::vector<PredictionRecord> ensemble_records(std::span<const PredictionRecord> records) {
  const auto groups = group_by_image(records);
  if (groups.size() == records.size()) return {records.begin(), records.end()};
  std::vector<PredictionRecord> out;
  out.reserve(groups.size());
  for (const auto& [image, members] : groups) {
    PredictionRecord r = members.front();
    std::vector<ClassProbabilities> probs;
    for (const auto& m : members) {
      if (m.patient_id != r.patient_id || m.label != r.label || m.view != r.view || m.pcr != r.pcr) {
        throw ValidationError("image '" + image + "': fold rows disagree on patient, label or attributes");
      }
      probs.push_back(m.probs);
    }
    r.probs = ensemble_mean(probs);
    r.fold.reset();
    out.push_back(std::move(r));
  }
  return out;
}

// -------------------------------------------------------- annotations ----

inline std::vector<AnnotationRecord> parse_annotations(std::istream& in) {
  const CsvTable t = parse_csv(in);
  const std::size_t c_image = t.require("image_id"), c_annotator = t.require("annotator_id"),
                    c_label = t.require("label");
  const auto c_duration = t.column("duration_seconds");
  std::vector<AnnotationRecord> out;
  std::map<std::pair<std::string, std::string>, std::size_t> seen;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::size_t line = t.line_numbers[i];
    AnnotationRecord a = with_line(line, [&] {
      AnnotationRecord rec;
      rec.image_id = row[c_image];
      rec.annotator_id = row[c_annotator];
      if (rec.image_id.empty() || rec.annotator_id.empty()) throw ValidationError("empty identifier");
      rec.label = parse_label(row[c_label]);
      if (c_duration && !row[*c_duration].empty()) {
        const double d = parse_double(row[*c_duration], line, "duration_seconds");
        if (!(d > 0.0)) throw ValidationError("duration must be positive");
        rec.duration_seconds = d;
      }
      return rec;
    });
    const auto [it, fresh] = seen.emplace(std::pair{a.image_id, a.annotator_id}, line);
    if (!fresh) {
      throw ValidationError("line " + std::to_string(line) + ": duplicate annotation of '" +
                            a.image_id + "' by '" + a.annotator_id + "'");
    }
    out.push_back(std::move(a));
  }
  return out;
}

inline std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  try {
    return parse_annotations(in);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline std::string annotations_to_csv(std::span<const AnnotationRecord> annotations) {
  std::ostringstream out;
  out << "image_id,annotator_id,label,duration_seconds\n";
  for (const auto& a : annotations) {
    out << csv_field(a.image_id) << ',' << csv_field(a.annotator_id) << ',' << to_string(a.label) << ','
        << (a.duration_seconds ? format_double(*a.duration_seconds) : "") << '\n';
  }
  return out.str();
}

// -------------------------------------------------------------- folds ----

inline std::string folds_to_csv(const FoldAssignment& folds) {
  std::ostringstream out;
  out << "patient_id,fold\n";
  for (const auto& [patient, fold] : folds.fold_of_patient) out << csv_field(patient) << ',' << fold << '\n';
  return out.str();
}

inline FoldAssignment parse_folds(std::istream& in) {
  const CsvTable t = parse_csv(in);
  const std::size_t c_patient = t.require("patient_id"), c_fold = t.require("fold");
  FoldAssignment out;
  int max_fold = -1;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::size_t line = t.line_numbers[i];
    const auto fold = parse_integer(t.rows[i][c_fold], line, "fold");
    if (fold < 0) throw ValidationError("line " + std::to_string(line) + ": negative fold");
    if (!out.fold_of_patient.emplace(t.rows[i][c_patient], static_cast<int>(fold)).second) {
      throw ValidationError("line " + std::to_string(line) + ": patient listed twice");
    }
    max_fold = std::max(max_fold, static_cast<int>(fold));
  }
  out.k = max_fold + 1;
  return out;
}

// -------------------------------------------------------- cohort spec ----

inline CohortSpec parse_cohort_spec(const json& j) {
  try {
    CohortSpec spec;
    spec.seed = j.value("seed", std::uint64_t{0});
    spec.task = parse_task(j.value("task", std::string("SUGG")));
    if (j.contains("schema")) {
      std::vector<Attribute> attrs;
      for (const auto& a : j.at("schema")) {
        attrs.push_back({a.at("name").get<std::string>(), a.at("values").get<std::vector<std::string>>()});
      }
      spec.schema = AttributeSchema(std::move(attrs));
    }
    for (const auto& s : j.at("strata")) {
      StratumSpec st;
      if (s.contains("attributes")) {
        st.attributes = s.at("attributes").get<std::map<std::string, std::string>>();
      }
      st.label = parse_label(s.at("label").get<std::string>());
      st.instances = s.at("instances").get<std::size_t>();
      st.errors = s.at("errors").get<std::size_t>();
      spec.strata.push_back(std::move(st));
    }
    return spec;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("cohort spec: ") + e.what());
  }
}

inline json to_json(const CohortSpec& spec) {
  json schema = json::array();
  for (const auto& a : spec.schema.attributes()) schema.push_back({{"name", a.name}, {"values", a.values}});
  json strata = json::array();
  for (const auto& s : spec.strata) {
    strata.push_back({{"attributes", s.attributes},
                      {"label", to_string(s.label)},
                      {"instances", s.instances},
                      {"errors", s.errors}});
  }
  return {{"seed", spec.seed}, {"task", to_string(spec.task)}, {"schema", schema}, {"strata", strata}};
}

inline CohortSpec load_cohort_spec(const std::filesystem::path& path) {
  try {
    return parse_cohort_spec(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ------------------------------------------------------------ reports ----

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const ErrorCount& c) {
  return {{"errors", c.errors}, {"instances", c.instances}, {"rate", optional_number(c.rate())}};
}

inline json to_json(const BranchReport& r) {
  return {{"n", r.n},
          {"n_undefined", r.n_undefined},
          {"threshold", r.threshold},
          {"accuracy", r.accuracy},
          {"roc_auc", r.roc_auc},
          {"pr_auc", r.pr_auc}};
}

inline json to_json(const MulticlassReport& r) {
  json confusion = json::object();
  for (ClassLabel t : kAllLabels) {
    json row = json::object();
    for (ClassLabel p : kAllLabels) {
      row[std::string(to_string(p))] =
          r.confusion[static_cast<std::size_t>(code(t))][static_cast<std::size_t>(code(p))];
    }
    confusion[std::string(to_string(t))] = row;
  }
  return {{"n", r.n}, {"accuracy", r.accuracy}, {"confusion", confusion}};
}

inline json to_json(const ErrorTreeNode& node) {
  json children = json::array();
  for (const auto& c : node.children) children.push_back(to_json(c));
  return {{"errors", node.errors},
          {"instances", node.instances},
          {"error_rate", node.error_rate},
          {"split_attribute", node.split_attribute ? json(*node.split_attribute) : json(nullptr)},
          {"edge_value", node.edge_value ? json(*node.edge_value) : json(nullptr)},
          {"hot", node.hot},
          {"children", children}};
}

inline json to_json(const StratifiedErrorTable& t) {
  json cells = json::array();
  for (std::size_t r = 0; r < t.row_values.size(); ++r) {
    for (std::size_t c = 0; c < t.col_values.size(); ++c) {
      json cell = to_json(t.cells[r][c]);
      cell["row"] = t.row_values[r];
      cell["col"] = t.col_values[c];
      cells.push_back(cell);
    }
  }
  json rows = json::object(), cols = json::object();
  for (std::size_t r = 0; r < t.row_values.size(); ++r) rows[t.row_values[r]] = to_json(t.row_totals[r]);
  for (std::size_t c = 0; c < t.col_values.size(); ++c) cols[t.col_values[c]] = to_json(t.col_totals[c]);
  return {{"row_attribute", t.row_attribute},
          {"col_attribute", t.col_attribute},
          {"cells", cells},
          {"row_totals", rows},
          {"col_totals", cols},
          {"total", to_json(t.total)}};
}

inline json to_json(const AgreementErrors& a) {
  json buckets = json::object();
  for (const auto& [p, c] : a.buckets) buckets[std::string(to_string(p))] = to_json(c);
  return {{"buckets", buckets},
          {"overall", to_json(a.overall)},
          {"missing_annotations", a.missing_annotations},
          {"undefined_predictions", a.undefined_predictions}};
}

inline json to_json(const AnnotatorReport& r) {
  json acc = json::object();
  for (const auto& [task, a] : r.accuracy) acc[std::string(to_string(task))] = {{"n", a.n}, {"accuracy", a.accuracy}};
  json ops = json::object();
  for (const auto& [branch, op] : r.operating_points) {
    ops[std::string(to_string(branch))] = {{"fpr", op.fpr}, {"tpr", op.tpr}, {"n", op.n}};
  }
  return {{"images", r.images}, {"accuracy", acc}, {"operating_points", ops}};
}

inline json to_json(const TimeSummary& s) {
  if (s.n == 0) return {{"n", 0}};
  return {{"n", s.n},     {"min", s.min}, {"q1", s.q1},     {"median", s.median},
          {"q3", s.q3},   {"max", s.max}, {"mean", s.mean}};
}

inline json to_json(const TimeAnalysis& t) {
  json buckets = json::object();
  for (const auto& [p, s] : t.buckets) buckets[std::string(to_string(p))] = to_json(s);
  return {{"buckets", buckets},     {"images", t.images},   {"skipped", t.skipped},
          {"no_duration", t.no_duration}, {"excluded", t.excluded}, {"retained", t.retained}};
}

inline json to_json(const CrossValSummary& s) {
  json out = json::object();
  for (const auto& [task, metrics] : s.entries) {
    for (const auto& [metric, ms] : metrics) out[task][metric] = {{"mean", ms.mean}, {"std", ms.std}};
  }
  return {{"folds", s.folds}, {"summary", out}};
}

inline std::string time_summary_csv(const TimeAnalysis& t) {
  std::ostringstream out;
  out << "bucket,n,min,q1,median,q3,max,mean\n";
  for (const auto& [p, s] : t.buckets) {
    out << to_string(p) << ',' << s.n;
    if (s.n == 0) {
      out << ",,,,,,\n";
      continue;
    }
    for (double v : {s.min, s.q1, s.median, s.q3, s.max, s.mean}) out << ',' << format_double(v);
    out << '\n';
  }
  return out.str();
}

inline std::string roc_to_csv(const RocCurve& c) {
  std::ostringstream out;
  out << "fpr,tpr\n";
  for (const auto& p : c.points) out << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
  return out.str();
}

inline std::string pr_to_csv(const PrCurve& c) {
  std::ostringstream out;
  out << "threshold,recall,precision\n";
  for (const auto& p : c.points) {
    out << format_double(p.threshold) << ',' << format_double(p.recall) << ',' << format_double(p.precision) << '\n';
  }
  return out.str();
}

}  // namespace cxrhier::io
