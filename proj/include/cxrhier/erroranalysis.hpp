#pragma once

// Failure-mode analysis over categorical metadata: a decision tree fit to the
// binary model-error indicator, and error counts stratified by two attributes.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <future>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cxrhier/error.hpp"
#include "cxrhier/hierarchy.hpp"
#include "cxrhier/records.hpp"

namespace cxrhier {

struct Attribute {
  std::string name;
  std::vector<std::string> values;

  friend bool operator==(const Attribute&, const Attribute&) = default;
};

inline const std::string kClassAttributeName = "class";

class AttributeSchema {
 public:
  AttributeSchema() = default;

  explicit AttributeSchema(std::vector<Attribute> attributes) : attributes_(std::move(attributes)) {
    for (std::size_t i = 0; i < attributes_.size(); ++i) {
      const auto& a = attributes_[i];
      if (a.name.empty()) throw ValidationError("schema: empty attribute name");
      if (a.values.size() < 2) {
        throw ValidationError("schema: attribute '" + a.name + "' needs at least 2 values");
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (attributes_[j].name == a.name) {
          throw ValidationError("schema: duplicate attribute '" + a.name + "'");
        }
      }
      for (std::size_t v = 0; v < a.values.size(); ++v) {
        if (std::find(a.values.begin(), a.values.begin() + static_cast<std::ptrdiff_t>(v),
                      a.values[v]) != a.values.begin() + static_cast<std::ptrdiff_t>(v)) {
          throw ValidationError("schema: duplicate value '" + a.values[v] + "' in '" + a.name + "'");
        }
      }
    }
  }

  /// view in {PA, AP}; pcr in {POS, NEG, UNK}.
  static AttributeSchema builtin() {
    return AttributeSchema({{"view", {"PA", "AP"}}, {"pcr", {"POS", "NEG", "UNK"}}});
  }

  /// The class label as a derived attribute.
  static Attribute class_attribute() {
    std::vector<std::string> values;
    for (ClassLabel l : kAllLabels) values.emplace_back(to_string(l));
    return {kClassAttributeName, values};
  }

  AttributeSchema with(Attribute extra) const {
    auto attrs = attributes_;
    attrs.push_back(std::move(extra));
    return AttributeSchema(std::move(attrs));
  }

  const std::vector<Attribute>& attributes() const { return attributes_; }
  std::size_t size() const { return attributes_.size(); }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < attributes_.size(); ++i) {
      if (attributes_[i].name == name) return i;
    }
    return std::nullopt;
  }

  const Attribute& at(const std::string& name) const {
    const auto i = find(name);
    if (!i) throw ValidationError("unknown attribute '" + name + "'");
    return attributes_[*i];
  }

  std::size_t value_index(std::size_t attribute, const std::string& value) const {
    const auto& values = attributes_.at(attribute).values;
    const auto it = std::find(values.begin(), values.end(), value);
    if (it == values.end()) {
      throw ValidationError("unknown value '" + value + "' for attribute '" +
                            attributes_[attribute].name + "'");
    }
    return static_cast<std::size_t>(it - values.begin());
  }

  friend bool operator==(const AttributeSchema&, const AttributeSchema&) = default;

 private:
  std::vector<Attribute> attributes_;
};

struct ErrorRecord {
  std::string image_id;
  bool error = false;
  std::map<std::string, std::string> attributes;

  friend bool operator==(const ErrorRecord&, const ErrorRecord&) = default;
};

/// Model error indicators for a task, with view, pcr and class attributes.
/// Records the task does not apply to (or with undefined predictions) are
/// dropped.
inline std::vector<ErrorRecord> model_error_records(std::span<const PredictionRecord> records,
                                                    Task task,
                                                    double threshold = kDefaultThreshold,
                                                    double epsilon = kDefaultEpsilon) {
  std::vector<ErrorRecord> out;
  for (const auto& r : records) {
    const auto err = model_error(r, task, threshold, epsilon);
    if (!err) continue;
    out.push_back({r.image_id,
                   *err,
                   {{"view", std::string(to_string(r.view))},
                    {"pcr", std::string(to_string(r.pcr))},
                    {kClassAttributeName, std::string(to_string(r.label))}}});
  }
  return out;
}

/// One annotator's disagreements with the reference labels for a task.
inline std::vector<ErrorRecord> annotator_error_records(
    std::span<const AnnotationRecord> annotations, std::span<const PredictionRecord> references,
    const std::string& annotator, Task task) {
  std::map<std::string, const PredictionRecord*> ref;
  for (const auto& r : references) ref.emplace(r.image_id, &r);
  std::vector<ErrorRecord> out;
  for (const auto& a : annotations) {
    if (a.annotator_id != annotator) continue;
    const auto it = ref.find(a.image_id);
    if (it == ref.end()) continue;
    const auto& r = *it->second;
    const auto truth = task_truth(r.label, task);
    if (!truth) continue;
    out.push_back({r.image_id,
                   label_task_call(a.label, task) != *truth,
                   {{"view", std::string(to_string(r.view))},
                    {"pcr", std::string(to_string(r.pcr))},
                    {kClassAttributeName, std::string(to_string(r.label))}}});
  }
  return out;
}

struct ErrorTreeNode {
  std::size_t errors = 0;
  std::size_t instances = 0;
  double error_rate = 0.0;
  std::optional<std::string> split_attribute;
  std::optional<std::string> edge_value;  // parent's split value leading here
  std::vector<ErrorTreeNode> children;
  bool hot = false;

  bool is_leaf() const { return children.empty(); }

  const ErrorTreeNode* child(const std::string& value) const {
    for (const auto& c : children) {
      if (c.edge_value == value) return &c;
    }
    return nullptr;
  }

  std::size_t node_count() const {
    std::size_t n = 1;
    for (const auto& c : children) n += c.node_count();
    return n;
  }

  friend bool operator==(const ErrorTreeNode&, const ErrorTreeNode&) = default;
};

struct TreeOptions {
  int max_depth = 2;
  std::size_t min_leaf = 20;
  unsigned threads = 1;  // candidate splits evaluated concurrently when > 1
};

struct SplitCandidate {
  std::string attribute;
  bool admissible = false;      // every non-empty child has >= min_leaf instances
  double weighted_gini = 0.0;   // sum over children of (n_v / n) * gini_v
  double reduction = 0.0;       // parent gini - weighted_gini
};

namespace detail {

inline double gini(std::size_t errors, std::size_t instances) {
  if (instances == 0) return 0.0;
  const double p = static_cast<double>(errors) / static_cast<double>(instances);
  return 2.0 * p * (1.0 - p);
}

struct EncodedErrors {
  std::vector<std::vector<std::size_t>> values;  // [record][attribute]
  std::vector<bool> error;
};

inline EncodedErrors encode(std::span<const ErrorRecord> records, const AttributeSchema& schema) {
  std::vector<const ErrorRecord*> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ErrorRecord* a, const ErrorRecord* b) { return a->image_id < b->image_id; });

  EncodedErrors enc;
  enc.values.reserve(sorted.size());
  for (const ErrorRecord* r : sorted) {
    std::vector<std::size_t> row(schema.size());
    for (std::size_t a = 0; a < schema.size(); ++a) {
      const auto& name = schema.attributes()[a].name;
      const auto it = r->attributes.find(name);
      if (it == r->attributes.end()) {
        throw ValidationError("record '" + r->image_id + "' lacks attribute '" + name + "'");
      }
      row[a] = schema.value_index(a, it->second);
    }
    enc.values.push_back(std::move(row));
    enc.error.push_back(r->error);
  }
  return enc;
}

inline SplitCandidate evaluate_split(const EncodedErrors& enc, std::span<const std::size_t> rows,
                                     const AttributeSchema& schema, std::size_t attribute,
                                     std::size_t min_leaf) {
  const std::size_t arity = schema.attributes()[attribute].values.size();
  std::vector<ErrorCount> counts(arity);
  ErrorCount parent;
  for (std::size_t r : rows) {
    counts[enc.values[r][attribute]].add(enc.error[r]);
    parent.add(enc.error[r]);
  }
  SplitCandidate c;
  c.attribute = schema.attributes()[attribute].name;
  c.admissible = true;
  const auto n = static_cast<double>(parent.instances);
  for (const auto& ch : counts) {
    if (ch.instances == 0) continue;
    if (ch.instances < min_leaf) c.admissible = false;
    c.weighted_gini += static_cast<double>(ch.instances) / n * gini(ch.errors, ch.instances);
  }
  c.reduction = gini(parent.errors, parent.instances) - c.weighted_gini;
  return c;
}

inline ErrorTreeNode grow(const EncodedErrors& enc, std::vector<std::size_t> rows,
                          const AttributeSchema& schema, std::vector<bool> used, int depth,
                          const TreeOptions& opts) {
  ErrorTreeNode node;
  for (std::size_t r : rows) {
    ++node.instances;
    if (enc.error[r]) ++node.errors;
  }
  node.error_rate = static_cast<double>(node.errors) / static_cast<double>(node.instances);
  if (depth >= opts.max_depth || node.errors == 0 || node.errors == node.instances) return node;

  std::vector<std::size_t> candidates;
  for (std::size_t a = 0; a < schema.size(); ++a) {
    if (!used[a]) candidates.push_back(a);
  }
  std::vector<SplitCandidate> evaluated(candidates.size());
  if (opts.threads > 1 && candidates.size() > 1) {
    std::vector<std::future<SplitCandidate>> futures;
    for (std::size_t a : candidates) {
      futures.push_back(std::async(std::launch::async, [&, a] {
        return evaluate_split(enc, rows, schema, a, opts.min_leaf);
      }));
    }
    for (std::size_t i = 0; i < futures.size(); ++i) evaluated[i] = futures[i].get();
  } else {
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      evaluated[i] = evaluate_split(enc, rows, schema, candidates[i], opts.min_leaf);
    }
  }

  // Selection runs in schema order regardless of how candidates were evaluated.
  constexpr double kMinReduction = 1e-12;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < evaluated.size(); ++i) {
    const auto& c = evaluated[i];
    if (!c.admissible || !(c.reduction > kMinReduction)) continue;
    if (!best || c.reduction > evaluated[*best].reduction) best = i;
  }
  if (!best) return node;

  const std::size_t attribute = candidates[*best];
  const auto& values = schema.attributes()[attribute].values;
  std::vector<std::vector<std::size_t>> parts(values.size());
  for (std::size_t r : rows) parts[enc.values[r][attribute]].push_back(r);
  used[attribute] = true;
  node.split_attribute = schema.attributes()[attribute].name;
  for (std::size_t v = 0; v < values.size(); ++v) {
    if (parts[v].empty()) continue;
    auto child = grow(enc, std::move(parts[v]), schema, used, depth + 1, opts);
    child.edge_value = values[v];
    node.children.push_back(std::move(child));
  }
  return node;
}

inline void mark_hot(ErrorTreeNode& node, std::size_t root_errors, std::size_t root_instances) {
  // errors/instances > root_errors/root_instances, in integers.
  node.hot = static_cast<unsigned __int128>(node.errors) * root_instances >
             static_cast<unsigned __int128>(root_errors) * node.instances;
  for (auto& c : node.children) mark_hot(c, root_errors, root_instances);
}

}  // namespace detail

/// Root-level split candidates, in schema order.
inline std::vector<SplitCandidate> evaluate_root_splits(std::span<const ErrorRecord> records,
                                                        const AttributeSchema& schema,
                                                        std::size_t min_leaf = 20) {
  const auto enc = detail::encode(records, schema);
  std::vector<std::size_t> rows(enc.error.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  std::vector<SplitCandidate> out;
  for (std::size_t a = 0; a < schema.size(); ++a) {
    out.push_back(detail::evaluate_split(enc, rows, schema, a, min_leaf));
  }
  return out;
}

/// Greedy top-down tree on the error indicator: multiway categorical splits
/// chosen by Gini reduction, each attribute at most once per path, ties to
/// the earlier schema attribute. Growth stops at max_depth, on pure nodes,
/// when no admissible split reduces impurity, or when a split would leave a
/// non-empty child below min_leaf. Nodes whose error rate strictly exceeds
/// the root's are flagged hot.
inline ErrorTreeNode build_error_tree(std::span<const ErrorRecord> records,
                                      const AttributeSchema& schema,
                                      const TreeOptions& opts = {}) {
  if (records.empty()) throw ValidationError("build_error_tree: no records");
  if (opts.max_depth < 1) throw ValidationError("max_depth must be at least 1");
  if (opts.min_leaf < 1) throw ValidationError("min_leaf must be at least 1");
  const auto enc = detail::encode(records, schema);
  std::vector<std::size_t> rows(enc.error.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  auto root = detail::grow(enc, std::move(rows), schema, std::vector<bool>(schema.size(), false), 0,
                           opts);
  detail::mark_hot(root, root.errors, root.instances);
  return root;
}

/// "12.3" for 12.3%; empty for 0/0.
inline std::string format_percent(const ErrorCount& c) {
  const auto r = c.rate();
  if (!r) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * *r);
  return buf;
}

/// "errors / instances (rate%)"; the rate reads "n/a" for an empty stratum.
inline std::string format_count(const ErrorCount& c) {
  const std::string pct = format_percent(c);
  return std::to_string(c.errors) + " / " + std::to_string(c.instances) + " (" +
         (pct.empty() ? std::string("n/a") : pct + "%") + ")";
}

namespace detail {

inline std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

inline void emit_dot_node(const ErrorTreeNode& node, const std::string& parent_id, int& next,
                          std::ostringstream& nodes, std::ostringstream& edges) {
  const std::string id = "n" + std::to_string(next++);
  nodes << "  " << id << " [label=\"" << format_count({node.errors, node.instances}) << "\"";
  if (node.hot) nodes << ", fillcolor=\"#f4c7c3\"";
  nodes << "];\n";
  if (!parent_id.empty()) {
    edges << "  " << parent_id << " -> " << id << " [label=\""
          << dot_escape(node.edge_value.value_or("")) << "\"];\n";
  }
  for (const auto& c : node.children) emit_dot_node(c, id, next, nodes, edges);
}

}  // namespace detail

/// Graphviz rendering. Node ids follow pre-order; edge labels read
/// "attribute = value".
inline std::string emit_tree_dot(const ErrorTreeNode& tree) {
  std::ostringstream nodes, edges;
  int next = 0;
  // Edge labels need the parent's split attribute, so relabel on a copy.
  ErrorTreeNode labelled = tree;
  auto relabel = [](auto& self, ErrorTreeNode& n) -> void {
    for (auto& c : n.children) {
      c.edge_value = n.split_attribute.value_or("") + " = " + c.edge_value.value_or("");
      self(self, c);
    }
  };
  relabel(relabel, labelled);
  detail::emit_dot_node(labelled, "", next, nodes, edges);

  std::ostringstream out;
  out << "digraph error_tree {\n"
      << "  node [shape=box, style=filled, fillcolor=\"#e8e8e8\", fontname=\"Helvetica\"];\n"
      << nodes.str() << edges.str() << "}\n";
  return out.str();
}

struct StratifiedErrorTable {
  std::string row_attribute;
  std::string col_attribute;
  std::vector<std::string> row_values;
  std::vector<std::string> col_values;
  std::vector<std::vector<ErrorCount>> cells;  // [row][col]
  std::vector<ErrorCount> row_totals;
  std::vector<ErrorCount> col_totals;
  ErrorCount total;

  const ErrorCount& cell(const std::string& row, const std::string& col) const {
    const auto r = std::find(row_values.begin(), row_values.end(), row);
    const auto c = std::find(col_values.begin(), col_values.end(), col);
    if (r == row_values.end() || c == col_values.end()) {
      throw ValidationError("no cell (" + row + ", " + col + ")");
    }
    return cells[static_cast<std::size_t>(r - row_values.begin())]
                [static_cast<std::size_t>(c - col_values.begin())];
  }
};

/// Exact error counts cross-tabulated by two schema attributes.
inline StratifiedErrorTable stratify_errors(std::span<const ErrorRecord> records,
                                            const AttributeSchema& schema,
                                            const std::string& row_attr,
                                            const std::string& col_attr) {
  const auto ri = schema.find(row_attr);
  const auto ci = schema.find(col_attr);
  if (!ri) throw ValidationError("unknown attribute '" + row_attr + "'");
  if (!ci) throw ValidationError("unknown attribute '" + col_attr + "'");
  if (*ri == *ci) throw ValidationError("row and column attributes must differ");

  StratifiedErrorTable t;
  t.row_attribute = row_attr;
  t.col_attribute = col_attr;
  t.row_values = schema.attributes()[*ri].values;
  t.col_values = schema.attributes()[*ci].values;
  t.cells.assign(t.row_values.size(), std::vector<ErrorCount>(t.col_values.size()));
  t.row_totals.assign(t.row_values.size(), {});
  t.col_totals.assign(t.col_values.size(), {});
  for (const auto& rec : records) {
    const auto rv = rec.attributes.find(row_attr);
    const auto cv = rec.attributes.find(col_attr);
    if (rv == rec.attributes.end() || cv == rec.attributes.end()) {
      throw ValidationError("record '" + rec.image_id + "' lacks a stratification attribute");
    }
    const std::size_t r = schema.value_index(*ri, rv->second);
    const std::size_t c = schema.value_index(*ci, cv->second);
    t.cells[r][c].add(rec.error);
    t.row_totals[r].add(rec.error);
    t.col_totals[c].add(rec.error);
    t.total.add(rec.error);
  }
  return t;
}

/// Long-form CSV: one line per cell, then per marginal ("Total").
inline std::string table_to_csv(const StratifiedErrorTable& t) {
  std::ostringstream out;
  out << t.row_attribute << ',' << t.col_attribute << ",errors,instances,rate_percent\n";
  auto line = [&](const std::string& r, const std::string& c, const ErrorCount& e) {
    out << r << ',' << c << ',' << e.errors << ',' << e.instances << ',' << format_percent(e) << '\n';
  };
  for (std::size_t r = 0; r < t.row_values.size(); ++r) {
    for (std::size_t c = 0; c < t.col_values.size(); ++c) line(t.row_values[r], t.col_values[c], t.cells[r][c]);
    line(t.row_values[r], "Total", t.row_totals[r]);
  }
  for (std::size_t c = 0; c < t.col_values.size(); ++c) line("Total", t.col_values[c], t.col_totals[c]);
  line("Total", "Total", t.total);
  return out.str();
}

/// Column-aligned Markdown table, cells as "errors / instances (rate%)".
inline std::string table_to_markdown(const StratifiedErrorTable& t) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{t.row_attribute};
  for (const auto& c : t.col_values) header.push_back(c);
  header.emplace_back("Total");
  grid.push_back(header);
  for (std::size_t r = 0; r < t.row_values.size(); ++r) {
    std::vector<std::string> row{t.row_values[r]};
    for (const auto& cell : t.cells[r]) row.push_back(format_count(cell));
    row.push_back(format_count(t.row_totals[r]));
    grid.push_back(row);
  }
  std::vector<std::string> totals{"Total"};
  for (const auto& c : t.col_totals) totals.push_back(format_count(c));
  totals.push_back(format_count(t.total));
  grid.push_back(totals);

  std::vector<std::size_t> width(header.size(), 3);
  for (const auto& row : grid) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& row) {
    out << '|';
    for (std::size_t i = 0; i < row.size(); ++i) {
      out << ' ' << row[i] << std::string(width[i] - row[i].size(), ' ') << " |";
    }
    out << '\n';
  };
  emit(grid.front());
  out << '|';
  for (std::size_t w : width) out << std::string(w + 2, '-') << '|';
  out << '\n';
  for (std::size_t i = 1; i < grid.size(); ++i) emit(grid[i]);
  return out.str();
}

}  // namespace cxrhier
