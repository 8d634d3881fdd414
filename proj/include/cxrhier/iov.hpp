#pragma once

// Inter-observer variability: agreement patterns among three readers, model
// error rates by agreement, per-reader accuracy, labelling-time summaries.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cxrhier/error.hpp"
#include "cxrhier/hierarchy.hpp"
#include "cxrhier/metrics.hpp"
#include "cxrhier/records.hpp"

namespace cxrhier {

enum class AgreementPattern { Full, Partial, None };

inline constexpr std::array<AgreementPattern, 3> kAllPatterns = {
    AgreementPattern::Full, AgreementPattern::Partial, AgreementPattern::None};

constexpr std::string_view to_string(AgreementPattern p) {
  switch (p) {
    case AgreementPattern::Full: return "3";
    case AgreementPattern::Partial: return "2:1";
    case AgreementPattern::None: return "1:1:1";
  }
  return "?";
}

inline constexpr std::size_t kPanelSize = 3;

template <typename T>
AgreementPattern agreement_pattern(std::span<const T> labels) {
  if (labels.size() != kPanelSize) {
    throw ValidationError("agreement_pattern: expected 3 labels, got " + std::to_string(labels.size()));
  }
  const bool ab = labels[0] == labels[1];
  const bool bc = labels[1] == labels[2];
  const bool ac = labels[0] == labels[2];
  if (ab && bc) return AgreementPattern::Full;
  if (!ab && !bc && !ac) return AgreementPattern::None;
  return AgreementPattern::Partial;
}

inline AgreementPattern agreement_pattern(std::initializer_list<ClassLabel> labels) {
  const std::vector<ClassLabel> v(labels);
  return agreement_pattern(std::span<const ClassLabel>(v));
}

/// Annotations grouped by image, with the reader panel.
class AnnotationIndex {
 public:
  explicit AnnotationIndex(std::span<const AnnotationRecord> annotations) {
    for (const auto& a : annotations) {
      if (!by_image_[a.image_id].emplace(a.annotator_id, &a).second) {
        throw ValidationError("duplicate annotation for image '" + a.image_id + "' by '" +
                              a.annotator_id + "'");
      }
      panel_.insert(a.annotator_id);
    }
  }

  const std::set<std::string>& panel() const { return panel_; }

  /// Panel labels in annotator-id order, or empty when any reader skipped it.
  std::optional<std::vector<const AnnotationRecord*>> complete(const std::string& image) const {
    const auto it = by_image_.find(image);
    if (it == by_image_.end() || it->second.size() != panel_.size()) return std::nullopt;
    std::vector<const AnnotationRecord*> out;
    for (const auto& [_, a] : it->second) out.push_back(a);
    return out;
  }

  const std::map<std::string, std::map<std::string, const AnnotationRecord*>>& by_image() const {
    return by_image_;
  }

  void require_panel_of_three() const {
    if (panel_.size() != kPanelSize) {
      throw ValidationError("agreement analysis needs exactly 3 annotators, found " +
                            std::to_string(panel_.size()));
    }
  }

 private:
  std::map<std::string, std::map<std::string, const AnnotationRecord*>> by_image_;
  std::set<std::string> panel_;
};

namespace detail {

inline std::map<std::string, const PredictionRecord*> index_records(
    std::span<const PredictionRecord> records) {
  std::map<std::string, const PredictionRecord*> out;
  for (const auto& r : records) {
    if (!out.emplace(r.image_id, &r).second) {
      throw ValidationError("duplicate prediction for image '" + r.image_id +
                            "'; ensemble multi-fold files first");
    }
  }
  return out;
}

inline AgreementPattern task_pattern(const std::vector<const AnnotationRecord*>& labels, Task task) {
  std::array<int, kPanelSize> calls{};
  for (std::size_t i = 0; i < kPanelSize; ++i) calls[i] = label_task_call(labels[i]->label, task);
  return agreement_pattern(std::span<const int>(calls));
}

}  // namespace detail

struct AgreementErrors {
  Task task = Task::Sugg;
  std::map<AgreementPattern, ErrorCount> buckets;
  ErrorCount overall;
  std::size_t missing_annotations = 0;  // applicable images skipped by a reader
  std::size_t undefined_predictions = 0;
};

/// Model error rate per reader-agreement pattern. For branch tasks, images
/// are restricted to applicable reference labels and reader labels are
/// mapped to branch calls first, so NONE never occurs.
inline AgreementErrors error_by_agreement(std::span<const PredictionRecord> records,
                                          std::span<const AnnotationRecord> annotations, Task task,
                                          double threshold = kDefaultThreshold,
                                          double epsilon = kDefaultEpsilon) {
  const AnnotationIndex index(annotations);
  index.require_panel_of_three();
  AgreementErrors out;
  out.task = task;
  for (AgreementPattern p : kAllPatterns) out.buckets[p] = {};
  for (const auto& [id, r] : detail::index_records(records)) {
    if (!task_truth(r->label, task)) continue;
    const auto labels = index.complete(id);
    if (!labels) {
      ++out.missing_annotations;
      continue;
    }
    const auto err = model_error(*r, task, threshold, epsilon);
    if (!err) {
      ++out.undefined_predictions;
      continue;
    }
    out.buckets[detail::task_pattern(*labels, task)].add(*err);
    out.overall.add(*err);
  }
  return out;
}

/// Items x categories rating table over images every reader labelled. Branch
/// tasks keep applicable images only (needs references) and use 2 categories.
inline RatingTable rating_table(std::span<const AnnotationRecord> annotations,
                                std::span<const PredictionRecord> references, Task task) {
  const AnnotationIndex index(annotations);
  const bool branch = as_branch(task).has_value();
  const std::map<std::string, const PredictionRecord*> refs =
      branch ? detail::index_records(references) : std::map<std::string, const PredictionRecord*>{};
  std::vector<std::vector<std::size_t>> rows;
  for (const auto& [image, _] : index.by_image()) {
    const auto labels = index.complete(image);
    if (!labels) continue;
    if (branch) {
      const auto it = refs.find(image);
      if (it == refs.end() || !task_truth(it->second->label, task)) continue;
    }
    std::vector<std::size_t> row(branch ? 2 : 4, 0);
    for (const auto* a : *labels) ++row[static_cast<std::size_t>(label_task_call(a->label, task))];
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError("rating_table: no image rated by every annotator");
  return RatingTable(std::move(rows));
}

struct TaskAccuracy {
  std::size_t n = 0;
  double accuracy = 0.0;
};

struct AnnotatorReport {
  std::string annotator;
  std::size_t images = 0;
  std::map<Task, TaskAccuracy> accuracy;
  std::map<Branch, OperatingPoint> operating_points;
};

/// A reader scored against the reference labels with the same task
/// applicability as the model.
inline AnnotatorReport annotator_report(std::span<const AnnotationRecord> annotations,
                                        std::span<const PredictionRecord> references,
                                        const std::string& annotator) {
  const auto refs = detail::index_records(references);
  std::vector<std::pair<ClassLabel, ClassLabel>> pairs;  // (reader, reference)
  for (const auto& a : annotations) {
    if (a.annotator_id != annotator) continue;
    const auto it = refs.find(a.image_id);
    if (it != refs.end()) pairs.emplace_back(a.label, it->second->label);
  }
  if (pairs.empty()) {
    throw ValidationError("annotator '" + annotator + "' shares no images with the references");
  }
  AnnotatorReport out;
  out.annotator = annotator;
  out.images = pairs.size();
  for (Task task : kAllTasks) {
    std::vector<int> calls, truths;
    for (const auto& [reader, ref] : pairs) {
      const auto t = task_truth(ref, task);
      if (!t) continue;
      calls.push_back(label_task_call(reader, task));
      truths.push_back(*t);
    }
    if (calls.empty()) continue;
    out.accuracy[task] = {calls.size(), accuracy(calls, truths)};
    if (const auto branch = as_branch(task)) {
      const bool both = std::ranges::count(truths, 1) > 0 && std::ranges::count(truths, 0) > 0;
      if (both) out.operating_points[*branch] = operating_point(calls, truths);
    }
  }
  return out;
}

struct TimeSummary {
  std::size_t n = 0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

/// Linear-interpolation quantile of sorted data, position q * (n - 1).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ValidationError("quantile of empty data");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline TimeSummary summarize(std::vector<double> values) {
  TimeSummary s;
  s.n = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q3 = quantile_sorted(values, 0.75);
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  return s;
}

struct TimeAnalysis {
  std::map<AgreementPattern, TimeSummary> buckets;
  std::size_t images = 0;
  std::size_t skipped = 0;      // missing at least one reader
  std::size_t no_duration = 0;  // complete, but no reader recorded a time
  std::size_t excluded = 0;     // average time strictly above the threshold
  std::size_t retained = 0;
};

inline constexpr double kDefaultTimeExclusion = 50.0;

/// Per-image average labelling time (over readers with a recorded duration)
/// summarized by four-class agreement pattern.
inline TimeAnalysis time_by_agreement(std::span<const AnnotationRecord> annotations,
                                      double exclusion_threshold = kDefaultTimeExclusion) {
  if (!(exclusion_threshold > 0.0)) throw ValidationError("exclusion threshold must be positive");
  const AnnotationIndex index(annotations);
  index.require_panel_of_three();
  TimeAnalysis out;
  std::map<AgreementPattern, std::vector<double>> times;
  for (AgreementPattern p : kAllPatterns) times[p];
  for (const auto& [image, _] : index.by_image()) {
    ++out.images;
    const auto labels = index.complete(image);
    if (!labels) {
      ++out.skipped;
      continue;
    }
    double sum = 0.0;
    std::size_t timed = 0;
    for (const auto* a : *labels) {
      if (a->duration_seconds) {
        sum += *a->duration_seconds;
        ++timed;
      }
    }
    if (timed == 0) {
      ++out.no_duration;
      continue;
    }
    const double avg = sum / static_cast<double>(timed);
    if (avg > exclusion_threshold) {
      ++out.excluded;
      continue;
    }
    times[detail::task_pattern(*labels, Task::Multiclass)].push_back(avg);
    ++out.retained;
  }
  for (auto& [p, v] : times) out.buckets[p] = summarize(std::move(v));
  return out;
}

}  // namespace cxrhier
