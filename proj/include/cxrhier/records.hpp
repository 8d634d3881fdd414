#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "cxrhier/error.hpp"
#include "cxrhier/hierarchy.hpp"

namespace cxrhier {

enum class View { PA, AP };
enum class PcrStatus { Pos, Neg, Unk };

constexpr std::string_view to_string(View view) { return view == View::PA ? "PA" : "AP"; }

constexpr std::string_view to_string(PcrStatus pcr) {
  switch (pcr) {
    case PcrStatus::Pos: return "POS";
    case PcrStatus::Neg: return "NEG";
    case PcrStatus::Unk: return "UNK";
  }
  return "?";
}

inline View parse_view(std::string_view token) {
  const std::string u = detail::upper(token);
  if (u == "PA") return View::PA;
  if (u == "AP") return View::AP;
  throw ValidationError("invalid view '" + std::string(token) + "'");
}

inline PcrStatus parse_pcr(std::string_view token) {
  const std::string u = detail::upper(token);
  if (u == "POS") return PcrStatus::Pos;
  if (u == "NEG") return PcrStatus::Neg;
  if (u == "UNK") return PcrStatus::Unk;
  throw ValidationError("invalid pcr status '" + std::string(token) + "'");
}

/// One model output for one image. Multi-fold files carry one record per
/// (image, fold).
struct PredictionRecord {
  std::string image_id;
  std::string patient_id;
  std::optional<int> fold;
  ClassProbabilities probs = ClassProbabilities::one_hot(ClassLabel::Normal);
  ClassLabel label = ClassLabel::Normal;
  View view = View::PA;
  PcrStatus pcr = PcrStatus::Unk;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

struct AnnotationRecord {
  std::string image_id;
  std::string annotator_id;
  ClassLabel label = ClassLabel::Normal;
  std::optional<double> duration_seconds;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

struct ErrorCount {
  std::size_t errors = 0;
  std::size_t instances = 0;

  std::optional<double> rate() const {
    if (instances == 0) return std::nullopt;
    return static_cast<double>(errors) / static_cast<double>(instances);
  }
  void add(bool error) {
    ++instances;
    if (error) ++errors;
  }
  ErrorCount& operator+=(const ErrorCount& o) {
    errors += o.errors;
    instances += o.instances;
    return *this;
  }
  friend bool operator==(const ErrorCount&, const ErrorCount&) = default;
};

/// Ground-truth outcome of a task: 0/1 for branches, the class code for
/// MULTICLASS. Empty when the task does not apply to the label.
constexpr std::optional<int> task_truth(ClassLabel label, Task task) {
  if (const auto branch = as_branch(task)) {
    const auto t = branch_truth(label, *branch);
    if (!t) return std::nullopt;
    return *t ? 1 : 0;
  }
  return code(label);
}

/// Model outcome of a task in the same encoding as task_truth. Empty when
/// the branch conditional is undefined.
inline std::optional<int> task_prediction(const ClassProbabilities& probs, Task task,
                                          double threshold = kDefaultThreshold,
                                          double epsilon = kDefaultEpsilon) {
  if (const auto branch = as_branch(task)) {
    const auto p = branch_prediction(aggregate(probs, epsilon), *branch, threshold);
    if (!p) return std::nullopt;
    return *p ? 1 : 0;
  }
  return code(multiclass_prediction(probs));
}

/// Outcome a human reader's label implies for a task.
constexpr int label_task_call(ClassLabel label, Task task) {
  if (const auto branch = as_branch(task)) return label_branch_call(label, *branch) ? 1 : 0;
  return code(label);
}

/// Whether the model errs on this record for the task; empty when the task
/// does not apply or the prediction is undefined.
inline std::optional<bool> model_error(const PredictionRecord& r, Task task,
                                       double threshold = kDefaultThreshold,
                                       double epsilon = kDefaultEpsilon) {
  const auto truth = task_truth(r.label, task);
  if (!truth) return std::nullopt;
  const auto pred = task_prediction(r.probs, task, threshold, epsilon);
  if (!pred) return std::nullopt;
  return *pred != *truth;
}

}  // namespace cxrhier
