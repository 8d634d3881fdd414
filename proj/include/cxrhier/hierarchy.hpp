#pragma once

// Four-class CXR reporting categories and their post-hoc hierarchical
// interpretation as three binary decision branches:
//
//   A (SUGG)             suggestive of COVID-19 = CLASSIC or INDETERMINATE
//   B (CLASSIC_VS_INDET) CLASSIC given suggestive
//   C (OTHER_VS_NORMAL)  OTHER given not suggestive
//
// Branch probabilities are obtained from a vanilla four-class predictor:
//
//   P(Sugg)          = P(CLASSIC) + P(INDET)
//   P(CLASSIC|Sugg)  = P(CLASSIC) / P(Sugg)
//   P(OTHER|~Sugg)   = P(OTHER) / (1 - P(Sugg))

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>

#include "cxrhier/error.hpp"

namespace cxrhier {

enum class ClassLabel : int { Normal = 0, Classic = 1, Indeterminate = 2, Other = 3 };

inline constexpr std::array<ClassLabel, 4> kAllLabels = {
    ClassLabel::Normal, ClassLabel::Classic, ClassLabel::Indeterminate, ClassLabel::Other};

enum class Branch { Sugg, ClassicVsIndet, OtherVsNormal };

inline constexpr std::array<Branch, 3> kAllBranches = {
    Branch::Sugg, Branch::ClassicVsIndet, Branch::OtherVsNormal};

/// An evaluation task: one of the three branches, or the one-of-four problem.
enum class Task { Sugg, ClassicVsIndet, OtherVsNormal, Multiclass };

inline constexpr std::array<Task, 4> kAllTasks = {
    Task::Sugg, Task::ClassicVsIndet, Task::OtherVsNormal, Task::Multiclass};

constexpr int code(ClassLabel label) { return static_cast<int>(label); }

constexpr std::optional<Branch> as_branch(Task task) {
  switch (task) {
    case Task::Sugg: return Branch::Sugg;
    case Task::ClassicVsIndet: return Branch::ClassicVsIndet;
    case Task::OtherVsNormal: return Branch::OtherVsNormal;
    case Task::Multiclass: return std::nullopt;
  }
  return std::nullopt;
}

constexpr Task as_task(Branch branch) {
  switch (branch) {
    case Branch::Sugg: return Task::Sugg;
    case Branch::ClassicVsIndet: return Task::ClassicVsIndet;
    case Branch::OtherVsNormal: return Task::OtherVsNormal;
  }
  return Task::Sugg;
}

namespace detail {

inline std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

/// Canonical file token: NORMAL, CLASSIC, INDET, OTHER.
constexpr std::string_view to_string(ClassLabel label) {
  switch (label) {
    case ClassLabel::Normal: return "NORMAL";
    case ClassLabel::Classic: return "CLASSIC";
    case ClassLabel::Indeterminate: return "INDET";
    case ClassLabel::Other: return "OTHER";
  }
  return "?";
}

constexpr std::string_view to_string(Task task) {
  switch (task) {
    case Task::Sugg: return "SUGG";
    case Task::ClassicVsIndet: return "CLASSIC_VS_INDET";
    case Task::OtherVsNormal: return "OTHER_VS_NORMAL";
    case Task::Multiclass: return "MULTICLASS";
  }
  return "?";
}

constexpr std::string_view to_string(Branch branch) { return to_string(as_task(branch)); }

/// Case-insensitive; accepts the canonical tokens only.
inline ClassLabel parse_label(std::string_view token) {
  const std::string u = detail::upper(token);
  for (ClassLabel label : kAllLabels) {
    if (u == to_string(label)) return label;
  }
  throw ValidationError("invalid class label '" + std::string(token) + "'");
}

inline Task parse_task(std::string_view token) {
  const std::string u = detail::upper(token);
  for (Task task : kAllTasks) {
    if (u == to_string(task)) return task;
  }
  throw ValidationError("invalid task '" + std::string(token) + "'");
}

/// A point on the 4-simplex. Construction validates and renormalizes, so a
/// live instance always satisfies the invariants.
class ClassProbabilities {
 public:
  static constexpr double kSumTolerance = 1e-9;

  /// Throws ValidationError unless every entry is finite in [0, 1] and
  /// |sum - 1| <= tolerance. Vectors already normalized to within a few ulp
  /// are kept bit-exact; others are divided by their sum.
  static ClassProbabilities from(const std::array<double, 4>& p,
                                 double tolerance = kSumTolerance) {
    double sum = 0.0;
    for (double v : p) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw ValidationError("class probability " + std::to_string(v) + " outside [0, 1]");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > tolerance) {
      throw ValidationError("class probabilities sum to " + std::to_string(sum) + ", expected 1");
    }
    if (std::abs(sum - 1.0) <= 8 * std::numeric_limits<double>::epsilon()) {
      return ClassProbabilities(p);
    }
    std::array<double, 4> q{};
    for (std::size_t i = 0; i < 4; ++i) q[i] = p[i] / sum;
    return ClassProbabilities(q);
  }

  static ClassProbabilities one_hot(ClassLabel label) {
    std::array<double, 4> p{};
    p[static_cast<std::size_t>(code(label))] = 1.0;
    return ClassProbabilities(p);
  }

  double operator[](ClassLabel label) const { return p_[static_cast<std::size_t>(code(label))]; }
  const std::array<double, 4>& values() const { return p_; }

  friend bool operator==(const ClassProbabilities&, const ClassProbabilities&) = default;

 private:
  explicit ClassProbabilities(const std::array<double, 4>& p) : p_(p) {}
  std::array<double, 4> p_;
};

struct BranchProbabilities {
  double sugg = 0.0;
  std::optional<double> classic_given_sugg;
  std::optional<double> other_given_not_sugg;

  std::optional<double> get(Branch branch) const {
    switch (branch) {
      case Branch::Sugg: return sugg;
      case Branch::ClassicVsIndet: return classic_given_sugg;
      case Branch::OtherVsNormal: return other_given_not_sugg;
    }
    return std::nullopt;
  }

  friend bool operator==(const BranchProbabilities&, const BranchProbabilities&) = default;
};

inline constexpr double kDefaultEpsilon = 1e-12;
inline constexpr double kDefaultThreshold = 0.5;

/// Conditionals are left empty when their denominator is below epsilon.
inline BranchProbabilities aggregate(const ClassProbabilities& probs,
                                     double epsilon = kDefaultEpsilon) {
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  BranchProbabilities out;
  out.sugg = std::min(1.0, probs[ClassLabel::Classic] + probs[ClassLabel::Indeterminate]);
  const double not_sugg = 1.0 - out.sugg;
  if (out.sugg >= epsilon) {
    out.classic_given_sugg = std::min(1.0, probs[ClassLabel::Classic] / out.sugg);
  }
  if (not_sugg >= epsilon) {
    out.other_given_not_sugg = std::min(1.0, probs[ClassLabel::Other] / not_sugg);
  }
  return out;
}

/// Reference truth of a branch for a label; empty when the branch does not
/// apply to that label.
constexpr std::optional<bool> branch_truth(ClassLabel label, Branch branch) {
  const bool suggestive = label == ClassLabel::Classic || label == ClassLabel::Indeterminate;
  switch (branch) {
    case Branch::Sugg: return suggestive;
    case Branch::ClassicVsIndet:
      if (!suggestive) return std::nullopt;
      return label == ClassLabel::Classic;
    case Branch::OtherVsNormal:
      if (suggestive) return std::nullopt;
      return label == ClassLabel::Other;
  }
  return std::nullopt;
}

/// Binary call a human reader makes on a branch given their four-class label.
constexpr bool label_branch_call(ClassLabel label, Branch branch) {
  switch (branch) {
    case Branch::Sugg:
      return label == ClassLabel::Classic || label == ClassLabel::Indeterminate;
    case Branch::ClassicVsIndet: return label == ClassLabel::Classic;
    case Branch::OtherVsNormal: return label == ClassLabel::Other;
  }
  return false;
}

inline std::optional<bool> branch_prediction(const BranchProbabilities& bp, Branch branch,
                                             double threshold = kDefaultThreshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("threshold must lie in (0, 1)");
  }
  const std::optional<double> p = bp.get(branch);
  if (!p) return std::nullopt;
  return *p >= threshold;
}

/// Argmax; ties go to the lowest class code.
inline ClassLabel multiclass_prediction(const ClassProbabilities& probs) {
  const auto& p = probs.values();
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = i;
  }
  return static_cast<ClassLabel>(best);
}

/// Inverse of aggregate. Requires both conditionals.
inline ClassProbabilities reconstruct(const BranchProbabilities& bp) {
  if (!bp.classic_given_sugg || !bp.other_given_not_sugg) {
    throw ValidationError("reconstruct requires both conditional branch probabilities");
  }
  const double s = bp.sugg;
  const double classic = s * *bp.classic_given_sugg;
  const double indet = s * (1.0 - *bp.classic_given_sugg);
  const double other = (1.0 - s) * *bp.other_given_not_sugg;
  const double normal = std::max(0.0, 1.0 - classic - indet - other);
  return ClassProbabilities::from({normal, classic, indet, other});
}

}  // namespace cxrhier
