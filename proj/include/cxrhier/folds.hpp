#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "cxrhier/error.hpp"
#include "cxrhier/hierarchy.hpp"
#include "cxrhier/random.hpp"
#include "cxrhier/records.hpp"

namespace cxrhier {

struct FoldAssignment {
  int k = 0;
  std::map<std::string, int> fold_of_patient;

  int fold_of(const std::string& patient_id) const {
    const auto it = fold_of_patient.find(patient_id);
    if (it == fold_of_patient.end()) throw ValidationError("no fold for patient '" + patient_id + "'");
    return it->second;
  }

  friend bool operator==(const FoldAssignment&, const FoldAssignment&) = default;
};

/// Patient-grouped, class-stratified K-fold assignment.
///
/// Each patient is stratified by its modal label (ties to the lowest code).
/// Patients are shuffled by the seed, then stably ordered by (class,
/// descending image count) and dealt round-robin; the deal position carries
/// over between classes. Within a class, fold image counts then differ by at
/// most the largest patient's image count.
inline FoldAssignment stratified_group_kfold(std::span<const PredictionRecord> records, int k,
                                             std::uint64_t seed) {
  if (k < 2) throw ValidationError("k must be at least 2");

  struct Group {
    std::string patient;
    std::array<std::size_t, 4> per_class{};
    std::size_t size = 0;
    int stratum = 0;
  };
  std::map<std::string, Group> by_patient;
  for (const auto& r : records) {
    if (r.patient_id.empty()) throw ValidationError("record '" + r.image_id + "' has no patient id");
    auto& g = by_patient[r.patient_id];
    g.patient = r.patient_id;
    ++g.per_class[static_cast<std::size_t>(code(r.label))];
    ++g.size;
  }
  if (static_cast<std::size_t>(k) > by_patient.size()) {
    throw ValidationError("k = " + std::to_string(k) + " exceeds the number of patients (" +
                          std::to_string(by_patient.size()) + ")");
  }

  std::vector<Group> groups;
  groups.reserve(by_patient.size());
  for (auto& [_, g] : by_patient) {
    g.stratum = static_cast<int>(std::max_element(g.per_class.begin(), g.per_class.end()) -
                                 g.per_class.begin());
    groups.push_back(std::move(g));
  }
  Rng rng(seed);
  rng.shuffle(groups);
  std::stable_sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
    return std::tie(a.stratum, b.size) < std::tie(b.stratum, a.size);
  });

  FoldAssignment out;
  out.k = k;
  int next = 0;
  for (const auto& g : groups) {
    out.fold_of_patient[g.patient] = next;
    next = (next + 1) % k;
  }
  return out;
}

/// Mean of member probability vectors.
inline ClassProbabilities ensemble_mean(std::span<const ClassProbabilities> members) {
  if (members.empty()) throw ValidationError("ensemble_mean: no members");
  // Mean as an offset from the first member: identical members come back
  // unchanged. from() absorbs the remaining rounding in the sum.
  const auto& first = members.front().values();
  const auto n = static_cast<double>(members.size());
  std::array<double, 4> mean{};
  for (std::size_t i = 0; i < 4; ++i) {
    double shift = 0.0;
    for (const auto& m : members) shift += m.values()[i] - first[i];
    mean[i] = std::clamp(first[i] + shift / n, 0.0, 1.0);
  }
  return ClassProbabilities::from(mean);
}

/// task -> metric -> value, one per fold.
using FoldReport = std::map<std::string, std::map<std::string, double>>;

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

struct CrossValSummary {
  std::size_t folds = 0;
  std::map<std::string, std::map<std::string, MeanStd>> entries;
};

/// Mean and sample standard deviation (divisor K-1) across folds.
inline CrossValSummary crossval_summarize(std::span<const FoldReport> reports) {
  if (reports.size() < 2) throw ValidationError("crossval_summarize: need at least 2 folds");
  const auto same_keys = [&](const FoldReport& a, const FoldReport& b) {
    if (a.size() != b.size()) return false;
    for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
      if (ia->first != ib->first || ia->second.size() != ib->second.size()) return false;
      for (auto ma = ia->second.begin(), mb = ib->second.begin(); ma != ia->second.end(); ++ma, ++mb) {
        if (ma->first != mb->first) return false;
      }
    }
    return true;
  };
  for (const auto& r : reports) {
    if (!same_keys(r, reports.front())) throw ValidationError("crossval_summarize: mismatched keys");
  }

  CrossValSummary out;
  out.folds = reports.size();
  const auto k = static_cast<double>(reports.size());
  for (const auto& [task, metrics] : reports.front()) {
    for (const auto& [metric, _] : metrics) {
      // Shifted by the first fold so identical folds give std 0 exactly.
      const double first = reports.front().at(task).at(metric);
      double shift = 0.0;
      for (const auto& r : reports) shift += r.at(task).at(metric) - first;
      const double offset = shift / k;
      double ss = 0.0;
      for (const auto& r : reports) {
        const double d = (r.at(task).at(metric) - first) - offset;
        ss += d * d;
      }
      out.entries[task][metric] = {first + offset, std::sqrt(ss / (k - 1.0))};
    }
  }
  return out;
}

}  // namespace cxrhier
