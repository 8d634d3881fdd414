#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <numeric>
#include <optional>
#include <ranges>
#include <span>
#include <string>
#include <vector>

#include "cxrhier/error.hpp"
#include "cxrhier/hierarchy.hpp"
#include "cxrhier/records.hpp"

namespace cxrhier {

/// Fraction of positions where prediction equals truth.
template <std::ranges::sized_range P, std::ranges::sized_range T>
double accuracy(const P& predictions, const T& truths) {
  const auto n = std::ranges::size(predictions);
  if (n != std::ranges::size(truths)) throw ValidationError("accuracy: length mismatch");
  if (n == 0) throw ValidationError("accuracy: empty input");
  std::size_t hits = 0;
  auto t = std::ranges::begin(truths);
  for (auto p = std::ranges::begin(predictions); p != std::ranges::end(predictions); ++p, ++t) {
    if (*p == *t) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

struct ScoredSample {
  double score = 0.0;
  bool truth = false;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
  double threshold = 0.0;
};

struct PrCurve {
  std::vector<PrPoint> points;
  double auc = 0.0;  // average precision
};

namespace detail {

/// Cumulative (tp, fp) after each group of tied scores, scores descending.
struct SweepStep {
  double threshold;
  std::uint64_t tp;
  std::uint64_t fp;
};

inline std::vector<SweepStep> sweep(std::span<const ScoredSample> samples) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (const auto& s : samples) {
    if (!std::isfinite(s.score)) throw ValidationError("non-finite score");
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples[a].score > samples[b].score;
  });
  std::vector<SweepStep> steps;
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double score = samples[order[i]].score;
    for (; i < order.size() && samples[order[i]].score == score; ++i) {
      if (samples[order[i]].truth) ++tp; else ++fp;
    }
    steps.push_back({score, tp, fp});
  }
  return steps;
}

}  // namespace detail

/// Step ROC curve with tied scores collapsed to one diagonal step. The
/// trapezoidal area is accumulated in integers, so it equals the
/// Mann-Whitney statistic (ties credited 1/2) up to a single rounding.
inline RocCurve roc_curve(std::span<const ScoredSample> samples) {
  const auto steps = detail::sweep(samples);
  const std::uint64_t pos = steps.empty() ? 0 : steps.back().tp;
  const std::uint64_t neg = steps.empty() ? 0 : steps.back().fp;
  if (pos == 0 || neg == 0) {
    throw ValidationError("roc_curve: need at least one positive and one negative");
  }
  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  // Twice the area, in units of 1/(pos*neg).
  unsigned __int128 twice_area = 0;
  std::uint64_t prev_tp = 0, prev_fp = 0;
  for (const auto& s : steps) {
    twice_area += static_cast<unsigned __int128>(s.fp - prev_fp) * (s.tp + prev_tp);
    curve.points.push_back({static_cast<double>(s.fp) / static_cast<double>(neg),
                            static_cast<double>(s.tp) / static_cast<double>(pos)});
    prev_tp = s.tp;
    prev_fp = s.fp;
  }
  curve.auc = static_cast<double>(twice_area) /
              (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

/// Precision/recall at every distinct threshold; auc is average precision.
inline PrCurve pr_curve(std::span<const ScoredSample> samples) {
  const auto steps = detail::sweep(samples);
  const std::uint64_t pos = steps.empty() ? 0 : steps.back().tp;
  if (pos == 0) throw ValidationError("pr_curve: need at least one positive");
  PrCurve curve;
  double ap = 0.0;
  std::uint64_t prev_tp = 0;
  for (const auto& s : steps) {
    const double precision = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
    const double recall = static_cast<double>(s.tp) / static_cast<double>(pos);
    ap += static_cast<double>(s.tp - prev_tp) * precision;
    curve.points.push_back({recall, precision, s.threshold});
    prev_tp = s.tp;
  }
  curve.auc = ap / static_cast<double>(pos);
  return curve;
}

/// Item x category rating counts; every item rated by the same number of
/// raters.
class RatingTable {
 public:
  explicit RatingTable(std::vector<std::vector<std::size_t>> counts) : counts_(std::move(counts)) {
    if (counts_.empty()) throw ValidationError("rating table: no items");
    const std::size_t categories = counts_.front().size();
    if (categories < 1) throw ValidationError("rating table: no categories");
    raters_ = std::accumulate(counts_.front().begin(), counts_.front().end(), std::size_t{0});
    for (const auto& row : counts_) {
      if (row.size() != categories) throw ValidationError("rating table: ragged rows");
      if (std::accumulate(row.begin(), row.end(), std::size_t{0}) != raters_) {
        throw ValidationError("rating table: unequal row sums");
      }
    }
    if (raters_ < 2) throw ValidationError("rating table: need at least 2 raters per item");
  }

  std::size_t items() const { return counts_.size(); }
  std::size_t categories() const { return counts_.front().size(); }
  std::size_t raters() const { return raters_; }
  const std::vector<std::vector<std::size_t>>& counts() const { return counts_; }

 private:
  std::vector<std::vector<std::size_t>> counts_;
  std::size_t raters_ = 0;
};

/// Fleiss' kappa. Throws when fewer than 2 items or when every rating falls
/// in a single category (chance agreement is 1).
inline double fleiss_kappa(const RatingTable& table) {
  if (table.items() < 2) throw ValidationError("fleiss_kappa: need at least 2 items");
  const auto n = static_cast<double>(table.raters());
  const auto items = static_cast<double>(table.items());

  std::vector<std::size_t> marginal(table.categories(), 0);
  bool unanimous = true;
  double sum_agreement = 0.0;
  for (const auto& row : table.counts()) {
    double sq = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      marginal[j] += row[j];
      sq += static_cast<double>(row[j]) * static_cast<double>(row[j]);
      if (row[j] != 0 && row[j] != table.raters()) unanimous = false;
    }
    sum_agreement += (sq - n) / (n * (n - 1.0));
  }
  const auto used = std::ranges::count_if(marginal, [](std::size_t m) { return m > 0; });
  if (used <= 1) throw ValidationError("fleiss_kappa: all ratings in one category");
  if (unanimous) return 1.0;

  const double p_bar = sum_agreement / items;
  double p_e = 0.0;
  for (std::size_t m : marginal) {
    const double pj = static_cast<double>(m) / (items * n);
    p_e += pj * pj;
  }
  return (p_bar - p_e) / (1.0 - p_e);
}

struct OperatingPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  std::size_t n = 0;
};

template <std::ranges::sized_range P, std::ranges::sized_range T>
OperatingPoint operating_point(const P& predicted, const T& truths) {
  const auto n = std::ranges::size(predicted);
  if (n != std::ranges::size(truths)) throw ValidationError("operating_point: length mismatch");
  std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
  auto t = std::ranges::begin(truths);
  for (auto p = std::ranges::begin(predicted); p != std::ranges::end(predicted); ++p, ++t) {
    const bool pred = static_cast<bool>(*p);
    if (static_cast<bool>(*t)) {
      pred ? ++tp : ++fn;
    } else {
      pred ? ++fp : ++tn;
    }
  }
  if (tp + fn == 0 || fp + tn == 0) {
    throw ValidationError("operating_point: truths must contain both classes");
  }
  return {static_cast<double>(fp) / static_cast<double>(fp + tn),
          static_cast<double>(tp) / static_cast<double>(tp + fn), n};
}

/// Scores and truths of the records a branch applies to.
struct BranchSamples {
  std::vector<ScoredSample> samples;
  std::size_t undefined = 0;  // applicable, but the conditional was absent
};

inline BranchSamples branch_samples(std::span<const PredictionRecord> records, Branch branch,
                                    double epsilon = kDefaultEpsilon) {
  BranchSamples out;
  for (const auto& r : records) {
    const auto truth = branch_truth(r.label, branch);
    if (!truth) continue;
    const auto score = aggregate(r.probs, epsilon).get(branch);
    if (!score) {
      ++out.undefined;
      continue;
    }
    out.samples.push_back({*score, *truth});
  }
  return out;
}

struct BranchReport {
  Branch branch = Branch::Sugg;
  std::size_t n = 0;
  std::size_t n_undefined = 0;
  double threshold = kDefaultThreshold;
  double accuracy = 0.0;
  double roc_auc = 0.0;
  double pr_auc = 0.0;
};

inline BranchReport branch_report(std::span<const PredictionRecord> records, Branch branch,
                                  double threshold = kDefaultThreshold,
                                  double epsilon = kDefaultEpsilon) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("threshold must lie in (0, 1)");
  const auto bs = branch_samples(records, branch, epsilon);
  if (bs.samples.empty()) {
    throw ValidationError("branch_report: no applicable records for " + std::string(to_string(branch)));
  }
  std::vector<bool> pred, truth;
  pred.reserve(bs.samples.size());
  truth.reserve(bs.samples.size());
  for (const auto& s : bs.samples) {
    pred.push_back(s.score >= threshold);
    truth.push_back(s.truth);
  }
  BranchReport report;
  report.branch = branch;
  report.n = bs.samples.size();
  report.n_undefined = bs.undefined;
  report.threshold = threshold;
  report.accuracy = accuracy(pred, truth);
  report.roc_auc = roc_curve(bs.samples).auc;
  report.pr_auc = pr_curve(bs.samples).auc;
  return report;
}

using ConfusionMatrix = std::array<std::array<std::size_t, 4>, 4>;  // [truth][predicted]

struct MulticlassReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  ConfusionMatrix confusion{};
};

inline MulticlassReport multiclass_report(std::span<const PredictionRecord> records) {
  if (records.empty()) throw ValidationError("multiclass_report: no records");
  MulticlassReport report;
  std::vector<int> pred, truth;
  for (const auto& r : records) {
    const ClassLabel p = multiclass_prediction(r.probs);
    ++report.confusion[static_cast<std::size_t>(code(r.label))][static_cast<std::size_t>(code(p))];
    pred.push_back(code(p));
    truth.push_back(code(r.label));
  }
  report.n = records.size();
  report.accuracy = accuracy(pred, truth);
  return report;
}

}  // namespace cxrhier
