#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "cxrhier/iov.hpp"
#include "cxrhier/random.hpp"
#include "cxrhier/synth.hpp"

using namespace cxrhier;
using L = ClassLabel;
using P = AgreementPattern;

namespace {

PredictionRecord pred(const std::string& id, L label, std::array<double, 4> p) {
  PredictionRecord r;
  r.image_id = id;
  r.patient_id = "pat-" + id;
  r.label = label;
  r.probs = ClassProbabilities::from(p);
  return r;
}

void panel(std::vector<AnnotationRecord>& out, const std::string& id, L a, L b, L c) {
  out.push_back({id, "r1", a, std::nullopt});
  out.push_back({id, "r2", b, std::nullopt});
  out.push_back({id, "r3", c, std::nullopt});
}

double pct(const ErrorCount& c) { return std::round(1000.0 * *c.rate()) / 10.0; }

}  // namespace

TEST(AgreementPattern, Examples) {
  EXPECT_EQ(agreement_pattern({L::Classic, L::Classic, L::Classic}), P::Full);
  EXPECT_EQ(agreement_pattern({L::Classic, L::Indeterminate, L::Classic}), P::Partial);
  EXPECT_EQ(agreement_pattern({L::Classic, L::Indeterminate, L::Other}), P::None);
  EXPECT_THROW(agreement_pattern({L::Classic, L::Classic}), ValidationError);
  EXPECT_EQ(to_string(P::Partial), "2:1");
}

TEST(AgreementPattern, PermutationInvariant) {
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c) {
        std::array<L, 3> v{static_cast<L>(a), static_cast<L>(b), static_cast<L>(c)};
        const auto base = agreement_pattern(std::span<const L>(v));
        std::sort(v.begin(), v.end());
        do {
          EXPECT_EQ(agreement_pattern(std::span<const L>(v)), base);
        } while (std::next_permutation(v.begin(), v.end()));
      }
}

TEST(ErrorByAgreement, HandBuiltFixture) {
  // Multi-class: i1 FULL correct, i2 PARTIAL wrong, i3 NONE wrong, i4 NONE correct.
  const std::vector<PredictionRecord> preds = {
      pred("i1", L::Classic, {0.1, 0.7, 0.1, 0.1}),
      pred("i2", L::Indeterminate, {0.1, 0.6, 0.2, 0.1}),
      pred("i3", L::Other, {0.7, 0.1, 0.1, 0.1}),
      pred("i4", L::Normal, {0.7, 0.1, 0.1, 0.1}),
  };
  std::vector<AnnotationRecord> anns;
  panel(anns, "i1", L::Classic, L::Classic, L::Classic);
  panel(anns, "i2", L::Indeterminate, L::Classic, L::Indeterminate);
  panel(anns, "i3", L::Other, L::Normal, L::Classic);
  panel(anns, "i4", L::Normal, L::Other, L::Indeterminate);
  const auto r = error_by_agreement(preds, anns, Task::Multiclass);
  EXPECT_EQ(r.buckets.at(P::Full), (ErrorCount{0, 1}));
  EXPECT_EQ(r.buckets.at(P::Partial), (ErrorCount{1, 1}));
  EXPECT_EQ(r.buckets.at(P::None), (ErrorCount{1, 2}));
  EXPECT_EQ(r.overall, (ErrorCount{2, 4}));

  // CLASSIC_VS_INDET applies to i1, i2 only; reader calls on i2 are I, C, I.
  const auto cvi = error_by_agreement(preds, anns, Task::ClassicVsIndet);
  EXPECT_EQ(cvi.buckets.at(P::Full), (ErrorCount{0, 1}));
  EXPECT_EQ(cvi.buckets.at(P::Partial), (ErrorCount{1, 1}));
  EXPECT_EQ(cvi.buckets.at(P::None), (ErrorCount{0, 0}));

  // SUGG calls on i3 are N, N, S: partial even though the labels all differ.
  const auto sugg = error_by_agreement(preds, anns, Task::Sugg);
  EXPECT_EQ(sugg.buckets.at(P::Full).instances, 2u);
  EXPECT_EQ(sugg.buckets.at(P::Partial).instances, 2u);
  EXPECT_EQ(sugg.buckets.at(P::None).instances, 0u);
}

TEST(ErrorByAgreement, MissingReaderAndPanelSize) {
  const std::vector<PredictionRecord> preds = {pred("i1", L::Classic, {0.1, 0.7, 0.1, 0.1}),
                                               pred("i2", L::Classic, {0.1, 0.7, 0.1, 0.1})};
  std::vector<AnnotationRecord> anns;
  panel(anns, "i1", L::Classic, L::Classic, L::Classic);
  anns.push_back({"i2", "r1", L::Classic, std::nullopt});
  const auto r = error_by_agreement(preds, anns, Task::Sugg);
  EXPECT_EQ(r.missing_annotations, 1u);
  EXPECT_EQ(r.overall.instances, 1u);

  std::vector<AnnotationRecord> two = {{"i1", "r1", L::Classic, std::nullopt}, {"i1", "r2", L::Classic, std::nullopt}};
  EXPECT_THROW(error_by_agreement(preds, two, Task::Sugg), ValidationError);
  two.push_back({"i1", "r1", L::Other, std::nullopt});
  EXPECT_THROW(error_by_agreement(preds, two, Task::Sugg), ValidationError);
}

TEST(ErrorByAgreement, ReferenceRatesPerTask) {
  struct Expected {
    Task task;
    double full, partial, none;
  };
  const std::vector<Expected> table = {
      {Task::Sugg, 18.6, 22.6, -1},
      {Task::ClassicVsIndet, 19.5, 33.9, -1},
      {Task::OtherVsNormal, 16.4, 29.9, -1},
      {Task::Multiclass, 30.3, 47.9, 56.1},
  };
  for (const auto& e : table) {
    SCOPED_TRACE(std::string(to_string(e.task)));
    const auto c = fixtures::agreement_cohort(e.task);
    const auto r = error_by_agreement(c.predictions, c.annotations, e.task);
    EXPECT_EQ(pct(r.buckets.at(P::Full)), e.full);
    EXPECT_EQ(pct(r.buckets.at(P::Partial)), e.partial);
    if (e.none < 0) {
      EXPECT_EQ(r.buckets.at(P::None).instances, 0u);
    } else {
      EXPECT_EQ(pct(r.buckets.at(P::None)), e.none);
    }
    ErrorCount sum;
    for (const auto& [_, b] : r.buckets) sum += b;
    EXPECT_EQ(sum, r.overall);
    EXPECT_EQ(r.missing_annotations, 0u);
    EXPECT_EQ(r.undefined_predictions, 0u);
  }
}

TEST(AnnotatorReport, ReaderIdenticalToReference) {
  const auto c = fixtures::agreement_cohort(Task::Sugg);
  std::vector<AnnotationRecord> copy;
  for (const auto& p : c.predictions) copy.push_back({p.image_id, "ref", p.label, std::nullopt});
  const auto r = annotator_report(copy, c.predictions, "ref");
  EXPECT_EQ(r.images, 400u);
  for (Task t : kAllTasks) EXPECT_EQ(r.accuracy.at(t).accuracy, 1.0);
  for (const auto& [_, op] : r.operating_points) {
    EXPECT_EQ(op.fpr, 0.0);
    EXPECT_EQ(op.tpr, 1.0);
  }
}

TEST(AnnotatorReport, ReaderDisagreementFixture) {
  const auto c = fixtures::reader_disagreement();
  const auto r = annotator_report(c.annotations, c.predictions, "ann1");
  EXPECT_EQ(r.accuracy.at(Task::Sugg).n, 400u);
  EXPECT_NEAR(r.accuracy.at(Task::Sugg).accuracy, 0.775, 1e-12);
  EXPECT_THROW(annotator_report(c.annotations, c.predictions, "nobody"), ValidationError);
}

TEST(AnnotatorReport, ConstantReaderScoresPrevalence) {
  const auto c = fixtures::agreement_cohort(Task::Multiclass);
  std::vector<AnnotationRecord> constant;
  std::array<std::size_t, 4> counts{};
  for (const auto& p : c.predictions) {
    constant.push_back({p.image_id, "lazy", L::Classic, std::nullopt});
    ++counts[static_cast<std::size_t>(code(p.label))];
  }
  const auto r = annotator_report(constant, c.predictions, "lazy");
  EXPECT_DOUBLE_EQ(r.accuracy.at(Task::Multiclass).accuracy, counts[1] / 400.0);
  EXPECT_DOUBLE_EQ(r.accuracy.at(Task::Sugg).accuracy, (counts[1] + counts[2]) / 400.0);
  EXPECT_DOUBLE_EQ(r.accuracy.at(Task::ClassicVsIndet).accuracy,
                   static_cast<double>(counts[1]) / static_cast<double>(counts[1] + counts[2]));
  const auto& op = r.operating_points.at(Branch::Sugg);
  EXPECT_EQ(op.fpr, 1.0);
  EXPECT_EQ(op.tpr, 1.0);
}

TEST(RatingTable, KappaOnFixtures) {
  std::vector<AnnotationRecord> anns;
  panel(anns, "a", L::Classic, L::Classic, L::Classic);
  panel(anns, "b", L::Other, L::Other, L::Other);
  panel(anns, "c", L::Normal, L::Normal, L::Normal);
  EXPECT_EQ(fleiss_kappa(rating_table(anns, {}, Task::Multiclass)), 1.0);

  const auto c = fixtures::agreement_cohort(Task::Multiclass);
  const auto t = rating_table(c.annotations, c.predictions, Task::Multiclass);
  EXPECT_EQ(t.counts().size(), 400u);
  const double k = fleiss_kappa(t);
  EXPECT_GT(k, 0.0);
  EXPECT_LT(k, 1.0);

  const auto s = fixtures::agreement_cohort(Task::ClassicVsIndet);
  const auto cvi = rating_table(s.annotations, s.predictions, Task::ClassicVsIndet);
  EXPECT_EQ(cvi.counts().size(), 199u);
  EXPECT_EQ(cvi.counts().front().size(), 2u);
}

TEST(TimeByAgreement, FixtureCounts) {
  const auto c = fixtures::labelling_time_cohort();
  const auto t = time_by_agreement(c.annotations);
  EXPECT_EQ(t.images, 400u);
  EXPECT_EQ(t.skipped, fixtures::kSkippedImages);
  EXPECT_EQ(t.excluded, fixtures::kSlowImages);
  EXPECT_EQ(t.no_duration, 0u);
  EXPECT_EQ(t.retained, 380u);
  std::size_t n = 0;
  for (const auto& [_, s] : t.buckets) {
    n += s.n;
    if (s.n == 0) continue;
    EXPECT_LE(s.min, s.q1);
    EXPECT_LE(s.q1, s.median);
    EXPECT_LE(s.median, s.q3);
    EXPECT_LE(s.q3, s.max);
    EXPECT_LE(s.max, 50.0);
  }
  EXPECT_EQ(n, 380u);
  EXPECT_LT(t.buckets.at(P::Full).median, t.buckets.at(P::None).median);
}

TEST(TimeByAgreement, EqualDurationsAndBoundary) {
  std::vector<AnnotationRecord> anns;
  const std::vector<double> avg = {12.0, 12.0, 12.0, 49.9, 50.0, 50.1};
  for (std::size_t i = 0; i < avg.size(); ++i) {
    const std::string id = "i" + std::to_string(i);
    for (const char* r : {"r1", "r2", "r3"}) anns.push_back({id, r, L::Classic, avg[i]});
  }
  const auto t = time_by_agreement(anns);
  EXPECT_EQ(t.excluded, 1u);
  EXPECT_EQ(t.retained, 5u);
  const auto& full = t.buckets.at(P::Full);
  EXPECT_EQ(full.n, 5u);
  EXPECT_EQ(full.min, 12.0);
  EXPECT_EQ(full.q1, 12.0);
  EXPECT_EQ(full.median, 12.0);
  EXPECT_EQ(full.max, 50.0);
  EXPECT_EQ(t.buckets.at(P::None).n, 0u);
  EXPECT_THROW(time_by_agreement(anns, 0.0), ValidationError);
}

TEST(TimeByAgreement, UntimedImagesCounted) {
  std::vector<AnnotationRecord> anns;
  panel(anns, "i", L::Classic, L::Other, L::Classic);
  const auto t = time_by_agreement(anns);
  EXPECT_EQ(t.no_duration, 1u);
  EXPECT_EQ(t.retained, 0u);
}

TEST(Summarize, LinearQuartiles) {
  const auto s = summarize({4.0, 1.0, 3.0, 2.0});
  EXPECT_EQ(s.min, 1.0);
  EXPECT_DOUBLE_EQ(s.q1, 1.75);
  EXPECT_DOUBLE_EQ(s.median, 2.5);
  EXPECT_DOUBLE_EQ(s.q3, 3.25);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
}
