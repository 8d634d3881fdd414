#pragma once

// Deterministic synthetic cohorts: datasets with prescribed per-stratum
// error counts, fixtures rebuilding reference count tables, and random
// cohorts with a planted error-rate dependence for property tests.

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cxrhier/erroranalysis.hpp"
#include "cxrhier/error.hpp"
#include "cxrhier/hierarchy.hpp"
#include "cxrhier/iov.hpp"
#include "cxrhier/random.hpp"
#include "cxrhier/records.hpp"

namespace cxrhier {

struct StratumSpec {
  std::map<std::string, std::string> attributes;
  ClassLabel label = ClassLabel::Normal;
  std::size_t instances = 0;
  std::size_t errors = 0;

  friend bool operator==(const StratumSpec&, const StratumSpec&) = default;
};

struct CohortSpec {
  AttributeSchema schema = AttributeSchema::builtin();
  std::vector<StratumSpec> strata;
  std::uint64_t seed = 0;
  Task task = Task::Sugg;  // the task whose errors the strata count

  friend bool operator==(const CohortSpec&, const CohortSpec&) = default;
};

struct Cohort {
  std::vector<PredictionRecord> predictions;
  std::vector<ErrorRecord> errors;  // for spec.task, schema attributes + class
};

namespace detail {

inline std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

}  // namespace detail

/// Class probabilities whose prediction for `task` is wrong exactly when
/// `error` is set. Every other branch that applies to the label is predicted
/// correctly. Branch probabilities keep a margin of at least 0.05 from 0.5.
inline ClassProbabilities synthesize_probabilities(ClassLabel label, Task task, bool error, Rng& rng) {
  if (task == Task::Multiclass) {
    int target = code(label);
    if (error) target = (target + 1 + static_cast<int>(rng.below(3))) % 4;
    std::array<double, 4> p{};
    const double top = rng.uniform(0.55, 0.95);
    std::array<double, 3> w{};
    double wsum = 0.0;
    for (auto& x : w) {
      x = rng.uniform(0.1, 1.0);
      wsum += x;
    }
    for (int i = 0, j = 0; i < 4; ++i) {
      p[static_cast<std::size_t>(i)] =
          i == target ? top : (1.0 - top) * w[static_cast<std::size_t>(j++)] / wsum;
    }
    return ClassProbabilities::from(p);
  }
  const auto side = [&](bool positive) {
    const double margin = rng.uniform(0.05, 0.45);
    return positive ? 0.5 + margin : 0.5 - margin;
  };
  const auto desired = [&](Branch b) {
    const auto truth = branch_truth(label, b);
    const bool flip = error && as_task(b) == task;
    // Inapplicable branches get a coin flip; it does not affect any error.
    const bool coin = rng.bernoulli(0.5);
    return truth ? (*truth != flip) : coin;
  };
  BranchProbabilities bp;
  bp.sugg = side(desired(Branch::Sugg));
  bp.classic_given_sugg = side(desired(Branch::ClassicVsIndet));
  bp.other_given_not_sugg = side(desired(Branch::OtherVsNormal));
  return reconstruct(bp);
}

/// One record per stratum instance. Within a stratum, which records are
/// errors is a seeded shuffle; schema attributes a stratum leaves open are
/// drawn uniformly. The schema must carry `view` and `pcr`.
inline Cohort generate(const CohortSpec& spec) {
  const auto view_attr = spec.schema.find("view");
  const auto pcr_attr = spec.schema.find("pcr");
  if (!view_attr || !pcr_attr) throw ValidationError("cohort schema needs 'view' and 'pcr' attributes");
  if (spec.schema.find(kClassAttributeName)) {
    throw ValidationError("'class' is derived from stratum labels; remove it from the schema");
  }
  for (const auto& s : spec.strata) {
    if (s.errors > s.instances) {
      throw ValidationError("infeasible stratum: " + std::to_string(s.errors) + " errors > " +
                            std::to_string(s.instances) + " instances");
    }
    for (const auto& [name, value] : s.attributes) {
      const auto a = spec.schema.find(name);
      if (!a) throw ValidationError("stratum attribute '" + name + "' not in schema");
      spec.schema.value_index(*a, value);
    }
    if (!task_truth(s.label, spec.task) && s.errors > 0) {
      throw ValidationError("stratum label " + std::string(to_string(s.label)) +
                            " cannot carry errors for task " + std::string(to_string(spec.task)));
    }
  }

  Rng rng(spec.seed);
  Cohort out;
  std::size_t next_id = 0;
  for (const auto& s : spec.strata) {
    std::vector<bool> is_error(s.instances, false);
    for (std::size_t i = 0; i < s.errors; ++i) is_error[i] = true;
    rng.shuffle(is_error);
    for (std::size_t i = 0; i < s.instances; ++i) {
      std::map<std::string, std::string> attrs;
      for (const auto& a : spec.schema.attributes()) {
        const auto fixed = s.attributes.find(a.name);
        attrs[a.name] = fixed != s.attributes.end() ? fixed->second : a.values[rng.below(a.values.size())];
      }
      PredictionRecord rec;
      rec.image_id = detail::numbered("IMG", next_id);
      rec.patient_id = detail::numbered("PAT", next_id);
      ++next_id;
      rec.label = s.label;
      rec.view = parse_view(attrs.at("view"));
      rec.pcr = parse_pcr(attrs.at("pcr"));
      rec.probs = synthesize_probabilities(s.label, spec.task, is_error[i], rng);

      const auto err = model_error(rec, spec.task);
      if (err && *err != is_error[i]) throw std::logic_error("synthesized prediction missed its target");
      if (err) {
        attrs[kClassAttributeName] = std::string(to_string(s.label));
        out.errors.push_back({rec.image_id, *err, std::move(attrs)});
      }
      out.predictions.push_back(std::move(rec));
    }
  }
  return out;
}

/// Error records with iid uniform attributes; the error flag is Bernoulli
/// with the rate of the record's planted-attribute value.
inline std::vector<ErrorRecord> generate_planted(const AttributeSchema& schema, std::size_t n,
                                                 const std::string& planted_attr,
                                                 const std::map<std::string, double>& rates,
                                                 std::uint64_t seed) {
  const auto planted = schema.find(planted_attr);
  if (!planted) throw ValidationError("unknown planted attribute '" + planted_attr + "'");
  if (n < 1) throw ValidationError("generate_planted: n must be at least 1");
  for (const auto& v : schema.attributes()[*planted].values) {
    const auto it = rates.find(v);
    if (it == rates.end()) throw ValidationError("no planted rate for value '" + v + "'");
    if (!(it->second >= 0.0 && it->second <= 1.0)) throw ValidationError("planted rates must lie in [0, 1]");
  }
  Rng rng(seed);
  std::vector<ErrorRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ErrorRecord r;
    r.image_id = detail::numbered("IMG", i);
    for (const auto& a : schema.attributes()) r.attributes[a.name] = a.values[rng.below(a.values.size())];
    r.error = rng.bernoulli(rates.at(r.attributes.at(planted_attr)));
    out.push_back(std::move(r));
  }
  return out;
}

/// Per-stratum (errors, instances) read back from error records, keyed by
/// the stratification attributes plus class.
inline std::map<std::map<std::string, std::string>, ErrorCount> stratum_counts(
    std::span<const ErrorRecord> records, std::span<const std::string> keys) {
  std::map<std::map<std::string, std::string>, ErrorCount> out;
  for (const auto& r : records) {
    std::map<std::string, std::string> key;
    for (const auto& k : keys) key[k] = r.attributes.at(k);
    out[key].add(r.error);
  }
  return out;
}

struct AnnotatedCohort {
  std::vector<PredictionRecord> predictions;
  std::vector<AnnotationRecord> annotations;
};

namespace fixtures {

inline constexpr std::uint64_t kSeed = 20211;

/// The SUGG error tree: view x RT-PCR strata, 80 / 400 errors overall.
inline CohortSpec error_tree_spec() {
  using L = ClassLabel;
  CohortSpec spec;
  spec.seed = kSeed;
  spec.task = Task::Sugg;
  spec.strata = {
      {{{"view", "PA"}, {"pcr", "NEG"}}, L::Normal, 22, 4},
      {{{"view", "PA"}, {"pcr", "UNK"}}, L::Other, 70, 8},
      {{{"view", "PA"}, {"pcr", "POS"}}, L::Classic, 30, 6},
      {{{"view", "AP"}, {"pcr", "NEG"}}, L::Indeterminate, 75, 19},
      {{{"view", "AP"}, {"pcr", "UNK"}}, L::Other, 48, 14},
      {{{"view", "AP"}, {"pcr", "POS"}}, L::Classic, 155, 29},
  };
  return spec;
}

/// Model SUGG errors by class x view (PCR drawn from the seed).
inline CohortSpec class_view_spec() {
  using L = ClassLabel;
  CohortSpec spec;
  spec.seed = kSeed + 1;
  spec.task = Task::Sugg;
  spec.strata = {
      {{{"view", "PA"}}, L::Normal, 61, 1},         {{{"view", "AP"}}, L::Normal, 39, 7},
      {{{"view", "PA"}}, L::Classic, 12, 1},        {{{"view", "AP"}}, L::Classic, 89, 6},
      {{{"view", "PA"}}, L::Indeterminate, 21, 13}, {{{"view", "AP"}}, L::Indeterminate, 77, 20},
      {{{"view", "PA"}}, L::Other, 28, 3},          {{{"view", "AP"}}, L::Other, 73, 29},
  };
  return spec;
}

/// Reader "ann1" SUGG disagreements with the reference, by class x view,
/// over the class_view_spec cohort (90 / 400 overall).
inline AnnotatedCohort reader_disagreement() {
  using L = ClassLabel;
  const std::map<std::pair<L, View>, std::size_t> disagreements = {
      {{L::Normal, View::PA}, 1},         {{L::Normal, View::AP}, 6},
      {{L::Classic, View::PA}, 1},        {{L::Classic, View::AP}, 17},
      {{L::Indeterminate, View::PA}, 11}, {{L::Indeterminate, View::AP}, 34},
      {{L::Other, View::PA}, 3},          {{L::Other, View::AP}, 17},
  };
  AnnotatedCohort out;
  out.predictions = generate(class_view_spec()).predictions;
  Rng rng(kSeed + 2);
  std::map<std::pair<L, View>, std::vector<const PredictionRecord*>> cells;
  for (const auto& r : out.predictions) cells[{r.label, r.view}].push_back(&r);
  for (auto& [cell, recs] : cells) {
    std::vector<bool> flip(recs.size(), false);
    for (std::size_t i = 0; i < disagreements.at(cell); ++i) flip[i] = true;
    rng.shuffle(flip);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      L label = recs[i]->label;
      if (flip[i]) {
        const bool sugg = label_branch_call(label, Branch::Sugg);
        const bool pick = rng.bernoulli(0.5);
        label = sugg ? (pick ? L::Normal : L::Other) : (pick ? L::Classic : L::Indeterminate);
      }
      out.annotations.push_back({recs[i]->image_id, "ann1", label, std::nullopt});
    }
  }
  return out;
}

struct BucketCount {
  std::size_t instances = 0;
  std::size_t errors = 0;
};

/// Per-pattern (instances, errors) reproducing the reference model error
/// rates versus reader agreement for one task, over 400 images.
inline std::map<AgreementPattern, BucketCount> agreement_buckets(Task task) {
  using P = AgreementPattern;
  switch (task) {
    case Task::Sugg: return {{P::Full, {263, 49}}, {P::Partial, {137, 31}}};
    case Task::ClassicVsIndet: return {{P::Full, {87, 17}}, {P::Partial, {112, 38}}};
    case Task::OtherVsNormal: return {{P::Full, {134, 22}}, {P::Partial, {67, 20}}};
    case Task::Multiclass: return {{P::Full, {201, 61}}, {P::Partial, {117, 56}}, {P::None, {82, 46}}};
  }
  return {};
}

namespace detail {

/// The held-out test set's class make-up: 100 / 101 / 98 / 101.
inline std::vector<ClassLabel> test_set_labels(Rng& rng) {
  std::vector<ClassLabel> labels;
  const std::array<std::size_t, 4> counts = {100, 101, 98, 101};
  for (std::size_t c = 0; c < 4; ++c) labels.insert(labels.end(), counts[c], static_cast<ClassLabel>(c));
  rng.shuffle(labels);
  return labels;
}

/// A label whose call on `task` differs from `label`'s.
inline ClassLabel opposite_call(ClassLabel label, Task task, Rng& rng) {
  using L = ClassLabel;
  const bool pick = rng.bernoulli(0.5);
  switch (task) {
    case Task::Sugg:
      return label_branch_call(label, Branch::Sugg) ? (pick ? L::Normal : L::Other)
                                                    : (pick ? L::Classic : L::Indeterminate);
    case Task::ClassicVsIndet: return label == L::Classic ? L::Indeterminate : L::Classic;
    case Task::OtherVsNormal: return label == L::Other ? L::Normal : L::Other;
    case Task::Multiclass: break;
  }
  return static_cast<L>((code(label) + 1 + static_cast<int>(rng.below(3))) % 4);
}

/// Three reader labels realizing `pattern` on `task`, odd reader at random.
inline std::array<ClassLabel, 3> panel_labels(ClassLabel label, Task task, AgreementPattern pattern,
                                              Rng& rng) {
  std::array<ClassLabel, 3> out = {label, label, label};
  if (pattern == AgreementPattern::Partial) {
    out[2] = opposite_call(label, task, rng);
  } else if (pattern == AgreementPattern::None) {
    const int first = (code(label) + 1 + static_cast<int>(rng.below(3))) % 4;
    int second = first;
    while (second == first || second == code(label)) second = static_cast<int>(rng.below(4));
    out[1] = static_cast<ClassLabel>(first);
    out[2] = static_cast<ClassLabel>(second);
  }
  std::vector<ClassLabel> v(out.begin(), out.end());
  rng.shuffle(v);
  return {v[0], v[1], v[2]};
}

inline const std::array<std::string, 3> kReaders = {"ann1", "ann2", "ann3"};

}  // namespace detail

/// 400 images read by three readers where the model's error rate per
/// agreement pattern on `task` reproduces agreement_buckets(task).
inline AnnotatedCohort agreement_cohort(Task task) {
  Rng rng(kSeed + 10 + static_cast<std::uint64_t>(task));
  const auto labels = detail::test_set_labels(rng);

  std::vector<std::pair<AgreementPattern, bool>> slots;
  for (const auto& [pattern, b] : agreement_buckets(task)) {
    slots.insert(slots.end(), b.errors, {pattern, true});
    slots.insert(slots.end(), b.instances - b.errors, {pattern, false});
  }
  rng.shuffle(slots);

  AnnotatedCohort out;
  std::size_t next_slot = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const ClassLabel label = labels[i];
    AgreementPattern pattern = AgreementPattern::Full;
    bool error = false;
    if (task_truth(label, task)) {
      if (next_slot >= slots.size()) throw std::logic_error("agreement buckets smaller than cohort");
      std::tie(pattern, error) = slots[next_slot++];
    }
    PredictionRecord rec;
    rec.image_id = cxrhier::detail::numbered("IMG", i);
    rec.patient_id = cxrhier::detail::numbered("PAT", i);
    rec.label = label;
    rec.view = rng.bernoulli(0.3) ? View::PA : View::AP;
    rec.pcr = static_cast<PcrStatus>(rng.below(3));
    rec.probs = synthesize_probabilities(label, task, error, rng);
    const auto panel = detail::panel_labels(label, task, pattern, rng);
    for (std::size_t a = 0; a < 3; ++a) {
      out.annotations.push_back({rec.image_id, detail::kReaders[a], panel[a], std::nullopt});
    }
    out.predictions.push_back(std::move(rec));
  }
  if (next_slot != slots.size()) throw std::logic_error("agreement buckets larger than cohort");
  return out;
}

inline constexpr std::size_t kSkippedImages = 9;
inline constexpr std::size_t kSlowImages = 11;

/// 400 images with timed readings: 9 skipped by one reader, 11 whose
/// average time exceeds 50 s, the rest between 5 and 45 s with agreement-
/// dependent durations. The model errs on the multi-class task at ~40%.
inline AnnotatedCohort labelling_time_cohort() {
  enum class Role { Normal, Skipped, Slow };
  Rng rng(kSeed + 20);
  const auto labels = detail::test_set_labels(rng);
  std::vector<Role> roles(labels.size(), Role::Normal);
  for (std::size_t i = 0; i < kSkippedImages; ++i) roles[i] = Role::Skipped;
  for (std::size_t i = 0; i < kSlowImages; ++i) roles[kSkippedImages + i] = Role::Slow;
  rng.shuffle(roles);

  AnnotatedCohort out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const ClassLabel label = labels[i];
    const double u = rng.uniform();
    const auto pattern = u < 0.5 ? AgreementPattern::Full
                                 : (u < 0.85 ? AgreementPattern::Partial : AgreementPattern::None);
    PredictionRecord rec;
    rec.image_id = cxrhier::detail::numbered("IMG", i);
    rec.patient_id = cxrhier::detail::numbered("PAT", i);
    rec.label = label;
    rec.view = rng.bernoulli(0.3) ? View::PA : View::AP;
    rec.pcr = static_cast<PcrStatus>(rng.below(3));
    rec.probs = synthesize_probabilities(label, Task::Multiclass, rng.bernoulli(0.4), rng);

    double base = 0.0;
    switch (pattern) {
      case AgreementPattern::Full: base = rng.uniform(5.0, 20.0); break;
      case AgreementPattern::Partial: base = rng.uniform(10.0, 30.0); break;
      case AgreementPattern::None: base = rng.uniform(15.0, 34.0); break;
    }
    if (roles[i] == Role::Slow) base = rng.uniform(75.0, 120.0);  // * 0.7 stays above 50
    const auto panel = detail::panel_labels(label, Task::Multiclass, pattern, rng);
    const std::size_t skipped = roles[i] == Role::Skipped ? rng.below(3) : 3;
    for (std::size_t a = 0; a < 3; ++a) {
      const double duration = base * rng.uniform(0.7, 1.3);
      if (a == skipped) continue;
      out.annotations.push_back({rec.image_id, detail::kReaders[a], panel[a], duration});
    }
    out.predictions.push_back(std::move(rec));
  }
  return out;
}

}  // namespace fixtures
}  // namespace cxrhier
