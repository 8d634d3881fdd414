#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <string>

#include "cxrhier/io.hpp"

using namespace cxrhier;
namespace fs = std::filesystem;

namespace {

std::vector<PredictionRecord> parse(const std::string& text) {
  std::istringstream in(text);
  return io::parse_predictions(in);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

const std::string kHeader = "image_id,patient_id,fold,p_normal,p_classic,p_indet,p_other,label,view,pcr\n";

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("cxrhier_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Csv, QuotingAndLineNumbers) {
  std::istringstream in("a,b\n\"x,1\",\"say \"\"hi\"\"\"\n\n\"multi\nline\",2\nlast,3");
  const auto t = io::parse_csv(in);
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[0][0], "x,1");
  EXPECT_EQ(t.rows[0][1], "say \"hi\"");
  EXPECT_EQ(t.rows[1][0], "multi\nline");
  EXPECT_EQ(t.line_numbers[0], 2u);
  EXPECT_EQ(t.line_numbers[2], 6u);
  EXPECT_EQ(io::csv_field("a,b"), "\"a,b\"");

  std::istringstream ragged("a,b\n1\n");
  EXPECT_THROW(io::parse_csv(ragged), ValidationError);
  std::istringstream open("a\n\"never closed\n");
  EXPECT_THROW(io::parse_csv(open), ValidationError);
}

TEST(Predictions, ThreeRows) {
  const auto recs = parse(kHeader +
                          "i1,p1,,0.1,0.5,0.2,0.2,CLASSIC,AP,POS\n"
                          "i2,p1,,0.7,0.1,0.1,0.1,normal,PA,NEG\n"
                          "i3,p2,,0.25,0.25,0.25,0.25,Other,AP,UNK\n");
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].label, ClassLabel::Classic);
  EXPECT_EQ(recs[1].view, View::PA);
  EXPECT_EQ(recs[2].pcr, PcrStatus::Unk);
  EXPECT_FALSE(recs[0].fold.has_value());
  EXPECT_NEAR(aggregate(recs[0].probs).sugg, 0.7, 1e-15);
}

TEST(Predictions, ErrorsNameTheLine) {
  const auto bad_sum = error_of(kHeader + "i1,p1,,0.1,0.5,0.2,0.2,CLASSIC,AP,POS\ni2,p1,,0.2,0.2,0.2,0.2,NORMAL,PA,NEG\n");
  EXPECT_NE(bad_sum.find("line 3"), std::string::npos) << bad_sum;
  EXPECT_NE(error_of(kHeader + "i1,p1,,0.1,x,0.2,0.2,CLASSIC,AP,POS\n").find("p_classic"), std::string::npos);
  EXPECT_NE(error_of(kHeader + "i1,p1,,0.1,0.5,0.2,0.2,COVID,AP,POS\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of(kHeader + "i1,p1,,0.1,0.5,0.2,0.2,CLASSIC,LL,POS\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("image_id,patient_id\ni1,p1\n").find("p_normal"), std::string::npos);
  EXPECT_NE(error_of(kHeader + "i1,p1,,0.1,0.5,0.2,0.2,CLASSIC,AP,POS\ni1,p1,,0.1,0.5,0.2,0.2,CLASSIC,AP,POS\n")
                .find("duplicate"),
            std::string::npos);
}

TEST(Predictions, FoldRowsAreEnsembled) {
  std::string text = kHeader;
  for (int f = 0; f < 5; ++f) {
    text += "i1,p1," + std::to_string(f) + ",0.1,0." + std::to_string(5 + (f % 2)) + ",0." +
            std::to_string(2 - (f % 2)) + ",0.2,CLASSIC,AP,POS\n";
    text += "i2,p2," + std::to_string(f) + ",0.6,0.1,0.1,0.2,NORMAL,PA,NEG\n";
  }
  const auto recs = parse(text);
  EXPECT_EQ(recs.size(), 10u);
  const auto groups = io::group_by_image(recs);
  EXPECT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups.at("i1").size(), 5u);
  const auto ens = io::ensemble_records(recs);
  ASSERT_EQ(ens.size(), 2u);
  EXPECT_NEAR(ens[0].probs[ClassLabel::Classic], 0.54, 1e-12);
  EXPECT_NEAR(ens[0].probs[ClassLabel::Indeterminate], 0.16, 1e-12);
  EXPECT_FALSE(ens[0].fold.has_value());

  text += "i2,p9,5,0.6,0.1,0.1,0.2,NORMAL,PA,NEG\n";
  EXPECT_THROW(io::ensemble_records(parse(text)), ValidationError);
}

TEST(Predictions, SerializeRoundTrip) {
  Rng rng(8);
  std::vector<PredictionRecord> recs;
  for (int i = 0; i < 200; ++i) {
    std::array<double, 4> p{};
    double s = 0;
    for (auto& v : p) s += (v = rng.uniform());
    for (auto& v : p) v /= s;
    PredictionRecord r;
    r.image_id = "img," + std::to_string(i);
    r.patient_id = "pat\"" + std::to_string(i / 3);
    if (i % 2) r.fold = i % 5;
    r.probs = ClassProbabilities::from(p);
    r.label = static_cast<ClassLabel>(rng.below(4));
    r.view = rng.bernoulli(0.5) ? View::PA : View::AP;
    r.pcr = static_cast<PcrStatus>(rng.below(3));
    recs.push_back(r);
  }
  const std::string csv = io::predictions_to_csv(recs);
  const auto back = parse(csv);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].image_id, recs[i].image_id);
    EXPECT_EQ(back[i].fold, recs[i].fold);
    EXPECT_EQ(back[i].probs, recs[i].probs);
    EXPECT_EQ(back[i].label, recs[i].label);
  }
  EXPECT_EQ(io::predictions_to_csv(back), csv);
}

TEST(Annotations, ParseAndRoundTrip) {
  std::istringstream in(
      "image_id,annotator_id,label,duration_seconds\n"
      "i1,a,CLASSIC,12.5\n"
      "i1,b,INDET,\n");
  const auto anns = io::parse_annotations(in);
  ASSERT_EQ(anns.size(), 2u);
  EXPECT_EQ(anns[0].duration_seconds, 12.5);
  EXPECT_FALSE(anns[1].duration_seconds.has_value());
  std::istringstream again(io::annotations_to_csv(anns));
  EXPECT_EQ(io::parse_annotations(again), anns);

  std::istringstream neg("image_id,annotator_id,label,duration_seconds\ni1,a,CLASSIC,-1\n");
  EXPECT_THROW(io::parse_annotations(neg), ValidationError);
  std::istringstream dup("image_id,annotator_id,label\ni1,a,CLASSIC\ni1,a,OTHER\n");
  EXPECT_THROW(io::parse_annotations(dup), ValidationError);
}

TEST(Folds, RoundTrip) {
  FoldAssignment f;
  f.k = 3;
  f.fold_of_patient = {{"p1", 0}, {"p2", 2}, {"p,3", 1}};
  std::istringstream in(io::folds_to_csv(f));
  EXPECT_EQ(io::parse_folds(in), f);
  std::istringstream twice("patient_id,fold\np1,0\np1,1\n");
  EXPECT_THROW(io::parse_folds(twice), ValidationError);
}

TEST(CohortSpecJson, RoundTripAndErrors) {
  const auto spec = fixtures::error_tree_spec();
  EXPECT_EQ(io::parse_cohort_spec(io::to_json(spec)), spec);
  const auto j = io::json::parse(R"({"seed": 3, "strata": [{"attributes": {"view": "PA"}, "label": "OTHER",
                                     "instances": 5, "errors": 1}]})");
  const auto s = io::parse_cohort_spec(j);
  EXPECT_EQ(s.seed, 3u);
  EXPECT_EQ(s.task, Task::Sugg);
  EXPECT_EQ(s.schema, AttributeSchema::builtin());
  EXPECT_THROW(io::parse_cohort_spec(io::json::parse(R"({"strata": [{"label": "OTHER"}]})")), ValidationError);
}

TEST(Files, AtomicWriteAndLoad) {
  TempDir dir;
  const auto path = dir.path / "preds.csv";
  const auto recs = generate(fixtures::error_tree_spec()).predictions;
  io::write_file_atomic(path, io::predictions_to_csv(recs));
  EXPECT_FALSE(fs::exists(path.string() + ".tmp"));
  EXPECT_EQ(io::load_predictions(path).size(), 400u);
  io::write_file_atomic(path, "replaced");
  EXPECT_EQ(io::read_file(path), "replaced");
  EXPECT_THROW(io::load_predictions(dir.path / "missing.csv"), ValidationError);
  EXPECT_THROW(io::write_file_atomic(dir.path / "no" / "such" / "dir.csv", "x"), ValidationError);
}

TEST(Reports, JsonShapes) {
  const auto tree = build_error_tree(generate(fixtures::error_tree_spec()).errors, AttributeSchema::builtin());
  const auto j = io::to_json(tree);
  EXPECT_EQ(j.at("errors"), 80);
  EXPECT_EQ(j.at("instances"), 400);
  EXPECT_EQ(j.at("split_attribute"), "view");
  EXPECT_EQ(j.at("children").size(), 2u);
  EXPECT_EQ(io::to_json(ErrorCount{0, 0}).at("rate"), nullptr);
}
