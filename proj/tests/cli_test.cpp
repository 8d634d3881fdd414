#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "cli_runner.hpp"
#include "json.hpp"

using nlohmann::json;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    box = std::make_unique<cli::Sandbox>(::testing::UnitTest::GetInstance()->current_test_info()->name());
    ASSERT_EQ(box->run("synth --fixture error-tree --out tree.csv").code, 0);
    ASSERT_EQ(box->run("synth --fixture agreement-multiclass --out agree.csv --annotations-out agree_ann.csv").code, 0);
    ASSERT_EQ(box->run("synth --fixture labelling-time --out time.csv --annotations-out time_ann.csv").code, 0);
  }

  std::unique_ptr<cli::Sandbox> box;
};

const std::string kHeader = "image_id,patient_id,fold,p_normal,p_classic,p_indet,p_other,label,view,pcr\n";

}  // namespace

TEST_F(Cli, MetricsReportsSuggAccuracy) {
  const auto r = box->run("metrics -p tree.csv --threshold 0.5");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("schema_version"), 1);
  EXPECT_EQ(j.at("command"), "metrics");
  EXPECT_EQ(j.at("result").at("tasks").at("SUGG").at("accuracy").get<double>(), 0.8);
  EXPECT_EQ(j.at("result").at("tasks").at("SUGG").at("n"), 400);
  const auto& input = j.at("inputs").at(0);
  EXPECT_EQ(input.at("sha256").get<std::string>().size(), 64u);
}

TEST_F(Cli, InputDigestMatchesSha256sum) {
  const auto r = box->run("aggregate -p tree.csv --format json");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string cmd = "sha256sum '" + box->path("tree.csv") + "' > '" + box->path("digest.txt") + "'";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  const std::string expected = box->read("digest.txt").substr(0, 64);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("inputs").at(0).at("sha256"), expected);
  EXPECT_EQ(j.at("inputs").at(0).at("path"), "tree.csv");
  EXPECT_EQ(j.at("result").size(), 400u);
}

TEST_F(Cli, ErrorTreeDotAndJson) {
  const auto dot = box->run("error-tree -p tree.csv");
  ASSERT_EQ(dot.code, 0) << dot.err;
  EXPECT_EQ(dot.out.rfind("digraph error_tree {", 0), 0u);
  EXPECT_NE(dot.out.find("80 / 400 (20.0%)"), std::string::npos);
  const auto j = json::parse(box->run("error-tree -p tree.csv --format json").out);
  EXPECT_EQ(j.at("result").at("tree").at("split_attribute"), "view");
  EXPECT_EQ(j.at("result").at("dot").get<std::string>(), dot.out);
  const auto shallow = json::parse(box->run("error-tree -p tree.csv --format json --max-depth 1").out);
  for (const auto& c : shallow.at("result").at("tree").at("children")) EXPECT_TRUE(c.at("children").empty());
}

TEST_F(Cli, StratifyFormats) {
  const auto md = box->run("stratify -p tree.csv --rows view --cols pcr");
  ASSERT_EQ(md.code, 0) << md.err;
  EXPECT_NE(md.out.find("19 / 75 (25.3%)"), std::string::npos);
  const auto csv = box->run("stratify -p tree.csv --rows view --cols pcr --format csv");
  EXPECT_NE(csv.out.find("AP,NEG,19,75,25.3"), std::string::npos);
  EXPECT_NE(box->run("stratify -p tree.csv --rows view --cols age").code, 0);
}

TEST_F(Cli, IovReport) {
  const auto r = box->run("iov -p agree.csv -a agree_ann.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  const auto& mc = j.at("result").at("model_error_by_agreement").at("MULTICLASS").at("buckets");
  EXPECT_EQ(mc.at("3").at("errors"), 61);
  EXPECT_EQ(mc.at("3").at("instances"), 201);
  EXPECT_EQ(mc.at("1:1:1").at("errors"), 46);
  EXPECT_EQ(j.at("inputs").size(), 2u);
  EXPECT_TRUE(j.at("result").at("labelling_time").is_null());

  const auto t = json::parse(box->run("iov -p time.csv -a time_ann.csv").out);
  EXPECT_EQ(t.at("result").at("labelling_time").at("retained"), 380);
  const auto csv = box->run("iov -p time.csv -a time_ann.csv --format csv");
  EXPECT_EQ(csv.out.rfind("bucket,n,min,q1,median,q3,max,mean\n", 0), 0u);
}

TEST_F(Cli, SplitAndEnsemble) {
  ASSERT_EQ(box->run("split -p tree.csv --k 5 --seed 7 --out folds.csv").code, 0);
  const std::string folds = box->read("folds.csv");
  EXPECT_EQ(folds.rfind("patient_id,fold\n", 0), 0u);
  ASSERT_EQ(box->run("split -p tree.csv --k 5 --seed 7 --out folds2.csv").code, 0);
  EXPECT_EQ(box->read("folds2.csv"), folds);
  EXPECT_NE(box->run("split -p tree.csv --k 1").code, 0);

  std::string multi = kHeader;
  for (int f = 0; f < 5; ++f) {
    multi += "i1,p1," + std::to_string(f) + ",0.1,0.6,0.2,0.1,CLASSIC,AP,POS\n";
    multi += "i2,p2," + std::to_string(f) + ",0.7,0.1,0.1,0.1,NORMAL,PA,NEG\n";
  }
  box->write("multi.csv", multi);
  const auto e = box->run("ensemble -p multi.csv");
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(e.out, kHeader + "i1,p1,,0.1,0.6,0.2,0.1,CLASSIC,AP,POS\ni2,p2,,0.7,0.1,0.1,0.1,NORMAL,PA,NEG\n");
  // Multi-fold input goes through the same averaging everywhere.
  const auto m = json::parse(box->run("metrics -p multi.csv").out);
  EXPECT_EQ(m.at("result").at("n_images"), 2);
}

TEST_F(Cli, SynthFromSpec) {
  box->write("spec.json", R"({"seed": 4, "task": "SUGG", "strata": [
    {"attributes": {"view": "PA", "pcr": "POS"}, "label": "CLASSIC", "instances": 30, "errors": 3},
    {"attributes": {"view": "AP"}, "label": "NORMAL", "instances": 20, "errors": 5}]})");
  ASSERT_EQ(box->run("synth --spec spec.json --out s1.csv").code, 0);
  ASSERT_EQ(box->run("synth --spec spec.json --out s2.csv").code, 0);
  EXPECT_EQ(box->read("s1.csv"), box->read("s2.csv"));
  ASSERT_EQ(box->run("synth --spec spec.json --seed 5 --out s3.csv").code, 0);
  EXPECT_NE(box->read("s1.csv"), box->read("s3.csv"));
  const auto j = json::parse(box->run("metrics -p s1.csv").out);
  EXPECT_EQ(j.at("result").at("tasks").at("SUGG").at("accuracy").get<double>(), 42.0 / 50.0);

  box->write("bad_spec.json", R"({"strata": [{"label": "CLASSIC", "instances": 3, "errors": 4}]})");
  const auto bad = box->run("synth --spec bad_spec.json --out s4.csv");
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.err.find("infeasible"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(box->path("s4.csv")));
}

TEST_F(Cli, DegenerateBranchIsReportedNotFatal) {
  box->write("one.csv", kHeader +
                            "i1,p1,,0.1,0.6,0.2,0.1,CLASSIC,AP,POS\n"
                            "i2,p2,,0.1,0.6,0.2,0.1,CLASSIC,PA,NEG\n");
  const auto r = box->run("metrics -p one.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("result").at("tasks").at("SUGG").at("status"), "undefined");
  EXPECT_EQ(j.at("result").at("tasks").at("MULTICLASS").at("accuracy").get<double>(), 1.0);
}

TEST_F(Cli, UsageAndValidationErrors) {
  const auto none = box->run("");
  EXPECT_NE(none.code, 0);
  const auto unknown = box->run("frobnicate");
  EXPECT_NE(unknown.code, 0);
  EXPECT_NE((unknown.out + unknown.err).find("frobnicate"), std::string::npos);
  EXPECT_NE(box->run("metrics -p tree.csv --bogus").code, 0);
  EXPECT_NE(box->run("metrics -p missing.csv").code, 0);
  EXPECT_NE(box->run("metrics -p tree.csv --format dot").code, 0);

  box->write("bad.csv", kHeader + "i1,p1,,0.2,0.2,0.2,0.2,CLASSIC,AP,POS\n");
  const auto bad = box->run("metrics -p bad.csv --out report.json");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("line 2"), std::string::npos) << bad.err;
  EXPECT_FALSE(std::filesystem::exists(box->path("report.json")));
  EXPECT_FALSE(std::filesystem::exists(box->path("report.json.tmp")));
}

TEST_F(Cli, EverySubcommandIsByteDeterministic) {
  const std::vector<std::string> commands = {
      "aggregate -p tree.csv",
      "aggregate -p tree.csv --format json",
      "metrics -p agree.csv -a agree_ann.csv",
      "metrics -p tree.csv --format md",
      "error-tree -p tree.csv",
      "error-tree -p tree.csv --format json --with-class --max-depth 3 --min-leaf 5",
      "stratify -p tree.csv --format json",
      "stratify -p agree.csv -a agree_ann.csv --annotator ann2 --format csv",
      "iov -p time.csv -a time_ann.csv",
      "split -p tree.csv --k 5 --seed 3",
      "ensemble -p tree.csv",
      "synth --fixture class-view",
      "synth --fixture reader-disagreement",
  };
  for (const auto& c : commands) {
    const auto a = box->run(c);
    const auto b = box->run(c);
    ASSERT_EQ(a.code, 0) << c << "\n" << a.err;
    EXPECT_FALSE(a.out.empty()) << c;
    EXPECT_EQ(a.out, b.out) << c;
  }
}

TEST_F(Cli, ThreadCountDoesNotChangeOutput) {
  for (const std::string extra : {"", " --format json", " --with-class --max-depth 3 --min-leaf 1"}) {
    const auto one = box->run("error-tree -p agree.csv --task MULTICLASS --threads 1" + extra);
    const auto four = box->run("error-tree -p agree.csv --task MULTICLASS --threads 4" + extra);
    ASSERT_EQ(one.code, 0) << one.err;
    EXPECT_EQ(one.out, four.out) << extra;
  }
}
