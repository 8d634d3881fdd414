// cxrhier: command-line front end for the hierarchical triage evaluation
// library. One analysis per invocation; output goes to --out (written
// atomically) or stdout.

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cxrhier/cxrhier.hpp"
#include "cxrhier/io.hpp"

namespace fs = std::filesystem;
using namespace cxrhier;
using io::json;

namespace {

constexpr int kSchemaVersion = 1;
constexpr const char* kToolVersion = "1.0.0";

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

// Inputs read through here end up in the report's digest list.
struct Inputs {
  json digests = json::array();

  std::string read(const std::string& role, const std::string& path) {
    std::string text = io::read_file(path);
    digests.push_back({{"role", role}, {"path", path}, {"sha256", sha256_hex(text)}});
    return text;
  }

  std::vector<PredictionRecord> predictions(const std::string& path) {
    std::istringstream in(read("predictions", path));
    try {
      return io::ensemble_records(io::parse_predictions(in));
    } catch (const ValidationError& e) {
      throw ValidationError(path + ": " + e.what());
    }
  }

  std::vector<AnnotationRecord> annotations(const std::string& path) {
    std::istringstream in(read("annotations", path));
    try {
      return io::parse_annotations(in);
    } catch (const ValidationError& e) {
      throw ValidationError(path + ": " + e.what());
    }
  }
};

json envelope(const std::string& command, const Inputs& inputs, json parameters, json result) {
  return {{"schema_version", kSchemaVersion},
          {"tool", "cxrhier"},
          {"version", kToolVersion},
          {"command", command},
          {"inputs", inputs.digests},
          {"parameters", std::move(parameters)},
          {"result", std::move(result)}};
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text;
    std::cout.flush();
  } else {
    io::write_file_atomic(out, text);
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

struct Thresholds {
  double global = kDefaultThreshold;
  std::optional<double> sugg, cvi, ovn;

  double of(Branch b) const {
    switch (b) {
      case Branch::Sugg: return sugg.value_or(global);
      case Branch::ClassicVsIndet: return cvi.value_or(global);
      case Branch::OtherVsNormal: return ovn.value_or(global);
    }
    return global;
  }
  double of(Task t) const {
    const auto b = as_branch(t);
    return b ? of(*b) : global;
  }
  json to_json() const {
    json j = json::object();
    for (Branch b : kAllBranches) j[std::string(to_string(b))] = of(b);
    return j;
  }
};

void add_threshold_options(CLI::App* cmd, Thresholds& t) {
  cmd->add_option("--threshold", t.global, "decision threshold for every branch")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd->add_option("--threshold-sugg", t.sugg, "SUGG threshold override")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--threshold-cvi", t.cvi, "CLASSIC_VS_INDET threshold override")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--threshold-ovn", t.ovn, "OTHER_VS_NORMAL threshold override")->check(CLI::Range(0.0, 1.0));
}

Task task_option(const std::string& s) { return parse_task(s); }

std::string optional_csv(const std::optional<double>& v) { return v ? io::format_double(*v) : ""; }

AttributeSchema analysis_schema(bool with_class) {
  auto schema = AttributeSchema::builtin();
  return with_class ? schema.with(AttributeSchema::class_attribute()) : schema;
}

std::vector<ErrorRecord> error_records(Inputs& inputs, const std::string& predictions,
                                       const std::string& annotations, const std::string& annotator,
                                       Task task, double threshold, double epsilon) {
  const auto preds = inputs.predictions(predictions);
  if (annotator.empty()) return model_error_records(preds, task, threshold, epsilon);
  if (annotations.empty()) throw ValidationError("--annotator needs --annotations");
  const auto anns = inputs.annotations(annotations);
  return annotator_error_records(anns, preds, annotator, task);
}

// ------------------------------------------------------------ commands ----

struct Common {
  std::string predictions;
  std::string annotations;
  std::string out;
  std::string format;
  double epsilon = kDefaultEpsilon;
  Thresholds thresholds;
};

void run_aggregate(const Common& c) {
  Inputs inputs;
  const auto preds = inputs.predictions(c.predictions);
  if (c.format == "json") {
    json rows = json::array();
    for (const auto& r : preds) {
      const auto bp = aggregate(r.probs, c.epsilon);
      rows.push_back({{"image_id", r.image_id},
                      {"p_sugg", bp.sugg},
                      {"p_classic_given_sugg", io::optional_number(bp.classic_given_sugg)},
                      {"p_other_given_not_sugg", io::optional_number(bp.other_given_not_sugg)}});
    }
    emit(c.out, dump(envelope("aggregate", inputs, {{"epsilon", c.epsilon}}, rows)));
    return;
  }
  std::ostringstream csv;
  csv << "image_id,p_sugg,p_classic_given_sugg,p_other_given_not_sugg\n";
  for (const auto& r : preds) {
    const auto bp = aggregate(r.probs, c.epsilon);
    csv << io::csv_field(r.image_id) << ',' << io::format_double(bp.sugg) << ','
        << optional_csv(bp.classic_given_sugg) << ',' << optional_csv(bp.other_given_not_sugg) << '\n';
  }
  emit(c.out, csv.str());
}

void run_metrics(const Common& c, const std::string& curves_dir) {
  Inputs inputs;
  const auto preds = inputs.predictions(c.predictions);
  json tasks = json::object();
  std::map<std::string, std::string> curve_files;
  for (Branch b : kAllBranches) {
    const std::string name(to_string(b));
    try {
      json j = io::to_json(branch_report(preds, b, c.thresholds.of(b), c.epsilon));
      j["status"] = "ok";
      tasks[name] = j;
      if (!curves_dir.empty()) {
        const auto s = branch_samples(preds, b, c.epsilon).samples;
        curve_files[name + "_roc.csv"] = io::roc_to_csv(roc_curve(s));
        curve_files[name + "_pr.csv"] = io::pr_to_csv(pr_curve(s));
      }
    } catch (const ValidationError& e) {
      // A degenerate branch (one class only, or nothing applicable) does not
      // fail the run.
      tasks[name] = {{"status", "undefined"}, {"reason", e.what()}};
    }
  }
  json mc = io::to_json(multiclass_report(preds));
  mc["status"] = "ok";
  tasks[std::string(to_string(Task::Multiclass))] = mc;

  json result = {{"n_images", preds.size()}, {"tasks", tasks}};
  if (!c.annotations.empty()) {
    const auto anns = inputs.annotations(c.annotations);
    const AnnotationIndex index(anns);
    json readers = json::object();
    for (const auto& a : index.panel()) readers[a] = io::to_json(annotator_report(anns, preds, a));
    result["annotators"] = readers;
    json kappa = json::object();
    for (Task t : kAllTasks) {
      try {
        kappa[std::string(to_string(t))] = fleiss_kappa(rating_table(anns, preds, t));
      } catch (const ValidationError& e) {
        kappa[std::string(to_string(t))] = {{"status", "undefined"}, {"reason", e.what()}};
      }
    }
    result["fleiss_kappa"] = kappa;
  }

  if (!curves_dir.empty()) {
    fs::create_directories(curves_dir);
    for (const auto& [file, text] : curve_files) io::write_file_atomic(fs::path(curves_dir) / file, text);
  }

  if (c.format == "md") {
    std::ostringstream md;
    md << "| task | n | accuracy | ROC AUC | PR AUC |\n|---|---|---|---|---|\n";
    char buf[128];
    for (Task t : kAllTasks) {
      const auto& j = tasks.at(std::string(to_string(t)));
      if (j.at("status") != "ok") {
        md << "| " << to_string(t) << " | | undefined | | |\n";
        continue;
      }
      if (t == Task::Multiclass) {
        std::snprintf(buf, sizeof buf, "| %s | %zu | %.3f | | |\n", "MULTICLASS", j.at("n").get<std::size_t>(),
                      j.at("accuracy").get<double>());
      } else {
        std::snprintf(buf, sizeof buf, "| %s | %zu | %.3f | %.3f | %.3f |\n", std::string(to_string(t)).c_str(),
                      j.at("n").get<std::size_t>(), j.at("accuracy").get<double>(),
                      j.at("roc_auc").get<double>(), j.at("pr_auc").get<double>());
      }
      md << buf;
    }
    emit(c.out, md.str());
    return;
  }
  json params = {{"epsilon", c.epsilon}, {"thresholds", c.thresholds.to_json()}};
  emit(c.out, dump(envelope("metrics", inputs, params, result)));
}

struct TreeArgs {
  std::string task = "SUGG";
  std::string annotator;
  int max_depth = 2;
  std::size_t min_leaf = 20;
  unsigned threads = 1;
  bool with_class = false;
};

void run_error_tree(const Common& c, const TreeArgs& t) {
  Inputs inputs;
  const Task task = task_option(t.task);
  const auto recs = error_records(inputs, c.predictions, c.annotations, t.annotator, task,
                                  c.thresholds.of(task), c.epsilon);
  const auto schema = analysis_schema(t.with_class);
  const auto tree = build_error_tree(recs, schema, {t.max_depth, t.min_leaf, t.threads});
  const std::string dot = emit_tree_dot(tree);
  if (c.format == "dot") {
    emit(c.out, dot);
    return;
  }
  json params = {{"task", to_string(task)},
                 {"threshold", c.thresholds.of(task)},
                 {"epsilon", c.epsilon},
                 {"max_depth", t.max_depth},
                 {"min_leaf", t.min_leaf},
                 {"with_class", t.with_class},
                 {"annotator", t.annotator.empty() ? json(nullptr) : json(t.annotator)}};
  json result = {{"tree", io::to_json(tree)}, {"dot", dot}};
  emit(c.out, dump(envelope("error-tree", inputs, params, result)));
}

struct StratifyArgs {
  std::string task = "SUGG";
  std::string annotator;
  std::string rows = "class";
  std::string cols = "view";
};

void run_stratify(const Common& c, const StratifyArgs& s) {
  Inputs inputs;
  const Task task = task_option(s.task);
  const auto recs = error_records(inputs, c.predictions, c.annotations, s.annotator, task,
                                  c.thresholds.of(task), c.epsilon);
  const auto table = stratify_errors(recs, analysis_schema(true), s.rows, s.cols);
  if (c.format == "md") return emit(c.out, table_to_markdown(table));
  if (c.format == "csv") return emit(c.out, table_to_csv(table));
  json params = {{"task", to_string(task)},
                 {"threshold", c.thresholds.of(task)},
                 {"epsilon", c.epsilon},
                 {"rows", s.rows},
                 {"cols", s.cols},
                 {"annotator", s.annotator.empty() ? json(nullptr) : json(s.annotator)}};
  emit(c.out, dump(envelope("stratify", inputs, params, io::to_json(table))));
}

void run_iov(const Common& c, double time_threshold) {
  Inputs inputs;
  const auto preds = inputs.predictions(c.predictions);
  if (c.annotations.empty()) throw ValidationError("iov needs --annotations");
  const auto anns = inputs.annotations(c.annotations);
  const bool timed = std::any_of(anns.begin(), anns.end(), [](const auto& a) { return a.duration_seconds.has_value(); });

  if (c.format == "csv") {
    if (!timed) throw ValidationError("no durations recorded; csv output is the time summary");
    return emit(c.out, io::time_summary_csv(time_by_agreement(anns, time_threshold)));
  }
  json agreement = json::object();
  json kappa = json::object();
  for (Task t : kAllTasks) {
    const std::string name(to_string(t));
    agreement[name] = io::to_json(error_by_agreement(preds, anns, t, c.thresholds.of(t), c.epsilon));
    try {
      kappa[name] = fleiss_kappa(rating_table(anns, preds, t));
    } catch (const ValidationError& e) {
      kappa[name] = {{"status", "undefined"}, {"reason", e.what()}};
    }
  }
  json readers = json::object();
  const AnnotationIndex index(anns);
  for (const auto& a : index.panel()) readers[a] = io::to_json(annotator_report(anns, preds, a));
  json result = {{"model_error_by_agreement", agreement}, {"fleiss_kappa", kappa}, {"annotators", readers}};
  result["labelling_time"] = timed ? io::to_json(time_by_agreement(anns, time_threshold)) : json(nullptr);
  json params = {{"epsilon", c.epsilon}, {"thresholds", c.thresholds.to_json()}, {"time_threshold", time_threshold}};
  emit(c.out, dump(envelope("iov", inputs, params, result)));
}

void run_split(const Common& c, int k, std::uint64_t seed) {
  Inputs inputs;
  std::istringstream in(inputs.read("predictions", c.predictions));
  // Fold rows of an already-split file are collapsed to one per image.
  const auto preds = io::ensemble_records(io::parse_predictions(in));
  const auto folds = stratified_group_kfold(preds, k, seed);
  if (c.format == "json") {
    json assignment = json::object();
    for (const auto& [p, f] : folds.fold_of_patient) assignment[p] = f;
    return emit(c.out, dump(envelope("split", inputs, {{"k", k}, {"seed", seed}}, {{"folds", assignment}})));
  }
  emit(c.out, io::folds_to_csv(folds));
}

void run_ensemble(const Common& c) {
  Inputs inputs;
  emit(c.out, io::predictions_to_csv(inputs.predictions(c.predictions)));
}

struct SynthArgs {
  std::string spec;
  std::string fixture;
  std::optional<std::uint64_t> seed;
  std::string annotations_out;
  std::string spec_out;
};

const std::vector<std::string> kFixtures = {
    "error-tree", "class-view", "reader-disagreement", "agreement-sugg",
    "agreement-cvi", "agreement-ovn", "agreement-multiclass", "labelling-time"};

void run_synth(const Common& c, const SynthArgs& s) {
  if (s.spec.empty() == s.fixture.empty()) throw ValidationError("synth needs exactly one of --spec, --fixture");
  std::vector<PredictionRecord> preds;
  std::vector<AnnotationRecord> anns;
  std::optional<CohortSpec> spec;
  if (!s.spec.empty()) {
    spec = io::load_cohort_spec(s.spec);
  } else if (s.fixture == "error-tree") {
    spec = fixtures::error_tree_spec();
  } else if (s.fixture == "class-view") {
    spec = fixtures::class_view_spec();
  } else if (s.fixture == "reader-disagreement") {
    auto a = fixtures::reader_disagreement();
    preds = std::move(a.predictions);
    anns = std::move(a.annotations);
  } else if (s.fixture == "labelling-time") {
    auto a = fixtures::labelling_time_cohort();
    preds = std::move(a.predictions);
    anns = std::move(a.annotations);
  } else if (s.fixture.rfind("agreement-", 0) == 0) {
    const std::map<std::string, Task> tasks = {{"agreement-sugg", Task::Sugg},
                                               {"agreement-cvi", Task::ClassicVsIndet},
                                               {"agreement-ovn", Task::OtherVsNormal},
                                               {"agreement-multiclass", Task::Multiclass}};
    const auto it = tasks.find(s.fixture);
    if (it == tasks.end()) throw ValidationError("unknown fixture '" + s.fixture + "'");
    auto a = fixtures::agreement_cohort(it->second);
    preds = std::move(a.predictions);
    anns = std::move(a.annotations);
  } else {
    throw ValidationError("unknown fixture '" + s.fixture + "'");
  }
  if (spec) {
    if (s.seed) spec->seed = *s.seed;
    preds = generate(*spec).predictions;
  } else if (s.seed) {
    throw ValidationError("--seed applies to spec-driven cohorts only");
  }
  if (!s.annotations_out.empty() && anns.empty()) {
    throw ValidationError("this cohort has no annotations to write");
  }
  if (!s.spec_out.empty() && !spec) throw ValidationError("this fixture is not spec-driven");

  // Everything is computed before the first file lands.
  if (!s.annotations_out.empty()) io::write_file_atomic(s.annotations_out, io::annotations_to_csv(anns));
  if (!s.spec_out.empty()) io::write_file_atomic(s.spec_out, dump(io::to_json(*spec)));
  emit(c.out, io::predictions_to_csv(preds));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical evaluation of four-class chest radiograph triage predictions", "cxrhier"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  Common common;
  std::map<std::string, std::string> format_of;  // per subcommand
  const auto add_io = [&](CLI::App* cmd, bool needs_predictions, std::vector<std::string> formats,
                          std::string default_format) {
    auto* p = cmd->add_option("--predictions,-p", common.predictions, "predictions CSV")->check(CLI::ExistingFile);
    if (needs_predictions) p->required();
    cmd->add_option("--out,-o", common.out, "output file (default stdout)");
    auto& format = format_of[cmd->get_name()] = default_format;
    cmd->add_option("--format", format, "output format")
        ->check(CLI::IsMember(formats))
        ->capture_default_str();
  };
  const auto add_epsilon = [&](CLI::App* cmd) {
    cmd->add_option("--epsilon", common.epsilon, "smallest denominator for a defined conditional")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
  };
  const auto add_annotations = [&](CLI::App* cmd, bool required) {
    auto* o = cmd->add_option("--annotations,-a", common.annotations, "annotations CSV")->check(CLI::ExistingFile);
    if (required) o->required();
  };
  const std::vector<std::string> task_names = {"SUGG", "CLASSIC_VS_INDET", "OTHER_VS_NORMAL", "MULTICLASS"};

  auto* aggregate_cmd = app.add_subcommand("aggregate", "per-image branch probabilities");
  add_epsilon(aggregate_cmd);

  std::string curves_dir;
  auto* metrics_cmd = app.add_subcommand("metrics", "branch and multi-class performance report");
  add_epsilon(metrics_cmd);
  add_threshold_options(metrics_cmd, common.thresholds);
  add_annotations(metrics_cmd, false);
  metrics_cmd->add_option("--curves", curves_dir, "directory for ROC / PR point CSVs");

  TreeArgs tree_args;
  auto* tree_cmd = app.add_subcommand("error-tree", "decision tree over the error indicator");
  add_epsilon(tree_cmd);
  add_threshold_options(tree_cmd, common.thresholds);
  add_annotations(tree_cmd, false);
  tree_cmd->add_option("--task", tree_args.task, "task whose errors are analysed")
      ->transform(CLI::IsMember(task_names, CLI::ignore_case))
      ->capture_default_str();
  tree_cmd->add_option("--annotator", tree_args.annotator, "analyse this reader's errors instead of the model's");
  tree_cmd->add_option("--max-depth", tree_args.max_depth, "maximum depth")->check(CLI::PositiveNumber)->capture_default_str();
  tree_cmd->add_option("--min-leaf", tree_args.min_leaf, "smallest admissible child")->check(CLI::PositiveNumber)->capture_default_str();
  tree_cmd->add_option("--threads", tree_args.threads, "concurrent split evaluation")->check(CLI::PositiveNumber)->capture_default_str();
  tree_cmd->add_flag("--with-class", tree_args.with_class, "also split on the reference class");

  StratifyArgs strat_args;
  auto* strat_cmd = app.add_subcommand("stratify", "error counts cross-tabulated by two attributes");
  add_epsilon(strat_cmd);
  add_threshold_options(strat_cmd, common.thresholds);
  add_annotations(strat_cmd, false);
  strat_cmd->add_option("--task", strat_args.task, "task whose errors are counted")
      ->transform(CLI::IsMember(task_names, CLI::ignore_case))
      ->capture_default_str();
  strat_cmd->add_option("--annotator", strat_args.annotator, "count this reader's errors instead of the model's");
  strat_cmd->add_option("--rows", strat_args.rows, "row attribute")->capture_default_str();
  strat_cmd->add_option("--cols", strat_args.cols, "column attribute")->capture_default_str();

  double time_threshold = kDefaultTimeExclusion;
  auto* iov_cmd = app.add_subcommand("iov", "reader agreement report");
  add_epsilon(iov_cmd);
  add_threshold_options(iov_cmd, common.thresholds);
  add_annotations(iov_cmd, true);
  iov_cmd->add_option("--time-threshold", time_threshold, "drop images whose mean labelling time exceeds this")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  int k = 5;
  std::uint64_t split_seed = 0;
  auto* split_cmd = app.add_subcommand("split", "patient-grouped stratified K-fold assignment");
  split_cmd->add_option("--k", k, "number of folds")->check(CLI::Range(2, 1000))->capture_default_str();
  split_cmd->add_option("--seed", split_seed, "shuffle seed")->capture_default_str();

  auto* ensemble_cmd = app.add_subcommand("ensemble", "average fold rows into one row per image");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic cohort");
  synth_cmd->add_option("--spec", synth_args.spec, "cohort spec JSON")->check(CLI::ExistingFile);
  synth_cmd->add_option("--fixture", synth_args.fixture, "built-in cohort")->check(CLI::IsMember(kFixtures));
  synth_cmd->add_option("--seed", synth_args.seed, "override the spec seed");
  synth_cmd->add_option("--annotations-out", synth_args.annotations_out, "write the cohort's annotations here");
  synth_cmd->add_option("--spec-out", synth_args.spec_out, "write the effective spec here");

  // Each subcommand declares its own option set; formats differ per command.
  add_io(aggregate_cmd, true, {"csv", "json"}, "csv");
  add_io(metrics_cmd, true, {"json", "md"}, "json");
  add_io(tree_cmd, true, {"dot", "json"}, "dot");
  add_io(strat_cmd, true, {"md", "csv", "json"}, "md");
  add_io(iov_cmd, true, {"json", "csv"}, "json");
  add_io(split_cmd, true, {"csv", "json"}, "csv");
  add_io(ensemble_cmd, true, {"csv"}, "csv");
  synth_cmd->add_option("--out,-o", common.out, "predictions output (default stdout)");

  // CLI11 reports a stray first word only as "subcommand required".
  if (argc > 1 && argv[1][0] != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == argv[1];
    if (!known) {
      std::cerr << "cxrhier: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
      return 2;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  common.format = format_of[app.get_subcommands().front()->get_name()];

  try {
    if (*aggregate_cmd) run_aggregate(common);
    else if (*metrics_cmd) run_metrics(common, curves_dir);
    else if (*tree_cmd) run_error_tree(common, tree_args);
    else if (*strat_cmd) run_stratify(common, strat_args);
    else if (*iov_cmd) run_iov(common, time_threshold);
    else if (*split_cmd) run_split(common, k, split_seed);
    else if (*ensemble_cmd) run_ensemble(common);
    else if (*synth_cmd) run_synth(common, synth_args);
  } catch (const ValidationError& e) {
    std::cerr << "cxrhier: error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "cxrhier: internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
