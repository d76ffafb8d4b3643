#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"

#include "crispr/checkpoint.hpp"
#include "crispr/errors.hpp"
#include "crispr/eval.hpp"
#include "crispr/runtime.hpp"
#include "helpers.hpp"
#include "reference_model.hpp"

using namespace crispr;
namespace fs = std::filesystem;

namespace {

// Zero model whose output bias favours the byte 'a'.
Model prefers_a() {
  Model m = Model::zeros(testutil::tiny_config());
  m.lm_head.bias[static_cast<std::size_t>(tokenize("a")[0])] = 5.0;
  return m;
}

Dataset ab_dataset(std::vector<int> golds) {
  Dataset d;
  d.name = "ab";
  for (std::size_t i = 0; i < golds.size(); ++i)
    d.instances.push_back(testutil::make_instance("q" + std::to_string(i), "some context.", {"a", "b"},
                                                  golds[i], i % 2 ? ContextType::disambig : ContextType::ambig));
  return d;
}

const InstructionSet kTwo{{"{context} {question} {choices}", "q: {question} c: {context} o: {choices}"}};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("accuracy counts argmax hits") {
  const Model m = prefers_a();
  const EvalReport all = evaluate(m, ab_dataset({0, 0, 0, 0}), kTwo, Method::original);
  CHECK(all.mean_accuracy == 100.0);
  CHECK(all.per_instruction_accuracy == std::vector<double>{100.0, 100.0});
  const EvalReport half = evaluate(m, ab_dataset({0, 1, 0, 1}), kTwo, Method::original);
  CHECK(half.mean_accuracy == 50.0);
  CHECK(half.ambig_accuracy == 100.0);
  CHECK(half.disambig_accuracy == 0.0);
  CHECK(half.n_ambig == 2);
  CHECK(half.n_disambig == 2);
}

TEST_CASE("gold score is the mean softmax gold probability") {
  const Model m = testutil::tiny_model(61);
  const Dataset d = testutil::toy_dataset(4);
  const InstructionSet one{{kTwo.templates[0]}};
  const EvalReport r = evaluate(m, d, one, Method::original);
  double sums[2] = {0, 0};
  int counts[2] = {0, 0};
  int hits = 0;
  for (const auto& in : d.instances) {
    const auto src = tokenize(render_prompt(one.templates[0], in));
    std::vector<double> s;
    for (const auto& c : in.choices) s.push_back(ref::label_score(m, src, tokenize(c)));
    double z = 0.0;
    for (double v : s) z += std::exp(v);
    const auto type = static_cast<int>(in.context_type);
    sums[type] += std::exp(s[static_cast<std::size_t>(in.gold_index)]) / z;
    ++counts[type];
    hits += std::max_element(s.begin(), s.end()) - s.begin() == in.gold_index;
  }
  CHECK(r.ambig_gold_score == doctest::Approx(100.0 * sums[0] / counts[0]).epsilon(1e-10));
  CHECK(r.disambig_gold_score == doctest::Approx(100.0 * sums[1] / counts[1]).epsilon(1e-10));
  CHECK(r.mean_accuracy == doctest::Approx(100.0 * hits / 4.0));
}

TEST_CASE("pooled context accuracies recompose the mean accuracy") {
  const Model m = testutil::tiny_model(62);
  const Dataset d = testutil::toy_dataset(5);
  const EvalReport r = evaluate(m, d, kTwo, Method::original);
  const double pooled = (r.ambig_accuracy * static_cast<double>(r.n_ambig) +
                         r.disambig_accuracy * static_cast<double>(r.n_disambig)) /
                        static_cast<double>(r.n_ambig + r.n_disambig);
  CHECK(pooled == doctest::Approx(r.mean_accuracy).epsilon(1e-12));
}

TEST_CASE("calibrated methods report the calibrated gold probability") {
  const Model m = testutil::tiny_model(63);
  const Dataset d = testutil::toy_dataset(3);
  const InstructionSet one{{kTwo.templates[0]}};
  const EvalReport r = evaluate(m, d, one, Method::cc);
  double sum = 0.0;
  int n = 0;
  for (const auto& in : d.instances) {
    if (in.context_type != ContextType::ambig) continue;
    const auto cal = content_free_distribution(m, one.templates[0], in.question, in.choices, CalibrationMode::cc,
                                               static_cast<const Dataset*>(nullptr), 0);
    const auto p = calibrate(score_labels(m, render_prompt(one.templates[0], in), in.choices), cal);
    sum += p[static_cast<std::size_t>(in.gold_index)];
    ++n;
  }
  CHECK(r.ambig_gold_score == doctest::Approx(100.0 * sum / n).epsilon(1e-12));
  CHECK_THROWS_AS(choice_probabilities(m, d.instances[0], one.templates[0], Method::dc, nullptr), MisuseError);
}

TEST_CASE("context filtering and detection sampling") {
  const Dataset d = testutil::toy_dataset(9);
  const Dataset a = filter_context(d, ContextType::ambig);
  const Dataset b = filter_context(d, ContextType::disambig);
  CHECK(a.size() + b.size() == d.size());
  for (const auto& in : a.instances) CHECK(in.context_type == ContextType::ambig);
  const Dataset s = sample_detection_set(d, 4, 11);
  CHECK(s.size() == 4);
  const auto ids = s.ids();
  CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == 4);
  CHECK(sample_detection_set(d, 4, 11).ids() == s.ids());
  CHECK(sample_detection_set(d, 9, 3).size() == 9);
  CHECK_THROWS_AS(sample_detection_set(d, 0, 1), BoundsError);
  CHECK_THROWS_AS(sample_detection_set(d, 10, 1), BoundsError);
}

TEST_CASE("report round trip and averaging") {
  const Model m = testutil::tiny_model(64);
  const EvalReport r = evaluate(m, testutil::toy_dataset(4), kTwo, Method::original);
  testutil::TempDir dir;
  save_report(r, dir / "r.json");
  const EvalReport back = load_report(dir / "r.json");
  CHECK(back.to_json() == r.to_json());
  EvalReport other = r;
  other.per_instruction_accuracy = {0.0, 50.0};
  other.ambig_gold_score = r.ambig_gold_score + 10.0;
  const EvalReport avg = average_reports({r, other});
  CHECK(avg.per_instruction_accuracy[1] == (r.per_instruction_accuracy[1] + 50.0) / 2.0);
  CHECK(avg.ambig_gold_score == doctest::Approx(r.ambig_gold_score + 5.0));
  CHECK_THROWS_AS(average_reports({}), EmptyInputError);
  CHECK(parse_method("dc") == Method::dc);
  CHECK_THROWS_AS(parse_method("nope"), ConfigError);
}

TEST_CASE("tables have one accuracy row per method and two gold-score columns") {
  const Model m = testutil::tiny_model(65);
  const Dataset d = testutil::toy_dataset(4);
  std::vector<EvalReport> reports;
  for (Method k : {Method::original, Method::cc, Method::crispr}) reports.push_back(evaluate(m, d, kTwo, k));
  const std::string acc = render_accuracy_table(reports);
  CHECK(acc.find("Original") != std::string::npos);
  CHECK(acc.find("CC") != std::string::npos);
  CHECK(acc.find("CRISPR") != std::string::npos);
  std::istringstream gold(render_gold_score_table(reports));
  std::string line;
  int rows = 0;
  while (std::getline(gold, line)) {
    if (line.rfind("Original", 0) == 0 || line.rfind("CRISPR", 0) == 0) {
      ++rows;
      std::istringstream cells(line);
      std::string name;
      double ambig = 0, disambig = 0;
      cells >> name >> ambig >> disambig;
      const EvalReport& r = name == "Original" ? reports[0] : reports[2];
      CHECK(ambig == doctest::Approx(r.ambig_gold_score).epsilon(1e-2));
      CHECK(disambig == doctest::Approx(r.disambig_gold_score).epsilon(1e-2));
    }
    if (line.rfind("Method", 0) == 0) CHECK(line.find("disambig") != std::string::npos);
  }
  CHECK(rows == 2);
}

TEST_CASE("an empty prune mask leaves the pruned model's report unchanged") {
  const Model m = testutil::tiny_model(66);
  const Dataset d = testutil::toy_dataset(6);
  PipelineConfig c;
  c.n = 0;
  c.k = 3;
  c.trials = 2;
  c.methods = {Method::original, Method::crispr};
  const PipelineResult r = run_pipeline(m, d, kTwo, c);
  REQUIRE(r.reports.size() == 2);
  CHECK(r.masks.size() == 2);
  CHECK(r.masks[0].n() == 0);
  CHECK(r.reports[1].per_instruction_accuracy == r.reports[0].per_instruction_accuracy);
  CHECK(r.reports[1].ambig_gold_score == r.reports[0].ambig_gold_score);
  CHECK(r.reports[1].disambig_gold_score == r.reports[0].disambig_gold_score);
  CHECK(r.reports[1].config["aggregate"] == "trial_mean");
  CHECK(r.reports[1].config["n"] == 0);
}

TEST_CASE("pipeline runs are byte-identical and echo their configuration") {
  testutil::TempDir dir;
  const Model m = testutil::tiny_model(67);
  save_checkpoint(m, dir / "m.crsp");
  save_dataset(testutil::toy_dataset(6), dir / "d.jsonl");
  save_instructions(kTwo, dir / "i.json");
  PipelineConfig c;
  c.checkpoint = "m.crsp";
  c.dataset = "d.jsonl";
  c.instructions = "i.json";
  c.n = 4;
  c.k = 3;
  c.trials = 2;
  c.seed = 5;
  for (const char* out : {"run_a", "run_b"}) {
    c.out_dir = out;
    write_file(dir / (std::string(out) + ".json"), c.to_json().dump(2));
    run_pipeline(PipelineConfig::load(dir / (std::string(out) + ".json")));
  }
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir / "run_a")) names.push_back(e.path().filename().string());
  CHECK(names.size() == 9);
  for (const auto& name : names) {
    INFO(name);
    CHECK(slurp(dir / "run_a" / name) == slurp(dir / "run_b" / name));
  }
  const PruneMask mask = load_mask(dir / "run_a" / "mask_trial1.json");
  CHECK(mask.n() == 4);
  CHECK(mask.provenance.seed == 6);
  CHECK(mask.model_fingerprint == m.lineage());
  const EvalReport crispr = load_report(dir / "run_a" / "report_crispr.json");
  CHECK(crispr.config["k"] == 3);
  CHECK(crispr.config["trials"] == 2);
  CHECK(crispr.config["trial_samples"].size() == 2);
}

TEST_CASE("pipeline failures name their stage") {
  testutil::TempDir dir;
  PipelineConfig c;
  c.checkpoint = dir / "missing.crsp";
  c.dataset = dir / "missing.jsonl";
  try {
    run_pipeline(c);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "load checkpoint");
  }
  ModelConfig small = testutil::tiny_config();
  small.max_seq_len = 20;
  const Model m = make_random_model(small, 1);
  c.n = 1;
  c.k = 1;
  c.trials = 1;
  try {
    run_pipeline(m, testutil::toy_dataset(1), kTwo, c);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "detect (trial 0)");
    CHECK(std::string(e.what()).find("t0") != std::string::npos);
  }
  CHECK_THROWS_AS(PipelineConfig::from_json({{"checkpoint", "a"}}), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json({{"checkpoint", "a"}, {"dataset", "b"}, {"k", 0}}), ConfigError);
}
