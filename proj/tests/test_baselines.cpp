#include <cmath>
#include <set>

#include "doctest.h"

#include "crispr/baselines.hpp"
#include "crispr/errors.hpp"
#include "crispr/runtime.hpp"
#include "helpers.hpp"

using namespace crispr;

namespace {

const char* kTemplate = "{context} {question} {choices}";
const std::vector<std::string> kClasses = {"the man", "the woman", "unknown"};

CalibrationVector prior(std::vector<double> p) {
  CalibrationVector c;
  c.p_cf = std::move(p);
  return c;
}

}  // namespace

TEST_CASE("a uniform model has a uniform content-free prior in both modes") {
  const Model m = Model::zeros(testutil::tiny_config());
  const Dataset d = testutil::toy_dataset(4);
  for (auto mode : {CalibrationMode::cc, CalibrationMode::dc}) {
    const auto cal = content_free_distribution(m, kTemplate, "who?", kClasses, mode, &d, 3);
    REQUIRE(cal.p_cf.size() == 3);
    for (double p : cal.p_cf) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("cc uses the N/A context and is deterministic") {
  const Model m = testutil::tiny_model(51);
  const auto a = content_free_distribution(m, kTemplate, "who?", kClasses, CalibrationMode::cc,
                                           static_cast<const Dataset*>(nullptr), 0);
  const auto b = content_free_distribution(m, kTemplate, "who?", kClasses, CalibrationMode::cc,
                                           static_cast<const Dataset*>(nullptr), 99);
  CHECK(a.p_cf == b.p_cf);
  CHECK(a.content_free_inputs == std::vector<std::string>{"N/A"});
  const auto expected =
      softmax(score_labels(m, render_prompt(kTemplate, "N/A", "who?", kClasses), kClasses));
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.p_cf[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  double total = 0.0;
  for (double p : a.p_cf) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("dc is the mean class distribution over its recorded bags") {
  const Model m = testutil::tiny_model(52);
  const Dataset d = testutil::toy_dataset(4);
  const auto cal = content_free_distribution(m, kTemplate, "who?", kClasses, CalibrationMode::dc, &d, 7, 5);
  REQUIRE(cal.content_free_inputs.size() == 5);
  std::vector<double> mean(3, 0.0);
  for (const auto& bag : cal.content_free_inputs) {
    const auto p = softmax(score_labels(m, render_prompt(kTemplate, bag, "who?", kClasses), kClasses));
    for (std::size_t i = 0; i < 3; ++i) mean[i] += p[i] / 5.0;
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(cal.p_cf[i] == doctest::Approx(mean[i]).epsilon(1e-12));
  CHECK(cal.seed == 7);
  const auto again = content_free_distribution(m, kTemplate, "who?", kClasses, CalibrationMode::dc, &d, 7, 5);
  CHECK(again == cal);
  const auto other = content_free_distribution(m, kTemplate, "who?", kClasses, CalibrationMode::dc, &d, 8, 5);
  CHECK(other.content_free_inputs != cal.content_free_inputs);
}

TEST_CASE("domain bags draw only in-domain characters at the mean context length") {
  const Dataset d = testutil::toy_dataset(4);
  const DomainCorpus corpus = DomainCorpus::from_dataset(d);
  std::size_t total = 0;
  std::set<char> chars;
  for (const auto& in : d.instances) {
    total += tokenize(in.context).size();
    chars.insert(in.context.begin(), in.context.end());
  }
  CHECK(corpus.bag_length == static_cast<std::size_t>(std::llround(static_cast<double>(total) / 4.0)));
  for (const auto& bag : sample_token_bags(corpus, 30, 1)) {
    if (bag == "N/A") continue;
    for (char c : bag) CHECK(chars.count(c) == 1);
  }
  CHECK(sample_token_bags(corpus, 4, 1) == sample_token_bags(corpus, 4, 1));
}

TEST_CASE("calibration divides by the prior and renormalizes") {
  const std::vector<double> scores = {std::log(0.4), std::log(0.3), std::log(0.3)};
  const auto q = calibrate(scores, prior({0.8, 0.1, 0.1}));
  CHECK(q[0] == doctest::Approx(0.5 / 6.5).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(3.0 / 6.5).epsilon(1e-12));
  CHECK(q[2] == doctest::Approx(3.0 / 6.5).epsilon(1e-12));
  CHECK(q[0] == doctest::Approx(0.0769).epsilon(1e-3));
}

TEST_CASE("a uniform prior is the identity and a one-hot score survives") {
  const std::vector<double> scores = {-1.3, 0.2, -0.7, 2.5};
  const auto p = softmax(scores);
  const auto q = calibrate(scores, prior({0.25, 0.25, 0.25, 0.25}));
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(q[i] - p[i]) <= 1e-12);
  const auto hot = calibrate({0.0, -1e6, -1e6}, prior({0.2, 0.5, 0.3}));
  CHECK(hot[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(hot[1] == 0.0);
}

TEST_CASE("calibration errors") {
  CHECK_THROWS_AS(calibrate({0.1, 0.2}, prior({0.2, 0.3, 0.5})), DimensionError);
  const Model m = Model::zeros(testutil::tiny_config());
  CHECK_THROWS_AS(content_free_distribution(m, kTemplate, "q", kClasses, CalibrationMode::dc,
                                            static_cast<const Dataset*>(nullptr), 0),
                  MissingCorpusError);
  const Dataset empty;
  CHECK_THROWS_AS(content_free_distribution(m, kTemplate, "q", kClasses, CalibrationMode::dc, &empty, 0),
                  MissingCorpusError);
  CHECK_THROWS_AS(content_free_distribution(m, kTemplate, "q", {"only"}, CalibrationMode::cc,
                                            static_cast<const Dataset*>(nullptr), 0),
                  DegenerateClassSetError);
}

TEST_CASE("calibration vector dump") {
  CalibrationVector c = prior({0.25, 0.75});
  c.mode = CalibrationMode::dc;
  c.content_free_inputs = {"a b", "c"};
  c.seed = 4;
  const auto j = c.to_json();
  CHECK(j["mode"] == "dc");
  CHECK(j["probabilities"] == nlohmann::json{0.25, 0.75});
  CHECK(j["provenance"]["content_free_inputs"].size() == 2);
  CHECK(j["provenance"]["seed"] == 4);
}
