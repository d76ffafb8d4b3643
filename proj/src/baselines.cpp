#include "crispr/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "crispr/errors.hpp"
#include "crispr/runtime.hpp"

namespace crispr {

namespace {

std::vector<double> floor_and_normalize(std::vector<double> p) {
  double total = 0.0;
  for (double& v : p) {
    v = std::max(v, kProbabilityFloor);
    total += v;
  }
  for (double& v : p) v /= total;
  return p;
}

std::vector<double> class_distribution(const Model& model, std::string_view instruction,
                                       std::string_view context, std::string_view question,
                                       const std::vector<std::string>& classes) {
  return softmax(score_labels(model, render_prompt(instruction, context, question, classes), classes));
}

}  // namespace

std::string_view to_string(CalibrationMode m) { return m == CalibrationMode::cc ? "cc" : "dc"; }

nlohmann::json CalibrationVector::to_json() const {
  return {{"mode", std::string(to_string(mode))},
          {"probabilities", p_cf},
          {"provenance", {{"content_free_inputs", content_free_inputs}, {"seed", seed}}}};
}

DomainCorpus DomainCorpus::from_dataset(const Dataset& dataset) {
  if (dataset.instances.empty()) throw MissingCorpusError("dc calibration needs a non-empty dataset");
  std::map<std::int32_t, double> counts;
  std::size_t total_len = 0;
  for (const auto& in : dataset.instances) {
    const auto ids = tokenize(in.context);
    total_len += ids.size();
    for (auto id : ids) counts[id] += 1.0;
  }
  DomainCorpus c;
  for (const auto& [id, n] : counts) {
    c.tokens.push_back(id);
    c.weights.push_back(n);
  }
  const double mean = static_cast<double>(total_len) / static_cast<double>(dataset.instances.size());
  c.bag_length = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(mean)));
  return c;
}

std::vector<std::string> sample_token_bags(const DomainCorpus& corpus, int count,
                                           std::uint64_t seed) {
  if (corpus.tokens.empty()) throw MissingCorpusError("token corpus is empty");
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(corpus.weights.begin(), corpus.weights.end());
  std::vector<std::string> bags;
  bags.reserve(static_cast<std::size_t>(count));
  for (int b = 0; b < count; ++b) {
    std::vector<TokenId> ids;
    ids.reserve(corpus.bag_length);
    for (std::size_t t = 0; t < corpus.bag_length; ++t) ids.push_back(corpus.tokens[pick(rng)]);
    std::string text = detokenize(ids);
    // A bag of pure whitespace would normalize to nothing.
    if (Tokenizer::normalize(text).empty()) text = std::string(kContentFreeText);
    bags.push_back(std::move(text));
  }
  return bags;
}

std::vector<double> softmax(const std::vector<double>& scores) {
  if (scores.empty()) return {};
  const double mx = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp(scores[i] - mx);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

CalibrationVector content_free_distribution(const Model& model, std::string_view instruction,
                                            std::string_view question,
                                            const std::vector<std::string>& classes,
                                            CalibrationMode mode, const Dataset* dataset,
                                            std::uint64_t seed, int bags) {
  if (mode == CalibrationMode::dc) {
    if (dataset == nullptr) throw MissingCorpusError("dc calibration needs a dataset");
    const DomainCorpus corpus = DomainCorpus::from_dataset(*dataset);
    return content_free_distribution(model, instruction, question, classes, mode, &corpus, seed, bags);
  }
  return content_free_distribution(model, instruction, question, classes, mode,
                                   static_cast<const DomainCorpus*>(nullptr), seed, bags);
}

CalibrationVector content_free_distribution(const Model& model, std::string_view instruction,
                                            std::string_view question,
                                            const std::vector<std::string>& classes,
                                            CalibrationMode mode, const DomainCorpus* corpus,
                                            std::uint64_t seed, int bags) {
  if (classes.size() < 2) throw DegenerateClassSetError("calibration needs at least two classes");
  CalibrationVector cal;
  cal.mode = mode;
  if (mode == CalibrationMode::cc) {
    cal.content_free_inputs = {std::string(kContentFreeText)};
    cal.p_cf = floor_and_normalize(
        class_distribution(model, instruction, kContentFreeText, question, classes));
    return cal;
  }
  if (corpus == nullptr) throw MissingCorpusError("dc calibration needs a dataset");
  if (bags < 1) throw BoundsError("dc calibration needs at least one bag");
  cal.seed = seed;
  cal.content_free_inputs = sample_token_bags(*corpus, bags, seed);
  std::vector<double> mean(classes.size(), 0.0);
  for (const auto& text : cal.content_free_inputs) {
    const auto p = class_distribution(model, instruction, text, question, classes);
    for (std::size_t i = 0; i < p.size(); ++i) mean[i] += p[i];
  }
  for (double& v : mean) v /= static_cast<double>(cal.content_free_inputs.size());
  cal.p_cf = floor_and_normalize(std::move(mean));
  return cal;
}

std::vector<double> calibrate(const std::vector<double>& scores, const CalibrationVector& cal) {
  if (scores.size() != cal.p_cf.size())
    throw DimensionError("score list has " + std::to_string(scores.size()) +
                         " classes, calibration vector has " + std::to_string(cal.p_cf.size()));
  std::vector<double> q = softmax(scores);
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    q[i] /= cal.p_cf[i];
    total += q[i];
  }
  for (double& v : q) v /= total;
  return q;
}

}  // namespace crispr
