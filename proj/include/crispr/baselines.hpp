#pragma once

// Content-free calibration baselines.
//
//  cc: the label prior is the class distribution the model assigns when the
//      instance context is replaced by the content-free text "N/A".
//  dc: the prior is the mean class distribution over R random bags of
//      in-domain tokens, sampled from the dataset's own unigram statistics
//      with a bag length equal to the mean context length in tokens.
//
// Class distributions are the softmax of length-normalized class
// log-likelihoods. Calibration divides the instance distribution by the prior
// elementwise and renormalizes.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "crispr/dataset.hpp"
#include "crispr/model.hpp"

namespace crispr {

enum class CalibrationMode { cc, dc };

std::string_view to_string(CalibrationMode m);

inline constexpr int kDomainBags = 20;
inline constexpr double kProbabilityFloor = 1e-6;
inline constexpr std::string_view kContentFreeText = "N/A";

struct CalibrationVector {
  std::vector<double> p_cf;
  CalibrationMode mode = CalibrationMode::cc;
  std::vector<std::string> content_free_inputs;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  friend bool operator==(const CalibrationVector&, const CalibrationVector&) = default;
};

// Unigram statistics of a dataset's contexts, used to draw dc token bags.
struct DomainCorpus {
  std::vector<std::int32_t> tokens;   // distinct token ids, ascending
  std::vector<double> weights;        // occurrence counts aligned with tokens
  std::size_t bag_length = 1;         // rounded mean context length in tokens

  static DomainCorpus from_dataset(const Dataset& dataset);
};

// Draws `count` bags of detokenized text with a seeded generator. The sampler
// is deterministic for a given corpus and seed.
std::vector<std::string> sample_token_bags(const DomainCorpus& corpus, int count,
                                           std::uint64_t seed);

// Numerically stable softmax.
std::vector<double> softmax(const std::vector<double>& scores);

// `dataset` is required for dc and ignored for cc.
CalibrationVector content_free_distribution(const Model& model, std::string_view instruction,
                                            std::string_view question,
                                            const std::vector<std::string>& classes,
                                            CalibrationMode mode, const Dataset* dataset,
                                            std::uint64_t seed, int bags = kDomainBags);

// Same, with a precomputed corpus (avoids re-tokenizing the dataset per call).
CalibrationVector content_free_distribution(const Model& model, std::string_view instruction,
                                            std::string_view question,
                                            const std::vector<std::string>& classes,
                                            CalibrationMode mode, const DomainCorpus* corpus,
                                            std::uint64_t seed, int bags = kDomainBags);

// softmax(scores) / p_cf, renormalized.
std::vector<double> calibrate(const std::vector<double>& scores, const CalibrationVector& cal);

}  // namespace crispr
