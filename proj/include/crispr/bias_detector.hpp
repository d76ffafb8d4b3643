#pragma once

// Bias-neuron detection: pick the biased label of each instance, subtract
// the clamped golden-label attribution from the biased-label attribution,
// reduce over tokens (max) and instances (mean), and rank every neuron of
// the model jointly.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "crispr/attribution.hpp"
#include "crispr/dataset.hpp"
#include "crispr/model.hpp"

namespace crispr {

enum class Granularity { instance, dataset };

// Serial loops are the reference; parallel runs instances across OpenMP
// threads and reduces in a fixed order, so both give identical bits.
enum class Execution { serial, parallel };

struct Provenance {
  std::string dataset;
  std::vector<int> instruction_ids;
  std::vector<std::string> sample_ids;
  std::uint64_t seed = 0;
  int trials = 1;

  nlohmann::json to_json() const;
  static Provenance from_json(const nlohmann::json& j);
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

// One score per neuron. `neurons` is in NeuronId order and covers every
// neuron of the model exactly once.
struct BiasScoreMap {
  std::vector<NeuronId> neurons;
  std::vector<double> scores;
  Granularity granularity = Granularity::instance;
  Provenance provenance;

  nlohmann::json to_json() const;
  friend bool operator==(const BiasScoreMap&, const BiasScoreMap&) = default;
};

struct RankedNeuron {
  NeuronId id;
  double score = 0.0;
  friend bool operator==(const RankedNeuron&, const RankedNeuron&) = default;
};

// Highest-scoring class other than gold; ties go to the lowest index.
int identify_biased_label(const std::vector<double>& scores, int gold_index);

// attr_biased - max(attr_golden, 0). Callers pass the raw golden attribution.
// Decoder positions past the end of the shorter label count as zero.
TokenAttribution bias_attribution(const TokenAttribution& attr_biased,
                                  const TokenAttribution& attr_golden);

// Per neuron, the maximum over that neuron's sequence positions.
BiasScoreMap aggregate_tokens(const TokenAttribution& per_token);

// Per neuron, the arithmetic mean over instances, summed in list order.
BiasScoreMap aggregate_instances(const std::vector<BiasScoreMap>& maps,
                                 Provenance provenance = {});

// Descending score over all layers and sublayers; ties by NeuronId.
std::vector<RankedNeuron> rank_neurons(const BiasScoreMap& map);

// Instance-level bias scores of one instance under one instruction template.
BiasScoreMap instance_bias_scores(const Model& model, const Instance& instance,
                                  std::string_view instruction);

// Dataset-level map for one instruction template.
BiasScoreMap detect(const Model& model, const Dataset& sample, std::string_view instruction,
                    Execution exec = Execution::parallel);

// Equal-weight mean of the per-template dataset maps.
BiasScoreMap detect(const Model& model, const Dataset& sample, const InstructionSet& instructions,
                    Execution exec = Execution::parallel);

}  // namespace crispr
