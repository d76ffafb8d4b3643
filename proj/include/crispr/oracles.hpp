#pragma once

// Brute-force and analytic oracles: finite-difference gradients, exhaustive
// prune search, and fixture models with known structure.

#include <array>
#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "crispr/bias_detector.hpp"
#include "crispr/dataset.hpp"
#include "crispr/model.hpp"
#include "crispr/tokenizer.hpp"

namespace crispr {

inline constexpr std::size_t kSearchCandidateBudget = 256;
inline constexpr int kSearchMaxMaskSize = 2;
inline constexpr double kFiniteDifferenceStep = 1e-6;
inline constexpr double kPlantedMargin = 2.0;

// (f(x + eps) - f(x - eps)) / (2 eps)
double central_difference(const std::function<double(double)>& f, double x, double eps);

// dP(target | prompt) / dh for one recorded activation entry, by re-running the
// model with the activation nudged by +-eps. Requires an f64 model.
double finite_difference_gradient(const Model& model, std::string_view prompt,
                                  std::string_view target, const NeuronId& neuron,
                                  std::size_t position, double eps = kFiniteDifferenceStep);
double finite_difference_gradient(const Model& model, const std::vector<TokenId>& source,
                                  const std::vector<TokenId>& target, const NeuronId& neuron,
                                  std::size_t position, double eps = kFiniteDifferenceStep);

struct GradientSweep {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;   // over entries above the absolute floor
  double max_abs_error = 0.0;
  std::set<Sublayer> sublayers;  // sublayer kinds visited
  std::vector<std::string> failed;  // "path[pos,ch]: analytic vs numeric"

  bool passed() const { return failures == 0 && sublayers.size() == kAllSublayers.size(); }
};

// Compares backward_to_activations against central differences at every
// recorded activation entry.
GradientSweep gradient_sweep(const Model& model, std::string_view prompt, std::string_view target,
                             double eps = kFiniteDifferenceStep, double rel_tol = 1e-5,
                             double abs_floor = 1e-9, Execution exec = Execution::parallel);

struct SearchEntry {
  std::vector<NeuronId> mask;  // ascending NeuronId order
  double ambig_accuracy = 0.0;
};

// Every size-n subset of the candidates, pruned and evaluated on the ambig
// subset. Sorted by accuracy descending, then lexicographically by mask.
std::vector<SearchEntry> exhaustive_prune_search(const Model& model, const Dataset& dataset,
                                                 const InstructionSet& instructions,
                                                 std::vector<NeuronId> candidates, int n,
                                                 Execution exec = Execution::parallel);
std::vector<SearchEntry> exhaustive_prune_search(const Model& model, const Dataset& dataset,
                                                 std::string_view instruction,
                                                 std::vector<NeuronId> candidates, int n,
                                                 Execution exec = Execution::parallel);

// Neurons with a nonzero activation somewhere while scoring the dataset's gold
// labels under the instruction.
std::vector<NeuronId> live_neurons(const Model& model, const Dataset& dataset,
                                   std::string_view instruction);

// Rank (0-based) of a neuron's mask among single-neuron search entries, or -1.
int search_rank(const std::vector<SearchEntry>& ranking, const NeuronId& id);

// Gaussian parameters with the given standard deviation.
Model make_random_model(const ModelConfig& config, std::uint64_t seed, double scale = 0.3);

struct GradientFixture {
  Model model;
  std::string prompt;
  std::string target;
};

// f64 2+2-layer model with random weights; the target's tokens get a raised
// output bias so the target probability is not vanishingly small.
GradientFixture build_gradient_fixture(std::uint64_t seed);

struct PlantedFixture {
  Model model;
  Dataset dataset;
  std::vector<int> stereotyped;  // choice index of the stereotyped group, per instance
  NeuronId planted;
  NeuronId decoy;
  std::string notes;
};

// Analytic model whose final-decoder-layer ffn.in channel `planted` fires on
// group-mention tokens in ambiguous contexts and raises the stereotyped
// choice's first-token logit by kPlantedMargin.
PlantedFixture build_planted_fixture(std::uint64_t seed);

struct FixtureCheck {
  double ambig_biased_rate = 0.0;   // percent of ambig predictions on the biased choice, planted active
  double ambig_flip_rate = 0.0;     // percent of ambig predictions that become gold when zeroed
  double disambig_change_rate = 0.0;
};

// Direct evaluation of the fixture invariants under the given instructions.
FixtureCheck check_planted_fixture(const PlantedFixture& fx, const InstructionSet& instructions);

// Runs the oracle suite and returns {"checks": [{name, passed, detail}], "passed"}.
nlohmann::json oracle_check(std::uint64_t seed, Execution exec = Execution::parallel);

}  // namespace crispr
