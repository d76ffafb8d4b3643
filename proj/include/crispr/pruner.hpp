#pragma once

// Structured pruning of bias neurons.
//
// A PruneMask is the portable debiasing artifact: the top-n neurons of a
// ranking, bound to the checkpoint it was computed on by fingerprint.
// Applying it zeroes each neuron's producing weight column and bias entry,
// so the neuron's activation is the zero function while every tensor keeps
// its shape. Masks can be swapped in and out against the same base model.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "crispr/bias_detector.hpp"
#include "crispr/model.hpp"

namespace crispr {

inline constexpr int kDefaultPruneCount = 50;
inline constexpr int kMaskFormatVersion = 1;

struct PruneMask {
  std::vector<RankedNeuron> neurons;  // descending score, distinct ids
  std::string model_fingerprint;
  Provenance provenance;

  std::size_t n() const { return neurons.size(); }
  // Explicitly empty mask (n = 0) for a model.
  static PruneMask empty(std::string fingerprint);

  // Throws DuplicateNeuronError, ScoreOrderError or SchemaError.
  void validate() const;

  nlohmann::json to_json() const;
  static PruneMask from_json(const nlohmann::json& j);
  friend bool operator==(const PruneMask&, const PruneMask&) = default;
};

// First n entries of the ranking, order preserved. Requires 1 <= n <= |ranking|.
PruneMask select_top_n(const std::vector<RankedNeuron>& ranking, int n,
                       std::string model_fingerprint, Provenance provenance = {});

// Zero-masks every neuron in the mask. The input model is not modified.
Model apply_mask(const Model& model, const PruneMask& mask);

// Physically removes masked ffn.in channels (and the matching ffn.out rows).
// Only ffn.in neurons can be compacted.
Model compact(const Model& model, const PruneMask& mask);

// Union of two masks over the same model; scores of the first win on overlap
// and the result is re-sorted into mask order.
PruneMask merge_masks(const PruneMask& a, const PruneMask& b);

void save_mask(const PruneMask& mask, const std::filesystem::path& path);
PruneMask load_mask(const std::filesystem::path& path);
std::string dump_mask(const PruneMask& mask);

}  // namespace crispr
