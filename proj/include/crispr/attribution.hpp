#pragma once

#include <string>
#include <vector>

#include "crispr/matrix.hpp"
#include "crispr/model.hpp"
#include "crispr/runtime.hpp"

namespace crispr {

enum class LabelKind { golden, biased };

// Per-token neuron attribution: for every hook point a [positions x channels]
// array of activation * d(target_prob)/d(activation). Always f64.
struct TokenAttribution {
  std::vector<HookKey> hooks;
  std::vector<Matrix> scores;
  LabelKind label_kind = LabelKind::golden;
  std::string instance_id;
};

// Hadamard product of recorded activations and their gradients.
TokenAttribution neuron_attribution(const ActivationTape& tape, const GradientMap& grads,
                                    LabelKind kind = LabelKind::golden,
                                    std::string instance_id = {});

// max(score, 0) elementwise; label kind and instance id are preserved.
TokenAttribution clamp_nonnegative(const TokenAttribution& attr);

}  // namespace crispr
