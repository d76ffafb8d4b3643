#include "crispr/attribution.hpp"

#include <algorithm>

#include "crispr/errors.hpp"

namespace crispr {

TokenAttribution neuron_attribution(const ActivationTape& tape, const GradientMap& grads,
                                    LabelKind kind, std::string instance_id) {
  if (tape.hooks != grads.hooks || tape.activations.size() != grads.gradients.size())
    throw CongruenceError("tape and gradient map cover different hook points");
  TokenAttribution out;
  out.hooks = tape.hooks;
  out.label_kind = kind;
  out.instance_id = std::move(instance_id);
  out.scores.reserve(tape.activations.size());
  for (std::size_t h = 0; h < tape.activations.size(); ++h) {
    const Matrix& a = tape.activations[h];
    const Matrix& g = grads.gradients[h];
    if (a.rows() != g.rows() || a.cols() != g.cols())
      throw CongruenceError("shape mismatch at " + tape.hooks[h].path());
    Matrix s(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) s.values()[i] = a.values()[i] * g.values()[i];
    out.scores.push_back(std::move(s));
  }
  return out;
}

TokenAttribution clamp_nonnegative(const TokenAttribution& attr) {
  TokenAttribution out = attr;
  for (Matrix& m : out.scores)
    for (double& v : m.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

}  // namespace crispr
