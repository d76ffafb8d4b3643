#pragma once

// Forward pass with activation recording and reverse-mode gradients of a
// teacher-forced label probability with respect to every hook point.
//
// Architecture (pre-norm, parameter-free RMS normalization, exact-erf GeLU):
//
//   encoder:  x = E[src] + P_enc
//             per layer: x += SelfAttn(rms(x));  x += FFN(rms(x))
//             memory = rms(x)
//   decoder:  y = E[bos, y_1..y_T] + P_dec
//             per layer: y += CausalSelfAttn(rms(y));
//                        y += CrossAttn(rms(y), memory);
//                        y += FFN(rms(y))
//             logits = lm_head(rms(y))
//
// The decoder consumes the BOS token followed by the whole target, so it has
// T + 1 positions. Position t < T predicts target token t; the final position
// predicts nothing and therefore never influences the target probability.

#include <span>
#include <string_view>
#include <vector>

#include "crispr/matrix.hpp"
#include "crispr/model.hpp"
#include "crispr/tokenizer.hpp"

namespace crispr {

inline constexpr double kRmsEpsilon = 1e-6;

// Additive perturbation of one recorded activation, applied right after the
// linear map computes it so that only downstream computation sees it.
struct Intervention {
  std::size_t hook_index = 0;  // index into Model::hooks()
  std::size_t position = 0;
  std::size_t channel = 0;
  double delta = 0.0;
};

struct NormCache {
  Matrix out;
  std::vector<double> rms;
};

struct AttentionCache {
  std::vector<Matrix> probs;  // one [queries x keys] matrix per head
  Matrix context;
};

struct EncoderLayerCache {
  NormCache attn_norm;
  AttentionCache self_attn;
  NormCache ffn_norm;
  Matrix ffn_hidden;  // gelu(ffn.in)
};

struct DecoderLayerCache {
  NormCache self_norm;
  AttentionCache self_attn;
  NormCache cross_norm;
  AttentionCache cross_attn;
  NormCache ffn_norm;
  Matrix ffn_hidden;
};

// Everything one teacher-forced forward pass recorded. The tape refers to the
// model it was produced from; the model must outlive it.
struct ActivationTape {
  const Model* model = nullptr;
  std::vector<HookKey> hooks;       // canonical order, same as Model::hooks()
  std::vector<Matrix> activations;  // per hook, [positions x channels]
  std::vector<TokenId> source;
  std::vector<TokenId> target;
  std::vector<TokenId> decoder_input;  // bos + target

  std::vector<EncoderLayerCache> encoder_cache;
  std::vector<DecoderLayerCache> decoder_cache;
  NormCache encoder_final;
  NormCache decoder_final;
  Matrix logits;         // [T+1 x vocab]
  Matrix probabilities;  // row-wise softmax of logits

  double log_prob = 0.0;     // sum of target token log-probabilities
  double target_prob = 0.0;  // exp(log_prob)

  const Matrix& activation(const HookKey& key) const;
};

// Per-hook gradient of the tape's target_prob; shapes match the tape.
struct GradientMap {
  std::vector<HookKey> hooks;
  std::vector<Matrix> gradients;

  const Matrix& gradient(const HookKey& key) const;
};

// Index of a hook point in Model::hooks() order.
std::size_t hook_slot(const ModelConfig& config, const HookKey& key);

std::vector<TokenId> tokenize(std::string_view text);
std::string detokenize(const std::vector<TokenId>& ids);

ActivationTape forward_with_activations(const Model& model, std::string_view prompt,
                                        std::string_view target,
                                        std::span<const Intervention> interventions = {});
ActivationTape forward_with_activations(const Model& model, const std::vector<TokenId>& source,
                                        const std::vector<TokenId>& target,
                                        std::span<const Intervention> interventions = {});

GradientMap backward_to_activations(const ActivationTape& tape);

// Length-normalized teacher-forced log-likelihood of each class text given the
// prompt: (1/T_c) * sum_t log p(token_t | prefix).
std::vector<double> score_labels(const Model& model, std::string_view prompt,
                                 const std::vector<std::string>& classes);

double gelu(double x);
double gelu_derivative(double x);

}  // namespace crispr
