#pragma once

// Model definition for the encoder-decoder transformer: configuration,
// parameter layout and the neuron address space shared by attribution and
// pruning.
//
// A "hook point" is the output of one linear map (after its bias term). Each
// output coordinate of a hook point is a neuron. Neurons are addressed by
// (stack, layer, sublayer, channel) and totally ordered lexicographically in
// that field order; the order of the Sublayer enumerators is part of the
// contract.

#include <array>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "crispr/matrix.hpp"

namespace crispr {

enum class DType : std::uint8_t { f32, f64 };

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 0;
  int d_ff = 0;
  int n_heads = 0;
  int n_enc_layers = 0;
  int n_dec_layers = 0;
  int max_seq_len = 0;
  DType dtype = DType::f64;
  // Per-layer FFN widths after compaction. Empty means every layer is d_ff wide.
  std::vector<int> enc_ffn_widths;
  std::vector<int> dec_ffn_widths;

  int head_dim() const { return d_model / n_heads; }
  int ffn_width(bool decoder, int layer) const;

  // Throws ConfigError when an invariant does not hold.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Stack : std::uint8_t { encoder, decoder };

enum class Sublayer : std::uint8_t {
  self_attn_q,
  self_attn_k,
  self_attn_v,
  self_attn_o,
  cross_attn_q,
  cross_attn_k,
  cross_attn_v,
  cross_attn_o,
  ffn_in,
  ffn_out,
};

inline constexpr std::array<Sublayer, 10> kAllSublayers = {
    Sublayer::self_attn_q,  Sublayer::self_attn_k,  Sublayer::self_attn_v,
    Sublayer::self_attn_o,  Sublayer::cross_attn_q, Sublayer::cross_attn_k,
    Sublayer::cross_attn_v, Sublayer::cross_attn_o, Sublayer::ffn_in,
    Sublayer::ffn_out,
};

std::string_view to_string(Stack s);
std::string_view to_string(Sublayer s);
Stack parse_stack(std::string_view s);
Sublayer parse_sublayer(std::string_view s);
bool is_cross_attention(Sublayer s);

// Prefix of a NeuronId: identifies one linear map.
struct HookKey {
  Stack stack = Stack::encoder;
  int layer = 0;
  Sublayer sublayer = Sublayer::self_attn_q;

  // Dotted layer path, e.g. "decoder.1.cross_attn.v".
  std::string path() const;
  auto operator<=>(const HookKey&) const = default;
};

struct NeuronId {
  Stack stack = Stack::encoder;
  int layer_index = 0;
  Sublayer sublayer = Sublayer::self_attn_q;
  int channel = 0;

  HookKey hook() const { return {stack, layer_index, sublayer}; }
  std::string to_string() const;
  auto operator<=>(const NeuronId&) const = default;
};

nlohmann::json to_json(const NeuronId& id);
NeuronId neuron_from_json(const nlohmann::json& j);

// y = x * weight + bias, weight stored [in x out].
struct Linear {
  Matrix weight;
  std::vector<double> bias;

  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }
  friend bool operator==(const Linear&, const Linear&) = default;
};

struct Attention {
  Linear q, k, v, o;
  friend bool operator==(const Attention&, const Attention&) = default;
};

struct EncoderLayer {
  Attention self_attn;
  Linear ffn_in, ffn_out;
  friend bool operator==(const EncoderLayer&, const EncoderLayer&) = default;
};

struct DecoderLayer {
  Attention self_attn;
  Attention cross_attn;
  Linear ffn_in, ffn_out;
  friend bool operator==(const DecoderLayer&, const DecoderLayer&) = default;
};

// Immutable-after-construction parameter set. Copies are deep; editing
// operations (masking, compaction) return new models.
struct Model {
  ModelConfig config;
  Matrix token_embedding;     // [vocab x d_model], shared by both stacks
  Matrix encoder_positions;   // [max_seq_len x d_model]
  Matrix decoder_positions;   // [max_seq_len x d_model]
  std::vector<EncoderLayer> encoder;
  std::vector<DecoderLayer> decoder;
  Linear lm_head;             // [d_model x vocab]
  // Fingerprint of the checkpoint this model was edited from; empty when the
  // model has not been derived from another one.
  std::string base_fingerprint;

  // All parameters zero, shapes from config.
  static Model zeros(const ModelConfig& config);

  const Linear& linear(const HookKey& key) const;
  Linear& linear(const HookKey& key);

  // Every hook point implied by the config, in canonical (sorted) order.
  std::vector<HookKey> hooks() const;
  int width(const HookKey& key) const;
  bool valid(const NeuronId& id) const;

  // Calls f(name, shape, values) for every stored tensor in canonical payload
  // order. Biases are 1-D, everything else [rows x cols].
  template <class F>
  void for_each_tensor(F&& f) const {
    visit_tensors(*this, f);
  }
  template <class F>
  void for_each_tensor(F&& f) {
    visit_tensors(*this, f);
  }

  // Shapes match config and every value is finite. Throws LoadError subtypes.
  void validate() const;

  // SHA-256 (hex) over config and parameter payload.
  std::string fingerprint() const;
  // Fingerprint a mask must carry to apply to this model.
  std::string lineage() const;

  friend bool operator==(const Model&, const Model&) = default;

 private:
  template <class Self, class F>
  static void visit_tensors(Self& m, F& f);
};

template <class Self, class F>
void Model::visit_tensors(Self& m, F& f) {
  using Shape = std::vector<std::size_t>;
  auto matrix = [&](const std::string& name, auto& mat) {
    f(name, Shape{mat.rows(), mat.cols()}, mat.values());
  };
  auto linear = [&](const std::string& prefix, auto& lin) {
    matrix(prefix + ".weight", lin.weight);
    f(prefix + ".bias", Shape{lin.bias.size()}, lin.bias);
  };
  auto attention = [&](const std::string& prefix, auto& att) {
    linear(prefix + ".q", att.q);
    linear(prefix + ".k", att.k);
    linear(prefix + ".v", att.v);
    linear(prefix + ".o", att.o);
  };
  matrix("embed.token", m.token_embedding);
  matrix("embed.encoder_pos", m.encoder_positions);
  matrix("embed.decoder_pos", m.decoder_positions);
  for (std::size_t l = 0; l < m.encoder.size(); ++l) {
    const std::string p = "encoder." + std::to_string(l);
    attention(p + ".self_attn", m.encoder[l].self_attn);
    linear(p + ".ffn.in", m.encoder[l].ffn_in);
    linear(p + ".ffn.out", m.encoder[l].ffn_out);
  }
  for (std::size_t l = 0; l < m.decoder.size(); ++l) {
    const std::string p = "decoder." + std::to_string(l);
    attention(p + ".self_attn", m.decoder[l].self_attn);
    attention(p + ".cross_attn", m.decoder[l].cross_attn);
    linear(p + ".ffn.in", m.decoder[l].ffn_in);
    linear(p + ".ffn.out", m.decoder[l].ffn_out);
  }
  linear("lm_head", m.lm_head);
}

// Dense index over every neuron of a model, in NeuronId order.
class NeuronSpace {
 public:
  explicit NeuronSpace(const Model& model);

  std::size_t size() const noexcept { return total_; }
  const std::vector<HookKey>& hooks() const noexcept { return hooks_; }
  std::size_t offset(std::size_t hook_index) const { return offsets_[hook_index]; }
  std::size_t width(std::size_t hook_index) const {
    return offsets_[hook_index + 1] - offsets_[hook_index];
  }

  NeuronId at(std::size_t index) const;
  // Throws AddressError for a neuron that does not exist in the model.
  std::size_t index(const NeuronId& id) const;
  std::size_t hook_index(const HookKey& key) const;

 private:
  std::vector<HookKey> hooks_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

}  // namespace crispr
