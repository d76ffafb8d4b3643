#include "crispr/model.hpp"

#include <algorithm>
#include <cmath>

#include "crispr/checkpoint.hpp"
#include "crispr/errors.hpp"

namespace crispr {

namespace {

constexpr std::array<std::string_view, 10> kSublayerNames = {
    "self_attn.q",  "self_attn.k",  "self_attn.v",  "self_attn.o",  "cross_attn.q",
    "cross_attn.k", "cross_attn.v", "cross_attn.o", "ffn.in",       "ffn.out",
};

Linear zero_linear(int in, int out) {
  return {Matrix(static_cast<std::size_t>(in), static_cast<std::size_t>(out)),
          std::vector<double>(static_cast<std::size_t>(out), 0.0)};
}

Attention zero_attention(int d) {
  return {zero_linear(d, d), zero_linear(d, d), zero_linear(d, d), zero_linear(d, d)};
}

template <class LayerT>
auto& attention_of(LayerT& layer, Sublayer s) {
  if constexpr (requires { layer.cross_attn; }) {
    if (is_cross_attention(s)) return layer.cross_attn;
  }
  return layer.self_attn;
}

template <class LayerT>
auto linear_of(LayerT& layer, Sublayer s) -> decltype((layer.ffn_in)) {
  switch (s) {
    case Sublayer::ffn_in:
      return layer.ffn_in;
    case Sublayer::ffn_out:
      return layer.ffn_out;
    case Sublayer::self_attn_q:
    case Sublayer::cross_attn_q:
      return attention_of(layer, s).q;
    case Sublayer::self_attn_k:
    case Sublayer::cross_attn_k:
      return attention_of(layer, s).k;
    case Sublayer::self_attn_v:
    case Sublayer::cross_attn_v:
      return attention_of(layer, s).v;
    case Sublayer::self_attn_o:
    case Sublayer::cross_attn_o:
      return attention_of(layer, s).o;
  }
  return layer.ffn_in;
}

}  // namespace

int ModelConfig::ffn_width(bool decoder_stack, int layer) const {
  const auto& widths = decoder_stack ? dec_ffn_widths : enc_ffn_widths;
  if (widths.empty()) return d_ff;
  return widths.at(static_cast<std::size_t>(layer));
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
  };
  positive(vocab_size, "vocab_size");
  positive(d_model, "d_model");
  positive(d_ff, "d_ff");
  positive(n_heads, "n_heads");
  positive(n_enc_layers, "n_enc_layers");
  positive(n_dec_layers, "n_dec_layers");
  positive(max_seq_len, "max_seq_len");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  auto check_widths = [&](const std::vector<int>& w, int layers, const char* name) {
    if (w.empty()) return;
    if (static_cast<int>(w.size()) != layers)
      throw ConfigError(std::string(name) + " must list one width per layer");
    for (int x : w)
      if (x < 0 || x > d_ff) throw ConfigError(std::string(name) + " entries must be in [0, d_ff]");
  };
  check_widths(enc_ffn_widths, n_enc_layers, "enc_ffn_widths");
  check_widths(dec_ffn_widths, n_dec_layers, "dec_ffn_widths");
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json j = {
      {"vocab_size", vocab_size},   {"d_model", d_model},
      {"d_ff", d_ff},               {"n_heads", n_heads},
      {"n_enc_layers", n_enc_layers}, {"n_dec_layers", n_dec_layers},
      {"max_seq_len", max_seq_len}, {"dtype", dtype == DType::f32 ? "f32" : "f64"},
  };
  if (!enc_ffn_widths.empty()) j["enc_ffn_widths"] = enc_ffn_widths;
  if (!dec_ffn_widths.empty()) j["dec_ffn_widths"] = dec_ffn_widths;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_enc_layers = j.at("n_enc_layers").get<int>();
    c.n_dec_layers = j.at("n_dec_layers").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    const auto dtype = j.at("dtype").get<std::string>();
    if (dtype == "f32") {
      c.dtype = DType::f32;
    } else if (dtype == "f64") {
      c.dtype = DType::f64;
    } else {
      throw ConfigError("unknown dtype '" + dtype + "'");
    }
    if (j.contains("enc_ffn_widths")) c.enc_ffn_widths = j["enc_ffn_widths"].get<std::vector<int>>();
    if (j.contains("dec_ffn_widths")) c.dec_ffn_widths = j["dec_ffn_widths"].get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string_view to_string(Stack s) { return s == Stack::encoder ? "encoder" : "decoder"; }

std::string_view to_string(Sublayer s) { return kSublayerNames[static_cast<std::size_t>(s)]; }

Stack parse_stack(std::string_view s) {
  if (s == "encoder") return Stack::encoder;
  if (s == "decoder") return Stack::decoder;
  throw AddressError("unknown stack '" + std::string(s) + "'");
}

Sublayer parse_sublayer(std::string_view s) {
  for (std::size_t i = 0; i < kSublayerNames.size(); ++i)
    if (kSublayerNames[i] == s) return static_cast<Sublayer>(i);
  throw AddressError("unknown sublayer '" + std::string(s) + "'");
}

bool is_cross_attention(Sublayer s) {
  return s == Sublayer::cross_attn_q || s == Sublayer::cross_attn_k ||
         s == Sublayer::cross_attn_v || s == Sublayer::cross_attn_o;
}

std::string HookKey::path() const {
  return std::string(crispr::to_string(stack)) + "." + std::to_string(layer) + "." +
         std::string(crispr::to_string(sublayer));
}

std::string NeuronId::to_string() const {
  return hook().path() + "[" + std::to_string(channel) + "]";
}

nlohmann::json to_json(const NeuronId& id) {
  return {{"stack", std::string(to_string(id.stack))},
          {"layer_index", id.layer_index},
          {"sublayer", std::string(to_string(id.sublayer))},
          {"channel", id.channel}};
}

NeuronId neuron_from_json(const nlohmann::json& j) {
  NeuronId id;
  try {
    id.stack = parse_stack(j.at("stack").get<std::string>());
    id.layer_index = j.at("layer_index").get<int>();
    id.sublayer = parse_sublayer(j.at("sublayer").get<std::string>());
    id.channel = j.at("channel").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed neuron record: ") + e.what());
  }
  if (id.layer_index < 0 || id.channel < 0) throw SchemaError("negative neuron coordinate");
  return id;
}

Model Model::zeros(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  const int d = config.d_model;
  m.token_embedding = Matrix(config.vocab_size, d);
  m.encoder_positions = Matrix(config.max_seq_len, d);
  m.decoder_positions = Matrix(config.max_seq_len, d);
  for (int l = 0; l < config.n_enc_layers; ++l) {
    const int w = config.ffn_width(false, l);
    m.encoder.push_back({zero_attention(d), zero_linear(d, w), zero_linear(w, d)});
  }
  for (int l = 0; l < config.n_dec_layers; ++l) {
    const int w = config.ffn_width(true, l);
    m.decoder.push_back({zero_attention(d), zero_attention(d), zero_linear(d, w), zero_linear(w, d)});
  }
  m.lm_head = zero_linear(d, config.vocab_size);
  return m;
}

const Linear& Model::linear(const HookKey& key) const {
  return const_cast<Model*>(this)->linear(key);
}

Linear& Model::linear(const HookKey& key) {
  if (key.layer < 0) throw AddressError("negative layer in " + key.path());
  const auto layer = static_cast<std::size_t>(key.layer);
  if (key.stack == Stack::encoder) {
    if (is_cross_attention(key.sublayer))
      throw AddressError("cross attention does not exist in the encoder: " + key.path());
    if (layer >= encoder.size()) throw AddressError("no such layer: " + key.path());
    return linear_of(encoder[layer], key.sublayer);
  }
  if (layer >= decoder.size()) throw AddressError("no such layer: " + key.path());
  return linear_of(decoder[layer], key.sublayer);
}

std::vector<HookKey> Model::hooks() const {
  std::vector<HookKey> out;
  for (int l = 0; l < config.n_enc_layers; ++l)
    for (Sublayer s : kAllSublayers)
      if (!is_cross_attention(s)) out.push_back({Stack::encoder, l, s});
  for (int l = 0; l < config.n_dec_layers; ++l)
    for (Sublayer s : kAllSublayers) out.push_back({Stack::decoder, l, s});
  return out;
}

int Model::width(const HookKey& key) const {
  return static_cast<int>(linear(key).out_features());
}

bool Model::valid(const NeuronId& id) const {
  try {
    return id.channel >= 0 && id.channel < width(id.hook());
  } catch (const AddressError&) {
    return false;
  }
}

void Model::validate() const {
  config.validate();
  const Model expected = Model::zeros(config);
  std::vector<std::pair<std::string, std::vector<std::size_t>>> shapes;
  expected.for_each_tensor([&](const std::string& name, const std::vector<std::size_t>& shape,
                               const std::vector<double>&) { shapes.emplace_back(name, shape); });
  std::size_t i = 0;
  for_each_tensor([&](const std::string& name, const std::vector<std::size_t>& shape,
                      const std::vector<double>& values) {
    if (i >= shapes.size() || shapes[i].first != name)
      throw ShapeMismatchError("unexpected tensor '" + name + "'");
    if (shapes[i].second != shape) throw ShapeMismatchError("shape mismatch for '" + name + "'");
    std::size_t count = 1;
    for (auto s : shape) count *= s;
    if (values.size() != count) throw ShapeMismatchError("size mismatch for '" + name + "'");
    for (double v : values)
      if (!std::isfinite(v)) throw NonFiniteValueError("non-finite value in '" + name + "'");
    ++i;
  });
  if (i != shapes.size()) throw ShapeMismatchError("model is missing tensors");
}

std::string Model::fingerprint() const { return checkpoint_fingerprint(*this); }

std::string Model::lineage() const {
  return base_fingerprint.empty() ? fingerprint() : base_fingerprint;
}

NeuronSpace::NeuronSpace(const Model& model) : hooks_(model.hooks()) {
  offsets_.reserve(hooks_.size() + 1);
  offsets_.push_back(0);
  for (const auto& h : hooks_) {
    total_ += static_cast<std::size_t>(model.width(h));
    offsets_.push_back(total_);
  }
}

NeuronId NeuronSpace::at(std::size_t index) const {
  if (index >= total_) throw AddressError("neuron index out of range");
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), index);
  const auto h = static_cast<std::size_t>(it - offsets_.begin()) - 1;
  const HookKey& key = hooks_[h];
  return {key.stack, key.layer, key.sublayer, static_cast<int>(index - offsets_[h])};
}

std::size_t NeuronSpace::hook_index(const HookKey& key) const {
  const auto it = std::lower_bound(hooks_.begin(), hooks_.end(), key);
  if (it == hooks_.end() || *it != key) throw AddressError("no such hook point: " + key.path());
  return static_cast<std::size_t>(it - hooks_.begin());
}

std::size_t NeuronSpace::index(const NeuronId& id) const {
  const std::size_t h = hook_index(id.hook());
  if (id.channel < 0 || static_cast<std::size_t>(id.channel) >= width(h))
    throw AddressError("channel out of range: " + id.to_string());
  return offsets_[h] + static_cast<std::size_t>(id.channel);
}

}  // namespace crispr
