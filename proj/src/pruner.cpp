#include "crispr/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "crispr/checkpoint.hpp"
#include "crispr/errors.hpp"

namespace crispr {

namespace {

bool mask_order(const RankedNeuron& a, const RankedNeuron& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

void check_applicable(const Model& model, const PruneMask& mask) {
  mask.validate();
  if (mask.model_fingerprint != model.lineage())
    throw StaleMaskError("mask was computed for model " + mask.model_fingerprint +
                         ", not " + model.lineage());
  for (const auto& r : mask.neurons)
    if (!model.valid(r.id)) throw AddressError("mask addresses missing neuron " + r.id.to_string());
}

}  // namespace

PruneMask PruneMask::empty(std::string fingerprint) {
  PruneMask m;
  m.model_fingerprint = std::move(fingerprint);
  return m;
}

void PruneMask::validate() const {
  if (model_fingerprint.empty()) throw SchemaError("mask has no model fingerprint");
  std::set<NeuronId> seen;
  for (std::size_t i = 0; i < neurons.size(); ++i) {
    if (!std::isfinite(neurons[i].score))
      throw SchemaError("non-finite score for " + neurons[i].id.to_string());
    if (!seen.insert(neurons[i].id).second)
      throw DuplicateNeuronError("duplicate neuron " + neurons[i].id.to_string());
    if (i > 0 && neurons[i].score > neurons[i - 1].score)
      throw ScoreOrderError("mask scores are not descending at entry " + std::to_string(i));
  }
}

nlohmann::json PruneMask::to_json() const {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : neurons) {
    nlohmann::json j = crispr::to_json(r.id);
    j["score"] = r.score;
    records.push_back(std::move(j));
  }
  return {{"version", kMaskFormatVersion},
          {"model_fingerprint", model_fingerprint},
          {"n", neurons.size()},
          {"provenance", provenance.to_json()},
          {"neurons", std::move(records)}};
}

PruneMask PruneMask::from_json(const nlohmann::json& j) {
  PruneMask m;
  std::size_t n = 0;
  try {
    if (j.at("version").get<int>() != kMaskFormatVersion)
      throw SchemaError("unsupported mask version");
    m.model_fingerprint = j.at("model_fingerprint").get<std::string>();
    n = j.at("n").get<std::size_t>();
    m.provenance = Provenance::from_json(j.at("provenance"));
    for (const auto& r : j.at("neurons")) {
      const NeuronId id = neuron_from_json(r);
      m.neurons.push_back({id, r.at("score").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed mask: ") + e.what());
  }
  if (n != m.neurons.size()) throw SchemaError("mask n disagrees with its neuron list");
  m.validate();
  return m;
}

PruneMask select_top_n(const std::vector<RankedNeuron>& ranking, int n,
                       std::string model_fingerprint, Provenance provenance) {
  if (n < 1 || static_cast<std::size_t>(n) > ranking.size())
    throw BoundsError("n must be in [1, " + std::to_string(ranking.size()) + "], got " +
                      std::to_string(n));
  PruneMask m;
  m.neurons.assign(ranking.begin(), ranking.begin() + n);
  m.model_fingerprint = std::move(model_fingerprint);
  m.provenance = std::move(provenance);
  m.validate();
  return m;
}

Model apply_mask(const Model& model, const PruneMask& mask) {
  check_applicable(model, mask);
  Model out = model;
  out.base_fingerprint = model.lineage();
  for (const auto& r : mask.neurons) {
    Linear& lin = out.linear(r.id.hook());
    const auto c = static_cast<std::size_t>(r.id.channel);
    for (std::size_t i = 0; i < lin.weight.rows(); ++i) lin.weight(i, c) = 0.0;
    lin.bias[c] = 0.0;
  }
  return out;
}

Model compact(const Model& model, const PruneMask& mask) {
  check_applicable(model, mask);
  std::vector<std::string> offenders;
  for (const auto& r : mask.neurons)
    if (r.id.sublayer != Sublayer::ffn_in) offenders.push_back(r.id.to_string());
  if (!offenders.empty()) {
    std::string list;
    for (const auto& o : offenders) list += (list.empty() ? "" : ", ") + o;
    throw UnsupportedCompactionError("only ffn.in channels can be compacted: " + list);
  }

  std::map<HookKey, std::set<int>> removed;
  for (const auto& r : mask.neurons) removed[r.id.hook()].insert(r.id.channel);

  ModelConfig cfg = model.config;
  auto widths = [&](Stack s) -> std::vector<int>& {
    auto& w = s == Stack::encoder ? cfg.enc_ffn_widths : cfg.dec_ffn_widths;
    if (w.empty()) w.assign(static_cast<std::size_t>(s == Stack::encoder ? cfg.n_enc_layers : cfg.n_dec_layers),
                            cfg.d_ff);
    return w;
  };

  Model out = model;
  out.base_fingerprint = model.lineage();
  for (const auto& [key, channels] : removed) {
    const HookKey out_key{key.stack, key.layer, Sublayer::ffn_out};
    const Linear& in = model.linear(key);
    const Linear& down = model.linear(out_key);
    const std::size_t keep = in.out_features() - channels.size();
    Linear new_in{Matrix(in.in_features(), keep), {}};
    Linear new_down{Matrix(keep, down.out_features()), down.bias};
    std::size_t k = 0;
    for (std::size_t c = 0; c < in.out_features(); ++c) {
      if (channels.count(static_cast<int>(c))) continue;
      for (std::size_t i = 0; i < in.in_features(); ++i) new_in.weight(i, k) = in.weight(i, c);
      new_in.bias.push_back(in.bias[c]);
      for (std::size_t j = 0; j < down.out_features(); ++j) new_down.weight(k, j) = down.weight(c, j);
      ++k;
    }
    out.linear(key) = std::move(new_in);
    out.linear(out_key) = std::move(new_down);
    widths(key.stack)[static_cast<std::size_t>(key.layer)] = static_cast<int>(keep);
  }
  out.config = cfg;
  out.validate();
  return out;
}

PruneMask merge_masks(const PruneMask& a, const PruneMask& b) {
  if (a.model_fingerprint != b.model_fingerprint)
    throw StaleMaskError("cannot merge masks of different models");
  PruneMask out = a;
  std::set<NeuronId> seen;
  for (const auto& r : a.neurons) seen.insert(r.id);
  for (const auto& r : b.neurons)
    if (seen.insert(r.id).second) out.neurons.push_back(r);
  std::sort(out.neurons.begin(), out.neurons.end(), mask_order);
  return out;
}

std::string dump_mask(const PruneMask& mask) { return mask.to_json().dump(2) + "\n"; }

void save_mask(const PruneMask& mask, const std::filesystem::path& path) {
  mask.validate();
  write_file(path, dump_mask(mask));
}

PruneMask load_mask(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("mask file " + path.string() + ": " + e.what());
  }
  return PruneMask::from_json(j);
}

}  // namespace crispr
