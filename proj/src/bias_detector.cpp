#include "crispr/bias_detector.hpp"

#include <algorithm>
#include <exception>
#include <numeric>

#include "crispr/errors.hpp"
#include "crispr/runtime.hpp"

namespace crispr {

namespace {

TokenAttribution attribution_for(const Model& model, const std::string& prompt,
                                 const std::string& label, LabelKind kind,
                                 const std::string& instance_id) {
  const ActivationTape tape = forward_with_activations(model, prompt, label);
  const GradientMap grads = backward_to_activations(tape);
  return neuron_attribution(tape, grads, kind, instance_id);
}

// Sums in sample-id order so the result does not depend on input order.
BiasScoreMap mean_of(const std::vector<BiasScoreMap>& maps) {
  if (maps.empty()) throw CongruenceError("cannot aggregate zero maps");
  std::vector<const BiasScoreMap*> order;
  for (const auto& m : maps) order.push_back(&m);
  std::stable_sort(order.begin(), order.end(), [](const BiasScoreMap* a, const BiasScoreMap* b) {
    return a->provenance.sample_ids < b->provenance.sample_ids;
  });
  BiasScoreMap out;
  out.neurons = maps.front().neurons;
  out.scores.assign(out.neurons.size(), 0.0);
  for (const BiasScoreMap* mp : order) {
    const BiasScoreMap& m = *mp;
    if (m.neurons != out.neurons) throw CongruenceError("maps cover different neurons");
    for (std::size_t i = 0; i < m.scores.size(); ++i) out.scores[i] += m.scores[i];
  }
  const double n = static_cast<double>(maps.size());
  for (double& s : out.scores) s /= n;
  out.granularity = Granularity::dataset;
  return out;
}

}  // namespace

nlohmann::json Provenance::to_json() const {
  return {{"dataset", dataset},
          {"instruction_ids", instruction_ids},
          {"sample_ids", sample_ids},
          {"seed", seed},
          {"trials", trials}};
}

Provenance Provenance::from_json(const nlohmann::json& j) {
  Provenance p;
  try {
    p.dataset = j.at("dataset").get<std::string>();
    p.instruction_ids = j.at("instruction_ids").get<std::vector<int>>();
    p.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.trials = j.at("trials").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed provenance: ") + e.what());
  }
  return p;
}

nlohmann::json BiasScoreMap::to_json() const {
  nlohmann::json records = nlohmann::json::array();
  for (std::size_t i = 0; i < neurons.size(); ++i) {
    nlohmann::json r = crispr::to_json(neurons[i]);
    r["score"] = scores[i];
    records.push_back(std::move(r));
  }
  return {{"granularity", granularity == Granularity::instance ? "instance" : "dataset"},
          {"provenance", provenance.to_json()},
          {"neurons", std::move(records)}};
}

int identify_biased_label(const std::vector<double>& scores, int gold_index) {
  if (scores.size() < 2) throw DegenerateClassSetError("need at least two classes");
  if (gold_index < 0 || gold_index >= static_cast<int>(scores.size()))
    throw BoundsError("gold_index out of range");
  int best = -1;
  for (int c = 0; c < static_cast<int>(scores.size()); ++c) {
    if (c == gold_index) continue;
    if (best < 0 || scores[static_cast<std::size_t>(c)] > scores[static_cast<std::size_t>(best)])
      best = c;
  }
  return best;
}

TokenAttribution bias_attribution(const TokenAttribution& attr_biased,
                                  const TokenAttribution& attr_golden) {
  if (attr_biased.label_kind != LabelKind::biased || attr_golden.label_kind != LabelKind::golden)
    throw MisuseError("bias_attribution expects (biased, golden) attributions");
  if (attr_biased.instance_id != attr_golden.instance_id)
    throw MisuseError("attributions belong to different instances");
  if (attr_biased.hooks != attr_golden.hooks)
    throw CongruenceError("attributions cover different hook points");
  TokenAttribution out;
  out.hooks = attr_biased.hooks;
  out.label_kind = LabelKind::biased;
  out.instance_id = attr_biased.instance_id;
  out.scores.reserve(out.hooks.size());
  for (std::size_t h = 0; h < out.hooks.size(); ++h) {
    const Matrix& a = attr_biased.scores[h];
    const Matrix& g = attr_golden.scores[h];
    const HookKey& key = out.hooks[h];
    // Decoder positions follow the label, so the two labels may differ in
    // length; a position a label does not reach has zero attribution.
    const bool label_positions = key.stack == Stack::decoder &&
                                 key.sublayer != Sublayer::cross_attn_k &&
                                 key.sublayer != Sublayer::cross_attn_v;
    if (a.cols() != g.cols() || (a.rows() != g.rows() && !label_positions))
      throw CongruenceError("shape mismatch at " + key.path());
    Matrix b(std::max(a.rows(), g.rows()), a.cols());
    for (std::size_t p = 0; p < b.rows(); ++p)
      for (std::size_t c = 0; c < b.cols(); ++c) {
        const double biased = p < a.rows() ? a(p, c) : 0.0;
        const double golden = p < g.rows() && g(p, c) > 0.0 ? g(p, c) : 0.0;
        b(p, c) = biased - golden;
      }
    out.scores.push_back(std::move(b));
  }
  return out;
}

BiasScoreMap aggregate_tokens(const TokenAttribution& per_token) {
  BiasScoreMap out;
  out.granularity = Granularity::instance;
  out.provenance.sample_ids = {per_token.instance_id};
  for (std::size_t h = 0; h < per_token.hooks.size(); ++h) {
    const HookKey& key = per_token.hooks[h];
    const Matrix& m = per_token.scores[h];
    for (std::size_t c = 0; c < m.cols(); ++c) {
      double best = m.rows() ? m(0, c) : 0.0;
      for (std::size_t p = 1; p < m.rows(); ++p) best = std::max(best, m(p, c));
      out.neurons.push_back({key.stack, key.layer, key.sublayer, static_cast<int>(c)});
      out.scores.push_back(best);
    }
  }
  return out;
}

BiasScoreMap aggregate_instances(const std::vector<BiasScoreMap>& maps, Provenance provenance) {
  BiasScoreMap out = mean_of(maps);
  if (provenance.sample_ids.empty())
    for (const auto& m : maps)
      provenance.sample_ids.insert(provenance.sample_ids.end(), m.provenance.sample_ids.begin(),
                                   m.provenance.sample_ids.end());
  out.provenance = std::move(provenance);
  return out;
}

std::vector<RankedNeuron> rank_neurons(const BiasScoreMap& map) {
  if (map.granularity != Granularity::dataset)
    throw MisuseError("rank_neurons expects a dataset-level map");
  std::vector<RankedNeuron> out;
  out.reserve(map.neurons.size());
  for (std::size_t i = 0; i < map.neurons.size(); ++i) out.push_back({map.neurons[i], map.scores[i]});
  std::sort(out.begin(), out.end(), [](const RankedNeuron& a, const RankedNeuron& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return out;
}

BiasScoreMap instance_bias_scores(const Model& model, const Instance& instance,
                                  std::string_view instruction) try {
  const std::string prompt = render_prompt(instruction, instance);
  const std::vector<double> scores = score_labels(model, prompt, instance.choices);
  const int biased = identify_biased_label(scores, instance.gold_index);
  const auto golden_attr =
      attribution_for(model, prompt, instance.choices[static_cast<std::size_t>(instance.gold_index)],
                      LabelKind::golden, instance.id);
  const auto biased_attr = attribution_for(
      model, prompt, instance.choices[static_cast<std::size_t>(biased)], LabelKind::biased, instance.id);
  return aggregate_tokens(bias_attribution(biased_attr, golden_attr));
} catch (const LengthError& e) {
  throw LengthError("instance " + instance.id + ": " + e.what());
} catch (const NumericError& e) {
  throw NumericError("instance " + instance.id + ": " + e.what());
}

BiasScoreMap detect(const Model& model, const Dataset& sample, std::string_view instruction,
                    Execution exec) {
  if (sample.instances.empty()) throw BoundsError("detection sample is empty");
  const std::size_t n = sample.instances.size();
  std::vector<BiasScoreMap> maps(n);
  if (exec == Execution::serial) {
    for (std::size_t i = 0; i < n; ++i)
      maps[i] = instance_bias_scores(model, sample.instances[i], instruction);
  } else {
    std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(n); ++i) {
      const auto u = static_cast<std::size_t>(i);
      try {
        maps[u] = instance_bias_scores(model, sample.instances[u], instruction);
      } catch (...) {
        errors[u] = std::current_exception();
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      if (errors[i]) std::rethrow_exception(errors[i]);
  }
  Provenance prov;
  prov.dataset = sample.name;
  prov.sample_ids = sample.ids();
  return aggregate_instances(maps, std::move(prov));
}

BiasScoreMap detect(const Model& model, const Dataset& sample, const InstructionSet& instructions,
                    Execution exec) {
  instructions.validate();
  std::vector<BiasScoreMap> per_template;
  per_template.reserve(instructions.size());
  for (const auto& t : instructions.templates) per_template.push_back(detect(model, sample, t, exec));
  Provenance prov;
  prov.dataset = sample.name;
  prov.sample_ids = sample.ids();
  prov.instruction_ids.resize(instructions.size());
  std::iota(prov.instruction_ids.begin(), prov.instruction_ids.end(), 0);
  return aggregate_instances(per_template, std::move(prov));
}

}  // namespace crispr
