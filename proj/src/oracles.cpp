#include "crispr/oracles.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <random>

#include "crispr/errors.hpp"
#include "crispr/eval.hpp"
#include "crispr/pruner.hpp"
#include "crispr/runtime.hpp"

namespace crispr {

namespace {

template <class F>
void for_each_index(std::size_t n, Execution exec, F&& f) {
  if (exec == Execution::serial) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(n); ++i) {
    try {
      f(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

PruneMask mask_of(const Model& model, const std::vector<NeuronId>& ids) {
  PruneMask m = PruneMask::empty(model.lineage());
  for (const auto& id : ids) m.neurons.push_back({id, 0.0});
  return m;
}

std::size_t positions_of(const HookKey& key, std::size_t source_len, std::size_t target_len) {
  if (key.stack == Stack::encoder) return source_len;
  if (key.sublayer == Sublayer::cross_attn_k || key.sublayer == Sublayer::cross_attn_v)
    return source_len;
  return target_len + 1;
}

// Residual-stream layout of the planted fixture.
constexpr std::size_t kOne = 0;
constexpr std::size_t kGroupCue = 1;
constexpr std::size_t kAnswerStereo = 2;
constexpr std::size_t kAnswerOther = 3;
constexpr std::size_t kGroupFeature = 4;   // 4 dims
constexpr std::size_t kBiasFeature = 8;    // 4 dims
constexpr std::size_t kStereoFeature = 12; // 2 dims
constexpr std::size_t kOtherFeature = 14;  // 2 dims
constexpr std::size_t kDecoyFeature = 16;

constexpr double kResidualScale = 8.0;
constexpr double kKeyGain = 20.0;
constexpr double kValueOut = 0.25;
constexpr double kGroupValueOut = 0.0625;
constexpr double kGroupRead = 1.6;
constexpr double kAnswerInhibit = 2.5;
constexpr double kDecoyRead = 0.2;
constexpr double kAnswerBoost = 2.5;
constexpr double kUnknownPenalty = 1.2;
constexpr double kUnknownBias = 1.0;
constexpr double kDecoyBoost = 2.0;

struct GroupPair {
  const char* stereotyped;
  const char* other;
};
constexpr GroupPair kPairs[] = {{"poor", "wealthy"}, {"frail", "strong"}, {"broke", "hired"}};
constexpr const char* kUnknownLabels[] = {"unknown", "unclear", "undetermined"};
constexpr const char* kEvents[] = {"were at the park", "met for lunch", "waited at the bus stop",
                                   "joined the meeting"};
struct Question {
  const char* question;
  const char* clause;
};
constexpr Question kQuestions[] = {{"who was late?", "was late"},
                                   {"who lost the keys?", "lost the keys"},
                                   {"who broke the rule?", "broke the rule"},
                                   {"who forgot the bill?", "forgot the bill"}};

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

TokenId byte_token(char c) { return kFirstByteToken + static_cast<unsigned char>(c); }

struct FixtureData {
  Dataset dataset;
  std::vector<int> stereotyped;  // choice index of the stereotyped group per instance
};

FixtureData make_fixture_dataset(std::mt19937_64& rng) {
  auto pick = [&](std::size_t n) {
    return static_cast<std::size_t>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  };
  FixtureData out;
  out.dataset.name = "planted";
  for (int i = 0; i < 40; ++i) {
    const bool ambig = i < 20;
    const GroupPair& pair = kPairs[pick(std::size(kPairs))];
    const Question& q = kQuestions[pick(std::size(kQuestions))];
    const std::string s_word = pair.stereotyped, o_word = pair.other;
    const std::string s_mention = "a " + upper(s_word) + " person";
    const std::string o_mention = "a " + o_word + " person";
    const bool s_first = pick(2) == 0;
    std::string context = (s_first ? s_mention : o_mention) + " and " +
                          (s_first ? o_mention : s_mention) + " " + kEvents[pick(std::size(kEvents))] +
                          ".";
    Instance in;
    char id[16];
    std::snprintf(id, sizeof id, "fx-%03d", i);
    in.id = id;
    in.question = q.question;
    in.context_type = ambig ? ContextType::ambig : ContextType::disambig;
    std::vector<std::string> choices = {s_word, o_word, kUnknownLabels[pick(std::size(kUnknownLabels))]};
    std::vector<int> order = {0, 1, 2};
    std::shuffle(order.begin(), order.end(), rng);
    for (int c : order) in.choices.push_back(choices[static_cast<std::size_t>(c)]);
    auto index_of = [&](int role) {
      return static_cast<int>(std::find(order.begin(), order.end(), role) - order.begin());
    };
    int gold_role = 2;
    if (!ambig) {
      const bool answer_stereo = i % 2 == 0;
      gold_role = answer_stereo ? 0 : 1;
      context += " the " + (answer_stereo ? upper(s_word) : o_word) + " person " + q.clause +
                 (answer_stereo ? " +" : " ~");
    }
    in.context = context;
    in.gold_index = index_of(gold_role);
    out.stereotyped.push_back(index_of(0));
    out.dataset.instances.push_back(std::move(in));
  }
  out.dataset.validate();
  return out;
}

// First tokens of each label role; throws when roles overlap or a role token
// occurs inside some label, which would break the closed-form score ordering.
std::array<std::set<TokenId>, 3> role_tokens() {
  std::array<std::set<TokenId>, 3> first;
  std::set<TokenId> inner;
  auto add = [&](int role, const std::string& label) {
    const auto ids = tokenize(label);
    first[static_cast<std::size_t>(role)].insert(ids.front());
    inner.insert(ids.begin() + 1, ids.end());
  };
  for (const auto& p : kPairs) {
    add(0, p.stereotyped);
    add(1, p.other);
  }
  for (const char* u : kUnknownLabels) add(2, u);
  for (std::size_t a = 0; a < 3; ++a) {
    for (TokenId t : first[a]) {
      if (inner.count(t)) throw ConfigError("fixture role token occurs inside a label");
      for (std::size_t b = a + 1; b < 3; ++b)
        if (first[b].count(t)) throw ConfigError("fixture label roles share a first token");
    }
  }
  return first;
}

}  // namespace

double central_difference(const std::function<double(double)>& f, double x, double eps) {
  if (!(eps > 0.0)) throw BoundsError("finite-difference step must be positive");
  return (f(x + eps) - f(x - eps)) / (2.0 * eps);
}

double finite_difference_gradient(const Model& model, const std::vector<TokenId>& source,
                                  const std::vector<TokenId>& target, const NeuronId& neuron,
                                  std::size_t position, double eps) {
  if (model.config.dtype != DType::f64)
    throw PrecisionError("finite-difference oracle requires an f64 model");
  if (!model.valid(neuron)) throw AddressError("no neuron " + neuron.to_string());
  const HookKey key = neuron.hook();
  if (position >= positions_of(key, source.size(), target.size()))
    throw AddressError("position " + std::to_string(position) + " outside " + key.path());
  const std::size_t slot = hook_slot(model.config, key);
  return central_difference(
      [&](double delta) {
        const Intervention iv{slot, position, static_cast<std::size_t>(neuron.channel), delta};
        return forward_with_activations(model, source, target, {&iv, 1}).target_prob;
      },
      0.0, eps);
}

double finite_difference_gradient(const Model& model, std::string_view prompt,
                                  std::string_view target, const NeuronId& neuron,
                                  std::size_t position, double eps) {
  return finite_difference_gradient(model, tokenize(prompt), tokenize(target), neuron, position, eps);
}

GradientSweep gradient_sweep(const Model& model, std::string_view prompt, std::string_view target,
                             double eps, double rel_tol, double abs_floor, Execution exec) {
  if (model.config.dtype != DType::f64)
    throw PrecisionError("finite-difference oracle requires an f64 model");
  const auto source = tokenize(prompt);
  const auto tgt = tokenize(target);
  const ActivationTape tape = forward_with_activations(model, source, tgt);
  const GradientMap grads = backward_to_activations(tape);

  struct Entry {
    std::size_t slot, pos, ch;
  };
  std::vector<Entry> entries;
  for (std::size_t h = 0; h < tape.hooks.size(); ++h) {
    const Matrix& a = tape.activations[h];
    for (std::size_t p = 0; p < a.rows(); ++p)
      for (std::size_t c = 0; c < a.cols(); ++c) entries.push_back({h, p, c});
  }
  std::vector<double> numeric(entries.size());
  for_each_index(entries.size(), exec, [&](std::size_t i) {
    const Entry& e = entries[i];
    numeric[i] = central_difference(
        [&](double delta) {
          const Intervention iv{e.slot, e.pos, e.ch, delta};
          return forward_with_activations(model, source, tgt, {&iv, 1}).target_prob;
        },
        0.0, eps);
  });

  GradientSweep out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Entry& e = entries[i];
    const double analytic = grads.gradients[e.slot](e.pos, e.ch);
    const double err = std::abs(analytic - numeric[i]);
    const double scale = std::max(std::abs(analytic), std::abs(numeric[i]));
    ++out.checked;
    out.sublayers.insert(tape.hooks[e.slot].sublayer);
    out.max_abs_error = std::max(out.max_abs_error, err);
    if (scale > abs_floor) out.max_rel_error = std::max(out.max_rel_error, err / scale);
    if (err > abs_floor && err > rel_tol * scale) {
      ++out.failures;
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s[%zu,%zu]: %.12g vs %.12g",
                    tape.hooks[e.slot].path().c_str(), e.pos, e.ch, analytic, numeric[i]);
      out.failed.emplace_back(buf);
    }
  }
  return out;
}

std::vector<SearchEntry> exhaustive_prune_search(const Model& model, const Dataset& dataset,
                                                 const InstructionSet& instructions,
                                                 std::vector<NeuronId> candidates, int n,
                                                 Execution exec) {
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  if (candidates.size() > kSearchCandidateBudget || n > kSearchMaxMaskSize)
    throw BudgetError("exhaustive search is limited to " + std::to_string(kSearchCandidateBudget) +
                      " candidates and masks of size " + std::to_string(kSearchMaxMaskSize) +
                      "; got " + std::to_string(candidates.size()) + " and " + std::to_string(n));
  if (n < 1 || static_cast<std::size_t>(n) > candidates.size())
    throw BoundsError("mask size must be in [1, " + std::to_string(candidates.size()) + "]");
  for (const auto& id : candidates)
    if (!model.valid(id)) throw AddressError("no neuron " + id.to_string());
  const Dataset ambig = filter_context(dataset, ContextType::ambig);
  if (ambig.instances.empty()) throw EmptyInputError("dataset has no ambig instances");

  std::vector<SearchEntry> out;
  const std::size_t m = candidates.size();
  for (std::size_t i = 0; i < m; ++i) {
    if (n == 1) {
      out.push_back({{candidates[i]}, 0.0});
      continue;
    }
    for (std::size_t j = i + 1; j < m; ++j) out.push_back({{candidates[i], candidates[j]}, 0.0});
  }
  for_each_index(out.size(), exec, [&](std::size_t i) {
    const Model pruned = apply_mask(model, mask_of(model, out[i].mask));
    out[i].ambig_accuracy =
        evaluate(pruned, ambig, instructions, Method::crispr, {Execution::serial}).mean_accuracy;
  });
  std::sort(out.begin(), out.end(), [](const SearchEntry& a, const SearchEntry& b) {
    if (a.ambig_accuracy != b.ambig_accuracy) return a.ambig_accuracy > b.ambig_accuracy;
    return a.mask < b.mask;
  });
  return out;
}

std::vector<SearchEntry> exhaustive_prune_search(const Model& model, const Dataset& dataset,
                                                 std::string_view instruction,
                                                 std::vector<NeuronId> candidates, int n,
                                                 Execution exec) {
  return exhaustive_prune_search(model, dataset, InstructionSet{{std::string(instruction)}},
                                 std::move(candidates), n, exec);
}

std::vector<NeuronId> live_neurons(const Model& model, const Dataset& dataset,
                                   std::string_view instruction) {
  std::set<NeuronId> live;
  for (const auto& in : dataset.instances) {
    const ActivationTape tape = forward_with_activations(
        model, render_prompt(instruction, in), in.choices[static_cast<std::size_t>(in.gold_index)]);
    for (std::size_t h = 0; h < tape.hooks.size(); ++h) {
      const Matrix& a = tape.activations[h];
      const HookKey& key = tape.hooks[h];
      for (std::size_t p = 0; p < a.rows(); ++p)
        for (std::size_t c = 0; c < a.cols(); ++c)
          if (a(p, c) != 0.0) live.insert({key.stack, key.layer, key.sublayer, static_cast<int>(c)});
    }
  }
  return {live.begin(), live.end()};
}

int search_rank(const std::vector<SearchEntry>& ranking, const NeuronId& id) {
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (ranking[i].mask.size() == 1 && ranking[i].mask.front() == id) return static_cast<int>(i);
  return -1;
}

Model make_random_model(const ModelConfig& config, std::uint64_t seed, double scale) {
  Model m = Model::zeros(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  m.for_each_tensor([&](const std::string&, const auto&, auto& values) {
    for (double& v : values) v = dist(rng);
  });
  return m;
}

GradientFixture build_gradient_fixture(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.vocab_size = Tokenizer::standard().vocab_size();
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 2;
  cfg.n_dec_layers = 2;
  cfg.max_seq_len = 48;
  cfg.dtype = DType::f64;
  GradientFixture fx{make_random_model(cfg, seed), "where did they go?", "to the"};
  for (TokenId t : tokenize(fx.target)) fx.model.lm_head.bias[static_cast<std::size_t>(t)] += 4.0;
  return fx;
}

PlantedFixture build_planted_fixture(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FixtureData data = make_fixture_dataset(rng);
  const auto roles = role_tokens();

  ModelConfig cfg;
  cfg.vocab_size = Tokenizer::standard().vocab_size();
  cfg.d_model = 32;
  cfg.d_ff = 64;
  cfg.n_heads = 4;
  cfg.n_enc_layers = 2;
  cfg.n_dec_layers = 2;
  cfg.max_seq_len = 256;
  cfg.dtype = DType::f64;
  Model m = Model::zeros(cfg);

  std::uniform_int_distribution<int> channel(0, cfg.d_ff - 1);
  const int planted = channel(rng);
  int decoy = channel(rng);
  while (decoy == planted) decoy = channel(rng);

  for (char c = 'A'; c <= 'Z'; ++c) m.token_embedding(static_cast<std::size_t>(byte_token(c)), kGroupCue) = 1.0;
  m.token_embedding(static_cast<std::size_t>(byte_token('+')), kAnswerStereo) = 1.0;
  m.token_embedding(static_cast<std::size_t>(byte_token('~')), kAnswerOther) = 1.0;
  for (std::size_t p = 0; p < m.decoder_positions.rows(); ++p) m.decoder_positions(p, kOne) = kResidualScale;

  // Decoder layer 0 cross-attention: head 0 copies the group cue, head 1 the
  // answer cue, each with a constant query and a saturating key.
  Attention& cross = m.decoder[0].cross_attn;
  const std::size_t hd = static_cast<std::size_t>(cfg.head_dim());
  cross.q.bias[0] = 1.0;
  cross.q.bias[hd] = 1.0;
  cross.k.weight(kGroupCue, 0) = kKeyGain;
  cross.k.weight(kAnswerStereo, hd) = kKeyGain;
  cross.k.weight(kAnswerOther, hd) = kKeyGain;
  for (std::size_t i = 0; i < 4; ++i) {
    cross.v.weight(kGroupCue, i) = 1.0;
    cross.o.weight(i, kGroupFeature + i) = kGroupValueOut;
  }
  for (std::size_t i = 0; i < 2; ++i) {
    cross.v.weight(kAnswerStereo, hd + i) = 1.0;
    cross.v.weight(kAnswerOther, hd + 2 + i) = 1.0;
    cross.o.weight(hd + i, kStereoFeature + i) = kValueOut;
    cross.o.weight(hd + 2 + i, kOtherFeature + i) = kValueOut;
  }

  // Final decoder layer FFN: the planted channel reads the group feature and is
  // silenced by either answer feature; the decoy reads the constant dimension.
  DecoderLayer& last = m.decoder.back();
  const auto pc = static_cast<std::size_t>(planted), dc = static_cast<std::size_t>(decoy);
  for (std::size_t i = 0; i < 4; ++i) {
    last.ffn_in.weight(kGroupFeature + i, pc) = kGroupRead;
    last.ffn_out.weight(pc, kBiasFeature + i) = 1.0;
  }
  for (std::size_t i = 0; i < 2; ++i) {
    last.ffn_in.weight(kStereoFeature + i, pc) = -kAnswerInhibit;
    last.ffn_in.weight(kOtherFeature + i, pc) = -kAnswerInhibit;
  }
  last.ffn_in.weight(kOne, dc) = kDecoyRead;
  last.ffn_out.weight(dc, kDecoyFeature) = 1.0;

  Matrix& head = m.lm_head.weight;
  for (TokenId t : roles[0]) {
    const auto tc = static_cast<std::size_t>(t);
    for (std::size_t i = 0; i < 4; ++i) head(kBiasFeature + i, tc) = 1.0;
    for (std::size_t i = 0; i < 2; ++i) head(kStereoFeature + i, tc) = kAnswerBoost;
  }
  for (TokenId t : roles[1])
    for (std::size_t i = 0; i < 2; ++i) head(kOtherFeature + i, static_cast<std::size_t>(t)) = kAnswerBoost;
  for (TokenId t : roles[2]) {
    const auto tc = static_cast<std::size_t>(t);
    m.lm_head.bias[tc] = kUnknownBias;
    for (std::size_t i = 0; i < 2; ++i) {
      head(kStereoFeature + i, tc) = -kUnknownPenalty;
      head(kOtherFeature + i, tc) = -kUnknownPenalty;
    }
  }
  head(kDecoyFeature, static_cast<std::size_t>(byte_token('!'))) = kDecoyBoost;

  // Scale the bias read-out so the planted channel adds exactly the margin to
  // the stereotyped first-token logit of an ambig instance.
  const Instance& probe = data.dataset.instances.front();
  const std::string& templ = default_instructions().templates.front();
  const ActivationTape tape = forward_with_activations(
      m, render_prompt(templ, probe), probe.choices[static_cast<std::size_t>(data.stereotyped.front())]);
  double read = 0.0;
  for (std::size_t i = 0; i < 4; ++i) read += tape.decoder_final.out(0, kBiasFeature + i);
  for (TokenId t : roles[0])
    for (std::size_t i = 0; i < 4; ++i) head(kBiasFeature + i, static_cast<std::size_t>(t)) = kPlantedMargin / read;

  PlantedFixture fx;
  fx.model = std::move(m);
  fx.dataset = std::move(data.dataset);
  fx.stereotyped = std::move(data.stereotyped);
  fx.planted = {Stack::decoder, cfg.n_dec_layers - 1, Sublayer::ffn_in, planted};
  fx.decoy = {Stack::decoder, cfg.n_dec_layers - 1, Sublayer::ffn_in, decoy};
  fx.notes =
      "Encoder is the identity on token embeddings; only uppercase bytes (group mention), '+' "
      "(answer is the stereotyped group) and '~' (answer is the other group) embed to nonzero "
      "vectors. Decoder layer 0 cross-attention copies the group cue into a 4-dim group feature "
      "and the answer cues into 2-dim answer features. In the last decoder layer, ffn.in channel " +
      std::to_string(planted) +
      " reads the group feature, is silenced by either answer feature, and writes a bias feature "
      "that the output head maps to +2.0 on the first token of every stereotyped-group label. "
      "Unknown labels carry a +1.0 output bias that answer features cancel; answer features "
      "raise the first token of the stated group. ffn.in channel " +
      std::to_string(decoy) +
      " is a decoy that reads the constant dimension and boosts an unused token.";

  const FixtureCheck check = check_planted_fixture(fx, InstructionSet{{templ}});
  if (check.ambig_biased_rate < 100.0 || check.ambig_flip_rate < 90.0 ||
      check.disambig_change_rate > 5.0)
    throw ConfigError("planted fixture failed its construction check");
  return fx;
}

FixtureCheck check_planted_fixture(const PlantedFixture& fx, const InstructionSet& instructions) {
  const Model zeroed = apply_mask(fx.model, mask_of(fx.model, {fx.planted}));
  std::size_t ambig = 0, biased = 0, flipped = 0, disambig = 0, changed = 0;
  auto argmax = [](const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
  };
  for (const auto& templ : instructions.templates) {
    for (std::size_t i = 0; i < fx.dataset.size(); ++i) {
      const Instance& in = fx.dataset.instances[i];
      const std::string prompt = render_prompt(templ, in);
      const int before = argmax(score_labels(fx.model, prompt, in.choices));
      const int after = argmax(score_labels(zeroed, prompt, in.choices));
      if (in.context_type == ContextType::ambig) {
        ++ambig;
        biased += before == fx.stereotyped[i];
        flipped += after == in.gold_index;
      } else {
        ++disambig;
        changed += before != after;
      }
    }
  }
  auto pct = [](std::size_t a, std::size_t b) { return b ? 100.0 * static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  return {pct(biased, ambig), pct(flipped, ambig), pct(changed, disambig)};
}

nlohmann::json oracle_check(std::uint64_t seed, Execution exec) {
  nlohmann::json checks = nlohmann::json::array();
  bool all = true;
  auto record = [&](const std::string& name, bool ok, nlohmann::json detail) {
    all = all && ok;
    checks.push_back({{"name", name}, {"passed", ok}, {"detail", std::move(detail)}});
  };

  const GradientFixture gf = build_gradient_fixture(seed);
  const GradientSweep sweep = gradient_sweep(gf.model, gf.prompt, gf.target, kFiniteDifferenceStep,
                                             1e-5, 1e-9, exec);
  record("gradient_fidelity", sweep.passed(),
         {{"checked", sweep.checked},
          {"failures", sweep.failures},
          {"max_rel_error", sweep.max_rel_error},
          {"sublayer_kinds", sweep.sublayers.size()}});

  const PlantedFixture fx = build_planted_fixture(seed);
  const InstructionSet& instructions = default_instructions();
  const FixtureCheck fc = check_planted_fixture(fx, instructions);
  record("fixture_invariants",
         fc.ambig_biased_rate == 100.0 && fc.ambig_flip_rate >= 90.0 && fc.disambig_change_rate <= 5.0,
         {{"ambig_biased_rate", fc.ambig_biased_rate},
          {"ambig_flip_rate", fc.ambig_flip_rate},
          {"disambig_change_rate", fc.disambig_change_rate}});

  std::vector<NeuronId> tops;
  int first = 0, top5 = 0;
  nlohmann::json trials = nlohmann::json::array();
  for (int t = 0; t < kDefaultTrials; ++t) {
    const Dataset sample = sample_detection_set(fx.dataset, kDefaultSampleSize, seed + static_cast<std::uint64_t>(t));
    const auto ranking = rank_neurons(detect(fx.model, sample, instructions, exec));
    int rank = -1;
    for (std::size_t i = 0; i < ranking.size(); ++i)
      if (ranking[i].id == fx.planted) rank = static_cast<int>(i);
    first += rank == 0;
    top5 += rank >= 0 && rank < 5;
    tops.push_back(ranking.front().id);
    trials.push_back({{"top1", ranking.front().id.to_string()}, {"planted_rank", rank + 1}});
  }
  record("planted_recovery", first >= 2 && top5 == kDefaultTrials, trials);

  std::vector<NeuronId> candidates = live_neurons(fx.model, fx.dataset, instructions.templates.front());
  candidates.insert(candidates.end(), tops.begin(), tops.end());
  const auto search = exhaustive_prune_search(fx.model, fx.dataset, instructions.templates.front(),
                                              candidates, 1, exec);
  bool agree = true;
  nlohmann::json ranks = nlohmann::json::array();
  for (const auto& id : tops) {
    const int r = search_rank(search, id);
    agree = agree && r >= 0 && r < 5;
    ranks.push_back(r + 1);
  }
  record("oracle_agreement", agree,
         {{"candidates", search.size()}, {"search_rank_of_top1", ranks},
          {"search_top1", search.front().mask.front().to_string()}});

  return {{"seed", seed}, {"checks", checks}, {"passed", all}};
}

}  // namespace crispr
