#include <algorithm>
#include <random>

#include "doctest.h"

#include "crispr/checkpoint.hpp"
#include "crispr/errors.hpp"
#include "crispr/eval.hpp"
#include "crispr/oracles.hpp"
#include "crispr/runtime.hpp"
#include "helpers.hpp"

using namespace crispr;

TEST_CASE("central difference of a line is its slope") {
  CHECK(central_difference([](double x) { return 0.3 * x + 1.0; }, 2.0, 1e-6) ==
        doctest::Approx(0.3).epsilon(1e-9));
  CHECK(central_difference([](double x) { return x * x * x; }, 1.0, 1e-4) ==
        doctest::Approx(3.0).epsilon(1e-7));
  CHECK_THROWS_AS(central_difference([](double x) { return x; }, 0.0, 0.0), BoundsError);
}

TEST_CASE("finite differences see no path from the last decoder position") {
  const Model m = testutil::tiny_model(71);
  const auto src = tokenize("is it open?");
  const auto tgt = tokenize("yes");
  const NeuronId id{Stack::decoder, 1, Sublayer::ffn_in, 3};
  CHECK(finite_difference_gradient(m, src, tgt, id, tgt.size()) == 0.0);
  CHECK(finite_difference_gradient(m, src, tgt, id, 0) != 0.0);
  CHECK_THROWS_AS(finite_difference_gradient(m, src, tgt, id, tgt.size() + 1), AddressError);
  CHECK_THROWS_AS(finite_difference_gradient(m, src, tgt, {Stack::decoder, 1, Sublayer::ffn_in, 99}, 0),
                  AddressError);
}

TEST_CASE("finite differences require f64") {
  ModelConfig c = testutil::tiny_config();
  c.dtype = DType::f32;
  const Model m = make_random_model(c, 1);
  CHECK_THROWS_AS(finite_difference_gradient(m, "a", "b", {Stack::encoder, 0, Sublayer::ffn_in, 0}, 0),
                  PrecisionError);
  CHECK_THROWS_AS(gradient_sweep(m, "a", "b"), PrecisionError);
}

TEST_CASE("analytic gradients agree with a full finite-difference sweep") {
  ModelConfig c = testutil::tiny_config(8, 8, 2);
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  const Model m = make_random_model(c, 72, 0.4);
  const GradientSweep s = gradient_sweep(m, "go now", "ok");
  CHECK(s.failures == 0);
  CHECK(s.passed());
  CHECK(s.sublayers.size() == 10);
  CHECK(s.checked > 0);
}

TEST_CASE("exhaustive search finds the planted neuron over the decoy") {
  const PlantedFixture fx = build_planted_fixture(3);
  const std::string tmpl = default_instructions().templates[0];
  const auto r = exhaustive_prune_search(fx.model, fx.dataset, tmpl, {fx.decoy, fx.planted}, 1);
  REQUIRE(r.size() == 2);
  CHECK(r[0].mask == std::vector<NeuronId>{fx.planted});
  CHECK(r[0].ambig_accuracy == 100.0);
  CHECK(r[1].ambig_accuracy == 0.0);
  CHECK(search_rank(r, fx.planted) == 0);
  CHECK(search_rank(r, fx.decoy) == 1);
  const auto pairs = exhaustive_prune_search(fx.model, fx.dataset, tmpl, {fx.decoy, fx.planted}, 2);
  CHECK(pairs.size() == 1);
}

TEST_CASE("exhaustive search ties break lexicographically and ignore candidate order") {
  const Model m = Model::zeros(testutil::tiny_config());
  const Dataset d = testutil::toy_dataset(4);
  std::vector<NeuronId> cands;
  for (int c = 0; c < 4; ++c) {
    cands.push_back({Stack::decoder, 1, Sublayer::ffn_in, c});
    cands.push_back({Stack::encoder, 0, Sublayer::self_attn_v, c});
  }
  const auto r = exhaustive_prune_search(m, d, "{context} {question} {choices}", cands, 2);
  CHECK(r.size() == 28);
  for (std::size_t i = 1; i < r.size(); ++i) {
    CHECK(r[i].ambig_accuracy == r[0].ambig_accuracy);
    CHECK(r[i - 1].mask < r[i].mask);
  }
  std::mt19937_64 rng(2);
  std::shuffle(cands.begin(), cands.end(), rng);
  cands.push_back(cands.front());
  const auto s = exhaustive_prune_search(m, d, "{context} {question} {choices}", cands, 2, Execution::serial);
  REQUIRE(s.size() == r.size());
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(s[i].mask == r[i].mask);
}

TEST_CASE("exhaustive search enforces its budget") {
  const Model m = Model::zeros(testutil::tiny_config(16, 300, 2));
  const Dataset d = testutil::toy_dataset(2);
  std::vector<NeuronId> cands;
  for (int c = 0; c < 257; ++c) cands.push_back({Stack::decoder, 0, Sublayer::ffn_in, c});
  CHECK_THROWS_AS(exhaustive_prune_search(m, d, "{context}", cands, 1), BudgetError);
  cands.resize(3);
  CHECK_THROWS_AS(exhaustive_prune_search(m, d, "{context}", cands, 3), BudgetError);
  CHECK_THROWS_AS(exhaustive_prune_search(m, d, "{context}", cands, 0), BoundsError);
}

TEST_CASE("fixture construction is deterministic") {
  const PlantedFixture a = build_planted_fixture(11);
  const PlantedFixture b = build_planted_fixture(11);
  CHECK(serialize_checkpoint(a.model) == serialize_checkpoint(b.model));
  CHECK(dump_dataset(a.dataset) == dump_dataset(b.dataset));
  CHECK(a.planted == b.planted);
  const GradientFixture g1 = build_gradient_fixture(2), g2 = build_gradient_fixture(2);
  CHECK(serialize_checkpoint(g1.model) == serialize_checkpoint(g2.model));
  CHECK(g1.prompt == g2.prompt);
}

TEST_CASE("planted fixture invariants hold under every built-in instruction") {
  const PlantedFixture fx = build_planted_fixture(13);
  CHECK(fx.planted.stack == Stack::decoder);
  CHECK(fx.planted.layer_index == fx.model.config.n_dec_layers - 1);
  CHECK(fx.planted.sublayer == Sublayer::ffn_in);
  CHECK(fx.dataset.size() == 40);
  CHECK(filter_context(fx.dataset, ContextType::ambig).size() == 20);
  const FixtureCheck c = check_planted_fixture(fx, default_instructions());
  CHECK(c.ambig_biased_rate == 100.0);
  CHECK(c.ambig_flip_rate == 100.0);
  CHECK(c.disambig_change_rate == 0.0);
  const auto live = live_neurons(fx.model, fx.dataset, default_instructions().templates[0]);
  CHECK(std::find(live.begin(), live.end(), fx.planted) != live.end());
}
