#include <random>

#include "doctest.h"

#include "crispr/errors.hpp"
#include "crispr/pruner.hpp"
#include "crispr/runtime.hpp"
#include "helpers.hpp"
#include "reference_model.hpp"

using namespace crispr;

namespace {

PruneMask mask_of(const Model& m, std::vector<NeuronId> ids) {
  PruneMask mask = PruneMask::empty(m.lineage());
  double s = static_cast<double>(ids.size());
  for (const auto& id : ids) mask.neurons.push_back({id, s--});
  return mask;
}

NeuronId ffn(Stack s, int layer, int c) { return {s, layer, Sublayer::ffn_in, c}; }

const char* kPrompt = "the doctor met the nurse. who was late?";

}  // namespace

TEST_CASE("masking zeroes the producing column and bias entry") {
  Model m = Model::zeros(testutil::tiny_config());
  Linear& q = m.encoder[0].self_attn.q;
  const double w[2][3] = {{1, 2, 3}, {4, 5, 6}};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) q.weight(i, j) = w[i][j];
  q.bias[0] = 0.1;
  q.bias[1] = 0.2;
  q.bias[2] = 0.3;
  const Model out = apply_mask(m, mask_of(m, {{Stack::encoder, 0, Sublayer::self_attn_q, 1}}));
  const Linear& r = out.encoder[0].self_attn.q;
  CHECK(r.weight(0, 0) == 1);
  CHECK(r.weight(0, 1) == 0);
  CHECK(r.weight(0, 2) == 3);
  CHECK(r.weight(1, 0) == 4);
  CHECK(r.weight(1, 1) == 0);
  CHECK(r.weight(1, 2) == 6);
  CHECK(r.bias[0] == 0.1);
  CHECK(r.bias[1] == 0.0);
  CHECK(r.bias[2] == 0.3);
  CHECK(out.config == m.config);
  CHECK(m.encoder[0].self_attn.q.weight(0, 1) == 2);
}

TEST_CASE("top-n selection keeps ranking order and checks bounds") {
  const std::vector<RankedNeuron> ranking = {{ffn(Stack::decoder, 0, 3), 0.9},
                                             {ffn(Stack::encoder, 1, 0), 0.4},
                                             {ffn(Stack::encoder, 0, 2), -0.1}};
  const PruneMask m = select_top_n(ranking, 2, "abc");
  CHECK(m.n() == 2);
  CHECK(m.neurons[0] == ranking[0]);
  CHECK(m.neurons[1] == ranking[1]);
  CHECK(select_top_n(ranking, 3, "abc").n() == 3);
  CHECK_THROWS_AS(select_top_n(ranking, 0, "abc"), BoundsError);
  CHECK_THROWS_AS(select_top_n(ranking, 4, "abc"), BoundsError);
}

TEST_CASE("empty mask is the identity on outputs") {
  const Model m = testutil::tiny_model(41);
  const Model out = apply_mask(m, PruneMask::empty(m.lineage()));
  CHECK(score_labels(out, kPrompt, {"the doctor", "the nurse"}) ==
        score_labels(m, kPrompt, {"the doctor", "the nurse"}));
  CHECK(out.lineage() == m.lineage());
}

TEST_CASE("masked neuron is the zero function and nothing else changes upstream") {
  const Model m = testutil::tiny_model(42);
  const NeuronId id = ffn(Stack::encoder, 1, 5);
  const Model out = apply_mask(m, mask_of(m, {id}));
  const auto base = forward_with_activations(m, kPrompt, "the doctor");
  const auto tape = forward_with_activations(out, kPrompt, "the doctor");
  const Matrix& a = tape.activation(id.hook());
  for (std::size_t p = 0; p < a.rows(); ++p) CHECK(a(p, 5) == 0.0);
  for (std::size_t h = 0; h < tape.hooks.size(); ++h) {
    if (tape.hooks[h] >= id.hook()) break;
    CHECK(tape.activations[h] == base.activations[h]);
  }
  const Matrix& b = base.activation(id.hook());
  for (std::size_t p = 0; p < a.rows(); ++p)
    for (std::size_t c = 0; c < a.cols(); ++c)
      if (c != 5) CHECK(a(p, c) == b(p, c));
}

TEST_CASE("masking every ffn.in channel matches an FFN-free reference") {
  const Model m = testutil::tiny_model(43);
  PruneMask mask = PruneMask::empty(m.lineage());
  for (const auto& key : m.hooks())
    if (key.sublayer == Sublayer::ffn_in)
      for (int c = 0; c < m.width(key); ++c) mask.neurons.push_back({{key.stack, key.layer, key.sublayer, c}, 0.0});
  const Model out = apply_mask(m, mask);
  Model ref_model = m;
  for (auto& l : ref_model.encoder) {
    l.ffn_in.weight = Matrix(l.ffn_in.weight.rows(), l.ffn_in.weight.cols());
    std::fill(l.ffn_in.bias.begin(), l.ffn_in.bias.end(), 0.0);
  }
  for (auto& l : ref_model.decoder) {
    l.ffn_in.weight = Matrix(l.ffn_in.weight.rows(), l.ffn_in.weight.cols());
    std::fill(l.ffn_in.bias.begin(), l.ffn_in.bias.end(), 0.0);
  }
  const auto src = tokenize(kPrompt), tgt = tokenize("the nurse");
  const double expected = ref::label_score(ref_model, src, tgt);
  CHECK(score_labels(out, kPrompt, {"the nurse", "x"})[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("mask application is idempotent and composes as a union") {
  const Model m = testutil::tiny_model(44);
  const PruneMask a = mask_of(m, {ffn(Stack::decoder, 0, 1), {Stack::encoder, 0, Sublayer::self_attn_v, 2}});
  const PruneMask b = mask_of(m, {ffn(Stack::decoder, 0, 1), ffn(Stack::encoder, 1, 7)});
  const Model once = apply_mask(m, a);
  CHECK(apply_mask(once, a) == once);
  CHECK(apply_mask(apply_mask(m, a), b) == apply_mask(m, merge_masks(a, b)));
  CHECK(apply_mask(apply_mask(m, b), a) == apply_mask(m, merge_masks(a, b)));
}

TEST_CASE("compaction matches masking") {
  ModelConfig c = testutil::tiny_config(16, 8, 2);
  const Model m = make_random_model(c, 45);
  const PruneMask mask = mask_of(m, {ffn(Stack::decoder, 1, 2), ffn(Stack::decoder, 1, 6)});
  const Model small = compact(m, mask);
  CHECK(small.config.dec_ffn_widths == std::vector<int>{8, 6});
  CHECK(small.decoder[1].ffn_in.weight.cols() == 6);
  CHECK(small.decoder[1].ffn_out.weight.rows() == 6);
  const auto masked = forward_with_activations(apply_mask(m, mask), kPrompt, "the nurse");
  const auto compacted = forward_with_activations(small, kPrompt, "the nurse");
  for (std::size_t i = 0; i < masked.logits.size(); ++i)
    CHECK(std::abs(masked.logits.values()[i] - compacted.logits.values()[i]) <= 1e-12);
  CHECK(small.lineage() == m.lineage());
}

TEST_CASE("compaction rejects non-FFN neurons and handles the empty mask") {
  const Model m = testutil::tiny_model(46);
  const auto same = compact(m, PruneMask::empty(m.lineage()));
  CHECK(score_labels(same, kPrompt, {"a", "b"}) == score_labels(m, kPrompt, {"a", "b"}));
  try {
    compact(m, mask_of(m, {{Stack::decoder, 0, Sublayer::self_attn_o, 3}}));
    FAIL("expected an unsupported compaction error");
  } catch (const UnsupportedCompactionError& e) {
    CHECK(std::string(e.what()).find("decoder.0.self_attn.o") != std::string::npos);
  }
}

TEST_CASE("masks round trip and validate") {
  const Model m = testutil::tiny_model(47);
  PruneMask mask = mask_of(m, {ffn(Stack::decoder, 1, 4), {Stack::encoder, 0, Sublayer::self_attn_k, 0}});
  mask.provenance.seed = 12;
  mask.provenance.sample_ids = {"a", "b"};
  testutil::TempDir dir;
  save_mask(mask, dir / "m.json");
  CHECK(load_mask(dir / "m.json") == mask);
  CHECK(dump_mask(load_mask(dir / "m.json")) == dump_mask(mask));

  PruneMask dup = mask;
  dup.neurons[1].id = dup.neurons[0].id;
  CHECK_THROWS_AS(dup.validate(), DuplicateNeuronError);
  PruneMask order = mask;
  std::swap(order.neurons[0], order.neurons[1]);
  CHECK_THROWS_AS(order.validate(), ScoreOrderError);
  auto j = mask.to_json();
  j["n"] = 5;
  CHECK_THROWS_AS(PruneMask::from_json(j), SchemaError);
}

TEST_CASE("stale and misaddressed masks are rejected") {
  const Model m = testutil::tiny_model(48);
  const Model other = testutil::tiny_model(49);
  const PruneMask mask = mask_of(other, {ffn(Stack::decoder, 0, 0)});
  CHECK_THROWS_AS(apply_mask(m, mask), StaleMaskError);
  CHECK_THROWS_AS(apply_mask(m, mask_of(m, {ffn(Stack::decoder, 0, 32)})), AddressError);
  CHECK_THROWS_AS(apply_mask(m, mask_of(m, {ffn(Stack::decoder, 2, 0)})), AddressError);
}
