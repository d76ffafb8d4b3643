#include "crispr/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "crispr/errors.hpp"
#include "crispr/kernels.hpp"

namespace crispr {

namespace {

constexpr int kEncoderHooksPerLayer = 6;
constexpr int kDecoderHooksPerLayer = 10;

int encoder_offset(Sublayer s) {
  switch (s) {
    case Sublayer::self_attn_q: return 0;
    case Sublayer::self_attn_k: return 1;
    case Sublayer::self_attn_v: return 2;
    case Sublayer::self_attn_o: return 3;
    case Sublayer::ffn_in: return 4;
    case Sublayer::ffn_out: return 5;
    default: break;
  }
  throw AddressError("cross attention does not exist in the encoder");
}

void check_finite(const Matrix& m, const std::string& path) {
  for (double v : m.values())
    if (!std::isfinite(v)) throw NumericError("non-finite activation at " + path);
}

void rms_norm(const Matrix& x, NormCache& cache) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  cache.out = Matrix(n, d);
  cache.rms.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = x.row(i);
    double ss = 0.0;
    for (double v : row) ss += v * v;
    const double r = std::sqrt(ss / static_cast<double>(d) + kRmsEpsilon);
    cache.rms[i] = r;
    auto out = cache.out.row(i);
    for (std::size_t j = 0; j < d; ++j) out[j] = row[j] / r;
  }
}

// Accumulates d(input) into dx given d(output) of an RMS normalization.
void rms_norm_backward(const NormCache& cache, const Matrix& dout, Matrix& dx) {
  const std::size_t d = cache.out.cols();
  for (std::size_t i = 0; i < cache.out.rows(); ++i) {
    const auto n = cache.out.row(i);
    const auto g = dout.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += g[j] * n[j];
    dot /= static_cast<double>(d);
    auto out = dx.row(i);
    for (std::size_t j = 0; j < d; ++j) out[j] += (g[j] - n[j] * dot) / cache.rms[i];
  }
}

void attend(const Matrix& q, const Matrix& k, const Matrix& v, int heads, bool causal,
            AttentionCache& cache) {
  const std::size_t nq = q.rows();
  const std::size_t nk = k.rows();
  const std::size_t d = q.cols();
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.probs.assign(static_cast<std::size_t>(heads), Matrix(nq, nk));
  cache.context = Matrix(nq, d);
  std::vector<double> scores(nk);
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
    const std::size_t base = h * dh;
    Matrix& p = cache.probs[h];
    for (std::size_t i = 0; i < nq; ++i) {
      const std::size_t limit = causal ? std::min(i + 1, nk) : nk;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < limit; ++j) {
        double s = 0.0;
        for (std::size_t e = 0; e < dh; ++e) s += q(i, base + e) * k(j, base + e);
        scores[j] = s * scale;
        mx = std::max(mx, scores[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < limit; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        total += scores[j];
      }
      for (std::size_t j = 0; j < limit; ++j) p(i, j) = scores[j] / total;
      for (std::size_t j = 0; j < limit; ++j) {
        const double w = p(i, j);
        for (std::size_t e = 0; e < dh; ++e) cache.context(i, base + e) += w * v(j, base + e);
      }
    }
  }
}

void attend_backward(const Matrix& q, const Matrix& k, const Matrix& v, int heads,
                     const AttentionCache& cache, const Matrix& dctx, Matrix& dq, Matrix& dk,
                     Matrix& dv) {
  const std::size_t nq = q.rows();
  const std::size_t nk = k.rows();
  const std::size_t d = q.cols();
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  dq = Matrix(nq, d);
  dk = Matrix(nk, d);
  dv = Matrix(nk, d);
  std::vector<double> dp(nk);
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
    const std::size_t base = h * dh;
    const Matrix& p = cache.probs[h];
    for (std::size_t i = 0; i < nq; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < nk; ++j) {
        double s = 0.0;
        for (std::size_t e = 0; e < dh; ++e) s += dctx(i, base + e) * v(j, base + e);
        dp[j] = s;
        dot += p(i, j) * s;
        for (std::size_t e = 0; e < dh; ++e) dv(j, base + e) += p(i, j) * dctx(i, base + e);
      }
      for (std::size_t j = 0; j < nk; ++j) {
        const double ds = p(i, j) * (dp[j] - dot) * scale;
        if (ds == 0.0) continue;
        for (std::size_t e = 0; e < dh; ++e) {
          dq(i, base + e) += ds * k(j, base + e);
          dk(j, base + e) += ds * q(i, base + e);
        }
      }
    }
  }
}

void add_into(Matrix& dst, const Matrix& src) {
  auto& a = dst.values();
  const auto& b = src.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

class ForwardRunner {
 public:
  ForwardRunner(const Model& model, ActivationTape& tape, std::span<const Intervention> iv)
      : model_(model), tape_(tape), interventions_(iv) {}

  void encode() {
    const auto& cfg = model_.config;
    const std::size_t n = tape_.source.size();
    Matrix x(n, static_cast<std::size_t>(cfg.d_model));
    embed(tape_.source, model_.encoder_positions, x);
    tape_.encoder_cache.assign(model_.encoder.size(), {});
    for (std::size_t l = 0; l < model_.encoder.size(); ++l) {
      const EncoderLayer& layer = model_.encoder[l];
      EncoderLayerCache& c = tape_.encoder_cache[l];
      const int li = static_cast<int>(l);
      rms_norm(x, c.attn_norm);
      const Matrix& q = hook({Stack::encoder, li, Sublayer::self_attn_q}, layer.self_attn.q, c.attn_norm.out);
      const Matrix& k = hook({Stack::encoder, li, Sublayer::self_attn_k}, layer.self_attn.k, c.attn_norm.out);
      const Matrix& v = hook({Stack::encoder, li, Sublayer::self_attn_v}, layer.self_attn.v, c.attn_norm.out);
      attend(q, k, v, cfg.n_heads, false, c.self_attn);
      add_into(x, hook({Stack::encoder, li, Sublayer::self_attn_o}, layer.self_attn.o, c.self_attn.context));
      feed_forward(Stack::encoder, li, layer.ffn_in, layer.ffn_out, x, c.ffn_norm, c.ffn_hidden);
    }
    rms_norm(x, tape_.encoder_final);
  }

  void decode() {
    const auto& cfg = model_.config;
    const std::size_t n = tape_.decoder_input.size();
    const Matrix& memory = tape_.encoder_final.out;
    Matrix y(n, static_cast<std::size_t>(cfg.d_model));
    embed(tape_.decoder_input, model_.decoder_positions, y);
    tape_.decoder_cache.assign(model_.decoder.size(), {});
    for (std::size_t l = 0; l < model_.decoder.size(); ++l) {
      const DecoderLayer& layer = model_.decoder[l];
      DecoderLayerCache& c = tape_.decoder_cache[l];
      const int li = static_cast<int>(l);
      rms_norm(y, c.self_norm);
      const Matrix& q = hook({Stack::decoder, li, Sublayer::self_attn_q}, layer.self_attn.q, c.self_norm.out);
      const Matrix& k = hook({Stack::decoder, li, Sublayer::self_attn_k}, layer.self_attn.k, c.self_norm.out);
      const Matrix& v = hook({Stack::decoder, li, Sublayer::self_attn_v}, layer.self_attn.v, c.self_norm.out);
      attend(q, k, v, cfg.n_heads, true, c.self_attn);
      add_into(y, hook({Stack::decoder, li, Sublayer::self_attn_o}, layer.self_attn.o, c.self_attn.context));

      rms_norm(y, c.cross_norm);
      const Matrix& cq = hook({Stack::decoder, li, Sublayer::cross_attn_q}, layer.cross_attn.q, c.cross_norm.out);
      const Matrix& ck = hook({Stack::decoder, li, Sublayer::cross_attn_k}, layer.cross_attn.k, memory);
      const Matrix& cv = hook({Stack::decoder, li, Sublayer::cross_attn_v}, layer.cross_attn.v, memory);
      attend(cq, ck, cv, cfg.n_heads, false, c.cross_attn);
      add_into(y, hook({Stack::decoder, li, Sublayer::cross_attn_o}, layer.cross_attn.o, c.cross_attn.context));

      feed_forward(Stack::decoder, li, layer.ffn_in, layer.ffn_out, y, c.ffn_norm, c.ffn_hidden);
    }
    rms_norm(y, tape_.decoder_final);
    kernels::linear(tape_.decoder_final.out, model_.lm_head.weight, model_.lm_head.bias,
                    tape_.logits);
    check_finite(tape_.logits, "lm_head");

    const std::size_t vocab = tape_.logits.cols();
    tape_.probabilities = Matrix(n, vocab);
    double log_prob = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const auto row = tape_.logits.row(t);
      const double mx = *std::max_element(row.begin(), row.end());
      double total = 0.0;
      for (double z : row) total += std::exp(z - mx);
      const double lse = mx + std::log(total);
      auto p = tape_.probabilities.row(t);
      for (std::size_t j = 0; j < vocab; ++j) p[j] = std::exp(row[j] - lse);
      if (t < tape_.target.size())
        log_prob += row[static_cast<std::size_t>(tape_.target[t])] - lse;
    }
    tape_.log_prob = log_prob;
    tape_.target_prob = std::exp(log_prob);
  }

 private:
  void embed(const std::vector<TokenId>& ids, const Matrix& positions, Matrix& out) const {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto e = model_.token_embedding.row(static_cast<std::size_t>(ids[i]));
      const auto p = positions.row(i);
      auto o = out.row(i);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] = e[j] + p[j];
    }
  }

  const Matrix& hook(const HookKey& key, const Linear& lin, const Matrix& input) {
    const std::size_t slot = hook_slot(model_.config, key);
    Matrix& out = tape_.activations[slot];
    kernels::linear(input, lin.weight, lin.bias, out);
    for (const Intervention& iv : interventions_) {
      if (iv.hook_index != slot) continue;
      if (iv.position >= out.rows() || iv.channel >= out.cols())
        throw AddressError("intervention outside " + key.path());
      out(iv.position, iv.channel) += iv.delta;
    }
    check_finite(out, key.path());
    return out;
  }

  void feed_forward(Stack stack, int layer, const Linear& in, const Linear& out_lin, Matrix& x,
                    NormCache& norm, Matrix& hidden) {
    rms_norm(x, norm);
    const Matrix& f = hook({stack, layer, Sublayer::ffn_in}, in, norm.out);
    hidden = Matrix(f.rows(), f.cols());
    for (std::size_t i = 0; i < f.size(); ++i) hidden.values()[i] = gelu(f.values()[i]);
    add_into(x, hook({stack, layer, Sublayer::ffn_out}, out_lin, hidden));
  }

  const Model& model_;
  ActivationTape& tape_;
  std::span<const Intervention> interventions_;
};

void check_tokens(const Model& model, const std::vector<TokenId>& ids, const char* what) {
  if (ids.empty()) throw EmptyInputError(std::string(what) + " is empty");
  for (TokenId id : ids)
    if (id < 0 || id >= model.config.vocab_size)
      throw ConfigError(std::string(what) + " contains a token outside the model vocabulary");
}

ActivationTape start_tape(const Model& model, const std::vector<TokenId>& source) {
  check_tokens(model, source, "prompt");
  if (source.size() > static_cast<std::size_t>(model.config.max_seq_len))
    throw LengthError("prompt has " + std::to_string(source.size()) +
                      " tokens, max_seq_len is " + std::to_string(model.config.max_seq_len));
  ActivationTape tape;
  tape.model = &model;
  tape.hooks = model.hooks();
  tape.activations.assign(tape.hooks.size(), Matrix());
  tape.source = source;
  return tape;
}

void set_target(const Model& model, ActivationTape& tape, const std::vector<TokenId>& target) {
  check_tokens(model, target, "target");
  if (target.size() + 1 > static_cast<std::size_t>(model.config.max_seq_len))
    throw LengthError("target has " + std::to_string(target.size()) +
                      " tokens, decoder holds at most " +
                      std::to_string(model.config.max_seq_len - 1));
  tape.target = target;
  tape.decoder_input.clear();
  tape.decoder_input.push_back(kBosToken);
  tape.decoder_input.insert(tape.decoder_input.end(), target.begin(), target.end());
}

}  // namespace

const Matrix& ActivationTape::activation(const HookKey& key) const {
  return activations.at(hook_slot(model->config, key));
}

const Matrix& GradientMap::gradient(const HookKey& key) const {
  const auto it = std::lower_bound(hooks.begin(), hooks.end(), key);
  if (it == hooks.end() || *it != key) throw MissingHookError("no gradient for " + key.path());
  return gradients[static_cast<std::size_t>(it - hooks.begin())];
}

std::size_t hook_slot(const ModelConfig& config, const HookKey& key) {
  if (key.layer < 0) throw AddressError("negative layer in " + key.path());
  if (key.stack == Stack::encoder) {
    if (key.layer >= config.n_enc_layers) throw AddressError("no such layer: " + key.path());
    return static_cast<std::size_t>(key.layer * kEncoderHooksPerLayer + encoder_offset(key.sublayer));
  }
  if (key.layer >= config.n_dec_layers) throw AddressError("no such layer: " + key.path());
  return static_cast<std::size_t>(config.n_enc_layers * kEncoderHooksPerLayer +
                                  key.layer * kDecoderHooksPerLayer +
                                  static_cast<int>(key.sublayer));
}

std::vector<TokenId> tokenize(std::string_view text) { return Tokenizer::standard().encode(text); }

std::string detokenize(const std::vector<TokenId>& ids) {
  return Tokenizer::standard().decode(ids);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

ActivationTape forward_with_activations(const Model& model, std::string_view prompt,
                                        std::string_view target,
                                        std::span<const Intervention> interventions) {
  return forward_with_activations(model, tokenize(prompt), tokenize(target), interventions);
}

ActivationTape forward_with_activations(const Model& model, const std::vector<TokenId>& source,
                                        const std::vector<TokenId>& target,
                                        std::span<const Intervention> interventions) {
  ActivationTape tape = start_tape(model, source);
  set_target(model, tape, target);
  ForwardRunner runner(model, tape, interventions);
  runner.encode();
  runner.decode();
  return tape;
}

std::vector<double> score_labels(const Model& model, std::string_view prompt,
                                 const std::vector<std::string>& classes) {
  if (classes.empty()) throw DegenerateClassSetError("no classes to score");
  ActivationTape tape = start_tape(model, tokenize(prompt));
  ForwardRunner runner(model, tape, {});
  runner.encode();
  std::vector<double> scores;
  scores.reserve(classes.size());
  for (const auto& c : classes) {
    set_target(model, tape, tokenize(c));
    runner.decode();
    scores.push_back(tape.log_prob / static_cast<double>(tape.target.size()));
  }
  return scores;
}

GradientMap backward_to_activations(const ActivationTape& tape) {
  if (tape.model == nullptr) throw MissingHookError("tape is not bound to a model");
  const Model& model = *tape.model;
  const auto& cfg = model.config;
  const std::vector<HookKey> expected = model.hooks();
  if (tape.hooks != expected || tape.activations.size() != expected.size())
    throw MissingHookError("tape hook set does not match the model");
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (tape.activations[i].empty()) throw MissingHookError("missing hook " + expected[i].path());
  if (tape.encoder_cache.size() != model.encoder.size() ||
      tape.decoder_cache.size() != model.decoder.size() || tape.probabilities.empty())
    throw MissingHookError("tape lacks cached intermediates");

  GradientMap grads;
  grads.hooks = expected;
  grads.gradients.resize(expected.size());
  auto store = [&](const HookKey& key, const Matrix& g) {
    grads.gradients[hook_slot(cfg, key)] = g;
  };
  auto act = [&](const HookKey& key) -> const Matrix& { return tape.activation(key); };

  // d log P / d logits.
  const std::size_t n_dec = tape.decoder_input.size();
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  Matrix dlogits(n_dec, tape.logits.cols());
  for (std::size_t t = 0; t < tape.target.size(); ++t) {
    auto row = dlogits.row(t);
    const auto p = tape.probabilities.row(t);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = -p[j];
    row[static_cast<std::size_t>(tape.target[t])] += 1.0;
  }

  Matrix dnorm;
  kernels::linear_backward_input(dlogits, model.lm_head.weight, dnorm);
  Matrix dy(n_dec, d);
  rms_norm_backward(tape.decoder_final, dnorm, dy);

  Matrix dmemory(tape.source.size(), d);
  Matrix tmp;
  Matrix dq, dk, dv;

  auto ffn_backward = [&](Stack stack, int li, const Linear& in, const Linear& out,
                          const NormCache& norm, Matrix& dres) {
    const HookKey out_key{stack, li, Sublayer::ffn_out};
    const HookKey in_key{stack, li, Sublayer::ffn_in};
    store(out_key, dres);
    Matrix dhidden;
    kernels::linear_backward_input(dres, out.weight, dhidden);
    const Matrix& f = act(in_key);
    for (std::size_t i = 0; i < f.size(); ++i)
      dhidden.values()[i] *= gelu_derivative(f.values()[i]);
    store(in_key, dhidden);
    kernels::linear_backward_input(dhidden, in.weight, tmp);
    rms_norm_backward(norm, tmp, dres);
  };

  for (std::size_t l = model.decoder.size(); l-- > 0;) {
    const DecoderLayer& layer = model.decoder[l];
    const DecoderLayerCache& c = tape.decoder_cache[l];
    const int li = static_cast<int>(l);
    ffn_backward(Stack::decoder, li, layer.ffn_in, layer.ffn_out, c.ffn_norm, dy);

    store({Stack::decoder, li, Sublayer::cross_attn_o}, dy);
    Matrix dctx;
    kernels::linear_backward_input(dy, layer.cross_attn.o.weight, dctx);
    attend_backward(act({Stack::decoder, li, Sublayer::cross_attn_q}),
                    act({Stack::decoder, li, Sublayer::cross_attn_k}),
                    act({Stack::decoder, li, Sublayer::cross_attn_v}), cfg.n_heads, c.cross_attn,
                    dctx, dq, dk, dv);
    store({Stack::decoder, li, Sublayer::cross_attn_q}, dq);
    store({Stack::decoder, li, Sublayer::cross_attn_k}, dk);
    store({Stack::decoder, li, Sublayer::cross_attn_v}, dv);
    kernels::linear_backward_input(dq, layer.cross_attn.q.weight, tmp);
    rms_norm_backward(c.cross_norm, tmp, dy);
    kernels::linear_backward_input(dk, layer.cross_attn.k.weight, tmp);
    add_into(dmemory, tmp);
    kernels::linear_backward_input(dv, layer.cross_attn.v.weight, tmp);
    add_into(dmemory, tmp);

    store({Stack::decoder, li, Sublayer::self_attn_o}, dy);
    kernels::linear_backward_input(dy, layer.self_attn.o.weight, dctx);
    attend_backward(act({Stack::decoder, li, Sublayer::self_attn_q}),
                    act({Stack::decoder, li, Sublayer::self_attn_k}),
                    act({Stack::decoder, li, Sublayer::self_attn_v}), cfg.n_heads, c.self_attn,
                    dctx, dq, dk, dv);
    store({Stack::decoder, li, Sublayer::self_attn_q}, dq);
    store({Stack::decoder, li, Sublayer::self_attn_k}, dk);
    store({Stack::decoder, li, Sublayer::self_attn_v}, dv);
    Matrix dn(n_dec, d);
    kernels::linear_backward_input(dq, layer.self_attn.q.weight, tmp);
    add_into(dn, tmp);
    kernels::linear_backward_input(dk, layer.self_attn.k.weight, tmp);
    add_into(dn, tmp);
    kernels::linear_backward_input(dv, layer.self_attn.v.weight, tmp);
    add_into(dn, tmp);
    rms_norm_backward(c.self_norm, dn, dy);
  }

  Matrix dx(tape.source.size(), d);
  rms_norm_backward(tape.encoder_final, dmemory, dx);
  for (std::size_t l = model.encoder.size(); l-- > 0;) {
    const EncoderLayer& layer = model.encoder[l];
    const EncoderLayerCache& c = tape.encoder_cache[l];
    const int li = static_cast<int>(l);
    ffn_backward(Stack::encoder, li, layer.ffn_in, layer.ffn_out, c.ffn_norm, dx);

    store({Stack::encoder, li, Sublayer::self_attn_o}, dx);
    Matrix dctx;
    kernels::linear_backward_input(dx, layer.self_attn.o.weight, dctx);
    attend_backward(act({Stack::encoder, li, Sublayer::self_attn_q}),
                    act({Stack::encoder, li, Sublayer::self_attn_k}),
                    act({Stack::encoder, li, Sublayer::self_attn_v}), cfg.n_heads, c.self_attn,
                    dctx, dq, dk, dv);
    store({Stack::encoder, li, Sublayer::self_attn_q}, dq);
    store({Stack::encoder, li, Sublayer::self_attn_k}, dk);
    store({Stack::encoder, li, Sublayer::self_attn_v}, dv);
    Matrix dn(tape.source.size(), d);
    kernels::linear_backward_input(dq, layer.self_attn.q.weight, tmp);
    add_into(dn, tmp);
    kernels::linear_backward_input(dk, layer.self_attn.k.weight, tmp);
    add_into(dn, tmp);
    kernels::linear_backward_input(dv, layer.self_attn.v.weight, tmp);
    add_into(dn, tmp);
    rms_norm_backward(c.attn_norm, dn, dx);
  }

  // Everything above is d log P; the attribution target is P itself.
  for (std::size_t i = 0; i < grads.gradients.size(); ++i) {
    for (double& g : grads.gradients[i].values()) g *= tape.target_prob;
    check_finite(grads.gradients[i], expected[i].path());
  }
  return grads;
}

}  // namespace crispr
