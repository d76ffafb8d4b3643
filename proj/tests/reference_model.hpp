#pragma once

// Naive step-by-step re-implementation of the transformer used as an oracle.
// It shares only the parameter structs with the library: no kernels, no tape,
// no cached intermediates. Decoding is recomputed from scratch for every
// prefix, so teacher forcing is checked rather than assumed.

#include <cmath>
#include <vector>

#include "crispr/model.hpp"
#include "crispr/tokenizer.hpp"

namespace ref {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat apply(const crispr::Linear& lin, const Mat& x) {
  Mat y(x.size(), Vec(lin.weight.cols(), 0.0));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t j = 0; j < lin.weight.cols(); ++j) {
      long double s = lin.bias[j];
      for (std::size_t i = 0; i < lin.weight.rows(); ++i) s += x[r][i] * lin.weight(i, j);
      y[r][j] = static_cast<double>(s);
    }
  return y;
}

inline Mat norm(const Mat& x) {
  Mat y = x;
  for (auto& row : y) {
    double ss = 0.0;
    for (double v : row) ss += v * v;
    const double r = std::sqrt(ss / static_cast<double>(row.size()) + 1e-6);
    for (double& v : row) v /= r;
  }
  return y;
}

inline void add(Mat& x, const Mat& y) {
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t c = 0; c < x[r].size(); ++c) x[r][c] += y[r][c];
}

inline Mat attention(const crispr::Attention& att, const Mat& xq, const Mat& xkv, int heads,
                     bool causal) {
  const Mat q = ref::apply(att.q, xq), k = ref::apply(att.k, xkv), v = ref::apply(att.v, xkv);
  const std::size_t d = q[0].size(), dh = d / static_cast<std::size_t>(heads);
  Mat ctx(q.size(), Vec(d, 0.0));
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h)
    for (std::size_t i = 0; i < q.size(); ++i) {
      const std::size_t n = causal ? i + 1 : k.size();
      Vec w(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t e = 0; e < dh; ++e) s += q[i][h * dh + e] * k[j][h * dh + e];
        w[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, w[j]);
      }
      double z = 0.0;
      for (double& x : w) z += (x = std::exp(x - mx));
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t e = 0; e < dh; ++e) ctx[i][h * dh + e] += w[j] / z * v[j][h * dh + e];
    }
  return ref::apply(att.o, ctx);
}

inline Mat ffn(const crispr::Linear& in, const crispr::Linear& out, const Mat& x) {
  Mat h = ref::apply(in, x);
  for (auto& row : h)
    for (double& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return ref::apply(out, h);
}

inline Mat embed(const crispr::Model& m, const std::vector<crispr::TokenId>& ids,
                 const crispr::Matrix& pos) {
  Mat x(ids.size(), Vec(static_cast<std::size_t>(m.config.d_model)));
  for (std::size_t t = 0; t < ids.size(); ++t)
    for (std::size_t c = 0; c < x[t].size(); ++c)
      x[t][c] = m.token_embedding(static_cast<std::size_t>(ids[t]), c) + pos(t, c);
  return x;
}

inline Mat encode(const crispr::Model& m, const std::vector<crispr::TokenId>& src) {
  Mat x = embed(m, src, m.encoder_positions);
  for (const auto& layer : m.encoder) {
    const Mat n1 = norm(x);
    add(x, attention(layer.self_attn, n1, n1, m.config.n_heads, false));
    add(x, ffn(layer.ffn_in, layer.ffn_out, norm(x)));
  }
  return norm(x);
}

// Logits at every decoder position for the given decoder input.
inline Mat decode(const crispr::Model& m, const Mat& memory,
                  const std::vector<crispr::TokenId>& input) {
  Mat y = embed(m, input, m.decoder_positions);
  for (const auto& layer : m.decoder) {
    const Mat n1 = norm(y);
    add(y, attention(layer.self_attn, n1, n1, m.config.n_heads, true));
    add(y, attention(layer.cross_attn, norm(y), memory, m.config.n_heads, false));
    add(y, ffn(layer.ffn_in, layer.ffn_out, norm(y)));
  }
  return ref::apply(m.lm_head, norm(y));
}

// log p(label token t | prompt, label[0..t)) recomputed from scratch for every t.
inline Vec step_log_probs(const crispr::Model& m, const std::vector<crispr::TokenId>& src,
                          const std::vector<crispr::TokenId>& label) {
  const Mat memory = encode(m, src);
  Vec out;
  std::vector<crispr::TokenId> prefix = {crispr::kBosToken};
  for (crispr::TokenId tok : label) {
    const Vec logits = decode(m, memory, prefix).back();
    double mx = -1e300;
    for (double l : logits) mx = std::max(mx, l);
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    out.push_back(logits[static_cast<std::size_t>(tok)] - mx - std::log(z));
    prefix.push_back(tok);
  }
  return out;
}

inline double label_score(const crispr::Model& m, const std::vector<crispr::TokenId>& src,
                          const std::vector<crispr::TokenId>& label) {
  const Vec lp = step_log_probs(m, src, label);
  double s = 0.0;
  for (double v : lp) s += v;
  return s / static_cast<double>(lp.size());
}

// ffn.in outputs of every layer: encoder layers first, then decoder layers.
inline std::vector<Mat> ffn_in_outputs(const crispr::Model& m, const std::vector<crispr::TokenId>& src,
                                       const std::vector<crispr::TokenId>& dec_input) {
  std::vector<Mat> out;
  Mat x = embed(m, src, m.encoder_positions);
  for (const auto& layer : m.encoder) {
    const Mat n1 = norm(x);
    add(x, attention(layer.self_attn, n1, n1, m.config.n_heads, false));
    out.push_back(ref::apply(layer.ffn_in, norm(x)));
    add(x, ffn(layer.ffn_in, layer.ffn_out, norm(x)));
  }
  const Mat memory = norm(x);
  Mat y = embed(m, dec_input, m.decoder_positions);
  for (const auto& layer : m.decoder) {
    const Mat n1 = norm(y);
    add(y, attention(layer.self_attn, n1, n1, m.config.n_heads, true));
    add(y, attention(layer.cross_attn, norm(y), memory, m.config.n_heads, false));
    out.push_back(ref::apply(layer.ffn_in, norm(y)));
    add(y, ffn(layer.ffn_in, layer.ffn_out, norm(y)));
  }
  return out;
}

}  // namespace ref
