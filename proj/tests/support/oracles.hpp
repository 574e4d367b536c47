#pragma once

// Independent reference implementations used as test oracles. They follow
// the textbook formulas directly, in long double, and share no code with
// the library kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "surealm/model.hpp"
#include "surealm/store.hpp"

namespace surealm::oracle {

using LD = long double;
using LMat = std::vector<std::vector<LD>>;

inline LMat zeros(std::size_t r, std::size_t c) { return LMat(r, std::vector<LD>(c, 0.0L)); }

inline LMat to_l(ConstMatView m) {
  LMat out = zeros(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

inline LMat matmul(const LMat& a, const LMat& b) {
  const std::size_t n = a.size(), k = b.size(), m = b.empty() ? 0 : b[0].size();
  LMat c = zeros(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < m; ++j) c[i][j] += a[i][p] * b[p][j];
  return c;
}

inline LMat layer_norm(const LMat& x, const LMat& g, const LMat& b) {
  LMat y = x;
  const std::size_t d = x.empty() ? 0 : x[0].size();
  for (std::size_t t = 0; t < x.size(); ++t) {
    LD mean = 0;
    for (LD v : x[t]) mean += v;
    mean /= d;
    LD var = 0;
    for (LD v : x[t]) var += (v - mean) * (v - mean);
    var /= d;
    for (std::size_t c = 0; c < d; ++c)
      y[t][c] = g[0][c] * (x[t][c] - mean) / std::sqrt(var + 1e-5L) + b[0][c];
  }
  return y;
}

/// softmax((q k^T + mask) / sqrt(d_k)) v; rows with no open column are zero.
inline LMat attention(const LMat& q, const LMat& k, const LMat& v,
                      const std::vector<std::vector<bool>>& open) {
  const std::size_t dk = q.empty() ? 1 : q[0].size();
  const std::size_t dv = v.empty() ? 0 : v[0].size();
  LMat out = zeros(q.size(), dv);
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<LD> s(k.size(), 0.0L);
    LD mx = -std::numeric_limits<LD>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < k.size(); ++j) {
      if (!open[i][j]) continue;
      LD acc = 0;
      for (std::size_t c = 0; c < dk; ++c) acc += q[i][c] * k[j][c];
      s[j] = acc / std::sqrt(static_cast<LD>(dk));
      mx = std::max(mx, s[j]);
      any = true;
    }
    if (!any) continue;
    LD sum = 0;
    for (std::size_t j = 0; j < k.size(); ++j) {
      s[j] = open[i][j] ? std::exp(s[j] - mx) : 0.0L;
      sum += s[j];
    }
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t c = 0; c < dv; ++c) out[i][c] += s[j] / sum * v[j][c];
  }
  return out;
}

inline LMat cols(const LMat& m, std::size_t c0, std::size_t n) {
  LMat out = zeros(m.size(), n);
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < n; ++j) out[i][j] = m[i][c0 + j];
  return out;
}

/// Direct mask formula: column j (1-based) is open to position i iff
/// j <= k * (ceil(i / delta) - 1).
inline bool mask_open(std::size_t i, std::size_t j, std::size_t k, std::size_t delta) {
  const std::size_t ceil_i = (i + delta - 1) / delta;
  return j <= k * (ceil_i - 1);
}

/// Reference forward of one padded row. Keys and values are projected
/// first and attended over (no reassociation). `with_cross = false` is a
/// plain causal transformer LM with no cross-attention sublayer at all.
inline LMat forward_row(const ModelParams& p, const SequenceBatch& batch, std::size_t r,
                        bool with_cross = true) {
  const auto& cfg = p.config;
  const auto& L = p.layout;
  const std::size_t T = batch.T, d = cfg.d_model, H = cfg.n_heads, dk = cfg.d_k();
  const auto& ctx = batch.contexts[r];
  const std::size_t J = ctx.columns();
  const std::size_t len = batch.lengths[r];
  auto W = [&](std::size_t slot) { return to_l(p.tensor(slot)); };

  const LMat emb = W(L.tok_emb), pos = W(L.pos_emb);
  LMat h = zeros(T, d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < d; ++c)
      h[t][c] = emb[batch.inputs[r * T + t]][c] + pos[t][c];

  std::vector<std::vector<bool>> causal(T, std::vector<bool>(T, false));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t u = 0; u <= t; ++u) causal[t][u] = true;
  std::vector<std::vector<bool>> cross(T, std::vector<bool>(J, false));
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t j = 0; j < J; ++j)
      cross[t][j] = mask_open(t + 1, j + 1, ctx.block_size, ctx.delta);

  auto add_heads = [&](const LMat& q, const LMat& k, const LMat& v,
                       const std::vector<std::vector<bool>>& open, const LMat& wo) {
    LMat concat = zeros(T, d);
    for (std::size_t hd = 0; hd < H; ++hd) {
      const LMat o = attention(cols(q, hd * dk, dk), cols(k, hd * dk, dk), cols(v, hd * dk, dk),
                               open);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < dk; ++c) concat[t][hd * dk + c] = o[t][c];
    }
    const LMat out = matmul(concat, wo);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < d; ++c) h[t][c] += out[t][c];
  };

  for (const auto& s : L.layers) {
    const LMat a1 = layer_norm(h, W(s.ln1_g), W(s.ln1_b));
    add_heads(matmul(a1, W(s.sa_wq)), matmul(a1, W(s.sa_wk)), matmul(a1, W(s.sa_wv)), causal,
              W(s.sa_wo));
    if (with_cross && J > 0) {
      const LMat a2 = layer_norm(h, W(s.ln2_g), W(s.ln2_b));
      add_heads(matmul(a2, W(s.ca_wq)), matmul(to_l(ctx.keys), W(s.ca_wk)),
                matmul(to_l(ctx.values), W(s.ca_wv)), cross, W(s.ca_wo));
    }
    const LMat a3 = layer_norm(h, W(s.ln3_g), W(s.ln3_b));
    LMat z = matmul(a3, W(s.ff_w1));
    const LMat b1 = W(s.ff_b1), b2 = W(s.ff_b2);
    for (auto& row : z)
      for (std::size_t c = 0; c < row.size(); ++c) {
        const LD x = row[c] + b1[0][c];
        row[c] = 0.5L * x * (1.0L + std::erf(x / std::sqrt(2.0L)));
      }
    const LMat f = matmul(z, W(s.ff_w2));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < d; ++c) h[t][c] += f[t][c] + b2[0][c];
  }
  const LMat hf = layer_norm(h, W(L.lnf_g), W(L.lnf_b));
  const LMat bias = W(L.out_bias);
  LMat logits = zeros(T, cfg.vocab_size);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
      LD acc = bias[0][v];
      for (std::size_t c = 0; c < d; ++c) acc += hf[t][c] * emb[v][c];
      logits[t][v] = acc;
    }
  return logits;
}

/// Mean masked NLL from reference logits.
inline LD mean_nll(const std::vector<LMat>& logits, const SequenceBatch& batch) {
  LD sum = 0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < batch.batch; ++r)
    for (std::size_t t = 0; t < batch.T; ++t) {
      const std::size_t idx = r * batch.T + t;
      if (!batch.target_mask[idx]) continue;
      const auto& row = logits[r][t];
      LD mx = row[0];
      for (LD v : row) mx = std::max(mx, v);
      LD z = 0;
      for (LD v : row) z += std::exp(v - mx);
      sum += mx + std::log(z) - row[batch.targets[idx]];
      ++n;
    }
  return sum / n;
}

/// Full scan, scores as sequential dot products, stable sort by score desc
/// (ties keep entry order), filtered by sentence.
inline std::vector<EntryId> brute_force_search(const EmbeddingStore& store,
                                               std::span<const double> query, std::size_t k,
                                               std::optional<SentenceId> exclude) {
  std::vector<std::pair<double, EntryId>> all;
  for (EntryId e = 0; e < store.size(); ++e) {
    if (exclude && store.entry(e).sentence_id == *exclude) continue;
    double s = 0.0;
    const auto row = store.prefix_emb(e);
    for (std::size_t c = 0; c < query.size(); ++c) s += query[c] * row[c];
    all.emplace_back(s, e);
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<EntryId> out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.push_back(all[i].second);
  return out;
}

/// Random sentences over `vocab` with ids >= 4 and lengths in [1, max_len].
inline std::vector<Sentence> random_sentences(std::mt19937_64& rng, std::size_t n,
                                              std::size_t max_len, std::uint32_t vocab) {
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::uniform_int_distribution<TokenId> tok(kNumSpecial, vocab - 1);
  std::vector<Sentence> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].id = i;
    out[i].tokens.resize(len(rng));
    for (auto& t : out[i].tokens) t = tok(rng);
  }
  return out;
}

/// Context of `blocks` random blocks of `k` unit-scale rows.
inline RetrievedContext random_context(std::mt19937_64& rng, std::size_t blocks, std::size_t k,
                                       std::size_t delta, std::size_t d_enc) {
  std::normal_distribution<double> nd(0.0, 1.0);
  RetrievedContext ctx;
  ctx.block_size = static_cast<std::uint32_t>(k);
  ctx.delta = static_cast<std::uint32_t>(delta);
  ctx.num_blocks = static_cast<std::uint32_t>(blocks);
  ctx.keys = Matrix(blocks * k, d_enc);
  ctx.values = Matrix(blocks * k, d_enc);
  for (auto& v : ctx.keys.storage()) v = nd(rng);
  for (auto& v : ctx.values.storage()) v = nd(rng);
  return ctx;
}

/// Right-padded batch of random rows with their own contexts.
inline SequenceBatch random_batch(std::mt19937_64& rng, const ModelConfig& cfg,
                                  std::size_t rows, std::size_t T, std::size_t blocks,
                                  std::size_t k, std::size_t delta, bool ragged = true) {
  std::uniform_int_distribution<TokenId> tok(kNumSpecial, cfg.vocab_size - 1);
  std::uniform_int_distribution<std::size_t> lens(2, T);
  SequenceBatch b;
  b.batch = rows;
  b.T = T;
  b.inputs.assign(rows * T, kPad);
  b.targets.assign(rows * T, kPad);
  b.target_mask.assign(rows * T, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t len = ragged ? lens(rng) : T;
    b.lengths.push_back(len);
    b.inputs[r * T] = kBos;
    for (std::size_t t = 1; t < len; ++t) b.inputs[r * T + t] = tok(rng);
    for (std::size_t t = 0; t < len; ++t) {
      b.targets[r * T + t] = t + 1 < len ? b.inputs[r * T + t + 1] : kEos;
      b.target_mask[r * T + t] = 1;
    }
    b.contexts.push_back(random_context(rng, blocks, k, delta, cfg.d_enc));
  }
  return b;
}

/// Params with every tensor (gains and biases included) drawn at random so
/// no gradient vanishes by construction.
inline ModelParams random_params(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.5) {
  ModelParams p = init_params(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  for (auto& v : p.values) v += nd(rng);
  return p;
}

}  // namespace surealm::oracle
