#include "surealm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace surealm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLnEps = 1e-5;

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) * (0.5 * M_2_SQRTPI * M_SQRT1_2);
  return cdf + x * pdf;
}

// Copies columns [c0, c0 + n) of `src`.
Matrix column_block(ConstMatView src, std::size_t c0, std::size_t n) {
  Matrix out(src.rows(), n);
  for (std::size_t r = 0; r < src.rows(); ++r) {
    std::copy_n(src.data() + r * src.cols() + c0, n, out.data() + r * n);
  }
  return out;
}

// dst[:, c0:c0+n] += src
void add_column_block(ConstMatView src, std::size_t c0, MatView dst) {
  const std::size_t n = src.cols();
  for (std::size_t r = 0; r < src.rows(); ++r) {
    const double* s = src.data() + r * n;
    double* d = dst.data() + r * dst.cols() + c0;
    for (std::size_t c = 0; c < n; ++c) d[c] += s[c];
  }
}

// In-place softmax over the first `n` entries of `row`; the rest are zeroed.
void softmax_prefix(std::span<double> row, std::size_t n) {
  if (n == 0) {
    std::fill(row.begin(), row.end(), 0.0);
    return;
  }
  double mx = row[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - mx);
    sum += row[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  std::fill(row.begin() + static_cast<std::ptrdiff_t>(n), row.end(), 0.0);
}

// dS = P * (dP - <P, dP>) over the first n entries, written into dp.
void softmax_backward_prefix(std::span<const double> p, std::span<double> dp, std::size_t n) {
  double inner = 0.0;
  for (std::size_t j = 0; j < n; ++j) inner += p[j] * dp[j];
  for (std::size_t j = 0; j < n; ++j) dp[j] = p[j] * (dp[j] - inner);
  std::fill(dp.begin() + static_cast<std::ptrdiff_t>(n), dp.end(), 0.0);
}

struct NormCache {
  Matrix xhat;
  std::vector<double> rstd;
};

void layer_norm(ConstMatView x, std::span<const double> g, std::span<const double> b,
                NormCache& cache, Matrix& y) {
  const std::size_t T = x.rows(), d = x.cols();
  cache.xhat.resize(T, d);
  cache.rstd.assign(T, 0.0);
  y.resize(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    const auto xr = x.row(t);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    cache.rstd[t] = rstd;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (xr[c] - mean) * rstd;
      cache.xhat(t, c) = xh;
      y(t, c) = g[c] * xh + b[c];
    }
  }
}

// dx += LN^T(dy); dg, db accumulate.
void layer_norm_backward(ConstMatView dy, const NormCache& cache, std::span<const double> g,
                         std::span<double> dg, std::span<double> db, MatView dx) {
  const std::size_t T = dy.rows(), d = dy.cols();
  std::vector<double> dxhat(d);
  for (std::size_t t = 0; t < T; ++t) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double gy = dy(t, c);
      dg[c] += gy * cache.xhat(t, c);
      db[c] += gy;
      dxhat[c] = gy * g[c];
      mean_dxhat += dxhat[c];
      mean_dxhat_xhat += dxhat[c] * cache.xhat(t, c);
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    const double rstd = cache.rstd[t];
    for (std::size_t c = 0; c < d; ++c) {
      dx(t, c) += rstd * (dxhat[c] - mean_dxhat - cache.xhat(t, c) * mean_dxhat_xhat);
    }
  }
}

struct LayerCache {
  NormCache n1, n2, n3;
  Matrix a1, a2, a3;
  Matrix q, k, v;
  std::vector<Matrix> sa_probs;
  Matrix sa_ctx;
  bool cross_active = false;
  Matrix qc;
  std::vector<Matrix> ca_g, ca_probs, ca_u;
  Matrix ca_ctx;
  Matrix z1, g1;
};

struct RowCache {
  std::vector<LayerCache> layers;
  NormCache nf;
  Matrix hf;
};

std::span<const double> flat(ConstMatView m) { return {m.data(), m.size()}; }
std::span<double> flat(MatView m) { return {m.data(), m.size()}; }

// Forward of one padded row. Writes T x vocab logits and fills `cache`.
void forward_row(const ModelParams& p, std::span<const TokenId> tokens,
                 const RetrievedContext& ctx, std::span<const std::size_t> visible,
                 ForwardOptions opts, RowCache& cache, MatView logits) {
  const auto& cfg = p.config;
  const auto& L = p.layout;
  const std::size_t T = tokens.size();
  const std::size_t d = cfg.d_model, H = cfg.n_heads, dk = cfg.d_k();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  Matrix h(T, d);
  {
    const auto emb = p.tensor(L.tok_emb);
    const auto pos = p.tensor(L.pos_emb);
    for (std::size_t t = 0; t < T; ++t) {
      if (tokens[t] >= cfg.vocab_size) throw ConfigError("token id outside vocabulary");
      for (std::size_t c = 0; c < d; ++c) h(t, c) = emb(tokens[t], c) + pos(t, c);
    }
  }

  const bool any_visible =
      std::any_of(visible.begin(), visible.end(), [](std::size_t v) { return v > 0; });
  const std::size_t J = ctx.columns();

  cache.layers.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& s = L.layers[l];
    auto& lc = cache.layers[l];

    // Causal self-attention.
    layer_norm(h, flat(p.tensor(s.ln1_g)), flat(p.tensor(s.ln1_b)), lc.n1, lc.a1);
    lc.q.resize(T, d);
    lc.k.resize(T, d);
    lc.v.resize(T, d);
    gemm_acc(lc.a1, p.tensor(s.sa_wq), lc.q);
    gemm_acc(lc.a1, p.tensor(s.sa_wk), lc.k);
    gemm_acc(lc.a1, p.tensor(s.sa_wv), lc.v);
    lc.sa_probs.assign(H, Matrix());
    lc.sa_ctx.resize(T, d);
    for (std::size_t hd = 0; hd < H; ++hd) {
      const Matrix qh = column_block(lc.q, hd * dk, dk);
      const Matrix kh = column_block(lc.k, hd * dk, dk);
      const Matrix vh = column_block(lc.v, hd * dk, dk);
      Matrix& pr = lc.sa_probs[hd];
      pr.resize(T, T);
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t u = 0; u <= t; ++u) pr(t, u) = dot(qh.row(t), kh.row(u)) * scale;
        softmax_prefix(pr.row(t), t + 1);
      }
      Matrix out(T, dk);
      gemm_acc(pr, vh, out);
      add_column_block(out, hd * dk, lc.sa_ctx);
    }
    gemm_acc(lc.sa_ctx, p.tensor(s.sa_wo), h);

    // Retrieval cross-attention. Scores use (q W_k^T) keys^T and outputs
    // use (P values) W_v, which equals attending over projected rows.
    lc.cross_active = !opts.skip_cross_attention && any_visible && J > 0;
    if (lc.cross_active) {
      layer_norm(h, flat(p.tensor(s.ln2_g)), flat(p.tensor(s.ln2_b)), lc.n2, lc.a2);
      lc.qc.resize(T, d);
      gemm_acc(lc.a2, p.tensor(s.ca_wq), lc.qc);
      lc.ca_g.assign(H, Matrix());
      lc.ca_probs.assign(H, Matrix());
      lc.ca_u.assign(H, Matrix());
      lc.ca_ctx.resize(T, d);
      const std::size_t de = cfg.d_enc;
      for (std::size_t hd = 0; hd < H; ++hd) {
        const Matrix qh = column_block(lc.qc, hd * dk, dk);
        const Matrix wk = column_block(p.tensor(s.ca_wk), hd * dk, dk);
        const Matrix wv = column_block(p.tensor(s.ca_wv), hd * dk, dk);
        Matrix& g = lc.ca_g[hd];
        g.resize(T, de);
        gemm_nt_acc(qh, wk, g);
        Matrix& pr = lc.ca_probs[hd];
        pr.resize(T, J);
        Matrix& u = lc.ca_u[hd];
        u.resize(T, de);
        for (std::size_t t = 0; t < T; ++t) {
          const std::size_t vis = visible[t];
          for (std::size_t j = 0; j < vis; ++j) pr(t, j) = dot(g.row(t), ctx.keys.row(j)) * scale;
          softmax_prefix(pr.row(t), vis);
          for (std::size_t j = 0; j < vis; ++j) axpy(pr(t, j), ctx.values.row(j), u.row(t));
        }
        Matrix out(T, dk);
        gemm_acc(u, wv, out);
        add_column_block(out, hd * dk, lc.ca_ctx);
      }
      gemm_acc(lc.ca_ctx, p.tensor(s.ca_wo), h);
    }

    // Feed-forward.
    layer_norm(h, flat(p.tensor(s.ln3_g)), flat(p.tensor(s.ln3_b)), lc.n3, lc.a3);
    lc.z1.resize(T, cfg.d_ff);
    lc.g1.resize(T, cfg.d_ff);
    const auto b1 = flat(p.tensor(s.ff_b1));
    for (std::size_t t = 0; t < T; ++t) std::copy(b1.begin(), b1.end(), lc.z1.row(t).begin());
    gemm_acc(lc.a3, p.tensor(s.ff_w1), lc.z1);
    for (std::size_t i = 0; i < lc.z1.size(); ++i) lc.g1.data()[i] = gelu(lc.z1.data()[i]);
    Matrix ff(T, d);
    const auto b2 = flat(p.tensor(s.ff_b2));
    for (std::size_t t = 0; t < T; ++t) std::copy(b2.begin(), b2.end(), ff.row(t).begin());
    gemm_acc(lc.g1, p.tensor(s.ff_w2), ff);
    for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] += ff.data()[i];
  }

  layer_norm(h, flat(p.tensor(L.lnf_g)), flat(p.tensor(L.lnf_b)), cache.nf, cache.hf);
  const auto bias = flat(p.tensor(L.out_bias));
  for (std::size_t t = 0; t < T; ++t) {
    std::copy(bias.begin(), bias.end(), logits.row(t).begin());
  }
  gemm_nt_acc(cache.hf, p.tensor(L.tok_emb), logits);
}

// Accumulates gradients of sum_t <dlogits[t], logits[t]> into `g`.
void backward_row(const ModelParams& p, std::span<const TokenId> tokens,
                  const RetrievedContext& ctx, std::span<const std::size_t> visible,
                  const RowCache& cache, ConstMatView dlogits, Gradients& g) {
  const auto& cfg = p.config;
  const auto& L = p.layout;
  const std::size_t T = tokens.size();
  const std::size_t d = cfg.d_model, H = cfg.n_heads, dk = cfg.d_k();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  // Output projection (tied) and bias.
  {
    auto dbias = flat(g.tensor(L.out_bias));
    for (std::size_t t = 0; t < T; ++t) axpy(1.0, dlogits.row(t), dbias);
  }
  gemm_tn_acc(dlogits, cache.hf, g.tensor(L.tok_emb));
  Matrix dhf(T, d);
  gemm_acc(dlogits, p.tensor(L.tok_emb), dhf);

  Matrix dh(T, d);
  layer_norm_backward(dhf, cache.nf, flat(p.tensor(L.lnf_g)), flat(g.tensor(L.lnf_g)),
                      flat(g.tensor(L.lnf_b)), dh);

  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const auto& s = L.layers[li];
    const auto& lc = cache.layers[li];

    // Feed-forward: h_out = h_mid2 + gelu(a3 W1 + b1) W2 + b2.
    {
      auto db2 = flat(g.tensor(s.ff_b2));
      for (std::size_t t = 0; t < T; ++t) axpy(1.0, dh.row(t), db2);
      gemm_tn_acc(lc.g1, dh, g.tensor(s.ff_w2));
      Matrix dz(T, cfg.d_ff);
      gemm_nt_acc(dh, p.tensor(s.ff_w2), dz);
      for (std::size_t i = 0; i < dz.size(); ++i) dz.data()[i] *= gelu_grad(lc.z1.data()[i]);
      auto db1 = flat(g.tensor(s.ff_b1));
      for (std::size_t t = 0; t < T; ++t) axpy(1.0, dz.row(t), db1);
      gemm_tn_acc(lc.a3, dz, g.tensor(s.ff_w1));
      Matrix da(T, d);
      gemm_nt_acc(dz, p.tensor(s.ff_w1), da);
      layer_norm_backward(da, lc.n3, flat(p.tensor(s.ln3_g)), flat(g.tensor(s.ln3_g)),
                          flat(g.tensor(s.ln3_b)), dh);
    }

    // Cross-attention.
    if (lc.cross_active) {
      const std::size_t de = cfg.d_enc;
      const std::size_t J = ctx.columns();
      gemm_tn_acc(lc.ca_ctx, dh, g.tensor(s.ca_wo));
      Matrix dctx(T, d);
      gemm_nt_acc(dh, p.tensor(s.ca_wo), dctx);
      Matrix dqc(T, d);
      for (std::size_t hd = 0; hd < H; ++hd) {
        const Matrix qh = column_block(lc.qc, hd * dk, dk);
        const Matrix wk = column_block(p.tensor(s.ca_wk), hd * dk, dk);
        const Matrix wv = column_block(p.tensor(s.ca_wv), hd * dk, dk);
        const Matrix dout = column_block(dctx, hd * dk, dk);
        const Matrix& pr = lc.ca_probs[hd];
        const Matrix& u = lc.ca_u[hd];

        Matrix dwv(de, dk);
        gemm_tn_acc(u, dout, dwv);
        add_column_block(dwv, hd * dk, g.tensor(s.ca_wv));
        Matrix du(T, de);
        gemm_nt_acc(dout, wv, du);

        Matrix dgm(T, de);
        std::vector<double> dp(J);
        for (std::size_t t = 0; t < T; ++t) {
          const std::size_t vis = visible[t];
          if (vis == 0) continue;
          for (std::size_t j = 0; j < vis; ++j) dp[j] = dot(du.row(t), ctx.values.row(j));
          softmax_backward_prefix(pr.row(t), dp, vis);
          for (std::size_t j = 0; j < vis; ++j) axpy(dp[j] * scale, ctx.keys.row(j), dgm.row(t));
        }
        Matrix dwk(de, dk);
        gemm_tn_acc(dgm, qh, dwk);
        add_column_block(dwk, hd * dk, g.tensor(s.ca_wk));
        Matrix dq(T, dk);
        gemm_acc(dgm, wk, dq);
        add_column_block(dq, hd * dk, dqc);
      }
      gemm_tn_acc(lc.a2, dqc, g.tensor(s.ca_wq));
      Matrix da(T, d);
      gemm_nt_acc(dqc, p.tensor(s.ca_wq), da);
      layer_norm_backward(da, lc.n2, flat(p.tensor(s.ln2_g)), flat(g.tensor(s.ln2_g)),
                          flat(g.tensor(s.ln2_b)), dh);
    }

    // Self-attention.
    {
      gemm_tn_acc(lc.sa_ctx, dh, g.tensor(s.sa_wo));
      Matrix dctx(T, d);
      gemm_nt_acc(dh, p.tensor(s.sa_wo), dctx);
      Matrix dq(T, d), dkm(T, d), dv(T, d);
      std::vector<double> dp(T);
      for (std::size_t hd = 0; hd < H; ++hd) {
        const Matrix qh = column_block(lc.q, hd * dk, dk);
        const Matrix kh = column_block(lc.k, hd * dk, dk);
        const Matrix vh = column_block(lc.v, hd * dk, dk);
        const Matrix dout = column_block(dctx, hd * dk, dk);
        const Matrix& pr = lc.sa_probs[hd];
        Matrix dqh(T, dk), dkh(T, dk), dvh(T, dk);
        gemm_tn_acc(pr, dout, dvh);
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t u = 0; u <= t; ++u) dp[u] = dot(dout.row(t), vh.row(u));
          softmax_backward_prefix(pr.row(t), std::span(dp).first(t + 1), t + 1);
          for (std::size_t u = 0; u <= t; ++u) {
            axpy(dp[u] * scale, kh.row(u), dqh.row(t));
            axpy(dp[u] * scale, qh.row(t), dkh.row(u));
          }
        }
        add_column_block(dqh, hd * dk, dq);
        add_column_block(dkh, hd * dk, dkm);
        add_column_block(dvh, hd * dk, dv);
      }
      gemm_tn_acc(lc.a1, dq, g.tensor(s.sa_wq));
      gemm_tn_acc(lc.a1, dkm, g.tensor(s.sa_wk));
      gemm_tn_acc(lc.a1, dv, g.tensor(s.sa_wv));
      Matrix da(T, d);
      gemm_nt_acc(dq, p.tensor(s.sa_wq), da);
      gemm_nt_acc(dkm, p.tensor(s.sa_wk), da);
      gemm_nt_acc(dv, p.tensor(s.sa_wv), da);
      layer_norm_backward(da, lc.n1, flat(p.tensor(s.ln1_g)), flat(g.tensor(s.ln1_g)),
                          flat(g.tensor(s.ln1_b)), dh);
    }
  }

  auto demb = g.tensor(L.tok_emb);
  auto dpos = g.tensor(L.pos_emb);
  for (std::size_t t = 0; t < T; ++t) {
    axpy(1.0, dh.row(t), demb.row(tokens[t]));
    axpy(1.0, dh.row(t), dpos.row(t));
  }
}

double row_nll(std::span<const double> logits, TokenId target) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return (mx + std::log(sum)) - logits[target];
}

void check_batch(const ModelParams& p, const SequenceBatch& b) {
  if (b.T > p.config.max_seq_len) {
    throw ConfigError("sequence length " + std::to_string(b.T) + " exceeds max_seq_len " +
                      std::to_string(p.config.max_seq_len));
  }
  const std::size_t n = b.batch * b.T;
  if (b.inputs.size() != n || b.targets.size() != n || b.target_mask.size() != n ||
      b.lengths.size() != b.batch || b.contexts.size() != b.batch) {
    throw ConfigError("malformed sequence batch");
  }
  for (const auto& c : b.contexts) {
    if (c.columns() > 0 && (c.keys.cols() != p.config.d_enc || c.values.cols() != p.config.d_enc ||
                            c.values.rows() != c.keys.rows())) {
      throw ConfigError("retrieved context does not match model d_enc");
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model must be a positive multiple of n_heads");
  }
  if (n_layers == 0 || d_ff == 0 || d_enc == 0 || max_seq_len < 2) {
    throw ConfigError("model dimensions must be positive (max_seq_len >= 2)");
  }
  if (vocab_size <= kNumSpecial) throw ConfigError("vocab_size must exceed the special tokens");
}

ParamLayout ParamLayout::make(const ModelConfig& cfg) {
  ParamLayout L;
  auto add = [&L](std::string name, std::size_t rows, std::size_t cols) {
    L.tensors.push_back({std::move(name), L.total, rows, cols});
    L.total += rows * cols;
    return L.tensors.size() - 1;
  };
  const std::size_t d = cfg.d_model;
  L.tok_emb = add("tok_emb", cfg.vocab_size, d);
  L.pos_emb = add("pos_emb", cfg.max_seq_len, d);
  for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerSlots s{};
    s.ln1_g = add(p + "ln1_g", 1, d);
    s.ln1_b = add(p + "ln1_b", 1, d);
    s.sa_wq = add(p + "sa_wq", d, d);
    s.sa_wk = add(p + "sa_wk", d, d);
    s.sa_wv = add(p + "sa_wv", d, d);
    s.sa_wo = add(p + "sa_wo", d, d);
    s.ln2_g = add(p + "ln2_g", 1, d);
    s.ln2_b = add(p + "ln2_b", 1, d);
    s.ca_wq = add(p + "ca_wq", d, d);
    s.ca_wk = add(p + "ca_wk", cfg.d_enc, d);
    s.ca_wv = add(p + "ca_wv", cfg.d_enc, d);
    s.ca_wo = add(p + "ca_wo", d, d);
    s.ln3_g = add(p + "ln3_g", 1, d);
    s.ln3_b = add(p + "ln3_b", 1, d);
    s.ff_w1 = add(p + "ff_w1", d, cfg.d_ff);
    s.ff_b1 = add(p + "ff_b1", 1, cfg.d_ff);
    s.ff_w2 = add(p + "ff_w2", cfg.d_ff, d);
    s.ff_b2 = add(p + "ff_b2", 1, d);
    L.layers.push_back(s);
  }
  L.lnf_g = add("lnf_g", 1, d);
  L.lnf_b = add("lnf_b", 1, d);
  L.out_bias = add("out_bias", 1, cfg.vocab_size);
  return L;
}

bool ParamLayout::is_cross_attention(std::size_t tensor) const {
  for (const auto& s : layers) {
    if (tensor == s.ca_wq || tensor == s.ca_wk || tensor == s.ca_wv || tensor == s.ca_wo ||
        tensor == s.ln2_g || tensor == s.ln2_b) {
      return true;
    }
  }
  return false;
}

ModelParams::ModelParams(const ModelConfig& cfg)
    : config(cfg), layout(ParamLayout::make(cfg)), values(layout.total, 0.0) {}

ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p(cfg);
  std::uint64_t state = cfg.init_seed;
  for (std::size_t i = 0; i < p.layout.tensors.size(); ++i) {
    const auto& slot = p.layout.tensors[i];
    auto view = p.tensor(i);
    const bool is_gain = slot.name.ends_with("_g");
    if (slot.rows == 1) {
      std::fill_n(view.data(), view.size(), is_gain ? 1.0 : 0.0);
      continue;
    }
    const double a = std::sqrt(6.0 / static_cast<double>(slot.rows + slot.cols));
    for (std::size_t j = 0; j < view.size(); ++j) {
      const double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
      view.data()[j] = (2.0 * u - 1.0) * a;
    }
  }
  return p;
}

std::size_t visible_columns(std::size_t i, std::size_t columns, std::size_t k, std::size_t delta) {
  const std::size_t blocks = (i + delta - 1) / delta;  // ceil(i / delta), i >= 1
  const std::size_t open = blocks == 0 ? 0 : k * (blocks - 1);
  return std::min(open, columns);
}

Matrix build_retrieval_mask(std::size_t T, std::size_t B, std::size_t k, std::size_t delta) {
  if (T < 1 || B < 1 || k < 1 || delta < 1) {
    throw ConfigError("build_retrieval_mask requires T, B, k, delta >= 1");
  }
  const std::size_t J = k * B;
  Matrix m(T, J, kNegInf);
  for (std::size_t i = 1; i <= T; ++i) {
    const std::size_t open = visible_columns(i, J, k, delta);
    for (std::size_t j = 0; j < open; ++j) m(i - 1, j) = 0.0;
  }
  return m;
}

Matrix masked_attention(ConstMatView q, ConstMatView k, ConstMatView v, ConstMatView mask) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || mask.rows() != q.rows() ||
      mask.cols() != k.rows()) {
    throw ConfigError("masked_attention: shape mismatch");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix out(q.rows(), v.cols());
  std::vector<double> s(k.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    double mx = kNegInf;
    for (std::size_t j = 0; j < k.rows(); ++j) {
      s[j] = (dot(q.row(i), k.row(j)) + mask(i, j)) * scale;
      mx = std::max(mx, s[j]);
    }
    if (mx == kNegInf) continue;
    double sum = 0.0;
    for (std::size_t j = 0; j < k.rows(); ++j) {
      s[j] = std::exp(s[j] - mx);
      sum += s[j];
    }
    for (std::size_t j = 0; j < k.rows(); ++j) axpy(s[j] / sum, v.row(j), out.row(i));
  }
  return out;
}

std::size_t SequenceBatch::max_columns() const {
  std::size_t m = 0;
  for (const auto& c : contexts) m = std::max(m, c.columns());
  return m;
}

std::vector<std::size_t> SequenceBatch::visibility(std::size_t r) const {
  std::vector<std::size_t> vis(T, 0);
  const auto& c = contexts[r];
  if (c.columns() == 0) return vis;
  for (std::size_t t = 0; t < lengths[r]; ++t) {
    vis[t] = visible_columns(t + 1, c.columns(), c.block_size, c.delta);
  }
  return vis;
}

Matrix SequenceBatch::cross_mask(std::size_t r) const {
  Matrix m(T, max_columns(), kNegInf);
  const auto vis = visibility(r);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < vis[t]; ++j) m(t, j) = 0.0;
  }
  return m;
}

std::size_t SequenceBatch::target_count() const {
  return static_cast<std::size_t>(std::count(target_mask.begin(), target_mask.end(), 1));
}

SequenceBatch make_single_batch(std::span<const TokenId> words, RetrievedContext ctx) {
  SequenceBatch b;
  b.batch = 1;
  b.T = words.size() + 1;
  b.inputs.push_back(kBos);
  b.inputs.insert(b.inputs.end(), words.begin(), words.end());
  b.targets.assign(words.begin(), words.end());
  b.targets.push_back(kEos);
  b.target_mask.assign(b.T, 1);
  b.lengths.push_back(b.T);
  b.contexts.push_back(std::move(ctx));
  return b;
}

Matrix forward(const ModelParams& params, const SequenceBatch& batch, ForwardOptions opts) {
  check_batch(params, batch);
  Matrix logits(batch.batch * batch.T, params.config.vocab_size);
  RowCache cache;
  for (std::size_t r = 0; r < batch.batch; ++r) {
    const auto vis = batch.visibility(r);
    MatView out(logits.data() + r * batch.T * logits.cols(), batch.T, logits.cols());
    forward_row(params, std::span(batch.inputs).subspan(r * batch.T, batch.T), batch.contexts[r],
                vis, opts, cache, out);
  }
  return logits;
}

LossResult nll_loss(ConstMatView logits, std::span<const TokenId> targets,
                    std::span<const std::uint8_t> mask) {
  if (targets.size() != logits.rows() || mask.size() != logits.rows()) {
    throw ConfigError("nll_loss: shape mismatch");
  }
  LossResult res;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    if (targets[i] >= logits.cols()) throw ConfigError("nll_loss: target outside vocabulary");
    res.sum += row_nll(logits.row(i), targets[i]);
    ++res.tokens;
  }
  if (res.tokens == 0) throw ConfigError("nll_loss: no target tokens");
  res.mean = res.sum / static_cast<double>(res.tokens);
  return res;
}

LossAndGradients loss_and_gradients(const ModelParams& params, const SequenceBatch& batch,
                                    ForwardOptions opts) {
  check_batch(params, batch);
  const std::size_t count = batch.target_count();
  if (count == 0) throw ConfigError("nll_loss: no target tokens");
  const double inv = 1.0 / static_cast<double>(count);
  const std::size_t V = params.config.vocab_size;

  LossAndGradients out{{}, Gradients(params.config)};
  RowCache cache;
  Matrix logits(batch.T, V);
  Matrix dlogits(batch.T, V);
  for (std::size_t r = 0; r < batch.batch; ++r) {
    const auto tokens = std::span(batch.inputs).subspan(r * batch.T, batch.T);
    const auto vis = batch.visibility(r);
    logits.fill(0.0);
    forward_row(params, tokens, batch.contexts[r], vis, opts, cache, logits);
    dlogits.fill(0.0);
    for (std::size_t t = 0; t < batch.T; ++t) {
      const std::size_t idx = r * batch.T + t;
      if (!batch.target_mask[idx]) continue;
      const TokenId target = batch.targets[idx];
      const auto row = logits.row(t);
      out.loss.sum += row_nll(row, target);
      double mx = row[0];
      for (double v : row) mx = std::max(mx, v);
      double sum = 0.0;
      auto drow = dlogits.row(t);
      for (std::size_t v = 0; v < V; ++v) {
        drow[v] = std::exp(row[v] - mx);
        sum += drow[v];
      }
      for (std::size_t v = 0; v < V; ++v) drow[v] = drow[v] / sum * inv;
      drow[target] -= inv;
    }
    backward_row(params, tokens, batch.contexts[r], vis, cache, dlogits, out.grads);
  }
  out.loss.tokens = count;
  out.loss.mean = out.loss.sum / static_cast<double>(count);
  return out;
}

}  // namespace surealm
