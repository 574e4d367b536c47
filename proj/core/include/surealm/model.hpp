#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "surealm/tensor.hpp"
#include "surealm/types.hpp"

namespace surealm {

struct ModelConfig {
  std::uint32_t d_model = 64;
  std::uint32_t n_layers = 2;
  std::uint32_t n_heads = 2;
  std::uint32_t d_ff = 128;
  std::uint32_t d_enc = 64;
  std::uint32_t max_seq_len = 64;
  std::uint32_t vocab_size = 0;
  std::uint64_t init_seed = 1;

  std::uint32_t d_k() const noexcept { return d_model / n_heads; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Where each named tensor lives inside the flat parameter buffer.
struct TensorSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const noexcept { return rows * cols; }
};

struct LayerSlots {
  std::size_t ln1_g, ln1_b;
  std::size_t sa_wq, sa_wk, sa_wv, sa_wo;
  std::size_t ln2_g, ln2_b;
  std::size_t ca_wq, ca_wk, ca_wv, ca_wo;
  std::size_t ln3_g, ln3_b;
  std::size_t ff_w1, ff_b1, ff_w2, ff_b2;
};

/// Tensor order is the checkpoint order: token embedding, position table,
/// then per layer (self-attention, cross-attention, feed-forward and their
/// norms), final norm, output bias. The output projection is tied to the
/// token embedding. Projections are stored [in x out].
struct ParamLayout {
  std::vector<TensorSlot> tensors;
  std::size_t tok_emb = 0, pos_emb = 0, lnf_g = 0, lnf_b = 0, out_bias = 0;
  std::vector<LayerSlots> layers;
  std::size_t total = 0;

  static ParamLayout make(const ModelConfig& cfg);
  /// True for the cross-attention projections of any layer.
  bool is_cross_attention(std::size_t tensor) const;
};

/// Model weights (or gradients of the same shape) in one flat buffer.
struct ModelParams {
  ModelConfig config;
  ParamLayout layout;
  std::vector<double> values;

  ModelParams() = default;
  /// Zero-filled parameters for `cfg`.
  explicit ModelParams(const ModelConfig& cfg);

  MatView tensor(std::size_t slot) {
    const auto& s = layout.tensors[slot];
    return {values.data() + s.offset, s.rows, s.cols};
  }
  ConstMatView tensor(std::size_t slot) const {
    const auto& s = layout.tensors[slot];
    return {values.data() + s.offset, s.rows, s.cols};
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.config == b.config && a.values == b.values;
  }
};

using Gradients = ModelParams;

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)) for matrices, unit
/// norm gains, zero biases. Deterministic in config.init_seed.
ModelParams init_params(const ModelConfig& cfg);

/// Retrieved prefix (keys) and suffix (values) embeddings of all blocks of
/// one sequence, block-major: rows (b-1)k .. bk-1 belong to block b.
struct RetrievedContext {
  Matrix keys;    // J x d_enc
  Matrix values;  // J x d_enc
  std::uint32_t block_size = 0;
  std::uint32_t delta = 1;
  std::uint32_t num_blocks = 0;

  std::size_t columns() const noexcept { return keys.rows(); }
};

/// Number of leading context columns open to 1-based query position `i`:
/// min(columns, k * (ceil(i / delta) - 1)).
std::size_t visible_columns(std::size_t i, std::size_t columns, std::size_t k, std::size_t delta);

/// T x (k * B) matrix with 0 where j <= k * (ceil(i / delta) - 1) (1-based
/// i, j) and -inf elsewhere.
Matrix build_retrieval_mask(std::size_t T, std::size_t B, std::size_t k, std::size_t delta);

/// softmax((q k^T + mask) / sqrt(d_k)) v by rows, d_k = q.cols(). Rows whose
/// mask is entirely -inf produce zeros.
Matrix masked_attention(ConstMatView q, ConstMatView k, ConstMatView v, ConstMatView mask);

/// Right-padded batch. inputs = [BOS, w_1..w_N, PAD...]; targets are the
/// inputs shifted left with EOS at the end. lengths[r] counts non-pad inputs.
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t T = 0;
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
  std::vector<std::uint8_t> target_mask;
  std::vector<std::size_t> lengths;
  std::vector<RetrievedContext> contexts;

  std::size_t max_columns() const;
  /// Visible context columns for every position of row r. Padded positions
  /// see nothing.
  std::vector<std::size_t> visibility(std::size_t r) const;
  /// Dense T x max_columns() cross-attention mask for row r; columns past
  /// the row's own context are -inf.
  Matrix cross_mask(std::size_t r) const;
  std::size_t target_count() const;
};

/// Single-sequence batch over `words` (no BOS/EOS) and its context.
SequenceBatch make_single_batch(std::span<const TokenId> words, RetrievedContext ctx);

struct ForwardOptions {
  bool skip_cross_attention = false;
};

/// Logits for every position, (batch * T) x vocab, row r * T + t.
Matrix forward(const ModelParams& params, const SequenceBatch& batch, ForwardOptions opts = {});

struct LossResult {
  double mean = 0.0;
  double sum = 0.0;
  std::size_t tokens = 0;
};

/// Mean of -log softmax(logits)[target] over rows with mask set.
LossResult nll_loss(ConstMatView logits, std::span<const TokenId> targets,
                    std::span<const std::uint8_t> mask);

struct LossAndGradients {
  LossResult loss;
  Gradients grads;
};

/// Loss and exact gradients of the mean NLL with respect to every parameter.
LossAndGradients loss_and_gradients(const ModelParams& params, const SequenceBatch& batch,
                                    ForwardOptions opts = {});

inline Gradients backward(const ModelParams& params, const SequenceBatch& batch,
                          ForwardOptions opts = {}) {
  return loss_and_gradients(params, batch, opts).grads;
}

}  // namespace surealm
