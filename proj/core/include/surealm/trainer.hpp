#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "surealm/corpus.hpp"
#include "surealm/model.hpp"
#include "surealm/store.hpp"

namespace surealm {

struct TrainConfig {
  std::uint32_t batch_size = 64;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint32_t warmup_steps = 100;
  std::uint32_t epochs = 50;
  std::uint64_t shuffle_seed = 7;
  double grad_clip = 1.0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Sentences plus their retrieval blocks. A null table means no retrieval
/// (the K=0 baseline).
struct RetrievalData {
  std::span<const Sentence> sentences;
  const RetrievalTable* table = nullptr;
};

struct CollateStats {
  std::size_t truncated = 0;
};

/// Builds a right-padded batch: BOS + words (truncated to max_seq_len - 2),
/// targets shifted left with EOS, and one context per sentence holding its
/// block hits in order. With `table == nullptr` every context is empty.
SequenceBatch collate(std::span<const Sentence* const> sentences, const RetrievalTable* table,
                      const EmbeddingStore* store, const RetrievalConfig& rcfg,
                      std::size_t max_seq_len, CollateStats* stats = nullptr);

/// Batches of `batch_size` over sentences stable-sorted by (length, id).
std::vector<std::vector<const Sentence*>> length_buckets(std::span<const Sentence> sentences,
                                                         std::size_t batch_size);

/// Summed NLL over a dataset with no parameter updates. Batches are
/// evaluated on `threads` workers and reduced in batch order.
LossResult evaluate_nll(const ModelParams& params, const RetrievalData& data,
                        const EmbeddingStore* store, const RetrievalConfig& rcfg,
                        std::size_t batch_size, unsigned threads = 1);

struct EpochMetrics {
  std::uint32_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double ppl = 0.0;
  std::size_t tokens = 0;
  double wall_ms = 0.0;
};

/// Everything needed to continue training after an interruption.
struct TrainState {
  ModelParams params;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::uint64_t step = 0;
  std::uint32_t epochs_done = 0;
  ModelParams best;
  double best_ppl = 0.0;
  std::uint32_t best_epoch = 0;
  std::vector<EpochMetrics> history;
};

std::string serialize_train_state(const TrainState& state);
TrainState deserialize_train_state(std::string_view bytes);

struct TrainInputs {
  ModelConfig model;
  TrainConfig train;
  RetrievalConfig retrieval;
  /// Null for the baseline; then both tables must be null too.
  const EmbeddingStore* store = nullptr;
  RetrievalData train_data;
  RetrievalData valid_data;
  unsigned eval_threads = 1;
};

/// Called after every epoch. Returning false stops training early, leaving
/// the state resumable.
using EpochCallback = std::function<bool(const TrainState&, std::span<const EpochMetrics>)>;

/// Decoupled-weight-decay Adam with linear warmup and linear decay, global
/// gradient clipping, and seeded per-epoch batch order. Keeps the
/// parameters with the lowest validation perplexity (training perplexity
/// when there is no validation data). Pass `resume` to continue a run.
TrainState train(const TrainInputs& inputs, const EpochCallback& on_epoch = {},
                 const TrainState* resume = nullptr);

/// Learning rate at 1-based optimizer step `step` of `total`.
double scheduled_lr(const TrainConfig& cfg, std::uint64_t step, std::uint64_t total);

/// Seeded Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

}  // namespace surealm
