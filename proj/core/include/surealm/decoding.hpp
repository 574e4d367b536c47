#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "surealm/model.hpp"
#include "surealm/store.hpp"
#include "surealm/trainer.hpp"

namespace surealm {

enum class DecodeStrategy { kGreedy, kTopK, kTemperature };

struct GenerationConfig {
  DecodeStrategy strategy = DecodeStrategy::kGreedy;
  std::uint32_t sample_top_k = 10;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  /// Cap on the total word count, prompt included.
  std::uint32_t max_len = 32;
  /// EOS is not allowed before this many words exist.
  std::uint32_t min_len = 0;

  void validate(const ModelConfig& model) const;
};

struct RetrievalStep {
  std::uint32_t prefix_len = 0;
  std::vector<EntryId> entry_ids;
};

struct GenerationResult {
  std::vector<TokenId> words;  // prompt followed by generated words
  bool ended_with_eos = false;
  bool hit_max_len = false;
  std::size_t retrieval_calls = 0;
  std::vector<RetrievalStep> retrievals;
  RetrievedContext context;
};

/// Progressive-retrieval decoding from BOS + prompt. Whenever the word
/// prefix reaches a scheduled length (1, 1 + delta, ...) it is encoded and
/// searched without sentence exclusion, and the hits are appended to the
/// context. `store == nullptr` decodes without retrieval.
GenerationResult generate(const ModelParams& params, const EmbeddingStore* store,
                          std::span<const TokenId> prompt, const GenerationConfig& gen,
                          const RetrievalConfig& rcfg);

struct EvalReport {
  std::string split;
  double ppl = 0.0;
  double nll_sum = 0.0;
  std::size_t token_count = 0;
  std::string config_digest;
};

/// exp(total NLL / predicted tokens); predicted tokens are every word plus
/// EOS. Retrieval follows the training block schedule with no exclusion.
EvalReport perplexity(const ModelParams& params, const EmbeddingStore* store,
                      std::span<const Sentence> dataset, const RetrievalConfig& rcfg,
                      std::size_t batch_size = 64, unsigned threads = 1);

/// Same with precomputed blocks (`table` may be null for the baseline).
EvalReport perplexity(const ModelParams& params, const EmbeddingStore* store,
                      const RetrievalData& data, const RetrievalConfig& rcfg,
                      std::size_t batch_size = 64, unsigned threads = 1);

}  // namespace surealm
