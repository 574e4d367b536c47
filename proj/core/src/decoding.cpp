#include "surealm/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

namespace surealm {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double uniform01(std::uint64_t& state) {
  return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
}

TokenId argmax(std::span<const double> logits) {
  // First maximum wins, so ties go to the lowest id.
  return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

TokenId sample(std::span<const double> logits, std::size_t top_k, double temperature,
               std::uint64_t& rng) {
  std::vector<TokenId> ids(logits.size());
  std::iota(ids.begin(), ids.end(), 0);
  const auto better = [&](TokenId a, TokenId b) {
    return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
  };
  std::size_t keep = ids.size();
  if (top_k > 0 && top_k < ids.size()) {
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(top_k), ids.end(),
                      better);
    keep = top_k;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < keep; ++i) mx = std::max(mx, logits[ids[i]]);
  std::vector<double> w(keep);
  double total = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    w[i] = std::exp((logits[ids[i]] - mx) / temperature);
    total += w[i];
  }
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    acc += w[i];
    if (u < acc && w[i] > 0.0) return ids[i];
  }
  for (std::size_t i = keep; i-- > 0;) {
    if (w[i] > 0.0) return ids[i];
  }
  return ids[0];
}

}  // namespace

void GenerationConfig::validate(const ModelConfig& model) const {
  if (max_len < 1 || max_len > model.max_seq_len) {
    throw ConfigError("generation max_len must be in [1, max_seq_len]");
  }
  if (!(temperature > 0.0)) throw ConfigError("generation temperature must be positive");
  if (strategy == DecodeStrategy::kTopK && sample_top_k < 1) {
    throw ConfigError("top-k sampling requires k >= 1");
  }
}

GenerationResult generate(const ModelParams& params, const EmbeddingStore* store,
                          std::span<const TokenId> prompt, const GenerationConfig& gen,
                          const RetrievalConfig& rcfg) {
  gen.validate(params.config);
  rcfg.validate();
  if (prompt.size() >= gen.max_len) throw ConfigError("prompt must be shorter than max_len");
  if (store != nullptr && store->dim() != params.config.d_enc) {
    throw ConfigError("store d_enc does not match the model");
  }

  GenerationResult res;
  res.context.delta = rcfg.delta;
  std::optional<SpanEncoder> encoder;
  if (store != nullptr) encoder.emplace(store->encoder_config());
  std::uint64_t rng = gen.seed;

  auto extend = [&](TokenId w) {
    res.words.push_back(w);
    const std::size_t b = res.words.size();
    if (store == nullptr || (b - 1) % rcfg.delta != 0) return;
    const auto query = encoder->encode(res.words, 1);
    const auto hits = search(*store, query, rcfg.top_k);
    ++res.retrieval_calls;
    RetrievalStep step{static_cast<std::uint32_t>(b), {}};
    auto& ctx = res.context;
    if (ctx.num_blocks == 0) {
      ctx.block_size = static_cast<std::uint32_t>(hits.size());
      ctx.keys.resize(0, store->dim());
      ctx.values.resize(0, store->dim());
    }
    const std::size_t J = ctx.keys.rows();
    Matrix keys(J + hits.size(), store->dim());
    Matrix values(J + hits.size(), store->dim());
    std::copy_n(ctx.keys.data(), ctx.keys.size(), keys.data());
    std::copy_n(ctx.values.data(), ctx.values.size(), values.data());
    for (std::size_t i = 0; i < hits.size(); ++i) {
      std::ranges::copy(hits[i].prefix_emb, keys.row(J + i).begin());
      std::ranges::copy(hits[i].suffix_emb, values.row(J + i).begin());
      step.entry_ids.push_back(hits[i].entry_id);
    }
    ctx.keys = std::move(keys);
    ctx.values = std::move(values);
    ++ctx.num_blocks;
    res.retrievals.push_back(std::move(step));
  };

  for (TokenId w : prompt) {
    if (w >= params.config.vocab_size) throw ConfigError("prompt token outside vocabulary");
    extend(w);
  }

  while (res.words.size() < gen.max_len) {
    const auto batch = make_single_batch(res.words, res.context);
    const auto logits = forward(params, batch);
    std::vector<double> last(logits.row(batch.T - 1).begin(), logits.row(batch.T - 1).end());
    const double neg_inf = -std::numeric_limits<double>::infinity();
    last[kPad] = neg_inf;
    last[kBos] = neg_inf;
    if (res.words.size() < gen.min_len) last[kEos] = neg_inf;

    TokenId next = kEos;
    switch (gen.strategy) {
      case DecodeStrategy::kGreedy:
        next = argmax(last);
        break;
      case DecodeStrategy::kTopK:
        next = sample(last, gen.sample_top_k, gen.temperature, rng);
        break;
      case DecodeStrategy::kTemperature:
        next = sample(last, 0, gen.temperature, rng);
        break;
    }
    if (next == kEos) {
      res.ended_with_eos = true;
      break;
    }
    extend(next);
  }
  res.hit_max_len = !res.ended_with_eos;
  return res;
}

EvalReport perplexity(const ModelParams& params, const EmbeddingStore* store,
                      const RetrievalData& data, const RetrievalConfig& rcfg,
                      std::size_t batch_size, unsigned threads) {
  const auto loss = evaluate_nll(params, data, store, rcfg, batch_size, threads);
  EvalReport rep;
  rep.nll_sum = loss.sum;
  rep.token_count = loss.tokens;
  rep.ppl = std::exp(loss.mean);
  return rep;
}

EvalReport perplexity(const ModelParams& params, const EmbeddingStore* store,
                      std::span<const Sentence> dataset, const RetrievalConfig& rcfg,
                      std::size_t batch_size, unsigned threads) {
  if (dataset.empty()) throw ConfigError("empty dataset");
  if (store == nullptr) {
    return perplexity(params, nullptr, RetrievalData{dataset, nullptr}, rcfg, batch_size, threads);
  }
  const auto table = precompute_retrievals(*store, dataset, rcfg, Exclusion::kNone, threads);
  return perplexity(params, store, RetrievalData{dataset, &table}, rcfg, batch_size, threads);
}

}  // namespace surealm
