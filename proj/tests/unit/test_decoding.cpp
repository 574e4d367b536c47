#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "surealm/corpus.hpp"
#include "surealm/decoding.hpp"

namespace surealm {
namespace {

ModelConfig model_for(std::uint32_t vocab) {
  ModelConfig c;
  c.d_model = 32;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 64;
  c.d_enc = 16;
  c.max_seq_len = 40;
  c.vocab_size = vocab;
  return c;
}

struct Overfit {
  LoadedCorpus corpus;
  EmbeddingStore store;
  RetrievalTable table;
  RetrievalConfig rc;
  ModelParams params;

  Overfit() {
    std::vector<std::string> lines = {"how can i help you today",
                                      "book a taxi to the station please",
                                      "what time does the museum open",
                                      "i need a cheap hotel in the centre",
                                      "thanks that is all for now"};
    corpus = load_corpus_lines(lines, VocabMode::kBuild);
    rc.top_k = 2;
    EncoderConfig ec;
    ec.d_enc = 16;
    store = build_store(corpus.sentences, ec, rc);
    table = precompute_retrievals(store, corpus.sentences, rc, Exclusion::kSameSentence);
    TrainInputs in;
    in.model = model_for(static_cast<std::uint32_t>(corpus.vocab.size()));
    in.train.batch_size = 5;
    in.train.epochs = 150;
    in.train.warmup_steps = 10;
    in.train.lr = 1e-2;
    in.train.weight_decay = 0.0;
    in.retrieval = rc;
    in.store = &store;
    in.train_data = {corpus.sentences, &table};
    params = train(in).params;
  }
};

const Overfit& overfit() {
  static const Overfit o;
  return o;
}

TEST(Generate, OverfitModelCompletesTrainingSentences) {
  const auto& o = overfit();
  GenerationConfig gen;
  gen.max_len = 20;
  for (const auto& s : o.corpus.sentences) {
    const auto res = generate(o.params, &o.store, std::span(s.tokens).first(2), gen, o.rc);
    EXPECT_EQ(res.words, s.tokens) << o.corpus.vocab.detokenize(res.words);
    EXPECT_TRUE(res.ended_with_eos);
    EXPECT_FALSE(res.hit_max_len);
  }
}

TEST(Generate, GreedyIsDeterministic) {
  const auto& o = overfit();
  GenerationConfig gen;
  const std::vector<TokenId> prompt = {o.corpus.vocab.lookup("book")};
  const auto a = generate(o.params, &o.store, prompt, gen, o.rc);
  const auto b = generate(o.params, &o.store, prompt, gen, o.rc);
  EXPECT_EQ(a.words, b.words);
  ASSERT_EQ(a.retrievals.size(), b.retrievals.size());
  for (std::size_t i = 0; i < a.retrievals.size(); ++i)
    EXPECT_EQ(a.retrievals[i].entry_ids, b.retrievals[i].entry_ids);
}

TEST(Generate, SamplingIsSeeded) {
  const auto& o = overfit();
  GenerationConfig gen;
  gen.strategy = DecodeStrategy::kTopK;
  gen.sample_top_k = 5;
  gen.temperature = 2.0;
  gen.seed = 77;
  const std::vector<TokenId> prompt = {o.corpus.vocab.lookup("i")};
  EXPECT_EQ(generate(o.params, &o.store, prompt, gen, o.rc).words,
            generate(o.params, &o.store, prompt, gen, o.rc).words);
  gen.strategy = DecodeStrategy::kTemperature;
  EXPECT_EQ(generate(o.params, &o.store, prompt, gen, o.rc).words,
            generate(o.params, &o.store, prompt, gen, o.rc).words);
}

TEST(Generate, StrideRetrievalCount) {
  const auto& o = overfit();
  for (std::uint32_t delta : {1U, 2U, 4U}) {
    auto rc = o.rc;
    rc.delta = delta;
    GenerationConfig gen;
    gen.max_len = 7;
    gen.min_len = 7;  // forbid EOS so exactly 7 words are produced
    const std::vector<TokenId> prompt = {o.corpus.vocab.lookup("how")};
    const auto res = generate(o.params, &o.store, prompt, gen, rc);
    ASSERT_EQ(res.words.size(), 7U);
    EXPECT_TRUE(res.hit_max_len);
    EXPECT_EQ(res.retrieval_calls, (7U + delta - 1) / delta);
  }
}

TEST(Generate, ContextMatchesTrainingSchedule) {
  const auto& o = overfit();
  GenerationConfig gen;
  gen.max_len = 12;
  gen.min_len = 12;
  const std::vector<TokenId> prompt = {o.corpus.vocab.lookup("what")};
  for (std::uint32_t delta : {1U, 2U, 3U}) {
    auto rc = o.rc;
    rc.delta = delta;
    const auto res = generate(o.params, &o.store, prompt, gen, rc);
    // Blocks the held-out pipeline would build for the emitted sentence.
    std::vector<Sentence> emitted = {{0, res.words}};
    const auto table = precompute_retrievals(o.store, emitted, rc, Exclusion::kNone);
    const auto& blocks = table.rows[0].blocks;
    ASSERT_LE(blocks.size(), res.retrievals.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      EXPECT_EQ(res.retrievals[b].entry_ids, blocks[b]);
      EXPECT_EQ(res.retrievals[b].prefix_len, 1 + b * delta);
    }
  }
}

TEST(Generate, MaxLenAndBannedTokens) {
  const auto& o = overfit();
  GenerationConfig gen;
  gen.max_len = 3;
  const std::vector<TokenId> prompt = {o.corpus.vocab.lookup("book")};
  const auto res = generate(o.params, &o.store, prompt, gen, o.rc);
  EXPECT_EQ(res.words.size(), 3U);
  EXPECT_TRUE(res.hit_max_len);
  for (TokenId w : res.words) {
    EXPECT_NE(w, kPad);
    EXPECT_NE(w, kBos);
  }
  const std::vector<TokenId> long_prompt(3, 4);
  EXPECT_THROW(generate(o.params, &o.store, long_prompt, gen, o.rc), ConfigError);
  gen.max_len = 1000;
  EXPECT_THROW(generate(o.params, &o.store, prompt, gen, o.rc), ConfigError);
}

TEST(Perplexity, UntrainedModelIsNearUniform) {
  const auto cfg = model_for(40);
  auto p = init_params(cfg);
  std::mt19937_64 rng(1);
  const auto data = oracle::random_sentences(rng, 20, 10, 40);
  const auto rep = perplexity(p, nullptr, data, {});
  EXPECT_GT(rep.ppl, 40 * 0.5);
  EXPECT_LT(rep.ppl, 40 * 2.0);
}

TEST(Perplexity, EqualsTokenWeightedSentenceRecomputation) {
  const auto& o = overfit();
  std::vector<std::string> held = {"how can i book a taxi", "the museum is cheap"};
  const auto data = load_corpus_lines(held, VocabMode::kApply, &o.corpus.vocab);
  const auto rep = perplexity(o.params, &o.store, data.sentences, o.rc, 64);
  double nll = 0;
  std::size_t tokens = 0;
  for (const auto& s : data.sentences) {
    // Dense recomputation: one sentence, blocks searched directly.
    RetrievedContext ctx;
    ctx.delta = o.rc.delta;
    ctx.block_size = o.rc.top_k;
    const auto pos = block_positions(s.length(), o.rc.delta);
    ctx.keys.resize(pos.size() * o.rc.top_k, o.store.dim());
    ctx.values.resize(pos.size() * o.rc.top_k, o.store.dim());
    std::size_t j = 0;
    for (auto b : pos) {
      const auto q = encode_span(o.store.encoder_config(), std::span(s.tokens).first(b), 1);
      for (const auto& h : search(o.store, q, o.rc.top_k)) {
        std::ranges::copy(h.prefix_emb, ctx.keys.row(j).begin());
        std::ranges::copy(h.suffix_emb, ctx.values.row(j).begin());
        ++j;
      }
    }
    ctx.num_blocks = static_cast<std::uint32_t>(pos.size());
    const auto batch = make_single_batch(s.tokens, ctx);
    const auto logits = forward(o.params, batch);
    for (std::size_t t = 0; t < batch.T; ++t) {
      const auto row = logits.row(t);
      long double mx = row[0], z = 0;
      for (double v : row) mx = std::max<long double>(mx, v);
      for (double v : row) z += std::exp(static_cast<long double>(v) - mx);
      nll += static_cast<double>(mx + std::log(z) - row[batch.targets[t]]);
      ++tokens;
    }
  }
  EXPECT_EQ(rep.token_count, tokens);
  EXPECT_NEAR(rep.ppl, std::exp(nll / tokens), 1e-9 * rep.ppl);
}

TEST(Perplexity, InvariantToOrderAndBatching) {
  const auto& o = overfit();
  auto shuffled = o.corpus.sentences;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto a = perplexity(o.params, &o.store, o.corpus.sentences, o.rc, 64);
  const auto b = perplexity(o.params, &o.store, shuffled, o.rc, 2);
  EXPECT_NEAR(a.ppl, b.ppl, 1e-12 * a.ppl);
  EXPECT_EQ(a.token_count, b.token_count);
}

TEST(Perplexity, EmptyDatasetIsAnError) {
  const auto& o = overfit();
  std::vector<Sentence> none;
  EXPECT_THROW(perplexity(o.params, &o.store, none, o.rc), ConfigError);
}

}  // namespace
}  // namespace surealm
