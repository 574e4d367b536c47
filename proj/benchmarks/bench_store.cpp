#include <benchmark/benchmark.h>

#include "surealm/corpus.hpp"
#include "surealm/encoder.hpp"
#include "surealm/store.hpp"
#include "surealm/synthetic.hpp"

namespace surealm {
namespace {

struct Fixture {
  LoadedCorpus corpus;
  EmbeddingStore store;

  explicit Fixture(std::size_t train) {
    SyntheticCorpusConfig sc;
    sc.train = train;
    corpus = load_corpus_lines(make_synthetic_corpus(sc).train, VocabMode::kBuild);
    store = build_store(corpus.sentences, {}, {});
  }
};

const Fixture& fixture(std::size_t train) {
  static const Fixture small(500), large(2000);
  return train <= 500 ? small : large;
}

void BM_EncodeSpan(benchmark::State& state) {
  SpanEncoder enc{EncoderConfig{}};
  std::vector<TokenId> span(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < span.size(); ++i) span[i] = static_cast<TokenId>(4 + i % 200);
  for (auto _ : state) benchmark::DoNotOptimize(enc.encode(span, 1));
}
BENCHMARK(BM_EncodeSpan)->Arg(4)->Arg(16);

void BM_BuildStore(benchmark::State& state) {
  const auto& f = fixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(build_store(f.corpus.sentences, {}, {}));
  state.counters["entries"] = static_cast<double>(f.store.size());
}
BENCHMARK(BM_BuildStore)->Arg(500)->Unit(benchmark::kMillisecond);

void BM_Search(benchmark::State& state) {
  const auto& f = fixture(static_cast<std::size_t>(state.range(0)));
  const auto query = encode_span(f.store.encoder_config(), f.corpus.sentences[0].tokens, 1);
  for (auto _ : state) benchmark::DoNotOptimize(search(f.store, query, 8));
  state.counters["entries"] = static_cast<double>(f.store.size());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.store.size()));
}
BENCHMARK(BM_Search)->Arg(500)->Arg(2000)->Unit(benchmark::kMicrosecond);

void BM_PrecomputeTable(benchmark::State& state) {
  const auto& f = fixture(500);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        precompute_retrievals(f.store, f.corpus.sentences, {}, Exclusion::kSameSentence));
  }
}
BENCHMARK(BM_PrecomputeTable)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace surealm
