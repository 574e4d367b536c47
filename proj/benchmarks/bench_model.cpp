#include <benchmark/benchmark.h>

#include <random>

#include "surealm/model.hpp"

namespace surealm {
namespace {

ModelConfig bench_config() {
  ModelConfig c;
  c.vocab_size = 300;
  return c;
}

SequenceBatch random_batch(const ModelConfig& cfg, std::size_t rows, std::size_t T,
                           std::size_t blocks, std::size_t k) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<TokenId> tok(kNumSpecial, cfg.vocab_size - 1);
  std::normal_distribution<double> nd;
  SequenceBatch b;
  b.batch = rows;
  b.T = T;
  b.inputs.assign(rows * T, kBos);
  b.targets.assign(rows * T, kEos);
  b.target_mask.assign(rows * T, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 1; t < T; ++t) b.inputs[r * T + t] = tok(rng);
    for (std::size_t t = 0; t + 1 < T; ++t) b.targets[r * T + t] = b.inputs[r * T + t + 1];
    b.lengths.push_back(T);
    RetrievedContext ctx;
    ctx.block_size = static_cast<std::uint32_t>(k);
    ctx.num_blocks = static_cast<std::uint32_t>(blocks);
    ctx.keys = Matrix(blocks * k, cfg.d_enc);
    ctx.values = Matrix(blocks * k, cfg.d_enc);
    for (auto& v : ctx.keys.storage()) v = nd(rng);
    for (auto& v : ctx.values.storage()) v = nd(rng);
    b.contexts.push_back(std::move(ctx));
  }
  return b;
}

// range(0): retrieval blocks per sequence (0 is the baseline LM).
void BM_Forward(benchmark::State& state) {
  const auto cfg = bench_config();
  const auto p = init_params(cfg);
  const auto blocks = static_cast<std::size_t>(state.range(0));
  const auto batch = random_batch(cfg, 16, 18, blocks, 8);
  for (auto _ : state) benchmark::DoNotOptimize(forward(p, batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.target_count()));
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(17)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  const auto cfg = bench_config();
  const auto p = init_params(cfg);
  const auto blocks = static_cast<std::size_t>(state.range(0));
  const auto batch = random_batch(cfg, 16, 18, blocks, 8);
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradients(p, batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.target_count()));
}
BENCHMARK(BM_ForwardBackward)->Arg(0)->Arg(17)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace surealm
