#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "surealm/checkpoint.hpp"
#include "surealm/model.hpp"
#include "tempdir.hpp"

namespace surealm {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 12;
  c.d_enc = 6;
  c.max_seq_len = 12;
  c.vocab_size = 13;
  c.init_seed = 5;
  return c;
}

TEST(Mask, FirstPositionSeesNothing) {
  for (std::size_t delta = 1; delta <= 3; ++delta) {
    const auto m = build_retrieval_mask(5, 3, 2, delta);
    for (std::size_t j = 0; j < m.cols(); ++j) EXPECT_EQ(m(0, j), -kInf);
  }
}

TEST(Mask, StrideOneExample) {
  const auto m = build_retrieval_mask(4, 4, 2, 1);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(m(2, j), j < 4 ? 0.0 : -kInf);
}

TEST(Mask, StrideTwoExample) {
  const auto m = build_retrieval_mask(5, 3, 2, 2);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(m(3, j), j < 2 ? 0.0 : -kInf);
}

TEST(Mask, MatchesFormulaOnSmallGrid) {
  for (std::size_t T = 1; T <= 8; ++T)
    for (std::size_t B = 1; B <= 4; ++B)
      for (std::size_t k = 1; k <= 3; ++k)
        for (std::size_t delta = 1; delta <= 3; ++delta) {
          const auto m = build_retrieval_mask(T, B, k, delta);
          for (std::size_t i = 1; i <= T; ++i)
            for (std::size_t j = 1; j <= k * B; ++j)
              EXPECT_EQ(m(i - 1, j - 1), oracle::mask_open(i, j, k, delta) ? 0.0 : -kInf);
        }
}

TEST(Attention, SingletonKeyCopiesValue) {
  Matrix q(3, 2), k(1, 2), v(1, 3), mask(3, 1);
  q(0, 0) = 1;
  q(1, 1) = -4;
  k(0, 0) = 2;
  v(0, 0) = 1.5;
  v(0, 1) = -2;
  v(0, 2) = 7;
  const auto out = masked_attention(q, k, v, mask);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out(i, c), v(0, c));
}

TEST(Attention, FullyMaskedRowIsZero) {
  Matrix q(2, 2, 1.0), k(2, 2, 1.0), v(2, 2, 3.0), mask(2, 2);
  mask(1, 0) = mask(1, 1) = -kInf;
  const auto out = masked_attention(q, k, v, mask);
  EXPECT_EQ(out(1, 0), 0.0);
  EXPECT_EQ(out(1, 1), 0.0);
  EXPECT_DOUBLE_EQ(out(0, 0), 3.0);
}

TEST(Attention, MatchesDenseOracle) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  Matrix q(3, 4), k(4, 4), v(4, 5), mask(3, 4);
  for (auto* m : {&q, &k, &v})
    for (auto& x : m->storage()) x = nd(rng);
  mask(0, 3) = -kInf;
  mask(2, 0) = mask(2, 1) = -kInf;
  std::vector<std::vector<bool>> open(3, std::vector<bool>(4, true));
  open[0][3] = false;
  open[2][0] = open[2][1] = false;
  const auto ref = oracle::attention(oracle::to_l(q), oracle::to_l(k), oracle::to_l(v), open);
  const auto out = masked_attention(q, k, v, mask);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 5; ++c)
      EXPECT_NEAR(out(i, c), static_cast<double>(ref[i][c]), 1e-13);
}

TEST(Init, DeterministicAndShaped) {
  const auto cfg = tiny_config();
  const auto a = init_params(cfg);
  EXPECT_EQ(a, init_params(cfg));
  EXPECT_EQ(a.values.size(), a.layout.total);
  auto other = cfg;
  other.init_seed = 6;
  EXPECT_NE(a.values, init_params(other).values);
  for (double v : a.values) EXPECT_TRUE(std::isfinite(v));
  for (double v : a.tensor(a.layout.out_bias).flat()) EXPECT_EQ(v, 0.0);
  for (double v : a.tensor(a.layout.lnf_g).flat()) EXPECT_EQ(v, 1.0);
  // Layout slots tile the buffer in order.
  std::size_t off = 0;
  for (const auto& t : a.layout.tensors) {
    EXPECT_EQ(t.offset, off);
    off += t.size();
  }
  EXPECT_EQ(off, a.layout.total);
}

TEST(Init, ValidatesConfig) {
  auto cfg = tiny_config();
  cfg.n_heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.vocab_size = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Forward, MatchesReferenceImplementation) {
  const auto cfg = tiny_config();
  const auto p = oracle::random_params(cfg, 17, 0.3);
  std::mt19937_64 rng(2);
  for (std::size_t delta : {1, 2, 3}) {
    const auto batch = oracle::random_batch(rng, cfg, 3, 9, 4, 2, delta);
    const auto logits = forward(p, batch);
    for (std::size_t r = 0; r < batch.batch; ++r) {
      const auto ref = oracle::forward_row(p, batch, r);
      for (std::size_t t = 0; t < batch.lengths[r]; ++t)
        for (std::size_t v = 0; v < cfg.vocab_size; ++v)
          EXPECT_NEAR(logits(r * batch.T + t, v), static_cast<double>(ref[t][v]), 1e-10);
    }
  }
}

TEST(Forward, TokenCausality) {
  const auto cfg = tiny_config();
  const auto p = oracle::random_params(cfg, 3);
  std::mt19937_64 rng(4);
  auto batch = oracle::random_batch(rng, cfg, 1, 10, 3, 2, 1, false);
  const auto base = forward(p, batch);
  for (std::size_t pos = 1; pos < 10; ++pos) {
    auto changed = batch;
    changed.inputs[pos] = changed.inputs[pos] == 4 ? 5 : 4;
    const auto out = forward(p, changed);
    for (std::size_t t = 0; t < pos; ++t)
      for (std::size_t v = 0; v < cfg.vocab_size; ++v) EXPECT_EQ(out(t, v), base(t, v));
  }
}

TEST(Forward, ValueBlockPerturbationRespectsMask) {
  const auto cfg = tiny_config();
  const auto p = oracle::random_params(cfg, 8);
  std::mt19937_64 rng(6);
  const std::size_t k = 2, blocks = 4;
  for (std::size_t delta : {1, 2}) {
    const auto batch = oracle::random_batch(rng, cfg, 1, 10, blocks, k, delta, false);
    const auto base = forward(p, batch);
    for (std::size_t b = 1; b <= blocks; ++b) {
      auto changed = batch;
      for (std::size_t j = (b - 1) * k; j < b * k; ++j)
        for (auto& x : changed.contexts[0].values.row(j)) x += 1.0;
      const auto out = forward(p, changed);
      for (std::size_t i = 1; i <= batch.T; ++i) {
        const bool sees = k * ((i + delta - 1) / delta - 1) >= (b - 1) * k + 1;
        bool same = true;
        for (std::size_t v = 0; v < cfg.vocab_size; ++v) same &= out(i - 1, v) == base(i - 1, v);
        if (!sees) EXPECT_TRUE(same) << "i=" << i << " b=" << b;
        else EXPECT_FALSE(same) << "i=" << i << " b=" << b;
      }
    }
  }
}

TEST(Forward, EmptyContextEqualsSkippedCrossAttention) {
  const auto cfg = tiny_config();
  const auto p = oracle::random_params(cfg, 9);
  std::mt19937_64 rng(10);
  auto batch = oracle::random_batch(rng, cfg, 3, 8, 0, 2, 1);
  EXPECT_EQ(forward(p, batch), forward(p, batch, {.skip_cross_attention = true}));
  const auto ref = oracle::forward_row(p, batch, 0, false);
  const auto logits = forward(p, batch);
  for (std::size_t t = 0; t < batch.lengths[0]; ++t)
    EXPECT_NEAR(logits(t, 4), static_cast<double>(ref[t][4]), 1e-10);
}

TEST(Forward, PaddedBatchRowsEqualSingleSequences) {
  const auto cfg = tiny_config();
  const auto p = oracle::random_params(cfg, 12);
  std::mt19937_64 rng(13);
  const auto batch = oracle::random_batch(rng, cfg, 4, 10, 3, 2, 1);
  const auto logits = forward(p, batch);
  for (std::size_t r = 0; r < batch.batch; ++r) {
    std::vector<TokenId> words(batch.inputs.begin() + r * batch.T + 1,
                               batch.inputs.begin() + r * batch.T + batch.lengths[r]);
    auto single = make_single_batch(words, batch.contexts[r]);
    const auto out = forward(p, single);
    for (std::size_t t = 0; t < single.T; ++t)
      for (std::size_t v = 0; v < cfg.vocab_size; ++v)
        EXPECT_EQ(out(t, v), logits(r * batch.T + t, v));
  }
}

TEST(Forward, RejectsOverlongSequences) {
  const auto cfg = tiny_config();
  const auto p = init_params(cfg);
  std::vector<TokenId> words(cfg.max_seq_len, 4);
  EXPECT_THROW(forward(p, make_single_batch(words, {})), ConfigError);
}

TEST(Loss, UniformLogits) {
  Matrix logits(4, 50, 0.25);
  std::vector<TokenId> targets = {1, 7, 49, 0};
  std::vector<std::uint8_t> mask = {1, 1, 1, 0};
  const auto r = nll_loss(logits, targets, mask);
  EXPECT_NEAR(r.mean, std::log(50.0), 1e-12);
  EXPECT_EQ(r.tokens, 3U);
}

TEST(Loss, ConfidentCorrectLogitsApproachZero) {
  double prev = kInf;
  for (double margin : {1.0, 5.0, 20.0, 40.0}) {
    Matrix logits(1, 10);
    logits(0, 3) = margin;
    std::vector<TokenId> t = {3};
    std::vector<std::uint8_t> m = {1};
    const double l = nll_loss(logits, t, m).mean;
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-15);
}

TEST(Loss, MatchesHighPrecisionOracle) {
  const auto cfg = tiny_config();
  const auto p = oracle::random_params(cfg, 14);
  std::mt19937_64 rng(15);
  const auto batch = oracle::random_batch(rng, cfg, 3, 7, 2, 2, 1);
  std::vector<oracle::LMat> ref;
  for (std::size_t r = 0; r < batch.batch; ++r) ref.push_back(oracle::forward_row(p, batch, r));
  const auto got = nll_loss(forward(p, batch), batch.targets, batch.target_mask);
  EXPECT_NEAR(got.mean, static_cast<double>(oracle::mean_nll(ref, batch)), 1e-11);
  EXPECT_EQ(loss_and_gradients(p, batch).loss.mean, got.mean);
}

TEST(Loss, NoTargetsIsAnError) {
  Matrix logits(1, 5);
  std::vector<TokenId> t = {1};
  std::vector<std::uint8_t> m = {0};
  EXPECT_THROW(nll_loss(logits, t, m), ConfigError);
}

// Relative error with a small absolute floor for near-zero gradients.
double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

TEST(Gradients, FiniteDifferencesTwoLayers) {
  auto cfg = tiny_config();
  cfg.d_ff = 10;
  auto p = oracle::random_params(cfg, 21, 0.3);
  std::mt19937_64 rng(22);
  const auto batch = oracle::random_batch(rng, cfg, 2, 6, 3, 2, 2);
  const auto g = loss_and_gradients(p, batch).grads;
  const double h = 1e-5;
  double worst = 0;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const double orig = p.values[i];
    p.values[i] = orig + h;
    const double up = nll_loss(forward(p, batch), batch.targets, batch.target_mask).mean;
    p.values[i] = orig - h;
    const double dn = nll_loss(forward(p, batch), batch.targets, batch.target_mask).mean;
    p.values[i] = orig;
    worst = std::max(worst, rel_err(g.values[i], (up - dn) / (2 * h)));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Gradients, UnusedPositionRowsAndCrossWeightsAreZero) {
  const auto cfg = tiny_config();
  const auto p = oracle::random_params(cfg, 23);
  std::mt19937_64 rng(24);
  const auto batch = oracle::random_batch(rng, cfg, 2, 7, 0, 2, 1);
  const auto g = loss_and_gradients(p, batch).grads;
  const std::size_t longest = std::max(batch.lengths[0], batch.lengths[1]);
  const auto dpos = g.tensor(g.layout.pos_emb);
  for (std::size_t t = longest; t < cfg.max_seq_len; ++t)
    for (double v : dpos.row(t)) EXPECT_EQ(v, 0.0);
  for (std::size_t s = 0; s < g.layout.tensors.size(); ++s) {
    if (!g.layout.is_cross_attention(s)) continue;
    for (double v : g.tensor(s).flat()) EXPECT_EQ(v, 0.0) << g.layout.tensors[s].name;
  }
}

TEST(Checkpoint, RoundTripAndTruncation) {
  testing::TempDir dir;
  const auto p = oracle::random_params(tiny_config(), 30);
  save_checkpoint(p, dir / "m.bin");
  EXPECT_EQ(load_checkpoint(dir / "m.bin"), p);
  const auto bytes = serialize_checkpoint(p);
  EXPECT_EQ(serialize_checkpoint(deserialize_checkpoint(bytes)), bytes);
  try {
    deserialize_checkpoint(std::string_view(bytes).substr(0, bytes.size() - 1));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.section(), "parameters");
  }
}

}  // namespace
}  // namespace surealm
