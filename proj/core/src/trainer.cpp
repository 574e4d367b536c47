#include "surealm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

#include "surealm/binary_io.hpp"
#include "surealm/checkpoint.hpp"

namespace surealm {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

RetrievedContext gather_context(const Sentence& s, std::size_t n_words,
                                const RetrievalTable& table, const EmbeddingStore& store,
                                const RetrievalConfig& rcfg) {
  const auto* row = table.find(s.id);
  if (row == nullptr) {
    throw ConfigError("retrieval table has no blocks for sentence " + std::to_string(s.id));
  }
  const auto expected = block_positions(s.length(), rcfg.delta).size();
  if (row->blocks.size() != expected) {
    throw ConfigError("retrieval table inconsistent with corpus at sentence " +
                      std::to_string(s.id));
  }
  const std::size_t used = block_positions(n_words, rcfg.delta).size();
  RetrievedContext ctx;
  ctx.delta = rcfg.delta;
  ctx.num_blocks = static_cast<std::uint32_t>(used);
  ctx.block_size = used > 0 ? static_cast<std::uint32_t>(row->blocks[0].size()) : 0;
  const std::size_t J = used * ctx.block_size;
  ctx.keys.resize(J, store.dim());
  ctx.values.resize(J, store.dim());
  std::size_t j = 0;
  for (std::size_t b = 0; b < used; ++b) {
    if (row->blocks[b].size() != ctx.block_size) {
      throw ConfigError("uneven retrieval block sizes for sentence " + std::to_string(s.id));
    }
    for (EntryId id : row->blocks[b]) {
      if (id >= store.size()) throw ConfigError("retrieval table references unknown entry");
      std::ranges::copy(store.prefix_emb(id), ctx.keys.row(j).begin());
      std::ranges::copy(store.suffix_emb(id), ctx.values.row(j).begin());
      ++j;
    }
  }
  if (ctx.block_size == 0) ctx.num_blocks = 0;
  return ctx;
}

void write_metrics(io::Writer& w, const EpochMetrics& m) {
  w.put<std::uint32_t>(m.epoch);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.split.size()));
  w.bytes(m.split);
  w.put<double>(m.loss);
  w.put<double>(m.ppl);
  w.put<std::uint64_t>(m.tokens);
  w.put<double>(m.wall_ms);
}

EpochMetrics read_metrics(io::Reader& r) {
  EpochMetrics m;
  m.epoch = r.get<std::uint32_t>();
  const auto n = r.get<std::uint32_t>();
  m.split = std::string(r.bytes(n));
  m.loss = r.get<double>();
  m.ppl = r.get<double>();
  m.tokens = r.get<std::uint64_t>();
  m.wall_ms = r.get<double>();
  return m;
}

void write_blob(io::Writer& w, const std::string& blob) {
  w.put<std::uint64_t>(blob.size());
  w.bytes(blob);
}

std::string_view read_blob(io::Reader& r) { return r.bytes(r.get<std::uint64_t>()); }

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
}

SequenceBatch collate(std::span<const Sentence* const> sentences, const RetrievalTable* table,
                      const EmbeddingStore* store, const RetrievalConfig& rcfg,
                      std::size_t max_seq_len, CollateStats* stats) {
  if (sentences.empty()) throw ConfigError("collate: empty batch");
  if (table != nullptr && store == nullptr) throw ConfigError("collate: table without store");
  if (max_seq_len < 3) throw ConfigError("collate: max_seq_len must be >= 3");
  const std::size_t max_words = max_seq_len - 2;

  SequenceBatch b;
  b.batch = sentences.size();
  std::vector<std::size_t> words(b.batch);
  for (std::size_t r = 0; r < b.batch; ++r) {
    words[r] = std::min(sentences[r]->length(), max_words);
    if (words[r] < sentences[r]->length() && stats != nullptr) ++stats->truncated;
    b.T = std::max(b.T, words[r] + 1);
  }
  b.inputs.assign(b.batch * b.T, kPad);
  b.targets.assign(b.batch * b.T, kPad);
  b.target_mask.assign(b.batch * b.T, 0);
  b.lengths = std::vector<std::size_t>(b.batch);
  b.contexts.resize(b.batch);
  for (std::size_t r = 0; r < b.batch; ++r) {
    const Sentence& s = *sentences[r];
    const std::size_t n = words[r];
    const std::size_t base = r * b.T;
    b.inputs[base] = kBos;
    for (std::size_t t = 0; t < n; ++t) {
      b.inputs[base + t + 1] = s.tokens[t];
      b.targets[base + t] = s.tokens[t];
    }
    b.targets[base + n] = kEos;
    std::fill_n(b.target_mask.begin() + static_cast<std::ptrdiff_t>(base), n + 1, 1);
    b.lengths[r] = n + 1;
    if (table != nullptr) {
      b.contexts[r] = gather_context(s, n, *table, *store, rcfg);
    } else {
      b.contexts[r].delta = rcfg.delta;
    }
  }
  return b;
}

std::vector<std::vector<const Sentence*>> length_buckets(std::span<const Sentence> sentences,
                                                         std::size_t batch_size) {
  std::vector<const Sentence*> sorted;
  sorted.reserve(sentences.size());
  for (const auto& s : sentences) sorted.push_back(&s);
  std::stable_sort(sorted.begin(), sorted.end(), [](const Sentence* a, const Sentence* b) {
    if (a->length() != b->length()) return a->length() < b->length();
    return a->id < b->id;
  });
  std::vector<std::vector<const Sentence*>> out;
  for (std::size_t i = 0; i < sorted.size(); i += batch_size) {
    const std::size_t end = std::min(sorted.size(), i + batch_size);
    out.emplace_back(sorted.begin() + static_cast<std::ptrdiff_t>(i),
                     sorted.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

LossResult evaluate_nll(const ModelParams& params, const RetrievalData& data,
                        const EmbeddingStore* store, const RetrievalConfig& rcfg,
                        std::size_t batch_size, unsigned threads) {
  if (data.sentences.empty()) throw ConfigError("empty dataset");
  const auto buckets = length_buckets(data.sentences, batch_size);
  std::vector<LossResult> per_batch(buckets.size());
  auto work = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t i = worker; i < buckets.size(); i += stride) {
      const auto batch =
          collate(buckets[i], data.table, store, rcfg, params.config.max_seq_len);
      const auto logits = forward(params, batch);
      per_batch[i] = nll_loss(logits, batch.targets, batch.target_mask);
    }
  };
  threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(buckets.size())));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
  }
  LossResult total;
  for (const auto& r : per_batch) {
    total.sum += r.sum;
    total.tokens += r.tokens;
  }
  total.mean = total.sum / static_cast<double>(total.tokens);
  return total;
}

double scheduled_lr(const TrainConfig& cfg, std::uint64_t step, std::uint64_t total) {
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (total <= cfg.warmup_steps) return cfg.lr;
  const double remain = static_cast<double>(total - std::min(step, total));
  return cfg.lr * remain / static_cast<double>(total - cfg.warmup_steps);
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::uint64_t state = seed;
  for (std::size_t i = n; i > 1; --i) {
    // Multiply-shift bounded draw; exact enough for shuffling.
    const auto r = static_cast<std::size_t>(
        (static_cast<unsigned __int128>(splitmix64(state)) * i) >> 64);
    std::swap(perm[i - 1], perm[r]);
  }
  return perm;
}

std::string serialize_train_state(const TrainState& s) {
  io::Writer w;
  w.bytes("SUTS");
  w.put<std::uint32_t>(1);
  w.put<std::uint64_t>(s.step);
  w.put<std::uint32_t>(s.epochs_done);
  w.put<std::uint32_t>(s.best_epoch);
  w.put<double>(s.best_ppl);
  write_blob(w, serialize_checkpoint(s.params));
  write_blob(w, serialize_checkpoint(s.best));
  w.put<std::uint64_t>(s.adam_m.size());
  w.doubles(s.adam_m);
  w.doubles(s.adam_v);
  w.put<std::uint64_t>(s.history.size());
  for (const auto& m : s.history) write_metrics(w, m);
  return w.take();
}

TrainState deserialize_train_state(std::string_view bytes) {
  io::Reader r(bytes);
  r.section("magic");
  if (r.bytes(4) != "SUTS") throw FormatError("magic", "bad train state magic");
  r.section("version");
  if (r.get<std::uint32_t>() != 1) throw FormatError("version", "unsupported train state version");
  TrainState s;
  r.section("progress");
  s.step = r.get<std::uint64_t>();
  s.epochs_done = r.get<std::uint32_t>();
  s.best_epoch = r.get<std::uint32_t>();
  s.best_ppl = r.get<double>();
  r.section("params");
  s.params = deserialize_checkpoint(read_blob(r));
  r.section("best");
  s.best = deserialize_checkpoint(read_blob(r));
  r.section("optimizer");
  const auto n = r.get<std::uint64_t>();
  if (n != s.params.values.size()) throw FormatError("optimizer", "optimizer state size mismatch");
  s.adam_m.resize(n);
  s.adam_v.resize(n);
  r.doubles(s.adam_m);
  r.doubles(s.adam_v);
  r.section("history");
  const auto h = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < h; ++i) s.history.push_back(read_metrics(r));
  r.expect_end();
  return s;
}

TrainState train(const TrainInputs& in, const EpochCallback& on_epoch, const TrainState* resume) {
  in.model.validate();
  in.train.validate();
  in.retrieval.validate();
  const bool baseline = in.store == nullptr;
  if (baseline && (in.train_data.table != nullptr || in.valid_data.table != nullptr)) {
    throw ConfigError("baseline training must not use retrieval tables");
  }
  if (!baseline) {
    if (in.train_data.table == nullptr) throw ConfigError("missing training retrieval table");
    if (!in.valid_data.sentences.empty() && in.valid_data.table == nullptr) {
      throw ConfigError("missing validation retrieval table");
    }
    if (in.store->dim() != in.model.d_enc) {
      throw ConfigError("model d_enc " + std::to_string(in.model.d_enc) +
                        " does not match store d_enc " + std::to_string(in.store->dim()));
    }
  }
  if (in.train_data.sentences.empty()) throw ConfigError("empty training corpus");

  TrainState st;
  if (resume != nullptr) {
    st = *resume;
    if (!(st.params.config == in.model)) throw ConfigError("resume state has a different model config");
  } else {
    st.params = init_params(in.model);
    st.adam_m.assign(st.params.values.size(), 0.0);
    st.adam_v.assign(st.params.values.size(), 0.0);
    st.best = st.params;
    st.best_ppl = std::numeric_limits<double>::infinity();
  }

  const auto buckets = length_buckets(in.train_data.sentences, in.train.batch_size);
  const std::uint64_t total_steps = static_cast<std::uint64_t>(in.train.epochs) * buckets.size();

  // Weight decay applies to matrices only.
  std::vector<std::uint8_t> decay(st.params.values.size(), 0);
  for (const auto& slot : st.params.layout.tensors) {
    if (slot.rows > 1) {
      std::fill_n(decay.begin() + static_cast<std::ptrdiff_t>(slot.offset), slot.size(), 1);
    }
  }

  auto& theta = st.params.values;
  const auto& tc = in.train;
  while (st.epochs_done < tc.epochs) {
    const std::uint32_t epoch = st.epochs_done + 1;
    const auto t0 = std::chrono::steady_clock::now();
    const auto order =
        seeded_permutation(buckets.size(), tc.shuffle_seed ^ (epoch * 0x9E3779B97F4A7C15ULL));
    double loss_sum = 0.0;
    std::size_t tokens = 0;
    for (std::size_t bi : order) {
      const auto batch =
          collate(buckets[bi], in.train_data.table, in.store, in.retrieval, in.model.max_seq_len);
      auto [loss, grads] = loss_and_gradients(st.params, batch);
      if (!std::isfinite(loss.sum)) {
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(st.step + 1));
      }
      loss_sum += loss.sum;
      tokens += loss.tokens;

      auto& g = grads.values;
      double sq = 0.0;
      for (double v : g) sq += v * v;
      const double norm = std::sqrt(sq);
      const double clip = (tc.grad_clip > 0.0 && norm > tc.grad_clip) ? tc.grad_clip / norm : 1.0;

      ++st.step;
      const double lr = scheduled_lr(tc, st.step, total_steps);
      const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(st.step));
      const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(st.step));
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double gi = g[i] * clip;
        st.adam_m[i] = tc.beta1 * st.adam_m[i] + (1.0 - tc.beta1) * gi;
        st.adam_v[i] = tc.beta2 * st.adam_v[i] + (1.0 - tc.beta2) * gi * gi;
        const double mhat = st.adam_m[i] / bc1;
        const double vhat = st.adam_v[i] / bc2;
        double update = mhat / (std::sqrt(vhat) + tc.eps);
        if (decay[i]) update += tc.weight_decay * theta[i];
        theta[i] -= lr * update;
      }
    }
    const auto t1 = std::chrono::steady_clock::now();

    std::vector<EpochMetrics> epoch_metrics;
    const double train_loss = loss_sum / static_cast<double>(tokens);
    epoch_metrics.push_back({epoch, "train", train_loss, std::exp(train_loss), tokens,
                             std::chrono::duration<double, std::milli>(t1 - t0).count()});
    double select_ppl = std::exp(train_loss);
    if (!in.valid_data.sentences.empty()) {
      const auto v = evaluate_nll(st.params, in.valid_data, in.store, in.retrieval,
                                  in.train.batch_size, in.eval_threads);
      const auto t2 = std::chrono::steady_clock::now();
      select_ppl = std::exp(v.mean);
      epoch_metrics.push_back({epoch, "valid", v.mean, select_ppl, v.tokens,
                               std::chrono::duration<double, std::milli>(t2 - t1).count()});
    }
    if (!std::isfinite(select_ppl)) {
      throw DivergenceError("non-finite perplexity after epoch " + std::to_string(epoch));
    }
    if (select_ppl < st.best_ppl) {
      st.best_ppl = select_ppl;
      st.best_epoch = epoch;
      st.best = st.params;
    }
    st.history.insert(st.history.end(), epoch_metrics.begin(), epoch_metrics.end());
    st.epochs_done = epoch;
    if (on_epoch && !on_epoch(st, epoch_metrics)) break;
  }
  return st;
}

}  // namespace surealm
