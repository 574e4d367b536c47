#include "surealm/store.hpp"

#include <algorithm>
#include <fstream>
#include <thread>

#include "json.hpp"
#include "surealm/binary_io.hpp"

namespace surealm {

namespace {

constexpr std::string_view kStoreMagic = "SURE";

// Strict weak order of (score desc, entry_id asc).
bool ranks_before(double sa, EntryId ia, double sb, EntryId ib) {
  return sa > sb || (sa == sb && ia < ib);
}

struct Candidate {
  double score;
  EntryId id;
};

// Keeps the best `k` candidates seen so far, sorted best first.
void offer(std::vector<Candidate>& best, std::size_t k, double score, EntryId id) {
  if (best.size() == k) {
    const auto& worst = best.back();
    if (!ranks_before(score, id, worst.score, worst.id)) return;
    best.pop_back();
  }
  auto pos = std::upper_bound(best.begin(), best.end(), Candidate{score, id},
                              [](const Candidate& a, const Candidate& b) {
                                return ranks_before(a.score, a.id, b.score, b.id);
                              });
  best.insert(pos, Candidate{score, id});
}

std::vector<EntryId> top_k_ids(const EmbeddingStore& store, std::span<const double> scores,
                               std::size_t k, std::optional<SentenceId> exclude) {
  std::vector<Candidate> best;
  best.reserve(k + 1);
  const auto& entries = store.entries();
  for (std::size_t j = 0; j < entries.size(); ++j) {
    if (exclude && entries[j].sentence_id == *exclude) continue;
    offer(best, k, scores[j], j);
  }
  std::vector<EntryId> ids;
  ids.reserve(best.size());
  for (const auto& c : best) ids.push_back(c.id);
  return ids;
}

void check_query(const EmbeddingStore& store, std::span<const double> query) {
  if (query.size() != store.dim()) {
    throw ConfigError("query dimension " + std::to_string(query.size()) +
                      " does not match store d_enc " + std::to_string(store.dim()));
  }
}

}  // namespace

void RetrievalConfig::validate() const {
  if (top_k < 1) throw ConfigError("retrieval top_k must be >= 1");
  if (delta < 1) throw ConfigError("retrieval delta must be >= 1");
  if (suffix_len < 1) throw ConfigError("retrieval suffix_len must be >= 1");
}

EmbeddingStore::EmbeddingStore(EncoderConfig encoder_cfg, RetrievalConfig retrieval_cfg,
                               std::vector<StoreEntry> entries, Matrix prefix_emb,
                               Matrix suffix_emb)
    : encoder_cfg_(encoder_cfg),
      retrieval_cfg_(retrieval_cfg),
      entries_(std::move(entries)),
      prefix_emb_(std::move(prefix_emb)),
      suffix_emb_(std::move(suffix_emb)) {
  const std::size_t n = entries_.size();
  const std::size_t d = encoder_cfg_.d_enc;
  if (prefix_emb_.rows() != n || suffix_emb_.rows() != n || prefix_emb_.cols() != d ||
      suffix_emb_.cols() != d) {
    throw ConfigError("store embedding matrices do not match entry count and d_enc");
  }
  prefix_t_.resize(d, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t c = 0; c < d; ++c) prefix_t_(c, j) = prefix_emb_(j, c);
  }
}

void EmbeddingStore::score_all(std::span<const double> query, std::span<double> scores) const {
  check_query(*this, query);
  const std::size_t n = size();
  std::fill(scores.begin(), scores.end(), 0.0);
  double* __restrict s = scores.data();
  for (std::size_t c = 0; c < query.size(); ++c) {
    const double q = query[c];
    const double* __restrict col = prefix_t_.data() + c * n;
    for (std::size_t j = 0; j < n; ++j) s[j] += q * col[j];
  }
}

EmbeddingStore build_store(std::span<const Sentence> corpus, const EncoderConfig& encoder_cfg,
                           const RetrievalConfig& retrieval_cfg) {
  encoder_cfg.validate();
  retrieval_cfg.validate();
  if (corpus.empty()) throw ConfigError("empty corpus");
  const std::size_t n = corpus_split_count(corpus);
  if (n == 0) throw ConfigError("no indexable splits");

  std::vector<const Sentence*> ordered;
  ordered.reserve(corpus.size());
  for (const auto& s : corpus) ordered.push_back(&s);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const Sentence* a, const Sentence* b) { return a->id < b->id; });

  SpanEncoder enc(encoder_cfg);
  std::vector<StoreEntry> entries;
  entries.reserve(n);
  Matrix prefix(n, encoder_cfg.d_enc);
  Matrix suffix(n, encoder_cfg.d_enc);
  for (const Sentence* s : ordered) {
    for (const auto& split : enumerate_splits(*s, retrieval_cfg.suffix_len,
                                              retrieval_cfg.include_current)) {
      const EntryId id = entries.size();
      entries.push_back({id, split.sentence_id, split.split_pos, split.current});
      enc.encode(split.prefix, 1, prefix.row(id));
      enc.encode(split.suffix, split.suffix_start(), suffix.row(id));
    }
  }
  return EmbeddingStore(encoder_cfg, retrieval_cfg, std::move(entries), std::move(prefix),
                        std::move(suffix));
}

std::vector<Hit> search(const EmbeddingStore& store, std::span<const double> query, std::size_t k,
                        std::optional<SentenceId> exclude_sentence) {
  if (k < 1) throw ConfigError("search requires k >= 1");
  check_query(store, query);
  std::vector<double> scores(store.size());
  store.score_all(query, scores);
  std::vector<Hit> hits;
  for (EntryId id : top_k_ids(store, scores, k, exclude_sentence)) {
    hits.push_back({id, scores[id], store.prefix_emb(id), store.suffix_emb(id)});
  }
  return hits;
}

std::vector<std::uint32_t> block_positions(std::size_t n, std::uint32_t delta) {
  if (delta < 1) throw ConfigError("retrieval delta must be >= 1");
  std::vector<std::uint32_t> out;
  for (std::size_t b = 1; b + 1 <= n; b += delta) out.push_back(static_cast<std::uint32_t>(b));
  return out;
}

const RetrievalTable::Row* RetrievalTable::find(SentenceId id) const {
  // Rows are normally dense and ordered by id; fall back to a scan otherwise.
  if (id < rows.size() && rows[id].sentence_id == id) return &rows[id];
  auto it = std::lower_bound(rows.begin(), rows.end(), id,
                             [](const Row& r, SentenceId v) { return r.sentence_id < v; });
  if (it != rows.end() && it->sentence_id == id) return &*it;
  for (const auto& r : rows) {
    if (r.sentence_id == id) return &r;
  }
  return nullptr;
}

RetrievalTable precompute_retrievals(const EmbeddingStore& store, std::span<const Sentence> corpus,
                                     const RetrievalConfig& cfg, Exclusion exclusion,
                                     unsigned threads) {
  cfg.validate();
  RetrievalTable table;
  table.rows.resize(corpus.size());

  auto work = [&](std::size_t begin, std::size_t end) {
    SpanEncoder enc(store.encoder_config());
    std::vector<double> query(store.dim());
    std::vector<double> scores(store.size());
    for (std::size_t si = begin; si < end; ++si) {
      const Sentence& s = corpus[si];
      auto& row = table.rows[si];
      row.sentence_id = s.id;
      std::optional<SentenceId> exclude;
      if (exclusion == Exclusion::kSameSentence) exclude = s.id;
      for (std::uint32_t b : block_positions(s.length(), cfg.delta)) {
        enc.encode(std::span(s.tokens).first(b), 1, query);
        store.score_all(query, scores);
        row.blocks.push_back(top_k_ids(store, scores, cfg.top_k, exclude));
      }
    }
  };

  threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(corpus.size())));
  if (threads <= 1) {
    work(0, corpus.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (corpus.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(corpus.size(), begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  std::stable_sort(table.rows.begin(), table.rows.end(),
                   [](const auto& a, const auto& b) { return a.sentence_id < b.sentence_id; });
  return table;
}

std::string serialize_store(const EmbeddingStore& store) {
  io::Writer w;
  w.bytes(kStoreMagic);
  w.put<std::uint32_t>(kStoreVersion);
  const auto& e = store.encoder_config();
  w.put<std::uint32_t>(e.d_enc);
  w.put<std::uint64_t>(e.seed);
  w.put<double>(e.pe_base);
  const auto& r = store.retrieval_config();
  w.put<std::uint32_t>(r.top_k);
  w.put<std::uint32_t>(r.delta);
  w.put<std::uint32_t>(r.suffix_len);
  w.put<std::uint8_t>(r.include_current ? 1 : 0);
  w.put<std::uint64_t>(store.size());
  for (const auto& entry : store.entries()) {
    w.put<std::uint64_t>(entry.entry_id);
    w.put<std::uint64_t>(entry.sentence_id);
    w.put<std::uint32_t>(entry.split_pos);
    w.put<std::uint32_t>(entry.current_word);
    w.doubles(store.prefix_emb(entry.entry_id));
    w.doubles(store.suffix_emb(entry.entry_id));
  }
  return w.take();
}

EmbeddingStore deserialize_store(std::string_view bytes) {
  io::Reader r(bytes);
  r.section("magic");
  if (r.bytes(kStoreMagic.size()) != kStoreMagic) throw FormatError("magic", "bad store magic");
  r.section("version");
  if (const auto v = r.get<std::uint32_t>(); v != kStoreVersion) {
    throw FormatError("version", "unsupported store version " + std::to_string(v));
  }
  r.section("encoder_config");
  EncoderConfig enc;
  enc.d_enc = r.get<std::uint32_t>();
  enc.seed = r.get<std::uint64_t>();
  enc.pe_base = r.get<double>();
  try {
    enc.validate();
  } catch (const ConfigError& err) {
    throw FormatError("encoder_config", err.what());
  }
  r.section("retrieval_config");
  RetrievalConfig rc;
  rc.top_k = r.get<std::uint32_t>();
  rc.delta = r.get<std::uint32_t>();
  rc.suffix_len = r.get<std::uint32_t>();
  rc.include_current = r.get<std::uint8_t>() != 0;
  try {
    rc.validate();
  } catch (const ConfigError& err) {
    throw FormatError("retrieval_config", err.what());
  }
  r.section("entry_count");
  const auto count = r.get<std::uint64_t>();
  const std::size_t record = 8 + 8 + 4 + 4 + 2 * 8 * static_cast<std::size_t>(enc.d_enc);
  r.section("entries");
  if (count > r.remaining() / record) {
    throw FormatError("entries", "unexpected end of section: entries");
  }
  std::vector<StoreEntry> entries(count);
  Matrix prefix(count, enc.d_enc);
  Matrix suffix(count, enc.d_enc);
  for (std::size_t i = 0; i < count; ++i) {
    auto& e = entries[i];
    e.entry_id = r.get<std::uint64_t>();
    e.sentence_id = r.get<std::uint64_t>();
    e.split_pos = r.get<std::uint32_t>();
    e.current_word = r.get<std::uint32_t>();
    if (e.entry_id != i) {
      throw FormatError("entries", "non-dense entry_id " + std::to_string(e.entry_id) +
                                       " at record " + std::to_string(i));
    }
    r.doubles(prefix.row(i));
    r.doubles(suffix.row(i));
  }
  r.expect_end();
  return EmbeddingStore(enc, rc, std::move(entries), std::move(prefix), std::move(suffix));
}

void save_store(const EmbeddingStore& store, const std::filesystem::path& path) {
  io::write_file(path, serialize_store(store));
}

EmbeddingStore load_store(const std::filesystem::path& path) {
  return deserialize_store(io::read_file(path));
}

std::string store_digest(const EmbeddingStore& store) {
  return io::hex64(io::fnv1a64(serialize_store(store)));
}

void save_table(const RetrievalTable& table, const std::filesystem::path& path) {
  std::string out;
  for (const auto& row : table.rows) {
    nlohmann::json j;
    j["sentence_id"] = row.sentence_id;
    j["blocks"] = row.blocks;
    out += j.dump();
    out += '\n';
  }
  io::write_file(path, out);
}

RetrievalTable load_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open retrieval table: " + path.string());
  RetrievalTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RetrievalTable::Row row;
      row.sentence_id = j.at("sentence_id").get<SentenceId>();
      row.blocks = j.at("blocks").get<std::vector<std::vector<EntryId>>>();
      table.rows.push_back(std::move(row));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("retrieval_table",
                        "bad retrieval table line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return table;
}

}  // namespace surealm
