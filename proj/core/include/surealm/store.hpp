#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "surealm/corpus.hpp"
#include "surealm/encoder.hpp"
#include "surealm/tensor.hpp"
#include "surealm/types.hpp"

namespace surealm {

struct RetrievalConfig {
  std::uint32_t top_k = 8;
  std::uint32_t delta = 1;
  std::uint32_t suffix_len = 10;
  bool include_current = false;

  void validate() const;
  friend bool operator==(const RetrievalConfig&, const RetrievalConfig&) = default;
};

/// Metadata of one indexed split. Embeddings live in the owning store.
struct StoreEntry {
  EntryId entry_id = 0;
  SentenceId sentence_id = 0;
  std::uint32_t split_pos = 0;
  TokenId current_word = kPad;

  friend bool operator==(const StoreEntry&, const StoreEntry&) = default;
};

struct Hit {
  EntryId entry_id = 0;
  double score = 0.0;
  std::span<const double> prefix_emb;
  std::span<const double> suffix_emb;
};

/// Immutable prefix -> suffix embedding store with exact inner-product search.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  EmbeddingStore(EncoderConfig encoder_cfg, RetrievalConfig retrieval_cfg,
                 std::vector<StoreEntry> entries, Matrix prefix_emb, Matrix suffix_emb);

  const EncoderConfig& encoder_config() const noexcept { return encoder_cfg_; }
  const RetrievalConfig& retrieval_config() const noexcept { return retrieval_cfg_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t dim() const noexcept { return encoder_cfg_.d_enc; }

  const std::vector<StoreEntry>& entries() const noexcept { return entries_; }
  const StoreEntry& entry(EntryId id) const { return entries_.at(id); }
  std::span<const double> prefix_emb(EntryId id) const { return prefix_emb_.row(id); }
  std::span<const double> suffix_emb(EntryId id) const { return suffix_emb_.row(id); }

  /// Inner product of `query` with every prefix embedding into `scores`.
  /// Each score is accumulated over dimensions in index order.
  void score_all(std::span<const double> query, std::span<double> scores) const;

  friend bool operator==(const EmbeddingStore& a, const EmbeddingStore& b) {
    return a.encoder_cfg_ == b.encoder_cfg_ && a.retrieval_cfg_ == b.retrieval_cfg_ &&
           a.entries_ == b.entries_ && a.prefix_emb_ == b.prefix_emb_ &&
           a.suffix_emb_ == b.suffix_emb_;
  }

 private:
  EncoderConfig encoder_cfg_;
  RetrievalConfig retrieval_cfg_;
  std::vector<StoreEntry> entries_;
  Matrix prefix_emb_;
  Matrix suffix_emb_;
  Matrix prefix_t_;  // d_enc x size, for column-wise scoring
};

/// Encodes every split of every sentence. Entry ids follow
/// (sentence_id, split_pos) order. Prefixes start at position 1; suffixes at
/// their absolute position in the sentence.
EmbeddingStore build_store(std::span<const Sentence> corpus, const EncoderConfig& encoder_cfg,
                           const RetrievalConfig& retrieval_cfg);

/// Exact top-k by inner product, ordered by (score desc, entry_id asc),
/// skipping entries of `exclude_sentence`.
std::vector<Hit> search(const EmbeddingStore& store, std::span<const double> query,
                        std::size_t k, std::optional<SentenceId> exclude_sentence = std::nullopt);

/// Prefix lengths b = 1, 1 + delta, ... with b <= n - 1 at which a sentence
/// of n words retrieves.
std::vector<std::uint32_t> block_positions(std::size_t n, std::uint32_t delta);

struct RetrievalTable {
  struct Row {
    SentenceId sentence_id = 0;
    std::vector<std::vector<EntryId>> blocks;
    friend bool operator==(const Row&, const Row&) = default;
  };
  std::vector<Row> rows;

  /// Row for `id`, or nullptr.
  const Row* find(SentenceId id) const;
  friend bool operator==(const RetrievalTable&, const RetrievalTable&) = default;
};

enum class Exclusion { kSameSentence, kNone };

/// One block of hits per stride position of every sentence. Work is split
/// across `threads` workers; the result does not depend on the split.
RetrievalTable precompute_retrievals(const EmbeddingStore& store, std::span<const Sentence> corpus,
                                     const RetrievalConfig& cfg, Exclusion exclusion,
                                     unsigned threads = 1);

// Binary store format, little-endian:
//   "SURE" | u32 version | d_enc u32, seed u64, pe_base f64 |
//   K u32, delta u32, m u32, include_current u8 | u64 count |
//   count x (entry_id u64, sentence_id u64, split_pos u32, current_word u32,
//            prefix d_enc x f64, suffix d_enc x f64)
inline constexpr std::uint32_t kStoreVersion = 1;

std::string serialize_store(const EmbeddingStore& store);
EmbeddingStore deserialize_store(std::string_view bytes);
void save_store(const EmbeddingStore& store, const std::filesystem::path& path);
EmbeddingStore load_store(const std::filesystem::path& path);

/// FNV-1a 64 of the serialized store, as 16 hex digits.
std::string store_digest(const EmbeddingStore& store);

/// JSON Lines: {"sentence_id": n, "blocks": [[entry_id, ...], ...]} per row.
void save_table(const RetrievalTable& table, const std::filesystem::path& path);
RetrievalTable load_table(const std::filesystem::path& path);

}  // namespace surealm
