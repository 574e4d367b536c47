#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "surealm/types.hpp"

namespace surealm {

/// Token <-> id mapping. Ids 0..3 are PAD, UNK, BOS, EOS; corpus tokens
/// start at 4 and are dense.
class Vocabulary {
 public:
  Vocabulary();

  /// Returns the id of `token`, inserting it if absent.
  TokenId add(std::string_view token);
  /// Returns the id of `token`, or UNK.
  TokenId lookup(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;

  std::size_t size() const noexcept { return id_to_token_.size(); }

  /// One token per line, specials omitted: line n holds id n + 4.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  std::string detokenize(std::span<const TokenId> ids) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_;
  }

 private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

struct Sentence {
  SentenceId id = 0;
  std::vector<TokenId> tokens;

  std::size_t length() const noexcept { return tokens.size(); }
  friend bool operator==(const Sentence&, const Sentence&) = default;
};

/// One (prefix, current word, suffix) partition of a sentence. `split_pos`
/// is the 1-based position of the current word.
struct SplitRecord {
  SentenceId sentence_id = 0;
  std::uint32_t split_pos = 0;
  std::vector<TokenId> prefix;
  TokenId current = kPad;
  std::vector<TokenId> suffix;
  std::uint32_t full_suffix_len = 0;
  bool suffix_includes_current = false;

  /// Absolute position of the first suffix token in the source sentence.
  std::uint32_t suffix_start() const noexcept {
    return split_pos + (suffix_includes_current ? 0U : 1U);
  }
};

enum class VocabMode { kBuild, kApply };

struct LoadedCorpus {
  std::vector<Sentence> sentences;
  Vocabulary vocab;
  std::size_t skipped_empty_lines = 0;
  std::size_t duplicates_removed = 0;
};

/// Lowercase + whitespace tokenization of one line.
std::vector<std::string> tokenize_line(std::string_view line);

/// Reads a one-sentence-per-line UTF-8 file. Duplicate token sequences are
/// dropped keeping the first; ids are assigned in file order after dedup.
/// In apply mode `existing_vocab` is required and unknown tokens map to UNK.
LoadedCorpus load_corpus(const std::filesystem::path& path, VocabMode mode,
                         const Vocabulary* existing_vocab = nullptr);

/// Same as load_corpus over in-memory lines.
LoadedCorpus load_corpus_lines(std::span<const std::string> lines, VocabMode mode,
                               const Vocabulary* existing_vocab = nullptr);

/// All partitions with 0 < i < N. The suffix starts at w_{i+1} (or w_i when
/// `include_current`) and holds at most `m` tokens.
std::vector<SplitRecord> enumerate_splits(const Sentence& s, std::size_t m,
                                          bool include_current = false);

/// Sum over sentences of max(N - 1, 0).
std::size_t corpus_split_count(std::span<const Sentence> corpus);

}  // namespace surealm
