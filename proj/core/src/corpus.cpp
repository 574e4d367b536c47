#include "surealm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace surealm {

namespace {

constexpr const char* kSpecialTokens[kNumSpecial] = {"<pad>", "<unk>", "<s>", "</s>"};

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace

Vocabulary::Vocabulary() {
  for (TokenId id = 0; id < kNumSpecial; ++id) {
    id_to_token_.emplace_back(kSpecialTokens[id]);
  }
}

TokenId Vocabulary::add(std::string_view token) {
  if (auto it = token_to_id_.find(std::string(token)); it != token_to_id_.end()) {
    return it->second;
  }
  const auto id = static_cast<TokenId>(id_to_token_.size());
  id_to_token_.emplace_back(token);
  token_to_id_.emplace(id_to_token_.back(), id);
  return id;
}

TokenId Vocabulary::lookup(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.contains(std::string(token));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= id_to_token_.size()) throw ConfigError("token id out of range: " + std::to_string(id));
  return id_to_token_[id];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write vocabulary: " + path.string());
  for (std::size_t id = kNumSpecial; id < id_to_token_.size(); ++id) {
    out << id_to_token_[id] << '\n';
  }
  if (!out) throw Error("failed writing vocabulary: " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open vocabulary: " + path.string());
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || v.contains(line)) {
      throw FormatError("vocabulary", "invalid or duplicate vocabulary line " +
                                          std::to_string(v.size() - kNumSpecial + 1));
    }
    v.add(line);
  }
  return v;
}

std::string Vocabulary::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

std::vector<std::string> tokenize_line(std::string_view line) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : line) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      // Only ASCII letters are case-folded; multi-byte UTF-8 passes through.
      cur += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : ch;
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

LoadedCorpus load_corpus_lines(std::span<const std::string> lines, VocabMode mode,
                               const Vocabulary* existing_vocab) {
  LoadedCorpus out;
  if (mode == VocabMode::kApply) {
    if (existing_vocab == nullptr) throw ConfigError("apply mode requires a vocabulary");
    out.vocab = *existing_vocab;
  }
  std::set<std::vector<TokenId>> seen;
  for (const auto& line : lines) {
    const auto words = tokenize_line(line);
    if (words.empty()) {
      ++out.skipped_empty_lines;
      continue;
    }
    std::vector<TokenId> ids;
    ids.reserve(words.size());
    for (const auto& w : words) {
      ids.push_back(mode == VocabMode::kBuild ? out.vocab.add(w) : out.vocab.lookup(w));
    }
    if (!seen.insert(ids).second) {
      ++out.duplicates_removed;
      continue;
    }
    out.sentences.push_back(Sentence{out.sentences.size(), std::move(ids)});
  }
  if (out.sentences.empty()) throw ConfigError("empty corpus");
  return out;
}

LoadedCorpus load_corpus(const std::filesystem::path& path, VocabMode mode,
                         const Vocabulary* existing_vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open corpus: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(std::move(line));
  return load_corpus_lines(lines, mode, existing_vocab);
}

std::vector<SplitRecord> enumerate_splits(const Sentence& s, std::size_t m, bool include_current) {
  if (m < 1) throw ConfigError("suffix truncation m must be >= 1");
  std::vector<SplitRecord> out;
  const std::size_t n = s.length();
  if (n < 2) return out;
  out.reserve(n - 1);
  for (std::size_t i = 1; i < n; ++i) {
    SplitRecord r;
    r.sentence_id = s.id;
    r.split_pos = static_cast<std::uint32_t>(i);
    r.prefix.assign(s.tokens.begin(), s.tokens.begin() + static_cast<std::ptrdiff_t>(i - 1));
    r.current = s.tokens[i - 1];
    r.suffix_includes_current = include_current;
    // 0-based index of the first suffix token.
    const std::size_t first = include_current ? i - 1 : i;
    r.full_suffix_len = static_cast<std::uint32_t>(n - first);
    const std::size_t last = std::min(n, first + m);
    r.suffix.assign(s.tokens.begin() + static_cast<std::ptrdiff_t>(first),
                    s.tokens.begin() + static_cast<std::ptrdiff_t>(last));
    out.push_back(std::move(r));
  }
  return out;
}

std::size_t corpus_split_count(std::span<const Sentence> corpus) {
  std::size_t total = 0;
  for (const auto& s : corpus) total += s.length() > 0 ? s.length() - 1 : 0;
  return total;
}

}  // namespace surealm
