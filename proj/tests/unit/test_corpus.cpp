#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "surealm/corpus.hpp"
#include "surealm/synthetic.hpp"
#include "tempdir.hpp"

namespace surealm {
namespace {

std::vector<TokenId> ids(const Vocabulary& v, std::initializer_list<const char*> words) {
  std::vector<TokenId> out;
  for (const char* w : words) out.push_back(v.lookup(w));
  return out;
}

TEST(Corpus, DeduplicatesIdenticalLines) {
  std::vector<std::string> lines = {"how can i help you", "how can i help you", "book a taxi"};
  const auto c = load_corpus_lines(lines, VocabMode::kBuild);
  ASSERT_EQ(c.sentences.size(), 2U);
  EXPECT_EQ(c.sentences[0].id, 0U);
  EXPECT_EQ(c.sentences[1].id, 1U);
  EXPECT_EQ(c.duplicates_removed, 1U);
  EXPECT_EQ(c.vocab.detokenize(c.sentences[1].tokens), "book a taxi");
}

TEST(Corpus, SingleWordSentenceHasNoSplits) {
  std::vector<std::string> lines = {"a"};
  const auto c = load_corpus_lines(lines, VocabMode::kBuild);
  ASSERT_EQ(c.sentences.size(), 1U);
  EXPECT_EQ(c.sentences[0].length(), 1U);
  EXPECT_TRUE(enumerate_splits(c.sentences[0], 10).empty());
}

TEST(Corpus, LowercasesAndSplitsOnWhitespace) {
  const auto t = tokenize_line("  How  CAN\ti help ");
  EXPECT_EQ(t, (std::vector<std::string>{"how", "can", "i", "help"}));
}

TEST(Corpus, SkipsBlankLinesAndDedupsAfterNormalization) {
  std::vector<std::string> lines = {"", "Book A Taxi", "   ", "book a  taxi", "thanks"};
  const auto c = load_corpus_lines(lines, VocabMode::kBuild);
  EXPECT_EQ(c.sentences.size(), 2U);
  EXPECT_EQ(c.skipped_empty_lines, 2U);
  EXPECT_EQ(c.duplicates_removed, 1U);
}

TEST(Corpus, EmptyCorpusIsAnError) {
  std::vector<std::string> lines = {"", " "};
  EXPECT_THROW(load_corpus_lines(lines, VocabMode::kBuild), ConfigError);
}

TEST(Corpus, ApplyModeMapsUnknownToUnk) {
  std::vector<std::string> train = {"book a taxi"};
  const auto c = load_corpus_lines(train, VocabMode::kBuild);
  std::vector<std::string> valid = {"book a train"};
  const auto v = load_corpus_lines(valid, VocabMode::kApply, &c.vocab);
  EXPECT_EQ(v.sentences[0].tokens[2], kUnk);
  EXPECT_EQ(v.vocab, c.vocab);
  EXPECT_THROW(load_corpus_lines(valid, VocabMode::kApply, nullptr), ConfigError);
}

TEST(Corpus, VocabularyRoundTripsThroughFile) {
  testing::TempDir dir;
  std::vector<std::string> lines = {"the cat sat", "on the mat"};
  const auto c = load_corpus_lines(lines, VocabMode::kBuild);
  EXPECT_EQ(c.vocab.size(), kNumSpecial + 5);
  EXPECT_EQ(c.vocab.lookup("the"), kNumSpecial);
  c.vocab.save(dir / "vocab.txt");
  EXPECT_EQ(Vocabulary::load(dir / "vocab.txt"), c.vocab);
}

TEST(Corpus, LoadsFromFileAndReportsMissingPath) {
  testing::TempDir dir;
  testing::write_lines(dir / "c.txt", {"a b", "c d e"});
  const auto c = load_corpus(dir / "c.txt", VocabMode::kBuild);
  EXPECT_EQ(c.sentences.size(), 2U);
  try {
    load_corpus(dir / "missing.txt", VocabMode::kBuild);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("missing.txt"), std::string::npos);
  }
}

TEST(Splits, ExcludeCurrentWord) {
  Vocabulary v;
  for (const char* w : {"a", "b", "c"}) v.add(w);
  const Sentence s{0, ids(v, {"a", "b", "c"})};
  const auto recs = enumerate_splits(s, 10);
  ASSERT_EQ(recs.size(), 2U);
  EXPECT_EQ(recs[0].split_pos, 1U);
  EXPECT_TRUE(recs[0].prefix.empty());
  EXPECT_EQ(recs[0].current, v.lookup("a"));
  EXPECT_EQ(recs[0].suffix, ids(v, {"b", "c"}));
  EXPECT_EQ(recs[1].split_pos, 2U);
  EXPECT_EQ(recs[1].prefix, ids(v, {"a"}));
  EXPECT_EQ(recs[1].current, v.lookup("b"));
  EXPECT_EQ(recs[1].suffix, ids(v, {"c"}));
  EXPECT_EQ(recs[1].suffix_start(), 3U);
}

TEST(Splits, TruncatesSuffixToM) {
  Vocabulary v;
  for (const char* w : {"a", "b", "c", "d", "e"}) v.add(w);
  const Sentence s{0, ids(v, {"a", "b", "c", "d", "e"})};
  const auto recs = enumerate_splits(s, 2);
  EXPECT_EQ(recs[0].suffix, ids(v, {"b", "c"}));
  EXPECT_EQ(recs[0].full_suffix_len, 4U);
}

TEST(Splits, IncludeCurrentStartsSuffixAtCurrentWord) {
  Vocabulary v;
  for (const char* w : {"a", "b", "c"}) v.add(w);
  const Sentence s{0, ids(v, {"a", "b", "c"})};
  const auto recs = enumerate_splits(s, 10, true);
  EXPECT_EQ(recs[1].suffix, ids(v, {"b", "c"}));
  EXPECT_EQ(recs[1].suffix_start(), 2U);
}

TEST(Splits, RejectsZeroM) {
  const Sentence s{0, {4, 5, 6}};
  EXPECT_THROW(enumerate_splits(s, 0), ConfigError);
}

TEST(Splits, CountExamples) {
  std::vector<Sentence> one = {{0, {4, 5, 6, 7, 8}}};
  EXPECT_EQ(corpus_split_count(one), 4U);
  std::vector<Sentence> two = {{0, {4, 5, 6}}, {1, {4}}};
  EXPECT_EQ(corpus_split_count(two), 2U);
}

TEST(Splits, CountMatchesEnumerationOnRandomCorpus) {
  std::mt19937_64 rng(11);
  const auto corpus = oracle::random_sentences(rng, 100, 20, 40);
  std::size_t brute = 0;
  for (const auto& s : corpus) brute += enumerate_splits(s, 10).size();
  EXPECT_EQ(corpus_split_count(corpus), brute);
}

TEST(Splits, PartitionPropertyOnRandomCorpus) {
  std::mt19937_64 rng(12);
  for (const auto& s : oracle::random_sentences(rng, 50, 15, 30)) {
    for (const auto& r : enumerate_splits(s, 1000)) {
      std::vector<TokenId> joined = r.prefix;
      joined.push_back(r.current);
      joined.insert(joined.end(), r.suffix.begin(), r.suffix.end());
      EXPECT_EQ(joined, s.tokens);
    }
  }
}

TEST(Synthetic, UniqueDisjointAndDeterministic) {
  SyntheticCorpusConfig cfg;
  cfg.train = 300;
  cfg.valid = 60;
  cfg.test = 60;
  const auto a = make_synthetic_corpus(cfg);
  const auto b = make_synthetic_corpus(cfg);
  EXPECT_EQ(a.train, b.train);
  EXPECT_GE(a.template_count, 64U);
  std::set<std::string> all(a.train.begin(), a.train.end());
  all.insert(a.valid.begin(), a.valid.end());
  all.insert(a.test.begin(), a.test.end());
  EXPECT_EQ(all.size(), 420U);
}

}  // namespace
}  // namespace surealm
