#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace surealm {

/// Templated dialogue-style corpus. Venue names are two-word pairs, and
/// every venue carries fixed random attributes (area, food, price) that its
/// sentences repeat, so a sentence's later words depend on an earlier word
/// pair.
struct SyntheticCorpusConfig {
  std::size_t train = 2000;
  std::size_t valid = 400;
  std::size_t test = 400;
  std::size_t name_first = 16;
  std::size_t name_second = 16;
  std::uint64_t seed = 2024;
};

struct SyntheticCorpus {
  std::vector<std::string> train;
  std::vector<std::string> valid;
  std::vector<std::string> test;
  std::size_t template_count = 0;
};

/// Unique sentences, disjoint across splits, deterministic in the seed.
SyntheticCorpus make_synthetic_corpus(const SyntheticCorpusConfig& cfg);

}  // namespace surealm
