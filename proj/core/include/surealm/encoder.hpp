#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "surealm/types.hpp"

namespace surealm {

/// Frozen span encoder: seeded random token vectors plus sinusoidal
/// absolute positions, mean pooled and L2 normalized.
struct EncoderConfig {
  std::uint32_t d_enc = 64;
  std::uint64_t seed = 0x5EED5EEDULL;
  double pe_base = 10000.0;

  /// Throws ConfigError unless d_enc is even and >= 2.
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Unit vector with components drawn from SplitMix64 keyed by
/// seed ^ token_id * golden-ratio, mapped from [0, 1) to [-1, 1).
std::vector<double> token_vector(const EncoderConfig& cfg, TokenId token_id);

/// sin / cos pairs of pos / pe_base^(2t / d_enc). `pos` is 1-based.
std::vector<double> positional_vector(const EncoderConfig& cfg, std::uint64_t pos);

/// Mean over j of token_vector(t_j) + positional_vector(start_pos + j), then
/// normalized. An empty span encodes to the zero vector.
std::vector<double> encode_span(const EncoderConfig& cfg, std::span<const TokenId> tokens,
                                std::uint64_t start_pos);

/// Memoizes token and positional vectors for repeated encoding. Produces
/// bit-identical results to encode_span.
class SpanEncoder {
 public:
  explicit SpanEncoder(EncoderConfig cfg);

  const EncoderConfig& config() const noexcept { return cfg_; }
  void encode(std::span<const TokenId> tokens, std::uint64_t start_pos, std::span<double> out);
  std::vector<double> encode(std::span<const TokenId> tokens, std::uint64_t start_pos);

 private:
  std::span<const double> token_row(TokenId id);
  std::span<const double> position_row(std::uint64_t pos);

  EncoderConfig cfg_;
  std::vector<std::vector<double>> token_cache_;
  std::vector<std::vector<double>> position_cache_;
};

}  // namespace surealm
