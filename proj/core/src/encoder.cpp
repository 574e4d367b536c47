#include "surealm/encoder.hpp"

#include <cmath>
#include <string>

namespace surealm {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += kGolden;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void normalize(std::span<double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (sq == 0.0) return;
  const double inv = 1.0 / std::sqrt(sq);
  for (double& x : v) x *= inv;
}

}  // namespace

void EncoderConfig::validate() const {
  if (d_enc < 2 || d_enc % 2 != 0) {
    throw ConfigError("encoder d_enc must be even and >= 2, got " + std::to_string(d_enc));
  }
  if (!(pe_base > 0.0)) throw ConfigError("encoder pe_base must be positive");
}

std::vector<double> token_vector(const EncoderConfig& cfg, TokenId token_id) {
  std::vector<double> v(cfg.d_enc);
  std::uint64_t state = cfg.seed ^ (static_cast<std::uint64_t>(token_id) * kGolden);
  for (auto& c : v) {
    const double u = static_cast<double>(splitmix64_next(state) >> 11) * 0x1.0p-53;
    c = u * 2.0 - 1.0;
  }
  normalize(v);
  return v;
}

std::vector<double> positional_vector(const EncoderConfig& cfg, std::uint64_t pos) {
  std::vector<double> v(cfg.d_enc);
  const double p = static_cast<double>(pos);
  for (std::uint32_t t = 0; 2 * t < cfg.d_enc; ++t) {
    const double freq = std::pow(cfg.pe_base, static_cast<double>(2 * t) / cfg.d_enc);
    const double arg = p / freq;
    v[2 * t] = std::sin(arg);
    v[2 * t + 1] = std::cos(arg);
  }
  return v;
}

std::vector<double> encode_span(const EncoderConfig& cfg, std::span<const TokenId> tokens,
                                std::uint64_t start_pos) {
  std::vector<double> out(cfg.d_enc, 0.0);
  if (tokens.empty()) return out;
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    const auto tv = token_vector(cfg, tokens[j]);
    const auto pv = positional_vector(cfg, start_pos + j);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += tv[c] + pv[c];
  }
  const double inv_n = 1.0 / static_cast<double>(tokens.size());
  for (double& x : out) x *= inv_n;
  normalize(out);
  return out;
}

SpanEncoder::SpanEncoder(EncoderConfig cfg) : cfg_(cfg) { cfg_.validate(); }

std::span<const double> SpanEncoder::token_row(TokenId id) {
  if (id >= token_cache_.size()) token_cache_.resize(id + 1);
  auto& row = token_cache_[id];
  if (row.empty()) row = token_vector(cfg_, id);
  return row;
}

std::span<const double> SpanEncoder::position_row(std::uint64_t pos) {
  if (pos >= position_cache_.size()) position_cache_.resize(pos + 1);
  auto& row = position_cache_[pos];
  if (row.empty()) row = positional_vector(cfg_, pos);
  return row;
}

void SpanEncoder::encode(std::span<const TokenId> tokens, std::uint64_t start_pos,
                         std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  if (tokens.empty()) return;
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    const auto tv = token_row(tokens[j]);
    const auto pv = position_row(start_pos + j);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += tv[c] + pv[c];
  }
  const double inv_n = 1.0 / static_cast<double>(tokens.size());
  for (double& x : out) x *= inv_n;
  normalize(out);
}

std::vector<double> SpanEncoder::encode(std::span<const TokenId> tokens, std::uint64_t start_pos) {
  std::vector<double> out(cfg_.d_enc);
  encode(tokens, start_pos, out);
  return out;
}

}  // namespace surealm
