#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace surealm {

using TokenId = std::uint32_t;
using SentenceId = std::uint64_t;
using EntryId = std::uint64_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kNumSpecial = 4;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid arguments, inconsistent configuration, or incompatible artifacts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated on-disk artifact. `section()` names the part of
/// the file that failed to parse.
class FormatError : public Error {
 public:
  FormatError(std::string section, const std::string& what)
      : Error(what), section_(std::move(section)) {}

  const std::string& section() const noexcept { return section_; }

 private:
  std::string section_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace surealm
