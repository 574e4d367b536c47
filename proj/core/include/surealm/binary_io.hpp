#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "surealm/types.hpp"

namespace surealm::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

/// Appends little-endian fields to a byte buffer.
class Writer {
 public:
  void bytes(std::string_view b) { buf_.append(b); }
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf_.append(raw, sizeof(T));
  }
  void doubles(std::span<const double> v) {
    buf_.append(reinterpret_cast<const char*>(v.data()), v.size_bytes());
  }

  const std::string& buffer() const noexcept { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

/// Reads little-endian fields; running out of bytes raises FormatError
/// naming the current section.
class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  void section(std::string name) { section_ = std::move(name); }
  const std::string& current_section() const noexcept { return section_; }

  std::string_view bytes(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void doubles(std::span<double> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

  void expect_end() const {
    if (pos_ != data_.size()) {
      throw FormatError("trailer", "unexpected trailing bytes after section: " + section_);
    }
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw FormatError(section_, "unexpected end of section: " + section_);
    }
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string section_;
};

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames into place.
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// FNV-1a, 64 bit.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace surealm::io
