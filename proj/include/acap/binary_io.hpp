// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "acap/error.hpp"

namespace acap::io {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian hosts are not supported");

/// Append-only little-endian byte sink.
class ByteWriter {
 public:
  void u32(std::uint32_t v) { put_le(v); }
  void i32(std::int32_t v) { put_le(static_cast<std::uint32_t>(v)); }
  void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

  const std::vector<char>& data() const { return buf_; }

 private:
  template <class U>
  void put_le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
  }
  std::vector<char> buf_;
};

/// Bounds-checked little-endian cursor over an in-memory file image.
/// Running past the end throws `short_kind`.
class ByteReader {
 public:
  ByteReader(std::span<const char> data, ErrorKind short_kind, std::string what)
      : data_(data), short_kind_(short_kind), what_(std::move(what)) {}

  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(get_le<std::uint32_t>()); }
  float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }
  std::string bytes(std::size_t n) {
    require(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return bytes(u32()); }

  std::size_t remaining() const { return data_.size() - pos_; }
  void require(std::size_t n) const {
    if (remaining() < n) {
      fail(short_kind_, what_ + ": needs " + std::to_string(n) + " more bytes, " +
                            std::to_string(remaining()) + " left");
    }
  }

 private:
  template <class U>
  U get_le() {
    require(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::span<const char> data_;
  std::size_t pos_ = 0;
  ErrorKind short_kind_;
  std::string what_;
};

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const char> data);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

/// Checks a 4-byte magic and a u32 version; throws BadMagic / VersionMismatch.
void expect_header(ByteReader& in, std::string_view magic, std::uint32_t version,
                   const std::string& what);

}  // namespace acap::io
