#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "blindvault/error.hpp"

namespace blindvault {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

template <std::size_t N>
using FixedBytes = std::array<std::uint8_t, N>;

using Hash32 = FixedBytes<32>;
using PlatformId = FixedBytes<16>;

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline Bytes to_bytes(std::string_view s) {
  auto v = as_bytes(s);
  return {v.begin(), v.end()};
}

template <std::size_t N>
Bytes to_bytes(const FixedBytes<N>& a) {
  return {a.begin(), a.end()};
}

std::string to_hex(ByteView data);
Bytes from_hex(std::string_view hex);

/// Constant-time equality; lengths are not secret.
bool equal_ct(ByteView a, ByteView b);

/// True if `needle` occurs anywhere in `haystack`.
bool contains(ByteView haystack, ByteView needle);

std::string base64_encode(ByteView data);
Bytes base64_decode(std::string_view text);

/// Big-endian, length-prefixed canonical encoder. Every on-disk and on-wire
/// structure in the project is built with this writer so that signing
/// payloads are deterministic.
class ByteWriter {
 public:
  ByteWriter& u8(std::uint8_t v);
  ByteWriter& u16(std::uint16_t v);
  ByteWriter& u32(std::uint32_t v);
  ByteWriter& u64(std::uint64_t v);
  ByteWriter& i64(std::int64_t v) { return u64(static_cast<std::uint64_t>(v)); }
  ByteWriter& raw(ByteView v);
  template <std::size_t N>
  ByteWriter& raw(const FixedBytes<N>& v) {
    return raw(ByteView{v});
  }
  /// u32 length prefix followed by the bytes.
  ByteWriter& blob(ByteView v);
  ByteWriter& str(std::string_view s) { return blob(as_bytes(s)); }

  const Bytes& bytes() const& { return buf_; }
  Bytes bytes() && { return std::move(buf_); }

 private:
  Bytes buf_;
};

/// Counterpart of ByteWriter. Throws Error(ErrorCode::Malformed) on underrun.
class ByteReader {
 public:
  explicit ByteReader(ByteView data) : data_(data) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  Bytes raw(std::size_t n);
  template <std::size_t N>
  FixedBytes<N> fixed() {
    FixedBytes<N> out{};
    auto v = take(N);
    std::copy(v.begin(), v.end(), out.begin());
    return out;
  }
  Bytes blob();
  std::string str();

  std::size_t remaining() const { return data_.size() - pos_; }
  bool empty() const { return remaining() == 0; }
  /// Throws unless every byte was consumed.
  void expect_end() const;

 private:
  ByteView take(std::size_t n);

  ByteView data_;
  std::size_t pos_ = 0;
};

template <std::size_t N>
FixedBytes<N> fixed_from_hex(std::string_view hex) {
  Bytes b = from_hex(hex);
  if (b.size() != N) {
    throw Error(ErrorCode::Malformed, "expected " + std::to_string(N) + " hex-encoded bytes");
  }
  FixedBytes<N> out{};
  std::copy(b.begin(), b.end(), out.begin());
  return out;
}

template <std::size_t N>
FixedBytes<N> to_fixed(ByteView v) {
  if (v.size() != N) {
    throw Error(ErrorCode::Malformed, "expected " + std::to_string(N) + " bytes");
  }
  FixedBytes<N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

}  // namespace blindvault
