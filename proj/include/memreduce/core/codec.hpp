#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "memreduce/core/types.hpp"

namespace memreduce {

// Little-endian append-only byte sink.
class ByteWriter {
 public:
  ByteWriter() = default;
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(&out) {}

  void u8(std::uint8_t v) { buf().push_back(v); }
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void i32(std::int32_t v) { put_le(static_cast<std::uint32_t>(v)); }
  void i64(std::int64_t v) { put_le(static_cast<std::uint64_t>(v)); }
  void f64(double v);
  void bytes(std::span<const std::uint8_t> data);
  void length_prefixed(std::span<const std::uint8_t> data);
  void length_prefixed(std::string_view text);

  std::size_t size() const noexcept { return out_ ? out_->size() : own_.size(); }
  std::vector<std::uint8_t> take() { return std::move(own_); }

 private:
  std::vector<std::uint8_t>& buf() { return out_ ? *out_ : own_; }

  template <typename T>
  void put_le(T v) {
    auto& b = buf();
    for (std::size_t i = 0; i < sizeof(T); ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t>* out_ = nullptr;
  std::vector<std::uint8_t> own_;
};

// Bounds-checked reader; every underflow raises MalformedRecord.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8();
  std::uint8_t peek_u8() const;
  std::uint32_t u32();
  std::uint64_t u64();
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64();
  std::span<const std::uint8_t> take(std::size_t n);
  std::span<const std::uint8_t> length_prefixed() { return take(u32()); }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  bool done() const noexcept { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

void encode_key(ByteWriter& w, const Key& key);
void encode_value(ByteWriter& w, const Value& value);
Key decode_key(ByteReader& r);
Value decode_value(ByteReader& r);

// Record layout: key tag byte + payload, value tag byte + payload.
// Integers little-endian, variable-length payloads prefixed by a u32 length.
std::vector<std::uint8_t> encode_pair(const Pair& pair);
void encode_pair_into(std::vector<std::uint8_t>& out, const Pair& pair);
std::size_t encoded_size(const Pair& pair);

struct DecodedPair {
  Pair pair;
  std::size_t consumed = 0;
};

// Decodes one record from the front of `bytes`; trailing bytes are left alone.
DecodedPair decode_pair(std::span<const std::uint8_t> bytes);

// FNV-1a, 64-bit.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;

}  // namespace memreduce
