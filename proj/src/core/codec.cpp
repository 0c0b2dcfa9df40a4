#include "memreduce/core/codec.hpp"

#include <bit>
#include <cstring>

#include "memreduce/error.hpp"

namespace memreduce {

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::bytes(std::span<const std::uint8_t> data) {
  auto& b = buf();
  b.insert(b.end(), data.begin(), data.end());
}

void ByteWriter::length_prefixed(std::span<const std::uint8_t> data) {
  u32(static_cast<std::uint32_t>(data.size()));
  bytes(data);
}

void ByteWriter::length_prefixed(std::string_view text) {
  length_prefixed(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) {
    throw Error(ErrorCode::MalformedRecord, "truncated record: need " + std::to_string(n) + " bytes at offset " +
                                                std::to_string(pos_) + ", have " + std::to_string(remaining()));
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

std::uint8_t ByteReader::peek_u8() const {
  need(1);
  return data_[pos_];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
  need(n);
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

void encode_key(ByteWriter& w, const Key& key) {
  w.u8(static_cast<std::uint8_t>(key.kind()));
  switch (key.kind()) {
    case KeyKind::Int:
      w.i64(key.as_int());
      break;
    case KeyKind::Text:
      w.length_prefixed(key.as_text());
      break;
    case KeyKind::BlockIdx:
      w.i32(key.as_block().row);
      w.i32(key.as_block().col);
      break;
  }
}

void encode_value(ByteWriter& w, const Value& value) {
  w.u8(static_cast<std::uint8_t>(value.kind()));
  switch (value.kind()) {
    case ValueKind::Bytes:
      w.length_prefixed(value.as_bytes());
      break;
    case ValueKind::Count:
      w.i64(value.as_count());
      break;
    case ValueKind::CscBlock: {
      const auto& b = value.as_csc();
      w.u32(b.rows);
      w.u32(b.cols);
      for (auto p : b.col_ptr) w.u32(p);
      for (auto r : b.row_idx) w.u32(r);
      for (auto v : b.values) w.f64(v);
      break;
    }
    case ValueKind::DenseVec: {
      const auto& d = value.as_dense();
      w.u32(static_cast<std::uint32_t>(d.size()));
      for (auto v : d) w.f64(v);
      break;
    }
  }
}

Key decode_key(ByteReader& r) {
  const auto tag = r.u8();
  switch (static_cast<KeyKind>(tag)) {
    case KeyKind::Int:
      return Key::of_int(r.i64());
    case KeyKind::Text: {
      auto s = r.length_prefixed();
      return Key::of_text(std::string(reinterpret_cast<const char*>(s.data()), s.size()));
    }
    case KeyKind::BlockIdx: {
      const auto row = r.i32();
      const auto col = r.i32();
      return Key::of_block(row, col);
    }
  }
  throw Error(ErrorCode::MalformedRecord, "unknown key tag " + std::to_string(tag));
}

namespace {

CscBlock decode_csc(ByteReader& r) {
  CscBlock b;
  b.rows = r.u32();
  b.cols = r.u32();
  // Bound allocations by what the buffer can actually hold.
  if (r.remaining() / 4 < static_cast<std::size_t>(b.cols) + 1) {
    throw Error(ErrorCode::MalformedRecord, "csc column pointers truncated");
  }
  b.col_ptr.resize(static_cast<std::size_t>(b.cols) + 1);
  for (auto& p : b.col_ptr) p = r.u32();
  const std::size_t nnz = b.col_ptr.back();
  if (r.remaining() / 12 < nnz) throw Error(ErrorCode::MalformedRecord, "csc entries truncated");
  b.row_idx.resize(nnz);
  for (auto& i : b.row_idx) i = r.u32();
  b.values.resize(nnz);
  for (auto& v : b.values) v = r.f64();
  if (!b.well_formed()) throw Error(ErrorCode::MalformedRecord, "csc block violates structure invariants");
  return b;
}

}  // namespace

Value decode_value(ByteReader& r) {
  const auto tag = r.u8();
  switch (static_cast<ValueKind>(tag)) {
    case ValueKind::Bytes: {
      auto s = r.length_prefixed();
      return Value::of_bytes(Bytes(s.begin(), s.end()));
    }
    case ValueKind::Count:
      return Value::of_count(r.i64());
    case ValueKind::CscBlock:
      return Value::of_csc(decode_csc(r));
    case ValueKind::DenseVec: {
      const std::size_t n = r.u32();
      if (r.remaining() / 8 < n) throw Error(ErrorCode::MalformedRecord, "dense vector truncated");
      std::vector<double> d(n);
      for (auto& v : d) v = r.f64();
      return Value::of_dense(std::move(d));
    }
  }
  throw Error(ErrorCode::MalformedRecord, "unknown value tag " + std::to_string(tag));
}

void encode_pair_into(std::vector<std::uint8_t>& out, const Pair& pair) {
  ByteWriter w(out);
  encode_key(w, *pair.key);
  encode_value(w, *pair.value);
}

std::vector<std::uint8_t> encode_pair(const Pair& pair) {
  std::vector<std::uint8_t> out;
  out.reserve(encoded_size(pair));
  encode_pair_into(out, pair);
  return out;
}

std::size_t encoded_size(const Pair& pair) {
  std::size_t n = 2;
  const Key& k = *pair.key;
  switch (k.kind()) {
    case KeyKind::Int: n += 8; break;
    case KeyKind::Text: n += 4 + k.as_text().size(); break;
    case KeyKind::BlockIdx: n += 8; break;
  }
  const Value& v = *pair.value;
  switch (v.kind()) {
    case ValueKind::Bytes: n += 4 + v.as_bytes().size(); break;
    case ValueKind::Count: n += 8; break;
    case ValueKind::CscBlock: {
      const auto& b = v.as_csc();
      n += 8 + 4 * b.col_ptr.size() + 4 * b.row_idx.size() + 8 * b.values.size();
      break;
    }
    case ValueKind::DenseVec: n += 4 + 8 * v.as_dense().size(); break;
  }
  return n;
}

DecodedPair decode_pair(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw Error(ErrorCode::MalformedRecord, "empty input");
  ByteReader r(bytes);
  auto key = decode_key(r);
  auto value = decode_value(r);
  return DecodedPair{Pair::of(std::move(key), std::move(value)), r.position()};
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text) noexcept {
  return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace memreduce
