#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace memreduce {

using PlaceId = std::uint32_t;
using PartitionId = std::uint32_t;

enum class KeyKind : std::uint8_t { Int = 1, Text = 2, BlockIdx = 3 };
enum class ValueKind : std::uint8_t { Bytes = 1, Count = 2, CscBlock = 3, DenseVec = 4 };

// Two-dimensional block coordinate of a blocked matrix; vectors use col == 0.
struct BlockIndex {
  std::int32_t row = 0;
  std::int32_t col = 0;

  friend auto operator<=>(const BlockIndex&, const BlockIndex&) = default;
};

class Key {
 public:
  Key() : data_(std::int64_t{0}) {}

  static Key of_int(std::int64_t v) { return Key(Storage(std::in_place_index<0>, v)); }
  static Key of_text(std::string v) { return Key(Storage(std::in_place_index<1>, std::move(v))); }
  static Key of_block(std::int32_t row, std::int32_t col) {
    return Key(Storage(std::in_place_index<2>, BlockIndex{row, col}));
  }

  KeyKind kind() const noexcept { return static_cast<KeyKind>(data_.index() + 1); }

  std::int64_t as_int() const { return std::get<0>(data_); }
  const std::string& as_text() const { return std::get<1>(data_); }
  BlockIndex as_block() const { return std::get<2>(data_); }

  void set_int(std::int64_t v) { data_.emplace<0>(v); }
  void set_text(std::string v) { data_.emplace<1>(std::move(v)); }
  void set_block(std::int32_t row, std::int32_t col) { data_.emplace<2>(BlockIndex{row, col}); }

  // Keys of different kinds order by kind tag; within a job only one kind occurs.
  friend bool operator==(const Key&, const Key&) = default;
  friend std::strong_ordering operator<=>(const Key& a, const Key& b);

 private:
  using Storage = std::variant<std::int64_t, std::string, BlockIndex>;
  explicit Key(Storage s) : data_(std::move(s)) {}
  Storage data_;
};

// Compressed sparse column block. col_ptr has cols + 1 entries, the last one
// equal to the number of stored entries.
struct CscBlock {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint32_t> col_ptr{0};
  std::vector<std::uint32_t> row_idx;
  std::vector<double> values;

  std::size_t nnz() const noexcept { return values.size(); }
  bool well_formed() const noexcept;
  // y = this * x; x.size() must equal cols.
  std::vector<double> multiply(std::span<const double> x) const;

  static CscBlock from_dense(std::uint32_t rows, std::uint32_t cols, std::span<const double> column_major);

  friend bool operator==(const CscBlock&, const CscBlock&) = default;
};

struct DenseVec {
  std::vector<double> data;
  friend bool operator==(const DenseVec&, const DenseVec&) = default;
};

using Bytes = std::vector<std::uint8_t>;

class Value {
 public:
  Value() : data_(std::in_place_index<1>, std::int64_t{0}) {}

  static Value of_bytes(Bytes b) { return Value(Storage(std::in_place_index<0>, std::move(b))); }
  static Value of_count(std::int64_t c) { return Value(Storage(std::in_place_index<1>, c)); }
  static Value of_csc(CscBlock b) { return Value(Storage(std::in_place_index<2>, std::move(b))); }
  static Value of_dense(std::vector<double> v) {
    return Value(Storage(std::in_place_index<3>, DenseVec{std::move(v)}));
  }

  ValueKind kind() const noexcept { return static_cast<ValueKind>(data_.index() + 1); }

  const Bytes& as_bytes() const { return std::get<0>(data_); }
  Bytes& as_bytes() { return std::get<0>(data_); }
  std::int64_t as_count() const { return std::get<1>(data_); }
  const CscBlock& as_csc() const { return std::get<2>(data_); }
  CscBlock& as_csc() { return std::get<2>(data_); }
  const std::vector<double>& as_dense() const { return std::get<3>(data_).data; }
  std::vector<double>& as_dense() { return std::get<3>(data_).data; }

  void set_count(std::int64_t c) { data_.emplace<1>(c); }

  friend bool operator==(const Value&, const Value&) = default;

 private:
  using Storage = std::variant<Bytes, std::int64_t, CscBlock, DenseVec>;
  explicit Value(Storage s) : data_(std::move(s)) {}
  Storage data_;
};

using KeyPtr = std::shared_ptr<Key>;
using ValuePtr = std::shared_ptr<Value>;

// A key/value record. Key and value are reference objects: their addresses
// are the identity used by shuffle de-duplication and aliasing checks.
struct Pair {
  KeyPtr key;
  ValuePtr value;

  static Pair of(Key k, Value v) {
    return Pair{std::make_shared<Key>(std::move(k)), std::make_shared<Value>(std::move(v))};
  }

  bool same_content(const Pair& other) const { return *key == *other.key && *value == *other.value; }
};

// Content copy with fresh identity for both key and value.
Pair deep_clone(const Pair& pair);

}  // namespace memreduce
