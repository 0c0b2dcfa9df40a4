#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "memreduce/core/types.hpp"

namespace memreduce {

enum class DedupPolicy : std::uint8_t {
  Full,         // any object already encoded in the batch becomes a back-reference
  Consecutive,  // only a repeat of the immediately preceding entry's object
  Off,          // every entry is a literal
};

// Marker byte introducing a back-reference slot: marker + u32 index into the
// batch's literal table for that slot (keys and values are indexed separately).
inline constexpr std::uint8_t kBackReferenceMarker = 0xFF;
inline constexpr std::size_t kBackReferenceSize = 5;

struct BatchStats {
  std::size_t entries = 0;
  std::size_t key_literals = 0;
  std::size_t key_refs = 0;
  std::size_t value_literals = 0;
  std::size_t value_refs = 0;
  // value literal count per ValueKind tag (index = tag)
  std::array<std::size_t, 5> value_literals_by_kind{};
};

struct ShuffleBatch {
  PlaceId destination = 0;
  std::vector<std::uint8_t> records;
  BatchStats stats;

  std::size_t byte_length() const noexcept { return records.size(); }
};

// Incremental batch builder. Entries are encoded as they are added, so later
// mutation of a source object never changes what was serialized.
class BatchEncoder {
 public:
  BatchEncoder(PlaceId destination, DedupPolicy policy) : destination_(destination), policy_(policy) {}

  // dedup_eligible == false forces literals for this entry (used for objects
  // whose producer may mutate and reuse them).
  void add(const Pair& pair, bool dedup_eligible = true);

  std::size_t byte_length() const noexcept { return records_.size(); }
  std::size_t entries() const noexcept { return stats_.entries; }
  bool empty() const noexcept { return stats_.entries == 0; }

  // Returns the batch and resets the encoder (including its dedup tables).
  ShuffleBatch finish();

 private:
  template <typename Ptr, typename Encode>
  void add_slot(const Ptr& obj, bool eligible, std::unordered_map<const void*, std::uint32_t>& table,
                std::uint32_t& next_index, const void*& previous, std::uint32_t& previous_index, bool& literal,
                Encode&& encode);

  PlaceId destination_;
  DedupPolicy policy_;
  std::vector<std::uint8_t> records_;
  BatchStats stats_;

  std::unordered_map<const void*, std::uint32_t> key_table_;
  std::unordered_map<const void*, std::uint32_t> value_table_;
  std::uint32_t next_key_ = 0;
  std::uint32_t next_value_ = 0;
  const void* prev_key_ = nullptr;
  const void* prev_value_ = nullptr;
  std::uint32_t prev_key_index_ = 0;
  std::uint32_t prev_value_index_ = 0;
  // Referenced objects are kept alive so their addresses cannot be recycled
  // while the identity tables still mention them.
  std::vector<std::shared_ptr<const void>> retained_;
};

ShuffleBatch serialize_batch(std::span<const Pair> pairs, DedupPolicy policy, PlaceId destination = 0);

// Back-referenced entries alias the single decoded object.
std::vector<Pair> deserialize_batch(std::span<const std::uint8_t> records);
inline std::vector<Pair> deserialize_batch(const ShuffleBatch& batch) { return deserialize_batch(batch.records); }

}  // namespace memreduce
