#include "memreduce/core/batch.hpp"

#include "memreduce/core/codec.hpp"
#include "memreduce/error.hpp"

namespace memreduce {

template <typename Ptr, typename Encode>
void BatchEncoder::add_slot(const Ptr& obj, bool eligible, std::unordered_map<const void*, std::uint32_t>& table,
                            std::uint32_t& next_index, const void*& previous, std::uint32_t& previous_index,
                            bool& literal, Encode&& encode) {
  const void* id = obj.get();
  ByteWriter w(records_);
  if (eligible) {
    switch (policy_) {
      case DedupPolicy::Full:
        if (auto it = table.find(id); it != table.end()) {
          w.u8(kBackReferenceMarker);
          w.u32(it->second);
          literal = false;
          return;
        }
        break;
      case DedupPolicy::Consecutive:
        if (id == previous) {
          w.u8(kBackReferenceMarker);
          w.u32(previous_index);
          literal = false;
          return;
        }
        break;
      case DedupPolicy::Off:
        break;
    }
  }
  encode(w, *obj);
  literal = true;
  const std::uint32_t index = next_index++;
  if (!eligible || policy_ == DedupPolicy::Off) {
    previous = nullptr;
    return;
  }
  if (policy_ == DedupPolicy::Full) {
    table.emplace(id, index);
    retained_.push_back(obj);
  } else {
    // Consecutive: only the last object per slot needs to stay alive.
    previous = id;
    previous_index = index;
    if (retained_.size() < 2) retained_.resize(2);
    retained_[&table == &key_table_ ? 0 : 1] = obj;
  }
}

void BatchEncoder::add(const Pair& pair, bool dedup_eligible) {
  bool key_literal = false;
  bool value_literal = false;
  add_slot(pair.key, dedup_eligible, key_table_, next_key_, prev_key_, prev_key_index_, key_literal,
           [](ByteWriter& w, const Key& k) { encode_key(w, k); });
  add_slot(pair.value, dedup_eligible, value_table_, next_value_, prev_value_, prev_value_index_, value_literal,
           [](ByteWriter& w, const Value& v) { encode_value(w, v); });
  ++stats_.entries;
  if (key_literal) {
    ++stats_.key_literals;
  } else {
    ++stats_.key_refs;
  }
  if (value_literal) {
    ++stats_.value_literals;
    ++stats_.value_literals_by_kind[static_cast<std::size_t>(pair.value->kind())];
  } else {
    ++stats_.value_refs;
  }
}

ShuffleBatch BatchEncoder::finish() {
  ShuffleBatch batch{destination_, std::move(records_), stats_};
  records_.clear();
  stats_ = {};
  key_table_.clear();
  value_table_.clear();
  next_key_ = next_value_ = 0;
  prev_key_ = prev_value_ = nullptr;
  prev_key_index_ = prev_value_index_ = 0;
  retained_.clear();
  return batch;
}

ShuffleBatch serialize_batch(std::span<const Pair> pairs, DedupPolicy policy, PlaceId destination) {
  BatchEncoder enc(destination, policy);
  for (const auto& p : pairs) enc.add(p);
  return enc.finish();
}

std::vector<Pair> deserialize_batch(std::span<const std::uint8_t> records) {
  std::vector<Pair> out;
  std::vector<KeyPtr> keys;
  std::vector<ValuePtr> values;
  ByteReader r(records);
  while (!r.done()) {
    Pair p;
    if (r.peek_u8() == kBackReferenceMarker) {
      r.u8();
      const auto idx = r.u32();
      if (idx >= keys.size()) throw Error(ErrorCode::MalformedRecord, "key back-reference out of range");
      p.key = keys[idx];
    } else {
      p.key = std::make_shared<Key>(decode_key(r));
      keys.push_back(p.key);
    }
    if (r.peek_u8() == kBackReferenceMarker) {
      r.u8();
      const auto idx = r.u32();
      if (idx >= values.size()) throw Error(ErrorCode::MalformedRecord, "value back-reference out of range");
      p.value = values[idx];
    } else {
      p.value = std::make_shared<Value>(decode_value(r));
      values.push_back(p.value);
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace memreduce
