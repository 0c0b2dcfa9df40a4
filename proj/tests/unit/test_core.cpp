#include <doctest.h>

#include <cstring>
#include <set>
#include <unordered_map>

#include "helpers.hpp"
#include "memreduce/core/batch.hpp"
#include "memreduce/core/codec.hpp"
#include "memreduce/core/placement.hpp"
#include "memreduce/error.hpp"

using namespace memreduce;
using testing::Gen;

namespace {

// Hand-assembled little-endian bytes, independent of ByteWriter.
struct Le {
  std::vector<std::uint8_t> b;
  Le& u8(std::uint8_t v) {
    b.push_back(v);
    return *this;
  }
  Le& u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    return *this;
  }
  Le& u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    return *this;
  }
  Le& f64(double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    return u64(v);
  }
  Le& raw(std::string_view s) {
    b.insert(b.end(), s.begin(), s.end());
    return *this;
  }
};

std::size_t slot_size(const Key& k) {
  switch (k.kind()) {
    case KeyKind::Int: return 9;
    case KeyKind::Text: return 5 + k.as_text().size();
    case KeyKind::BlockIdx: return 9;
  }
  return 0;
}

std::size_t slot_size(const Value& v) {
  switch (v.kind()) {
    case ValueKind::Bytes: return 5 + v.as_bytes().size();
    case ValueKind::Count: return 9;
    case ValueKind::CscBlock: {
      const auto& c = v.as_csc();
      return 1 + 8 + 4 * c.col_ptr.size() + 12 * c.nnz();
    }
    case ValueKind::DenseVec: return 5 + 8 * v.as_dense().size();
  }
  return 0;
}

// Batch length predicted from the format definition and the identity rules.
std::size_t predicted_batch_bytes(const std::vector<Pair>& pairs, DedupPolicy policy) {
  std::set<const void*> keys, values;
  const void* prev_k = nullptr;
  const void* prev_v = nullptr;
  std::size_t total = 0;
  for (const auto& p : pairs) {
    bool kref = false, vref = false;
    if (policy == DedupPolicy::Full) {
      kref = !keys.insert(p.key.get()).second;
      vref = !values.insert(p.value.get()).second;
    } else if (policy == DedupPolicy::Consecutive) {
      kref = p.key.get() == prev_k;
      vref = p.value.get() == prev_v;
    }
    prev_k = p.key.get();
    prev_v = p.value.get();
    total += kref ? kBackReferenceSize : slot_size(*p.key);
    total += vref ? kBackReferenceSize : slot_size(*p.value);
  }
  return total;
}

// Random sequence drawing from a small pool of shared objects.
std::vector<Pair> aliased_sequence(Gen& g, std::size_t n) {
  std::vector<KeyPtr> kpool;
  std::vector<ValuePtr> vpool;
  for (int i = 0; i < 4; ++i) {
    kpool.push_back(std::make_shared<Key>(g.key()));
    vpool.push_back(std::make_shared<Value>(g.value()));
  }
  std::vector<Pair> out;
  for (std::size_t i = 0; i < n; ++i) {
    Pair p;
    p.key = g.coin() ? kpool[g.below(kpool.size())] : std::make_shared<Key>(g.key());
    p.value = g.coin() ? vpool[g.below(vpool.size())] : std::make_shared<Value>(g.value());
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("encodePair layout") {
  SUBCASE("INT 0, COUNT 0 is 18 zero-payload bytes") {
    const auto bytes = encode_pair(Pair::of(Key::of_int(0), Value::of_count(0)));
    CHECK(bytes == Le{}.u8(1).u64(0).u8(2).u64(0).b);
    CHECK(bytes.size() == 18);
  }
  SUBCASE("TEXT a, COUNT 2") {
    const auto p = Pair::of(Key::of_text("a"), Value::of_count(2));
    const auto bytes = encode_pair(p);
    CHECK(bytes == Le{}.u8(2).u32(1).raw("a").u8(2).u64(2).b);
    auto d = decode_pair(bytes);
    CHECK(d.consumed == bytes.size());
    CHECK(d.pair.same_content(p));
  }
  SUBCASE("BLOCKIDX and CSC") {
    CscBlock b;
    b.rows = 3;
    b.cols = 2;
    b.col_ptr = {0, 1, 3};
    b.row_idx = {2, 0, 1};
    b.values = {1.5, -2.0, 4.25};
    REQUIRE(b.well_formed());
    const auto p = Pair::of(Key::of_block(-1, 7), Value::of_csc(b));
    Le want;
    want.u8(3).u32(static_cast<std::uint32_t>(-1)).u32(7);
    want.u8(3).u32(3).u32(2).u32(0).u32(1).u32(3).u32(2).u32(0).u32(1).f64(1.5).f64(-2.0).f64(4.25);
    CHECK(encode_pair(p) == want.b);
    CHECK(encoded_size(p) == want.b.size());
  }
  SUBCASE("DENSEVEC and BYTES") {
    const auto p = Pair::of(Key::of_int(-2), Value::of_dense({0.5, 3.0}));
    CHECK(encode_pair(p) == Le{}.u8(1).u64(static_cast<std::uint64_t>(-2)).u8(4).u32(2).f64(0.5).f64(3.0).b);
    const auto q = Pair::of(Key::of_int(1), Value::of_bytes({9, 8}));
    CHECK(encode_pair(q) == Le{}.u8(1).u64(1).u8(1).u32(2).u8(9).u8(8).b);
  }
}

TEST_CASE("round trip over random pairs of every kind") {
  Gen g(2024);
  for (int i = 0; i < 1000; ++i) {
    const auto p = Pair::of(g.key(), Value::of_csc(g.csc(8)));
    const auto bytes = encode_pair(p);
    const auto d = decode_pair(bytes);
    CHECK(d.consumed == bytes.size());
    CHECK(encode_pair(d.pair) == bytes);  // bit-exact, NaN-safe
  }
  for (int i = 0; i < 1000; ++i) {
    const auto p = g.pair();
    const auto bytes = encode_pair(p);
    REQUIRE(bytes.size() == slot_size(*p.key) + slot_size(*p.value));
    CHECK(decode_pair(bytes).pair.same_content(p));
  }
}

TEST_CASE("decodePair consumes one record and rejects bad input") {
  const auto a = encode_pair(Pair::of(Key::of_int(5), Value::of_count(6)));
  const auto b = encode_pair(Pair::of(Key::of_text("xyz"), Value::of_bytes({1, 2, 3})));
  auto both = a;
  both.insert(both.end(), b.begin(), b.end());
  auto first = decode_pair(both);
  CHECK(first.consumed == a.size());
  CHECK(decode_pair(std::span(both).subspan(first.consumed)).pair.key->as_text() == "xyz");

  auto malformed = [](std::span<const std::uint8_t> bytes) {
    try {
      decode_pair(bytes);
    } catch (const Error& e) {
      return e.code() == ErrorCode::MalformedRecord;
    }
    return false;
  };
  CHECK(malformed({}));
  for (std::size_t cut = 1; cut < b.size(); ++cut) CHECK(malformed(std::span(b).first(cut)));
  CHECK(malformed(Le{}.u8(9).u64(0).b));
  CHECK(malformed(Le{}.u8(1).u64(0).u8(7).b));
  // CSC with out-of-range row index
  CHECK(malformed(Le{}.u8(1).u64(0).u8(3).u32(1).u32(1).u32(0).u32(1).u32(5).f64(1).b));
}

TEST_CASE("serializeBatch dedup policies") {
  const auto shared = std::make_shared<Value>(Value::of_bytes(Bytes(10000, 7)));
  std::vector<Pair> four;
  for (int i = 0; i < 4; ++i) four.push_back(Pair{std::make_shared<Key>(Key::of_int(i)), shared});

  SUBCASE("FULL stores one literal") {
    const auto batch = serialize_batch(four, DedupPolicy::Full);
    CHECK(batch.byte_length() < 10000 + 4 * 64);
    CHECK(batch.byte_length() == predicted_batch_bytes(four, DedupPolicy::Full));
    CHECK(batch.stats.value_literals == 1);
    CHECK(batch.stats.value_refs == 3);
    auto out = deserialize_batch(batch);
    REQUIRE(out.size() == 4);
    for (const auto& p : out) CHECK(p.value.get() == out[0].value.get());
    for (int i = 0; i < 4; ++i) CHECK(out[i].key->as_int() == i);
  }
  SUBCASE("OFF stores every literal") {
    const auto batch = serialize_batch(four, DedupPolicy::Off);
    CHECK(batch.byte_length() >= 4 * 10000);
    auto out = deserialize_batch(batch);
    std::set<const Value*> ids;
    for (const auto& p : out) ids.insert(p.value.get());
    CHECK(ids.size() == 4);
  }
  SUBCASE("equal content, distinct objects") {
    std::vector<Pair> two{Pair::of(Key::of_int(1), Value::of_count(3)), Pair::of(Key::of_int(1), Value::of_count(3))};
    const auto batch = serialize_batch(two, DedupPolicy::Full);
    CHECK(batch.stats.value_literals == 2);
    CHECK(batch.stats.key_literals == 2);
  }
  SUBCASE("CONSECUTIVE only catches immediate repeats") {
    std::vector<Pair> seq{four[0], Pair::of(Key::of_int(9), Value::of_count(1)), four[1], four[2]};
    const auto batch = serialize_batch(seq, DedupPolicy::Consecutive);
    CHECK(batch.stats.value_literals == 3);
    CHECK(batch.stats.value_refs == 1);
    CHECK(batch.byte_length() == predicted_batch_bytes(seq, DedupPolicy::Consecutive));
  }
  SUBCASE("empty batch") {
    const auto batch = serialize_batch({}, DedupPolicy::Full);
    CHECK(batch.byte_length() == 0);
    CHECK(deserialize_batch(batch).empty());
  }
  SUBCASE("corrupt back-reference") {
    const auto bytes = Le{}.u8(kBackReferenceMarker).u32(0).u8(2).u64(0).b;
    CHECK_THROWS_AS(deserialize_batch(bytes), Error);
  }
}

TEST_CASE("batch properties over random aliased sequences") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Gen g(seed);
    const auto seq = aliased_sequence(g, g.below(40));
    for (auto policy : {DedupPolicy::Full, DedupPolicy::Consecutive, DedupPolicy::Off}) {
      const auto batch = serialize_batch(seq, policy);
      CHECK(batch.byte_length() == predicted_batch_bytes(seq, policy));
      const auto out = deserialize_batch(batch);
      REQUIRE(out.size() == seq.size());
      for (std::size_t i = 0; i < seq.size(); ++i) CHECK(out[i].same_content(seq[i]));

      // Aliasing: decoded identity classes match source identity classes
      // under FULL, and never merge under OFF.
      for (std::size_t i = 0; i < seq.size(); ++i) {
        for (std::size_t j = i + 1; j < seq.size(); ++j) {
          const bool src_same = seq[i].value == seq[j].value;
          const bool out_same = out[i].value == out[j].value;
          if (policy == DedupPolicy::Full) CHECK(src_same == out_same);
          if (policy == DedupPolicy::Off) CHECK_FALSE(out_same);
          if (policy == DedupPolicy::Consecutive && out_same) CHECK(src_same);
        }
      }
    }
  }
}

TEST_CASE("FULL dedup effectiveness bound") {
  Gen g(5);
  for (std::size_t k : {1, 2, 10, 100}) {
    const auto v = std::make_shared<Value>(Value::of_dense(std::vector<double>(500, 1.0)));
    std::vector<Pair> seq;
    for (std::size_t i = 0; i < k; ++i) seq.push_back(Pair{std::make_shared<Key>(Key::of_int(g.range(0, 99))), v});
    CHECK(serialize_batch(seq, DedupPolicy::Full).byte_length() <= slot_size(*v) + k * 64);
  }
}

TEST_CASE("encoder snapshots content at add time") {
  auto v = std::make_shared<Value>(Value::of_count(1));
  BatchEncoder enc(0, DedupPolicy::Full);
  enc.add(Pair{std::make_shared<Key>(Key::of_int(0)), v});
  v->set_count(99);
  auto out = deserialize_batch(enc.finish());
  CHECK(out[0].value->as_count() == 1);
  CHECK(enc.empty());

  // Ineligible entries are literals even when the object repeats.
  BatchEncoder enc2(0, DedupPolicy::Full);
  Pair p = Pair::of(Key::of_int(0), Value::of_count(0));
  enc2.add(p, false);
  enc2.add(p, false);
  auto b = enc2.finish();
  CHECK(b.stats.value_literals == 2);
  CHECK(b.stats.key_refs == 0);
}

TEST_CASE("deepClone") {
  Gen g(3);
  for (int i = 0; i < 200; ++i) {
    const auto p = g.pair();
    const auto c = deep_clone(p);
    CHECK(c.same_content(p));
    CHECK(c.key != p.key);
    CHECK(c.value != p.value);
    CHECK(c.same_content(decode_pair(encode_pair(p)).pair));
  }
  auto p = Pair::of(Key::of_int(1), Value::of_dense({1.0, 2.0}));
  auto c = deep_clone(p);
  p.value->as_dense()[0] = 42.0;
  CHECK(c.value->as_dense()[0] == 1.0);
}

TEST_CASE("key order") {
  CHECK(Key::of_int(-3) < Key::of_int(2));
  CHECK(Key::of_text("ab") < Key::of_text("b"));
  CHECK(Key::of_text("a") < Key::of_text("ab"));
  CHECK(Key::of_block(1, 9) < Key::of_block(2, 0));
  CHECK(Key::of_block(1, 0) < Key::of_block(1, 1));
  // Bytewise text order: high bytes after ASCII.
  CHECK(Key::of_text("z") < Key::of_text("\xc3\xa9"));
}

TEST_CASE("partitionToPlace") {
  CHECK(partition_to_place(0, 4) == 0);
  CHECK(partition_to_place(7, 4) == 3);
  CHECK(partition_to_place(7, 4) == partition_to_place(7, 4));
  CHECK(placement_map(6, 4) == std::vector<PlaceId>{0, 1, 2, 3, 0, 1});
  CHECK(placement_map(5, 1) == std::vector<PlaceId>(5, 0));
  CHECK(placement_map(9, 3) == placement_map(9, 3));
}

TEST_CASE("fnv1a64 reference vectors") {
  CHECK(fnv1a64(std::string_view("")) == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64(std::string_view("a")) == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64(std::string_view("foobar")) == 0x85944171f73967e8ULL);
}
