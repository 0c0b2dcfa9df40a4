#include <doctest.h>

#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "memreduce/cachefs/cache_fs.hpp"
#include "memreduce/engine/engine.hpp"

using namespace memreduce;
using namespace memreduce::cachefs;
using testing::Gen;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::vector<Pair> numbered(std::size_t n, std::int64_t base = 0) {
  std::vector<Pair> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(Pair::of(Key::of_int(base + static_cast<std::int64_t>(i)), Value::of_count(static_cast<std::int64_t>(i))));
  }
  return out;
}

formats::Split whole(const std::string& path) {
  return formats::Split{formats::FileSplit{path, 0, formats::kWholeFile, formats::InputKind::PairFile}, std::nullopt};
}

std::optional<ErrorCode> code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

struct Fixture {
  TempDir dir;
  std::shared_ptr<kvstore::Store> store = std::make_shared<kvstore::Store>(2);
  CacheFs fs{store, dir.path() / "backing"};

  fs::path backing(std::string_view p) const { return formats::resolve(fs.backing_root(), p); }
};

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("isTemporary") {
  CHECK(is_temporary("/o/temp-v1/part-0"));
  CHECK_FALSE(is_temporary("/o/final/part-0"));
  CHECK(is_temporary("/temporal/part-0"));
  CHECK(is_temporary("/o/temp-file"));
  CHECK(is_temporary("/o/scratch-x/f", "scratch"));
  CHECK_FALSE(is_temporary("/o/temp-x/f", "scratch"));
  CHECK_FALSE(is_temporary("/temp/a/b"));  // only the last directory counts
  CHECK_FALSE(is_temporary("/o/temp-v1/part-0", ""));
}

TEST_CASE("reads go through the cache") {
  Fixture f;
  SUBCASE("written output is read without a reader") {
    f.fs.write_output("/p/part-00000", 0, numbered(4), 1, {});
    auto r = f.fs.read_input(whole("/p/part-00000"), 1, false);
    CHECK(r.metrics.reader_invocations == 0);
    CHECK(r.metrics.cache_hits == 1);
    CHECK(r.pairs.size() == 4);
  }
  SUBCASE("cold file: miss then hit") {
    formats::write_pair_file(f.backing("/cold"), numbered(3));
    auto r1 = f.fs.read_input(whole("/cold"), 0, false);
    CHECK(r1.metrics.reader_invocations == 1);
    CHECK(r1.metrics.cache_misses == 1);
    auto r2 = f.fs.read_input(whole("/cold"), 0, false);
    CHECK(r2.metrics.reader_invocations == 0);
    CHECK(r2.metrics.cache_hits == 1);
    CHECK(testing::encoded_sorted(r1.pairs) == testing::encoded_sorted(r2.pairs));
    CHECK(f.fs.cached_home(whole("/cold")) == PlaceId{0});
  }
  SUBCASE("unnameable splits always invoke the reader") {
    formats::Split opaque{formats::OpaqueSplit{[] { return numbered(2); }}, std::nullopt};
    for (int i = 0; i < 3; ++i) {
      auto r = f.fs.read_input(opaque, 0, false);
      CHECK(r.metrics.reader_invocations == 1);
      CHECK(r.metrics.cache_misses == 0);
      CHECK(r.metrics.cache_hits == 0);
    }
  }
  SUBCASE("sub-range splits are cached under distinct names") {
    formats::write_pair_file(f.backing("/in/data"), numbered(10));
    const auto splits = f.fs.compute_splits({formats::InputKind::PairFile, "/in", 2, {}});
    REQUIRE(splits.size() == 2);
    for (const auto& s : splits) CHECK(f.fs.read_input(s, 0, false).metrics.cache_misses == 1);
    const auto again = f.fs.compute_splits({formats::InputKind::PairFile, "/in", 2, {}});
    for (const auto& s : again) CHECK(f.fs.read_input(s, 0, false).metrics.cache_hits == 1);
    // A different split count misses.
    const auto one = f.fs.compute_splits({formats::InputKind::PairFile, "/in", 1, {}});
    CHECK(f.fs.read_input(one[0], 0, false).metrics.cache_misses == 1);
  }
  SUBCASE("missing data") {
    CHECK(code_of([&] { f.fs.read_input(whole("/none"), 0, false); }) == ErrorCode::InputNotFound);
    CHECK(code_of([&] { f.fs.compute_splits({formats::InputKind::PairFile, "/none", 1, {}}); }) ==
          ErrorCode::InputNotFound);
  }
}

TEST_CASE("consumers get clones unless read-only") {
  Fixture f;
  f.fs.write_output("/x/part-0", 0, numbered(3), 0, {});
  auto mutable_read = f.fs.read_input(whole("/x/part-0"), 0, false);
  mutable_read.pairs[0].value->set_count(-5);
  mutable_read.pairs[0].key->set_int(-5);
  auto again = f.fs.read_input(whole("/x/part-0"), 0, true);
  CHECK(again.pairs[0].value->as_count() == 0);
  CHECK(again.pairs[0].key->as_int() == 0);
  // Read-only consumers share the cached objects.
  auto shared = f.fs.read_input(whole("/x/part-0"), 0, true);
  CHECK(shared.pairs[0].value == again.pairs[0].value);

  // The producer keeps its objects unless it declared them immutable.
  auto mine = numbered(1);
  f.fs.write_output("/y/part-0", 0, mine, 0, {});
  mine[0].value->set_count(77);
  CHECK(f.fs.cache_record_reader("/y")[0].value->as_count() == 0);
}

TEST_CASE("writeOutput") {
  Fixture f;
  SUBCASE("normal output goes to cache and backing store") {
    auto m = f.fs.write_output("/out/part-00000", 0, numbered(5), 0, {});
    CHECK(fs::exists(f.backing("/out/part-00000")));
    CHECK(m.backing_bytes == fs::file_size(f.backing("/out/part-00000")));
    CHECK(m.cached_pairs == 5);
    CHECK(f.fs.get_status("/out/part-00000").in_cache);
  }
  SUBCASE("temp outputs write no backing bytes") {
    auto m = f.fs.write_output("/out/temp-stage1/part-00000", 0, numbered(5), 0, {});
    CHECK(m.backing_bytes == 0);
    CHECK_FALSE(fs::exists(f.backing("/out/temp-stage1")));
    auto st = f.fs.get_status("/out/temp-stage1");
    CHECK(st.in_cache);
    CHECK_FALSE(st.in_backing);
    CHECK(st.records == 5);
    CHECK(st.bytes == 0);
  }
  SUBCASE("custom temp prefix") {
    OutputOptions o;
    o.temp_prefix = "scratch";
    CHECK(f.fs.write_output("/o/scratch-x/f", 0, numbered(1), 0, o).backing_bytes == 0);
    CHECK(f.fs.write_output("/o/temp-x/f", 0, numbered(1), 0, o).backing_bytes > 0);
  }
  SUBCASE("existing output") {
    f.fs.write_output("/out/part-0", 0, numbered(1), 0, {});
    CHECK(code_of([&] { f.fs.write_output("/out/part-0", 0, numbered(2), 0, {}); }) == ErrorCode::OutputExists);
    OutputOptions o;
    o.overwrite = true;
    f.fs.write_output("/out/part-0", 0, numbered(2), 0, o);
    CHECK(f.fs.cache_record_reader("/out/part-0").size() == 2);
    CHECK(formats::read_pair_file(f.backing("/out/part-0")).size() == 2);
  }
  SUBCASE("cache size guard") {
    f.fs.set_max_bytes(100);
    CHECK(code_of([&] { f.fs.write_output("/big/part-0", 0, numbered(50), 0, {}); }) == ErrorCode::CacheFull);
    f.fs.write_output("/small/part-0", 0, numbered(2), 0, {});
    CHECK(f.fs.cached_bytes() == 36);
    f.fs.remove("/small");
    CHECK(f.fs.cached_bytes() == 0);
  }
}

TEST_CASE("delete, rename, status in both modes") {
  Fixture f;
  f.fs.write_output("/d/part-0", 0, numbered(3), 0, {});
  SUBCASE("dual delete") {
    f.fs.remove("/d/part-0");
    CHECK_FALSE(fs::exists(f.backing("/d/part-0")));
    CHECK(code_of([&] { f.fs.read_input(whole("/d/part-0"), 0, false); }) == ErrorCode::InputNotFound);
    CHECK(code_of([&] { f.fs.remove("/d/part-0"); }) == ErrorCode::NotFound);
  }
  SUBCASE("raw-cache delete leaves the backing store alone") {
    auto raw = f.fs.raw_cache();
    CHECK(raw.mode() == FsMode::RawCache);
    const auto before = file_bytes(f.backing("/d/part-0"));
    raw.remove("/d/part-0");
    CHECK(fs::exists(f.backing("/d/part-0")));
    auto r = f.fs.read_input(whole("/d/part-0"), 0, false);
    CHECK(r.metrics.reader_invocations == 1);
    CHECK(r.pairs.size() == 3);
    CHECK(file_bytes(f.backing("/d/part-0")) == before);
    raw.remove("/d/part-0");  // cached again by the read above
    CHECK(code_of([&] { raw.remove("/d/part-0"); }) == ErrorCode::NotFound);
    CHECK_FALSE(raw.exists("/d/part-0"));
    CHECK(f.fs.exists("/d/part-0"));
  }
  SUBCASE("raw-cache writes never reach the backing store") {
    auto raw = f.fs.raw_cache();
    raw.write_output("/r/part-0", 0, numbered(2), 0, {});
    CHECK_FALSE(fs::exists(f.backing("/r")));
    CHECK(raw.get_status("/r/part-0").in_cache);
  }
  SUBCASE("dual rename keeps the cache warm") {
    const auto before = f.fs.read_input(whole("/d/part-0"), 0, true).pairs;
    f.fs.rename("/d", "/e");
    CHECK(fs::exists(f.backing("/e/part-0")));
    CHECK_FALSE(f.fs.exists("/d"));
    auto r = f.fs.read_input(whole("/e/part-0"), 0, false);
    CHECK(r.metrics.cache_hits == 1);
    CHECK(testing::encoded_sorted(r.pairs) == testing::encoded_sorted(before));
    CHECK(code_of([&] { f.fs.rename("/nope", "/z"); }) == ErrorCode::NotFound);
    f.fs.mkdirs("/z");
    CHECK(code_of([&] { f.fs.rename("/e", "/z"); }) == ErrorCode::DestinationExists);
  }
  SUBCASE("rename carries sub-range entries") {
    formats::write_pair_file(f.backing("/in/data"), numbered(8));
    for (const auto& s : f.fs.compute_splits({formats::InputKind::PairFile, "/in/data", 2, {}})) {
      f.fs.read_input(s, 0, false);
    }
    f.fs.rename("/in/data", "/in/moved");
    for (const auto& s : f.fs.compute_splits({formats::InputKind::PairFile, "/in/moved", 2, {}})) {
      CHECK(f.fs.read_input(s, 0, false).metrics.cache_hits == 1);
    }
    f.fs.remove("/in/moved");
    CHECK(f.store->list(kvstore::StorePath::parse("/in")).empty());
  }
  SUBCASE("status") {
    auto st = f.fs.get_status("/d/part-0");
    CHECK(st.in_cache);
    CHECK(st.in_backing);
    CHECK(st.records == 3);
    CHECK(st.bytes == fs::file_size(f.backing("/d/part-0")));
    CHECK(code_of([&] { f.fs.get_status("/nothing"); }) == ErrorCode::NotFound);
  }
}

TEST_CASE("cache record reader") {
  Fixture f;
  f.fs.write_output("/j/part-00001", 1, numbered(2, 100), 1, {});
  f.fs.write_output("/j/part-00000", 0, numbered(3, 0), 0, {});
  const auto all = f.fs.cache_record_reader("/j");
  REQUIRE(all.size() == 5);
  std::vector<std::int64_t> keys;
  for (const auto& p : all) keys.push_back(p.key->as_int());
  CHECK(keys == std::vector<std::int64_t>{0, 1, 2, 100, 101});
  CHECK(code_of([&] { f.fs.cache_record_reader("/cold"); }) == ErrorCode::NotInCache);
  // same as reading the backing files through the input format
  auto disk = formats::read_pair_files(f.fs.backing_root(), "/j");
  CHECK(testing::encoded_sorted(disk) == testing::encoded_sorted(all));
}

TEST_CASE("cached outputs become placed splits") {
  Fixture f;
  f.fs.write_output("/o/part-00000", 0, numbered(1), 0, {});
  f.fs.write_output("/o/part-00001", 1, numbered(1), 1, {});
  f.fs.write_output("/o/part-00002", 2, numbered(1), 0, {});
  const auto splits = f.fs.compute_splits({formats::InputKind::PairFile, "/o", 1, {}});
  REQUIRE(splits.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(splits[i].placement == PartitionId(i));
}

TEST_CASE("cache transparency: backing store identical with the cache on or off") {
  Gen g(21);
  std::vector<Pair> input;
  for (int i = 0; i < 300; ++i) input.push_back(Pair::of(Key::of_int(g.range(0, 50)), Value::of_count(g.range(0, 9))));
  std::vector<std::map<std::string, std::string>> trees;
  for (bool cache : {true, false}) {
    engine::EngineConfig cfg;
    cfg.num_places = 2;
    cfg.cache_enabled = cache;
    engine::Engine e(cfg);
    formats::write_pair_file(formats::resolve(e.backing_root(), "/in/part-0"), input);
    auto job = [](std::string in, std::string out) {
      engine::JobConfig j;
      j.inputs = {formats::InputFormatSpec{formats::InputKind::PairFile, std::move(in), 2, {}}};
      j.output.path = std::move(out);
      j.reducer = engine::sum_reducer();
      j.num_reducers = 3;
      return j;
    };
    std::vector<engine::JobConfig> jobs{job("/in", "/temp-a"), job("/temp-a", "/b"), job("/b", "/c")};
    auto rs = e.run_sequence(jobs);
    REQUIRE(rs.size() == 3);
    for (const auto& r : rs) REQUIRE(r.ok());
    // read-your-writes
    CHECK(testing::encoded_sorted(e.read_output("/c")).size() == testing::encoded_sorted(e.read_output("/b")).size());
    std::map<std::string, std::string> tree;
    for (const auto& entry : fs::recursive_directory_iterator(e.backing_root())) {
      if (!entry.is_regular_file()) continue;
      const auto rel = fs::relative(entry.path(), e.backing_root()).string();
      if (rel.starts_with("temp")) continue;
      tree[rel] = file_bytes(entry.path());
    }
    trees.push_back(std::move(tree));
  }
  CHECK(trees[0].size() == 7);  // input + 3 + 3 parts
  CHECK(trees[0] == trees[1]);
}
