#include <doctest.h>

#include <chrono>
#include <future>
#include <latch>
#include <map>
#include <set>
#include <thread>

#include "helpers.hpp"
#include "kv_model.hpp"
#include "memreduce/core/codec.hpp"
#include "memreduce/error.hpp"
#include "memreduce/kvstore/messages.hpp"
#include "memreduce/kvstore/store.hpp"

using namespace memreduce;
using namespace memreduce::kvstore;
using testing::Gen;

using namespace testing::kv;

TEST_CASE("StorePath canonicalization") {
  CHECK(P("/").str() == "/");
  CHECK(P("//a/./b//").str() == "/a/b");
  CHECK(P("/a/b/../c").str() == "/a/c");
  CHECK(P(P("/x//y/.").str()) == P("/x/y"));
  CHECK(code_of([] { P("a/b"); }) == ErrorCode::InvalidPath);
  CHECK(code_of([] { P("/.."); }) == ErrorCode::InvalidPath);
  CHECK(P("/a/b").parent() == P("/a"));
  CHECK(P("/a").parent() == P("/"));
  CHECK(P("/a/b/c").depth() == 3);
  CHECK(P("/a").is_ancestor_of(P("/a/b")));
  CHECK_FALSE(P("/a").is_ancestor_of(P("/ab")));
  CHECK(StorePath::common_ancestor(P("/a/b/c"), P("/a/d")) == P("/a"));
  CHECK(P("/a/b/c").rebased(P("/a"), P("/z/q")) == P("/z/q/b/c"));
}

TEST_CASE("lock order") {
  const StorePath two[] = {P("/a/g"), P("/a/f")};
  CHECK(lock_order(two) == std::vector<StorePath>{P("/a"), P("/a/f"), P("/a/g")});
  const StorePath one[] = {P("/a/f")};
  CHECK(lock_order(one) == std::vector<StorePath>{P("/a/f")});

  Gen g(1);
  for (int i = 0; i < 300; ++i) {
    std::vector<StorePath> set;
    for (std::size_t k = 0, n = 1 + g.below(6); k < n; ++k) {
      std::string p;
      for (std::size_t d = 0, depth = 1 + g.below(3); d < depth; ++d) p += "/" + std::string(1, static_cast<char>('a' + g.below(3)));
      set.push_back(P(p));
    }
    const auto order = lock_order(set);
    StorePath lca = set[0];
    for (const auto& p : set) lca = StorePath::common_ancestor(lca, p);
    REQUIRE_FALSE(order.empty());
    CHECK(order.front() == lca);
    for (std::size_t k = 1; k < order.size(); ++k) CHECK(lock_order_less(order[k - 1], order[k]));
    for (const auto& p : set) CHECK(std::find(order.begin(), order.end(), p) != order.end());
  }
}

TEST_CASE("store operations") {
  Store s(3);
  SUBCASE("root and mkdirs") {
    CHECK(s.get_info(StorePath()).kind == PathKind::Directory);
    s.mkdirs(P("/x/y/z"));
    for (auto p : {"/x", "/x/y", "/x/y/z"}) CHECK(s.get_info(P(p)).kind == PathKind::Directory);
    s.mkdirs(P("/x/y/z"));
    write_block(s, P("/f"), 0, records(1));
    CHECK(code_of([&] { s.mkdirs(P("/f/y")); }) == ErrorCode::AncestorIsFile);
    CHECK_FALSE(s.find(P("/f/y")));
  }
  SUBCASE("writers and readers") {
    s.mkdirs(P("/d"));
    const auto b = write_block(s, P("/d/f"), 0, records(3));
    CHECK(s.get_info(P("/d/f")).blocks == std::vector<BlockInfo>{b});
    CHECK(b.home == 0);
    CHECK(b.length == 3);
    const auto r = s.create_reader(P("/d/f"), b, 0);
    REQUIRE(r.pairs().size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(r.pairs()[i].key->as_int() == i);
    CHECK_FALSE(r.remote());
    CHECK(code_of([&] { s.create_writer(P("/nodir/f"), {}, 0); }) == ErrorCode::ParentNotFound);
    CHECK(code_of([&] { s.create_writer(P("/d"), {}, 0); }) == ErrorCode::IsDirectory);
    BlockInfo bogus = b;
    bogus.block_id += 100;
    CHECK(code_of([&] { s.create_reader(P("/d/f"), bogus, 0); }) == ErrorCode::BlockNotFound);
    s.remove(P("/d/f"));
    CHECK(code_of([&] { s.get_info(P("/d/f")); }) == ErrorCode::NotFound);
    CHECK(code_of([&] { s.create_reader(P("/d/f"), b, 0); }) == ErrorCode::NotFound);
  }
  SUBCASE("writers at two places append in close order") {
    s.mkdirs(P("/d"));
    write_block(s, P("/d/f"), 0, records(2));
    write_block(s, P("/d/f"), 1, records(5));
    const auto info = s.get_info(P("/d/f"));
    REQUIRE(info.blocks.size() == 2);
    CHECK(info.blocks[0].home == 0);
    CHECK(info.blocks[1].home == 1);
    // Same writes on a one-place store give the same sequence of lengths.
    Store single(1);
    single.mkdirs(P("/d"));
    write_block(single, P("/d/f"), 0, records(2));
    write_block(single, P("/d/f"), 0, records(5));
    const auto oracle = single.get_info(P("/d/f"));
    REQUIRE(oracle.blocks.size() == 2);
    for (int i = 0; i < 2; ++i) CHECK(oracle.blocks[i].length == info.blocks[i].length);
  }
  SUBCASE("remote reads match local reads") {
    Gen g(4);
    std::vector<Pair> pairs;
    for (int i = 0; i < 50; ++i) pairs.push_back(g.pair());
    s.mkdirs(P("/r"));
    const auto b = write_block(s, P("/r/f"), 2, pairs);
    const auto before = s.remote_block_reads();
    const auto local = s.create_reader(P("/r/f"), b, 2);
    const auto remote = s.create_reader(P("/r/f"), b, 0);
    CHECK(remote.remote());
    CHECK(s.remote_block_reads() == before + 1);
    CHECK(testing::encoded_sorted(local.pairs()) == testing::encoded_sorted(remote.pairs()));
    REQUIRE(remote.pairs().size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) CHECK(remote.pairs()[i].same_content(pairs[i]));
    // A remote reader never shares objects with the resident block.
    CHECK(remote.pairs()[0].value != local.pairs()[0].value);
  }
  SUBCASE("bytes blocks") {
    auto w = s.create_writer(P("/bytes"), BlockInfo{0, 0, BlockKind::FileBytes, 0, std::nullopt}, 1);
    const std::uint8_t data[] = {1, 2, 3, 4};
    w.write(data);
    const auto b = w.close();
    CHECK(b.kind == BlockKind::FileBytes);
    CHECK(b.length == 4);
    CHECK(s.create_reader(P("/bytes"), b, 0).bytes() == Bytes{1, 2, 3, 4});
  }
  SUBCASE("recursive delete") {
    s.mkdirs(P("/t/u"));
    write_block(s, P("/t/f"), 1, records(1));
    write_block(s, P("/t/u/g"), 2, records(1));
    const auto resident = s.resident_blocks();
    s.remove(P("/t"));
    for (auto p : {"/t", "/t/u", "/t/f", "/t/u/g"}) CHECK_FALSE(s.find(P(p)));
    CHECK(s.resident_blocks() == resident - 2);
    CHECK(code_of([&] { s.remove(P("/")); }) == ErrorCode::InvalidPath);
    CHECK(code_of([&] { s.remove(P("/t")); }) == ErrorCode::NotFound);
  }
  SUBCASE("rename") {
    s.mkdirs(P("/a"));
    const auto b = write_block(s, P("/a/f"), 2, records(4));
    s.rename(P("/a/f"), P("/a/g"));
    CHECK(code_of([&] { s.get_info(P("/a/f")); }) == ErrorCode::NotFound);
    CHECK(s.get_info(P("/a/g")).blocks == std::vector<BlockInfo>{b});
    CHECK(s.create_reader(P("/a/g"), b, 2).pairs().size() == 4);
    CHECK(code_of([&] { s.rename(P("/a"), P("/a/b/c")); }) == ErrorCode::InvalidPath);
    CHECK(code_of([&] { s.rename(P("/nope"), P("/z")); }) == ErrorCode::NotFound);
    CHECK(code_of([&] { s.rename(P("/a/g"), P("/a")); }) == ErrorCode::DestinationExists);
    s.mkdirs(P("/other"));
    CHECK(code_of([&] { s.rename(P("/a/g"), P("/other")); }) == ErrorCode::DestinationExists);
    CHECK(code_of([&] { s.rename(P("/a/g"), P("/q/r")); }) == ErrorCode::ParentNotFound);
    // subtree moves with its blocks where they were
    s.mkdirs(P("/a/sub"));
    const auto b2 = write_block(s, P("/a/sub/h"), 1, records(1));
    s.rename(P("/a"), P("/other/a2"));
    CHECK(s.get_info(P("/other/a2/sub/h")).blocks == std::vector<BlockInfo>{b2});
    CHECK(s.get_info(P("/other/a2/g")).blocks.front().home == 2);
    CHECK_FALSE(s.find(P("/a/sub")));
  }
  SUBCASE("metadata placement follows the path hash") {
    for (auto text : {"/", "/a", "/a/b", "/zzz/q", "/temp-iter1/part-00003"}) {
      const auto path = P(text);
      CHECK(s.metadata_owner(path) == fnv1a64(path.str()) % 3);
    }
    s.mkdirs(P("/m/n"));
    for (auto text : {"/m", "/m/n"}) {
      const auto path = P(text);
      const auto owner = s.metadata_owner(path);
      for (PlaceId p = 0; p < 3; ++p) CHECK(s.metadata_resident_at(p, path) == (p == owner));
    }
  }
  CHECK(s.lock_entries() == 0);
}

TEST_CASE("store messages round trip") {
  Gen g(8);
  for (int i = 0; i < 200; ++i) {
    StoreRequest req{static_cast<StoreOp>(1 + g.below(4)), P("/" + g.text(6) + "/" + g.text(3)), g.u64(), std::nullopt};
    if (req.op == StoreOp::Rename) req.dest = P("/" + g.text(5));
    const auto bytes = encode_request(req);
    CHECK(bytes[0] == static_cast<std::uint8_t>(req.op));
    CHECK(decode_request(bytes) == req);
  }
  Store s(2);
  s.mkdirs(P("/q"));
  const auto ok = execute(s, {StoreOp::GetInfo, P("/q"), 7, std::nullopt});
  const auto back = decode_response(encode_response(ok));
  CHECK(encode_response(back)[0] == (static_cast<std::uint8_t>(StoreOp::GetInfo) | kResponseBit));
  CHECK(back.request_id == 7);
  REQUIRE(back.info);
  CHECK(*back.info == *ok.info);
  const auto bad = decode_response(encode_response(execute(s, {StoreOp::Delete, P("/none"), 9, std::nullopt})));
  CHECK(bad.error == ErrorCode::NotFound);
  CHECK(bad.request_id == 9);
  CHECK(code_of([] { decode_request(std::vector<std::uint8_t>{1, 2}); }) == ErrorCode::MalformedRecord);
}

TEST_CASE("concurrent histories are serializable (exhaustive oracle)") {
  std::size_t histories = 0, with_conflicts = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    Gen g(seed);
    const std::size_t ntasks = 2 + g.below(3);
    const std::size_t nops = ntasks + g.below(9 - ntasks);
    std::vector<std::vector<Op>> tasks(ntasks);
    for (std::size_t i = 0; i < nops; ++i) tasks[i % ntasks].push_back(random_op(g, i + 1));

    Store store(3);
    Model initial;
    store.mkdirs(P("/a/x"));
    write_block(store, P("/b"), 1, records(100));
    apply(initial, {OpKind::Mkdirs, "/a/x", {}, 0, 0});
    apply(initial, {OpKind::Write, "/b", {}, 1, 100});
    REQUIRE(snapshot(store) == initial);

    std::vector<std::vector<Outcome>> outcomes(ntasks);
    std::latch go(static_cast<std::ptrdiff_t>(ntasks));
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < ntasks; ++t) {
      threads.emplace_back([&, t] {
        go.arrive_and_wait();
        for (const auto& op : tasks[t]) outcomes[t].push_back(run_on_store(store, op));
      });
    }
    for (auto& th : threads) th.join();

    const auto final_state = snapshot(store);
    std::vector<std::size_t> next(ntasks, 0);
    const bool ok = some_serial_order_matches(initial, tasks, outcomes, next, final_state);
    CHECK_MESSAGE(ok, "seed " << seed);
    CHECK(store.lock_entries() == 0);
    ++histories;
    for (const auto& o : outcomes) {
      for (const auto& x : o) with_conflicts += x.error.has_value();
    }
  }
  CHECK(histories == 500);
  CHECK(with_conflicts > 0);  // the workload does exercise failure paths
}

TEST_CASE("stress: 8 tasks, 10k ops, no deadlock, no leaked locks") {
  Store store(4);
  store.mkdirs(P("/a"));
  store.mkdirs(P("/b"));
  constexpr std::size_t kTasks = 8;
  constexpr std::size_t kOpsPerTask = 1250;
  std::atomic<std::size_t> done{0};
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < kTasks; ++t) {
    threads.emplace_back([&, t] {
      Gen g(1000 + t);
      for (std::size_t i = 0; i < kOpsPerTask; ++i) {
        run_on_store(store, random_op(g, 1 + g.below(3)));
        ++done;
      }
    });
  }
  // Watchdog: every op must finish and no single lock wait may exceed 10 s.
  auto finished = std::async(std::launch::async, [&] {
    for (auto& th : threads) th.join();
  });
  const bool in_time = finished.wait_for(std::chrono::seconds(120)) == std::future_status::ready;
  REQUIRE_MESSAGE(in_time, "ops completed: " << done.load());
  CHECK(done.load() == kTasks * kOpsPerTask);
  CHECK(store.max_lock_wait() < std::chrono::seconds(10));
  CHECK(store.lock_entries() == 0);

  // Tree consistency: every existing path has a directory parent.
  const auto m = snapshot(store);
  for (const auto& [path, node] : m) {
    const auto parent = parent_of(path);
    if (parent != "/") {
      REQUIRE(m.count(parent));
      CHECK(m.at(parent).kind == PathKind::Directory);
    }
  }
}

TEST_CASE("renames are atomic to concurrent listers") {
  Store store(3);
  store.mkdirs(P("/p/d"));
  write_block(store, P("/p/f1"), 0, records(1));
  write_block(store, P("/p/d/f2"), 1, records(1));
  std::atomic<bool> stop{false};
  std::thread mover([&] {
    for (int i = 0; i < 400; ++i) {
      store.rename(P("/p"), P("/q"));
      store.rename(P("/q"), P("/p"));
    }
    stop = true;
  });
  std::size_t probes = 0, bad = 0;
  while (!stop) {
    const auto top = store.list(StorePath());
    std::size_t found = 0;
    for (const auto& info : top) {
      if (info.path == P("/p") || info.path == P("/q")) ++found;
    }
    bad += found != 1;
    ++probes;
  }
  mover.join();
  CHECK(bad == 0);
  CHECK(probes > 0);
  CHECK(store.get_info(P("/p/d/f2")).blocks.front().home == 1);
  CHECK(store.lock_entries() == 0);
}
