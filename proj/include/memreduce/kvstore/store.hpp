#pragma once

#include <atomic>
#include <chrono>
#include <compare>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "memreduce/core/types.hpp"

namespace memreduce::kvstore {

// Absolute, canonical, slash-separated path. Root is "/".
class StorePath {
 public:
  StorePath() : text_("/") {}

  // Accepts absolute paths; drops empty and "." components, resolves "..".
  // Throws InvalidPath for relative paths or ".." above the root.
  static StorePath parse(std::string_view text);

  const std::string& str() const noexcept { return text_; }
  bool is_root() const noexcept { return text_.size() == 1; }
  std::size_t depth() const noexcept;
  std::string_view name() const noexcept;
  StorePath parent() const;
  StorePath child(std::string_view name) const;

  // Strict ancestor test.
  bool is_ancestor_of(const StorePath& other) const noexcept;
  // this, re-rooted from `from` onto `to`; requires from == this or from is an ancestor.
  StorePath rebased(const StorePath& from, const StorePath& to) const;

  static StorePath common_ancestor(const StorePath& a, const StorePath& b);

  friend bool operator==(const StorePath&, const StorePath&) = default;
  friend auto operator<=>(const StorePath&, const StorePath&) = default;

 private:
  explicit StorePath(std::string canonical) : text_(std::move(canonical)) {}
  std::string text_;
};

// Global lock acquisition order: depth first, then lexicographic.
bool lock_order_less(const StorePath& a, const StorePath& b);

// Order in which a lock set is acquired: the least common ancestor of the
// set first, then every path in lock order.
std::vector<StorePath> lock_order(std::span<const StorePath> paths);

enum class BlockKind : std::uint8_t { FileBytes = 1, PairSeq = 2 };
enum class PathKind : std::uint8_t { File = 1, Directory = 2 };

struct BlockInfo {
  std::uint64_t block_id = 0;  // 0 => assigned by the store on close
  PlaceId home = 0;
  BlockKind kind = BlockKind::PairSeq;
  std::uint64_t length = 0;  // records (PAIRSEQ) or bytes (FILEBYTES)
  std::optional<PartitionId> partition;

  friend bool operator==(const BlockInfo&, const BlockInfo&) = default;
};

struct PathInfo {
  StorePath path;
  PathKind kind = PathKind::Directory;
  std::vector<BlockInfo> blocks;  // write (close) order
  std::uint64_t created_at = 0;

  friend bool operator==(const PathInfo&, const PathInfo&) = default;
};

struct BlockData {
  std::vector<Pair> pairs;
  Bytes bytes;
};

class Store;

// Strict two-phase lock set: everything acquired up front, released together.
class LockSet {
 public:
  LockSet() = default;
  LockSet(LockSet&& other) noexcept;
  LockSet& operator=(LockSet&& other) noexcept;
  LockSet(const LockSet&) = delete;
  LockSet& operator=(const LockSet&) = delete;
  ~LockSet() { release(); }

  const std::vector<StorePath>& acquired() const noexcept { return acquired_; }
  std::uint64_t task() const noexcept { return task_; }
  void release();

 private:
  friend class Store;
  Store* store_ = nullptr;
  std::uint64_t task_ = 0;
  std::vector<StorePath> acquired_;
};

// Distributed in-memory hierarchical key/value store. Metadata for a path
// lives at place fnv1a64(path) mod numPlaces; block data lives at the place
// that wrote it. All operations are serializable.
class Store {
 public:
  class Writer {
   public:
    Writer(Writer&&) noexcept = default;
    Writer& operator=(Writer&&) noexcept = default;
    ~Writer() = default;

    void add(Pair pair) { data_.pairs.push_back(std::move(pair)); }
    void write(std::span<const std::uint8_t> bytes) { data_.bytes.insert(data_.bytes.end(), bytes.begin(), bytes.end()); }
    // Publishes the block; returns its final metadata.
    BlockInfo close();

   private:
    friend class Store;
    Writer(Store* store, StorePath path, BlockInfo info, PlaceId at)
        : store_(store), path_(std::move(path)), info_(info), at_(at) {}
    Store* store_;
    StorePath path_;
    BlockInfo info_;
    PlaceId at_;
    BlockData data_;
    bool closed_ = false;
  };

  class Reader {
   public:
    const std::vector<Pair>& pairs() const noexcept { return data_->pairs; }
    const Bytes& bytes() const noexcept { return data_->bytes; }
    bool remote() const noexcept { return remote_; }

   private:
    friend class Store;
    Reader(std::shared_ptr<const BlockData> d, bool remote) : data_(std::move(d)), remote_(remote) {}
    std::shared_ptr<const BlockData> data_;
    bool remote_;
  };

  explicit Store(std::size_t num_places);
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  std::size_t num_places() const noexcept { return places_.size(); }

  Writer create_writer(const StorePath& path, BlockInfo info, PlaceId at);
  Reader create_reader(const StorePath& path, const BlockInfo& info, PlaceId at);
  void remove(const StorePath& path);
  void rename(const StorePath& src, const StorePath& dest);
  PathInfo get_info(const StorePath& path);
  std::optional<PathInfo> find(const StorePath& path);
  void mkdirs(const StorePath& path);
  // Direct children of a directory.
  std::vector<PathInfo> list(const StorePath& dir);

  // Acquires the whole set for a fresh task in lock order.
  LockSet lock_paths(std::span<const StorePath> paths);
  static std::uint64_t new_task_id();

  // --- instrumentation ---
  PlaceId metadata_owner(const StorePath& path) const;
  bool metadata_resident_at(PlaceId place, const StorePath& path) const;
  // Entries currently in LOCKED or MONITOR state, or placeholder entries.
  std::size_t lock_entries() const;
  std::size_t resident_blocks() const;
  std::chrono::nanoseconds max_lock_wait() const noexcept {
    return std::chrono::nanoseconds(max_wait_ns_.load());
  }
  std::uint64_t remote_block_reads() const noexcept { return remote_reads_.load(); }
  // Called for every lock acquisition: (task, path).
  void set_lock_observer(std::function<void(std::uint64_t, const StorePath&)> fn) { observer_ = std::move(fn); }

 private:
  friend class LockSet;

  struct Monitor {
    std::condition_variable cv;
    std::size_t waiters = 0;
  };
  // owner == 0: PRESENT (info set) or free placeholder; owner != 0 without
  // monitor: LOCKED; with monitor: MONITOR.
  struct Entry {
    std::optional<PathInfo> info;
    std::uint64_t owner = 0;
    std::shared_ptr<Monitor> monitor;
  };
  struct Shard {
    mutable std::mutex mu;
    std::unordered_map<std::string, Entry> table;
  };
  struct DataTable {
    mutable std::mutex mu;
    std::unordered_map<std::uint64_t, std::shared_ptr<const BlockData>> blocks;
  };
  struct PlaceTables {
    Shard meta;
    DataTable data;
  };

  Shard& shard_for(const StorePath& path);
  void acquire(std::uint64_t task, const StorePath& path);
  void release(std::uint64_t task, const StorePath& path);
  LockSet lock_all(std::uint64_t task, std::span<const StorePath> paths);

  // Caller must hold the path lock.
  std::optional<PathInfo> read_info(const StorePath& path);
  void write_info(const StorePath& path, std::optional<PathInfo> info);

  // Existing paths at or below `root` (unlocked snapshot).
  std::vector<StorePath> scan_subtree(const StorePath& root) const;
  void free_blocks(const std::vector<BlockInfo>& blocks);
  BlockInfo commit(Writer& w);

  std::vector<std::unique_ptr<PlaceTables>> places_;
  std::atomic<std::uint64_t> clock_{1};
  std::atomic<std::uint64_t> next_block_{1};
  std::atomic<std::int64_t> max_wait_ns_{0};
  std::atomic<std::uint64_t> remote_reads_{0};
  std::function<void(std::uint64_t, const StorePath&)> observer_;
};

}  // namespace memreduce::kvstore
