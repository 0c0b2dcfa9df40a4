#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "memreduce/core/types.hpp"
#include "memreduce/formats/formats.hpp"
#include "memreduce/kvstore/store.hpp"

namespace memreduce::cachefs {

inline constexpr std::string_view kDefaultTempPrefix = "temp";

// True when the output file name or its containing directory name starts
// with `prefix`. Prefix match, so "/temporal/part-0" is temporary for "temp".
bool is_temporary(std::string_view path, std::string_view prefix = kDefaultTempPrefix);

enum class FsMode : std::uint8_t {
  Dual,      // cache + backing store
  RawCache,  // cache only; never touches the backing store
};

struct ReadMetrics {
  std::uint64_t reader_invocations = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;

  ReadMetrics& operator+=(const ReadMetrics& o) {
    reader_invocations += o.reader_invocations;
    cache_hits += o.cache_hits;
    cache_misses += o.cache_misses;
    return *this;
  }
};

struct ReadResult {
  std::vector<Pair> pairs;
  ReadMetrics metrics;
};

struct OutputOptions {
  formats::OutputKind format = formats::OutputKind::PairFile;
  std::string temp_prefix = std::string(kDefaultTempPrefix);
  bool overwrite = false;
  // Producer promised not to mutate emitted pairs; otherwise they are cloned
  // before insertion.
  bool producer_immutable = false;
};

struct WriteMetrics {
  std::uint64_t backing_bytes = 0;
  std::uint64_t cached_pairs = 0;
};

struct FileStatus {
  std::string path;
  bool in_cache = false;
  bool in_backing = false;
  bool directory = false;
  std::uint64_t records = 0;  // cached record count (no synthetic byte size for cache-only data)
  std::uint64_t bytes = 0;    // backing-store size, 0 when cache-only
  std::optional<kvstore::PathInfo> cache_info;
};

// Caching file system: pair sequences cached in the kvstore at the place that
// produced or first read them, layered over a local backing directory.
class CacheFs {
 public:
  CacheFs(std::shared_ptr<kvstore::Store> store, std::filesystem::path backing_root, bool cache_enabled = true);

  // A view sharing this cache whose operations never reach the backing store.
  CacheFs raw_cache() const;

  FsMode mode() const noexcept { return mode_; }
  bool cache_enabled() const noexcept { return shared_->cache_enabled; }
  const std::filesystem::path& backing_root() const noexcept { return shared_->backing_root; }
  kvstore::Store& store() const noexcept { return *shared_->store; }

  // Aborts insertions with CacheFull once the cache would exceed this many
  // encoded bytes. 0 disables the guard.
  void set_max_bytes(std::uint64_t max_bytes) { shared_->max_bytes = max_bytes; }
  std::uint64_t cached_bytes() const noexcept { return shared_->resident_bytes.load(); }

  ReadResult read_input(const formats::Split& split, PlaceId at, bool read_only_consumer);
  WriteMetrics write_output(std::string_view path, std::optional<PartitionId> partition, std::span<const Pair> pairs,
                            PlaceId at, const OutputOptions& options);

  void remove(std::string_view path);
  void rename(std::string_view src, std::string_view dest);
  FileStatus get_status(std::string_view path);
  bool exists(std::string_view path);
  void mkdirs(std::string_view path);

  // All cached pairs under `path`: partition ascending, write order within.
  std::vector<Pair> cache_record_reader(std::string_view path);

  // Splits over cache + backing store: whole-file splits for cached files,
  // backing-store splits otherwise.
  std::vector<formats::Split> compute_splits(const formats::InputFormatSpec& desc);
  // Place holding the cache entry for a split, if cached.
  std::optional<PlaceId> cached_home(const formats::Split& split);

 private:
  struct Shared {
    std::shared_ptr<kvstore::Store> store;
    std::filesystem::path backing_root;
    bool cache_enabled = true;
    std::uint64_t max_bytes = 0;
    std::atomic<std::uint64_t> resident_bytes{0};
    std::mutex mu;
    std::unordered_map<std::uint64_t, std::uint64_t> block_bytes;
  };

  CacheFs(std::shared_ptr<Shared> shared, FsMode mode) : shared_(std::move(shared)), mode_(mode) {}

  bool touches_backing() const noexcept { return mode_ == FsMode::Dual; }
  bool cache_on() const noexcept { return shared_->cache_enabled; }
  std::vector<kvstore::PathInfo> cached_files(const kvstore::StorePath& path);
  std::vector<kvstore::StorePath> range_entries(const kvstore::StorePath& path);
  std::uint64_t entry_bytes(const std::vector<kvstore::PathInfo>& files);
  void insert(const kvstore::StorePath& name, std::optional<PartitionId> partition, std::span<const Pair> pairs,
              PlaceId at, bool clone);

  std::shared_ptr<Shared> shared_;
  FsMode mode_ = FsMode::Dual;
};

}  // namespace memreduce::cachefs
