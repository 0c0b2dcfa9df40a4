#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "memreduce/cachefs/cache_fs.hpp"
#include "memreduce/core/batch.hpp"
#include "memreduce/engine/job.hpp"
#include "memreduce/engine/transport.hpp"
#include "memreduce/kvstore/messages.hpp"
#include "memreduce/kvstore/store.hpp"

namespace memreduce::engine {

inline constexpr std::size_t kDefaultBatchBytes = std::size_t{4} << 20;

struct EngineConfig {
  std::size_t num_places = 1;
  std::size_t workers_per_place = 1;
  DedupPolicy dedup = DedupPolicy::Full;
  TransportKind transport = TransportKind::InProcess;
  std::uint16_t socket_base_port = 0;  // 0 => ephemeral ports
  // Backing store directory; empty => a fresh directory under the system temp dir.
  std::filesystem::path backing_root;
  bool cache_enabled = true;
  bool record_events = false;
  std::size_t batch_bytes = kDefaultBatchBytes;

  void validate() const;
};

enum class EventKind : std::uint8_t {
  MapStart,
  MapEnd,
  BatchSent,
  DeliveryComplete,  // a place has every shuffle batch addressed to it
  BarrierReleased,
  ReduceGroupStart,
  ReduceEnd,
};

struct Event {
  std::uint64_t seq = 0;
  std::uint64_t job_id = 0;
  EventKind kind = EventKind::MapStart;
  PlaceId place = 0;
  std::uint64_t detail = 0;  // task index or partition
};

// In-memory engine: a fixed set of places that persist across jobs, each with
// its own worker pool, sharing a cache file system.
class Engine final : public JobRunner {
 public:
  explicit Engine(EngineConfig config);
  ~Engine() override;
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  // Runs a job to completion. Job-level failures are reported in the result;
  // throws EngineDown after shutdown.
  JobResult submit(const JobConfig& job) override;
  std::string name() const override { return "m3r"; }
  std::size_t num_places() const override { return config_.num_places; }
  const std::filesystem::path& backing_root() const override { return fs_->backing_root(); }
  std::vector<Pair> read_output(std::string_view path) override;

  // Throws JobInFlight while a job runs; a second call is a no-op.
  void shutdown();
  bool running() const;

  const EngineConfig& config() const noexcept { return config_; }
  cachefs::CacheFs& fs() noexcept { return *fs_; }
  const std::shared_ptr<kvstore::Store>& store() const noexcept { return store_; }
  // Partition -> place map for a reducer count.
  std::vector<PlaceId> partition_map(std::size_t num_reducers) const;

  // Store operation executed at place `to` on behalf of `from`, carried as
  // CONTROL frames over the engine transport.
  kvstore::StoreResponse store_call(PlaceId from, PlaceId to, kvstore::StoreRequest request);

  std::vector<Event> events() const;
  void clear_events();
  std::uint64_t transport_bytes() const;

  struct Impl;

 private:
  EngineConfig config_;
  std::shared_ptr<kvstore::Store> store_;
  std::unique_ptr<cachefs::CacheFs> fs_;
  std::unique_ptr<Impl> impl_;
  bool owns_backing_root_ = false;
};

}  // namespace memreduce::engine
