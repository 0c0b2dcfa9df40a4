#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "memreduce/core/types.hpp"
#include "memreduce/error.hpp"
#include "memreduce/formats/formats.hpp"

namespace memreduce::engine {

using Counters = std::map<std::string, std::int64_t, std::less<>>;
using Properties = std::map<std::string, std::string, std::less<>>;

// Pointwise sum over task/place counter maps.
Counters aggregate_counters(std::span<const Counters> parts);

// Per-invocation handle given to map, combine and reduce functions. Owned by
// the engine; emitting after the task has ended throws EmitAfterTaskEnd.
class TaskContext : public std::enable_shared_from_this<TaskContext> {
 public:
  using Sink = std::function<void(Pair)>;
  using NamedSink = std::function<void(const formats::NamedOutput&, Pair)>;

  struct Options {
    std::uint64_t job_id = 0;
    PlaceId place = 0;
    std::optional<PartitionId> partition;  // reduce tasks
    std::size_t task_index = 0;
    bool immutable_output = false;
    // When false the engine takes over copying of unflagged emissions (it
    // serializes them on the shuffle path instead).
    bool clone_on_emit = true;
    const Properties* properties = nullptr;
    const formats::OutputFormatSpec* output = nullptr;
  };

  TaskContext(Options options, Sink sink, NamedSink named_sink = {});

  std::uint64_t job_id() const noexcept { return opt_.job_id; }
  PlaceId place() const noexcept { return opt_.place; }
  std::optional<PartitionId> partition() const noexcept { return opt_.partition; }
  std::size_t task_index() const noexcept { return opt_.task_index; }
  bool immutable_output() const noexcept { return opt_.immutable_output; }

  // Emits the pair. Without the immutable-output flag the pair is deep-cloned
  // here, so later mutation by the caller is never observed downstream.
  void emit(const Pair& pair);
  void emit(KeyPtr key, ValuePtr value) { emit(Pair{std::move(key), std::move(value)}); }
  void emit(Key key, Value value) { emit(Pair::of(std::move(key), std::move(value))); }
  void emit_named(std::string_view output, const Pair& pair);

  void increment(std::string_view counter, std::int64_t delta = 1);
  const Counters& counters() const noexcept { return counters_; }

  std::string property(std::string_view name, std::string_view fallback = {}) const;

  // Engine side: ends the task.
  void close() noexcept { closed_ = true; }
  bool closed() const noexcept { return closed_; }
  std::uint64_t emitted() const noexcept { return emitted_; }

 private:
  Options opt_;
  Sink sink_;
  NamedSink named_sink_;
  Counters counters_;
  std::uint64_t emitted_ = 0;
  std::atomic<bool> closed_{false};
};

class Mapper {
 public:
  virtual ~Mapper() = default;
  virtual void setup(TaskContext&) {}
  virtual void map(const Pair& input, TaskContext& ctx) = 0;
  virtual void cleanup(TaskContext&) {}
};

// Also used for combiners. `group` holds the pairs of one reduce group in
// sort order; the first key represents the group.
class Reducer {
 public:
  virtual ~Reducer() = default;
  virtual void setup(TaskContext&) {}
  virtual void reduce(const KeyPtr& key, std::span<const Pair> group, TaskContext& ctx) = 0;
  virtual void cleanup(TaskContext&) {}
};

using MapperFactory = std::function<std::unique_ptr<Mapper>()>;
using ReducerFactory = std::function<std::unique_ptr<Reducer>()>;
using MapFn = std::function<void(const Pair&, TaskContext&)>;
using ReduceFn = std::function<void(const KeyPtr&, std::span<const Pair>, TaskContext&)>;

MapperFactory map_fn(MapFn fn);
ReducerFactory reduce_fn(ReduceFn fn);
MapperFactory identity_mapper();
ReducerFactory identity_reducer();
// Sums COUNT values per group.
ReducerFactory sum_reducer();

using Partitioner = std::function<PartitionId(const Key&, std::size_t num_partitions)>;
using KeyLess = std::function<bool(const Key&, const Key&)>;
using KeyEquiv = std::function<bool(const Key&, const Key&)>;

// INT keys: non-negative modulus; other kinds: hash of the encoded key.
PartitionId hash_partition(const Key& key, std::size_t num_partitions);
// Row of BLOCKIDX keys (or the INT value) modulo the partition count.
PartitionId row_partition(const Key& key, std::size_t num_partitions);

struct JobConfig {
  std::string job_name;
  MapperFactory mapper;                      // null => identity
  std::vector<MapperFactory> input_mappers;  // per-input override, by input index
  ReducerFactory combiner;
  ReducerFactory reducer;  // null => map-only
  Partitioner partitioner;  // null => hash_partition
  std::size_t num_reducers = 1;
  std::vector<formats::InputFormatSpec> inputs;
  formats::OutputFormatSpec output;
  KeyLess sort_comparator;    // null => natural key order
  KeyEquiv group_comparator;  // null => equal under the sort order
  bool mapper_immutable_output = false;
  bool reducer_immutable_output = false;  // covers the combiner too
  Properties properties;
  // Paths deleted from the cache only (raw-cache delete) once the job succeeds.
  std::vector<std::string> cleanup_paths;

  std::string property(std::string_view name, std::string_view fallback = {}) const;
  bool flag(std::string_view name) const;
  // Throws InvalidJob.
  void validate() const;
  const MapperFactory& mapper_for(std::size_t input_index) const;
};

// Stable sort by `less`, then cut into runs of consecutive keys equivalent
// under `equiv`. Returns [begin, end) index ranges.
std::vector<std::pair<std::size_t, std::size_t>> sort_and_group(std::vector<Pair>& pairs, const KeyLess& less,
                                                                const KeyEquiv& equiv);

struct DestinationShuffle {
  std::uint64_t batches = 0;
  std::uint64_t bytes = 0;
  std::uint64_t pairs = 0;
  std::uint64_t value_refs = 0;
  std::array<std::uint64_t, 5> value_literals_by_kind{};  // index = value tag
};

struct JobMetrics {
  std::uint64_t wall_millis = 0;
  std::uint64_t bytes_serialized_local = 0;
  std::uint64_t bytes_serialized_remote = 0;
  std::uint64_t pairs_shuffled_local = 0;
  std::uint64_t pairs_shuffled_remote = 0;
  std::uint64_t reader_invocations = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t spill_bytes = 0;
  std::uint64_t spill_segments = 0;  // baseline sorted runs written
  std::uint64_t merge_passes = 0;    // baseline: most intermediate merge passes of any reducer
  std::uint64_t fetch_bytes = 0;  // baseline reduce-side fetch
  std::uint64_t output_pairs = 0;
  Counters user_counters;

  // Remote traffic by destination place.
  std::vector<DestinationShuffle> remote_by_place;
  // Partition -> place used for reduce tasks.
  std::vector<PlaceId> partition_places;
  // Place that ran each map task, by task index.
  std::vector<PlaceId> map_task_places;
};

enum class JobStatus : std::uint8_t { Success, Failed };

struct JobResult {
  JobStatus status = JobStatus::Success;
  JobMetrics metrics;
  std::optional<ErrorCode> error;
  std::string diagnostic;

  bool ok() const noexcept { return status == JobStatus::Success; }
  static JobResult failure(ErrorCode code, std::string diagnostic, JobMetrics metrics = {});
};

// Common face of the in-memory and the out-of-core engines.
class JobRunner {
 public:
  virtual ~JobRunner() = default;
  virtual JobResult submit(const JobConfig& job) = 0;
  // Stops at the first failed job; its result is the last element.
  std::vector<JobResult> run_sequence(std::span<const JobConfig> jobs);
  virtual std::string name() const = 0;
  virtual std::size_t num_places() const = 0;
  virtual const std::filesystem::path& backing_root() const = 0;
  // Pairs under an output path (cache if available, else backing store).
  virtual std::vector<Pair> read_output(std::string_view path) = 0;
};

}  // namespace memreduce::engine
